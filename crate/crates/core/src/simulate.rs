//! Synthetic regions for testing the pipeline end to end.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::bundle::{RegionBundle, StationRecord};
use crate::config::Config;
use crate::demand::{features_from_graph, IncidentRecord, RoadEdge, RoadGraph, RoadNode};
use crate::designer::SiteRecord;
use crate::environment::SyntheticWind;
use crate::flight::{DronePhaseModels, Location, NoFlyZone};
use crate::posthoc::CostConfig;
use crate::rng::{self, tag};

#[derive(Debug, thiserror::Error)]
pub enum SimulateError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {what} outside the no-fly zones after {tries} attempts")]
    Placement { what: &'static str, tries: usize },
    #[error(transparent)]
    Demand(#[from] crate::demand::DemandError),
    #[error(transparent)]
    Environment(#[from] crate::environment::EnvironmentError),
}

/// Gaussian population cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub easting: f64,
    pub northing: f64,
    /// Standard deviation in metres.
    pub spread: f64,
    /// Share of incidents drawn from this cluster.
    pub weight: f64,
    /// Peak density in people per km².
    pub peak_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_incidents: usize,
    pub n_candidates: usize,
    pub n_existing: usize,
    /// `[e_min, n_min, e_max, n_max]` in metres.
    pub bounds: [f64; 4],
    pub clusters: Vec<Cluster>,
    /// Share of incidents spread uniformly over the region.
    pub rural_fraction: f64,
    pub rural_density: f64,
    pub road_spacing_m: f64,
    pub urban_speed_ms: f64,
    pub rural_speed_ms: f64,
    pub wind: SyntheticWind,
    pub nfz: Vec<NoFlyZone>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            n_incidents: 600,
            n_candidates: 45,
            n_existing: 9,
            bounds: [240_000.0, 650_000.0, 275_000.0, 680_000.0],
            clusters: vec![
                Cluster {
                    easting: 252_000.0,
                    northing: 664_000.0,
                    spread: 3_000.0,
                    weight: 0.5,
                    peak_density: 4_000.0,
                },
                Cluster {
                    easting: 266_000.0,
                    northing: 671_000.0,
                    spread: 2_500.0,
                    weight: 0.3,
                    peak_density: 3_000.0,
                },
            ],
            rural_fraction: 0.2,
            rural_density: 40.0,
            road_spacing_m: 1_000.0,
            urban_speed_ms: 13.4,
            rural_speed_ms: 22.4,
            wind: SyntheticWind::default(),
            nfz: vec![NoFlyZone::Circle {
                easting: 245_000.0,
                northing: 667_000.0,
                radius: 1_500.0,
            }],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: &str| Err(SimulateError::InvalidSpec(m.into()));
        let [e0, n0, e1, n1] = self.bounds;
        if !(e1 > e0 && n1 > n0) {
            return bad("bounds must have max > min");
        }
        if self.n_existing > self.n_candidates {
            return bad("n_existing must not exceed n_candidates");
        }
        if self.n_existing == 0 {
            return bad("at least one existing site is needed for ambulance bases");
        }
        if self.n_incidents == 0 {
            return bad("n_incidents must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.rural_fraction) {
            return bad("rural_fraction must lie in [0, 1]");
        }
        if self.clusters.is_empty() && self.rural_fraction < 1.0 {
            return bad("clusters are required unless rural_fraction = 1");
        }
        if self.clusters.iter().any(|c| !(c.spread > 0.0 && c.weight > 0.0 && c.peak_density > 0.0)) {
            return bad("cluster spread, weight and peak density must be > 0");
        }
        if !(self.rural_density > 0.0) {
            return bad("rural_density must be > 0");
        }
        if !(self.road_spacing_m > 0.0 && self.urban_speed_ms > 0.0 && self.rural_speed_ms > 0.0) {
            return bad("road spacing and speeds must be > 0");
        }
        for z in &self.nfz {
            z.validate()
                .map_err(|e| SimulateError::InvalidSpec(e.to_string()))?;
        }
        Ok(())
    }

    /// People per km² at a point.
    pub fn density(&self, e: f64, n: f64) -> f64 {
        self.rural_density
            + self
                .clusters
                .iter()
                .map(|c| {
                    let d2 = (e - c.easting).powi(2) + (n - c.northing).powi(2);
                    c.peak_density * (-d2 / (2.0 * (2.0 * c.spread).powi(2))).exp()
                })
                .sum::<f64>()
    }

    /// Smooth terrain in metres.
    pub fn elevation(&self, e: f64, n: f64) -> f64 {
        let [e0, n0, e1, n1] = self.bounds;
        let fe = (e - e0) / (e1 - e0);
        let fnr = (n - n0) / (n1 - n0);
        (40.0 + 90.0 * fnr + 30.0 * (std::f64::consts::TAU * fe).sin() * (std::f64::consts::PI * fnr).cos())
            .max(0.0)
    }

    fn in_nfz(&self, e: f64, n: f64) -> bool {
        self.nfz.iter().any(|z| z.contains(e, n))
    }

    fn clamp(&self, e: f64, n: f64) -> (f64, f64) {
        let [e0, n0, e1, n1] = self.bounds;
        (e.clamp(e0, e1), n.clamp(n0, n1))
    }

    fn uniform<R: Rng + ?Sized>(&self, r: &mut R) -> (f64, f64) {
        let [e0, n0, e1, n1] = self.bounds;
        (r.random_range(e0..e1), r.random_range(n0..n1))
    }

    /// Cluster point with spread scaled by `widen`, or uniform with
    /// probability `rural`.
    fn mixture_point<R: Rng + ?Sized>(&self, r: &mut R, rural: f64, widen: f64) -> (f64, f64) {
        if self.clusters.is_empty() || r.random::<f64>() < rural {
            return self.uniform(r);
        }
        let pick = WeightedIndex::new(self.clusters.iter().map(|c| c.weight))
            .expect("positive weights")
            .sample(r);
        let c = &self.clusters[pick];
        let z = Normal::new(0.0, c.spread * widen).expect("positive spread");
        self.clamp(c.easting + z.sample(r), c.northing + z.sample(r))
    }

    fn place<R: Rng + ?Sized>(
        &self,
        r: &mut R,
        what: &'static str,
        mut draw: impl FnMut(&mut R) -> (f64, f64),
    ) -> Result<(f64, f64), SimulateError> {
        const TRIES: usize = 10_000;
        for _ in 0..TRIES {
            let p = draw(r);
            if !self.in_nfz(p.0, p.1) {
                return Ok(p);
            }
        }
        Err(SimulateError::Placement { what, tries: TRIES })
    }
}

/// Generative parameters and derived ground truth kept beside the bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    /// Share of incidents from each cluster, then the rural share.
    pub incident_sources: Vec<usize>,
    pub station_ids: Vec<String>,
}

fn road_grid(spec: &SyntheticSpec, seed: u64) -> RoadGraph {
    let [e0, n0, e1, n1] = spec.bounds;
    let nx = ((e1 - e0) / spec.road_spacing_m).round().max(1.0) as usize + 1;
    let ny = ((n1 - n0) / spec.road_spacing_m).round().max(1.0) as usize + 1;
    let mut r = rng::stream(seed, &[tag::SIMULATE, 0x52]);
    let jitter = 0.15 * spec.road_spacing_m;
    let mut nodes = Vec::with_capacity(nx * ny);
    for a in 0..nx {
        for b in 0..ny {
            let e = e0 + (e1 - e0) * a as f64 / (nx - 1) as f64;
            let n = n0 + (n1 - n0) * b as f64 / (ny - 1) as f64;
            let (dx, dy) = if a == 0 || b == 0 || a == nx - 1 || b == ny - 1 {
                (0.0, 0.0)
            } else {
                (r.random_range(-jitter..jitter), r.random_range(-jitter..jitter))
            };
            nodes.push(RoadNode {
                id: format!("n{a}_{b}"),
                easting: e + dx,
                northing: n + dy,
            });
        }
    }
    let mut edges = Vec::new();
    let mut link = |u: usize, v: usize, nodes: &[RoadNode]| {
        let (a, b) = (&nodes[u], &nodes[v]);
        let de = b.easting - a.easting;
        let dn = b.northing - a.northing;
        let (me, mn) = ((a.easting + b.easting) / 2.0, (a.northing + b.northing) / 2.0);
        let density = spec.density(me, mn);
        edges.push(RoadEdge {
            u: a.id.clone(),
            v: b.id.clone(),
            // winding factor over the straight-line distance
            length_m: 1.15 * de.hypot(dn),
            maxspeed_ms: if density > 1000.0 { spec.urban_speed_ms } else { spec.rural_speed_ms },
            azimuth_rad: de.atan2(dn),
            pop_density: density * 1e-6,
        });
    };
    for a in 0..nx {
        for b in 0..ny {
            let i = a * ny + b;
            if a + 1 < nx {
                link(i, i + ny, &nodes);
            }
            if b + 1 < ny {
                link(i, i + 1, &nodes);
            }
        }
    }
    RoadGraph::new(nodes, edges).expect("grid graph is valid")
}

/// Deterministic synthetic region for `spec`.
pub fn simulate_region(spec: &SyntheticSpec) -> Result<(RegionBundle, GroundTruth), SimulateError> {
    spec.validate()?;
    let seed = spec.seed;
    let costs = CostConfig::default();
    let base_cost = costs.drone + costs.charging_port + costs.maintenance;

    let mut r = rng::stream(seed, &[tag::SIMULATE, 1]);
    let mut existing = Vec::with_capacity(spec.n_existing);
    for _ in 0..spec.n_existing {
        existing.push(spec.place(&mut r, "existing site", |r| spec.mixture_point(r, 0.2, 1.5))?);
    }
    let mut sites = Vec::with_capacity(spec.n_candidates);
    for (j, &(e, n)) in existing.iter().enumerate() {
        sites.push(SiteRecord {
            id: format!("E{:02}", j + 1),
            location: Location::new(e, n, spec.elevation(e, n)),
            is_new: false,
            cost: base_cost,
            pop_density: spec.density(e, n),
            dist_to_infra: 0.0,
        });
    }
    let mut r = rng::stream(seed, &[tag::SIMULATE, 2]);
    for j in 0..spec.n_candidates - spec.n_existing {
        let (e, n) = spec.place(&mut r, "candidate site", |r| spec.mixture_point(r, 0.4, 2.5))?;
        let d = existing
            .iter()
            .map(|&(xe, xn)| (e - xe).hypot(n - xn))
            .fold(f64::INFINITY, f64::min);
        sites.push(SiteRecord {
            id: format!("N{:02}", j + 1),
            location: Location::new(e, n, spec.elevation(e, n)),
            is_new: true,
            cost: base_cost + costs.new_site,
            pop_density: spec.density(e, n),
            dist_to_infra: d,
        });
    }

    let mut r = rng::stream(seed, &[tag::SIMULATE, 3]);
    // overnight trough, daytime peak
    let hour_weights: Vec<f64> = (0..24)
        .map(|h| 1.0 + 0.6 * (std::f64::consts::TAU * (h as f64 - 9.0) / 24.0).sin())
        .collect();
    let hours = WeightedIndex::new(&hour_weights).expect("positive weights");
    let mut sources = vec![0usize; spec.clusters.len() + 1];
    let mut incidents = Vec::with_capacity(spec.n_incidents);
    for i in 0..spec.n_incidents {
        let (e, n) = spec.place(&mut r, "incident", |r| spec.mixture_point(r, spec.rural_fraction, 1.0))?;
        let nearest = spec
            .clusters
            .iter()
            .enumerate()
            .map(|(c, cl)| (c, (e - cl.easting).hypot(n - cl.northing) / cl.spread))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((c, z)) if z < 3.0 => sources[c] += 1,
            _ => sources[spec.clusters.len()] += 1,
        }
        incidents.push(IncidentRecord {
            id: format!("I{:04}", i + 1),
            location: Location::new(e, n, spec.elevation(e, n)),
            hour: hours.sample(&mut r) as u8,
            features: Default::default(),
        });
    }

    let roads = road_grid(spec, seed);
    let stations: Vec<StationRecord> = sites
        .iter()
        .filter(|s| !s.is_new)
        .map(|s| StationRecord {
            id: s.id.clone(),
            easting: s.location.easting,
            northing: s.location.northing,
        })
        .collect();
    let station_locs: Vec<Location> = sites.iter().filter(|s| !s.is_new).map(|s| s.location).collect();
    let inc_locs: Vec<Location> = incidents.iter().map(|r| r.location).collect();
    let feats = features_from_graph(&roads, &station_locs, &inc_locs)?;
    for (rec, f) in incidents.iter_mut().zip(feats) {
        rec.features = f;
    }

    let [e0, n0, e1, n1] = spec.bounds;
    let wind = spec.wind.build((e0, n0, e1, n1), seed)?;

    let mut elevation = BTreeMap::new();
    for s in &sites {
        elevation.insert(s.id.clone(), s.location.elevation);
    }
    for rec in &incidents {
        elevation.insert(rec.id.clone(), rec.location.elevation);
    }

    let mut config = Config::default();
    config.set_seed(seed);

    let truth = GroundTruth {
        spec: spec.clone(),
        incident_sources: sources,
        station_ids: stations.iter().map(|s| s.id.clone()).collect(),
    };
    Ok((
        RegionBundle {
            config,
            sites,
            incidents,
            nfz: spec.nfz.clone(),
            stations,
            elevation: Some(elevation),
            roads: Some(roads),
            wind: Some(wind),
            ambulance: None,
            drone: Some(DronePhaseModels::default()),
        },
        truth,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_incidents: 60,
            n_candidates: 12,
            n_existing: 3,
            road_spacing_m: 2_500.0,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_placement() {
        let spec = small();
        let (b, truth) = simulate_region(&spec).unwrap();
        assert_eq!(b.sites.len(), 12);
        assert_eq!(b.sites.iter().filter(|s| !s.is_new).count(), 3);
        assert_eq!(b.incidents.len(), 60);
        assert_eq!(truth.incident_sources.iter().sum::<usize>(), 60);
        assert_eq!(b.stations.len(), 3);
        for s in &b.sites {
            assert!(!spec.in_nfz(s.location.easting, s.location.northing));
            assert!(s.pop_density > 0.0);
        }
        for r in &b.incidents {
            assert!(r.features.t_astar > 0.0 || r.features.length_km == 0.0);
            assert!(r.hour < 24);
        }
    }

    #[test]
    fn same_seed_same_region() {
        let (a, _) = simulate_region(&small()).unwrap();
        let (b, _) = simulate_region(&small()).unwrap();
        assert_eq!(a.sites, b.sites);
        assert_eq!(a.incidents, b.incidents);
        let (c, _) = simulate_region(&SyntheticSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.sites, c.sites);
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = SyntheticSpec {
            n_existing: 50,
            ..small()
        };
        assert!(simulate_region(&spec).is_err());
    }
}
