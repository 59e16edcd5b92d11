//! Drone phase surrogates, coverage probabilities and no-fly zones.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{decompose_wind, wrap_degrees, WindSample};
use crate::scalar::Real;
use crate::surrogate::{lognormal_sum, LinearModel, LogNormalDist, SurrogateError};

#[derive(Debug, thiserror::Error)]
pub enum FlightError {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid no-fly zone: {0}")]
    InvalidZone(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coverage value {value} at ({i}, {j}) is outside [0, 1]")]
    OutOfRange { i: usize, j: usize, value: f64 },
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// British National Grid coordinates in metres plus elevation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub easting: f64,
    pub northing: f64,
    #[serde(default)]
    pub elevation: f64,
}

impl Location {
    pub fn new(easting: f64, northing: f64, elevation: f64) -> Self {
        Self {
            easting,
            northing,
            elevation,
        }
    }

    pub fn xy(&self) -> (f64, f64) {
        (self.easting, self.northing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightGeometry {
    pub distance: f64,
    /// Degrees clockwise from north in `[0, 360)`.
    pub heading: f64,
    pub delta_h: f64,
}

pub fn flight_geometry(site: &Location, incident: &Location) -> FlightGeometry {
    let de = incident.easting - site.easting;
    let dn = incident.northing - site.northing;
    FlightGeometry {
        distance: de.hypot(dn),
        heading: wrap_degrees(de.atan2(dn).to_degrees()),
        delta_h: (incident.elevation - site.elevation).abs(),
    }
}

pub const DEFAULT_CRUISE_HEIGHT_M: f64 = 50.0;
pub const DEFAULT_PAYLOAD_KG: f64 = 1.38;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightQuery {
    pub distance: f64,
    pub heading: f64,
    pub delta_h: f64,
    pub delta_heading: f64,
    pub cruise_height: f64,
    pub payload: f64,
    pub wind: WindSample,
}

impl FlightQuery {
    /// Query with default cruise height, payload and zero direction change.
    pub fn new(distance: f64, heading: f64, delta_h: f64, wind: WindSample) -> Self {
        Self {
            distance,
            heading,
            delta_h,
            delta_heading: 0.0,
            cruise_height: DEFAULT_CRUISE_HEIGHT_M,
            payload: DEFAULT_PAYLOAD_KG,
            wind,
        }
    }

    pub fn from_geometry(g: FlightGeometry, wind: WindSample) -> Self {
        Self::new(g.distance, g.heading, g.delta_h, wind)
    }

    /// `[1, ω_v, m_pl, h_c]` for take-off, landing and VTOL battery.
    pub fn vtol_features(&self) -> [f64; 4] {
        [1.0, self.wind.speed, self.payload, self.cruise_height]
    }

    /// `[1, d, m_pl, Δχ, Δh, ω_vx, ω_vy]` for the cruise phase.
    pub fn cruise_features(&self) -> [f64; 7] {
        let (tail, cross) = decompose_wind(self.wind.speed, self.wind.direction, self.heading);
        [
            1.0,
            self.distance,
            self.payload,
            self.delta_heading,
            self.delta_h,
            tail,
            cross,
        ]
    }
}

/// The five drone surrogates: phase times in seconds, batteries in Ah.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DronePhaseModels {
    pub takeoff: LinearModel<f64>,
    pub cruise: LinearModel<f64>,
    pub landing: LinearModel<f64>,
    pub vtol_battery: LinearModel<f64>,
    pub cruise_battery: LinearModel<f64>,
}

const VTOL_NAMES: [&str; 4] = ["(Intercept)", "wind_speed", "payload", "cruise_height"];
const CRUISE_NAMES: [&str; 7] = [
    "(Intercept)",
    "distance",
    "payload",
    "direction_change",
    "elevation_change",
    "tail_wind",
    "cross_wind",
];

impl Default for DronePhaseModels {
    fn default() -> Self {
        let vtol = |c: [f64; 4], se: [f64; 4], rse: f64| {
            LinearModel::from_estimates(&VTOL_NAMES, &c, &se, rse, 221)
        };
        let cruise = |c: [f64; 7], se: [f64; 7], rse: f64| {
            LinearModel::from_estimates(&CRUISE_NAMES, &c, &se, rse, 218)
        };
        Self {
            takeoff: vtol(
                [1.4495, 0.0518, 0.3421, 0.0097],
                [0.0269, 0.0026, 0.0313, 0.0003],
                0.067,
            ),
            landing: vtol(
                [3.8494, 0.1605, -0.8646, 0.0080],
                [0.1373, 0.0131, 0.1597, 0.0016],
                0.342,
            ),
            vtol_battery: vtol(
                [-0.9255, 0.1422, -0.5602, 0.0064],
                [0.1515, 0.0144, 0.1761, 0.0018],
                0.378,
            ),
            cruise: cruise(
                [3.6110, 0.0003, -0.0535, 0.0010, -0.0001, -0.0237, 0.0041],
                [0.0353, 2e-6, 0.0401, 0.0002, 0.0001, 0.0025, 0.0026],
                0.09,
            ),
            cruise_battery: cruise(
                [-1.7639, 0.0003, 0.0225, 0.0007, 0.0002, -0.0234, 0.0021],
                [0.0364, 2e-6, 0.0414, 0.0002, 0.0002, 0.0026, 0.0026],
                0.088,
            ),
        }
    }
}

/// Predictive distributions for one flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightDists {
    pub time: LogNormalDist<f64>,
    pub vtol_battery: LogNormalDist<f64>,
    pub cruise_battery: LogNormalDist<f64>,
}

/// One sampled mission outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissionDraw {
    pub time_s: f64,
    pub vtol_ah: f64,
    pub cruise_ah: f64,
}

impl FlightDists {
    pub fn new(models: &DronePhaseModels, q: &FlightQuery) -> Result<Self, FlightError> {
        let (vtol_battery, cruise_battery) = battery_dists(models, q)?;
        Ok(Self {
            time: total_flight_time_dist(models, q)?,
            vtol_battery,
            cruise_battery,
        })
    }

    pub fn coverage(&self, limits: &CoverageLimits) -> f64 {
        self.time.cdf(limits.time_s)
            * self.vtol_battery.cdf(limits.vtol_ah)
            * self.cruise_battery.cdf(limits.cruise_ah)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MissionDraw {
        MissionDraw {
            time_s: self.time.sample_one(rng),
            vtol_ah: self.vtol_battery.sample_one(rng),
            cruise_ah: self.cruise_battery.sample_one(rng),
        }
    }
}

impl MissionDraw {
    pub fn battery_ok(&self, limits: &CoverageLimits) -> bool {
        self.vtol_ah <= limits.vtol_ah && self.cruise_ah <= limits.cruise_ah
    }
}

/// Per-phase predictive distributions: take-off, cruise, landing.
pub fn phase_time_dists(
    models: &DronePhaseModels,
    q: &FlightQuery,
) -> Result<[LogNormalDist<f64>; 3], FlightError> {
    let v = q.vtol_features();
    let c = q.cruise_features();
    Ok([
        models.takeoff.predict(&v)?,
        models.cruise.predict(&c)?,
        models.landing.predict(&v)?,
    ])
}

/// Total flight time (seconds) as a moment-matched lognormal.
pub fn total_flight_time_dist(
    models: &DronePhaseModels,
    q: &FlightQuery,
) -> Result<LogNormalDist<f64>, FlightError> {
    Ok(lognormal_sum(&phase_time_dists(models, q)?)?)
}

/// VTOL and cruise battery consumption (Ah).
pub fn battery_dists(
    models: &DronePhaseModels,
    q: &FlightQuery,
) -> Result<(LogNormalDist<f64>, LogNormalDist<f64>), FlightError> {
    Ok((
        models.vtol_battery.predict(&q.vtol_features())?,
        models.cruise_battery.predict(&q.cruise_features())?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageLimits {
    pub time_s: f64,
    pub vtol_ah: f64,
    pub cruise_ah: f64,
}

impl Default for CoverageLimits {
    fn default() -> Self {
        Self {
            time_s: 360.0,
            vtol_ah: 4.0,
            cruise_ah: 12.0,
        }
    }
}

impl CoverageLimits {
    pub fn with_time(time_s: f64) -> Self {
        Self {
            time_s,
            ..Self::default()
        }
    }
}

/// `P(T ≤ time) · P(B^v ≤ vtol) · P(B^c ≤ cruise)`.
pub fn coverage_prob(
    models: &DronePhaseModels,
    q: &FlightQuery,
    limits: &CoverageLimits,
) -> Result<f64, FlightError> {
    Ok(FlightDists::new(models, q)?.coverage(limits))
}

/// Dense `n × p` matrix of per-incident, per-site coverage probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
    pub incident_ids: Vec<String>,
    pub site_ids: Vec<String>,
}

impl CoverageMatrix {
    pub fn new(
        n: usize,
        p: usize,
        values: Vec<f64>,
        incident_ids: Vec<String>,
        site_ids: Vec<String>,
    ) -> Result<Self, FlightError> {
        if values.len() != n * p || incident_ids.len() != n || site_ids.len() != p {
            return Err(FlightError::DimensionMismatch(format!(
                "{} values, {} incident ids, {} site ids for a {n}x{p} matrix",
                values.len(),
                incident_ids.len(),
                site_ids.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(FlightError::OutOfRange {
                i: pos / p.max(1),
                j: pos % p.max(1),
                value: values[pos],
            });
        }
        Ok(Self {
            n,
            p,
            values,
            incident_ids,
            site_ids,
        })
    }

    /// Matrix with generated ids `i0..`, `s0..`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FlightError> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(FlightError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(
            n,
            p,
            rows.concat(),
            (0..n).map(|i| format!("i{i}")).collect(),
            (0..p).map(|j| format!("s{j}")).collect(),
        )
    }

    pub fn n_incidents(&self) -> usize {
        self.n
    }

    pub fn n_sites(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Coverage probabilities for every (incident, site) pair using each site's
/// wind sample.
pub fn coverage_matrix(
    models: &DronePhaseModels,
    sites: &[Location],
    incidents: &[Location],
    wind_per_site: &[WindSample],
    limits: &CoverageLimits,
) -> Result<CoverageMatrix, FlightError> {
    if wind_per_site.len() != sites.len() {
        return Err(FlightError::DimensionMismatch(format!(
            "{} wind samples for {} sites",
            wind_per_site.len(),
            sites.len()
        )));
    }
    let rows: Vec<Vec<f64>> = incidents
        .par_iter()
        .map(|inc| {
            sites
                .iter()
                .zip(wind_per_site)
                .map(|(s, w)| {
                    let q = FlightQuery::from_geometry(flight_geometry(s, inc), *w);
                    coverage_prob(models, &q, limits)
                })
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let n = incidents.len();
    let p = sites.len();
    CoverageMatrix::new(
        n,
        p,
        rows.concat(),
        (0..n).map(|i| i.to_string()).collect(),
        (0..p).map(|j| j.to_string()).collect(),
    )
}

/// `P_i = 1 − Π_j (1 − x_j A_ij)` evaluated as a sum of `log1p` terms.
pub fn aggregate_coverage(x: &[bool], a: &CoverageMatrix, i: usize) -> f64 {
    aggregate_row(x, a.row(i))
}

pub fn aggregate_row<T: Real>(x: &[bool], row: &[T]) -> T {
    let mut log_miss = T::zero();
    for (&on, &aij) in x.iter().zip(row) {
        if on {
            if aij >= T::one() {
                return T::one();
            }
            log_miss = log_miss + (-aij).ln_1p();
        }
    }
    -log_miss.exp_m1()
}

/// Circular or polygonal no-fly zone in BNG metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoFlyZone {
    Circle {
        easting: f64,
        northing: f64,
        radius: f64,
    },
    /// Ring of `[easting, northing]` vertices; closing the ring is optional.
    Polygon { vertices: Vec<[f64; 2]> },
}

impl NoFlyZone {
    pub fn validate(&self) -> Result<(), FlightError> {
        match self {
            NoFlyZone::Circle {
                easting,
                northing,
                radius,
            } => {
                if !(easting.is_finite() && northing.is_finite() && radius.is_finite())
                    || *radius < 0.0
                {
                    return Err(FlightError::InvalidZone(
                        "circle needs finite centre and non-negative radius".into(),
                    ));
                }
                Ok(())
            }
            NoFlyZone::Polygon { .. } => {
                let ring = self.ring();
                if ring.len() < 3 {
                    return Err(FlightError::InvalidPolygon(format!(
                        "{} distinct vertices, need at least 3",
                        ring.len()
                    )));
                }
                if ring.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(FlightError::InvalidPolygon("non-finite vertex".into()));
                }
                let m = ring.len();
                for a in 0..m {
                    for b in a + 1..m {
                        // adjacent edges share a vertex by construction
                        if b == a + 1 || (a == 0 && b == m - 1) {
                            continue;
                        }
                        if segments_intersect(ring[a], ring[(a + 1) % m], ring[b], ring[(b + 1) % m]) {
                            return Err(FlightError::InvalidPolygon(format!(
                                "edges {a} and {b} intersect"
                            )));
                        }
                    }
                }
                if polygon_area2(&ring) == 0.0 {
                    return Err(FlightError::InvalidPolygon("zero area".into()));
                }
                Ok(())
            }
        }
    }

    fn ring(&self) -> Vec<[f64; 2]> {
        match self {
            NoFlyZone::Polygon { vertices } => {
                let mut v = vertices.clone();
                if v.len() > 1 && v.first() == v.last() {
                    v.pop();
                }
                v
            }
            NoFlyZone::Circle { .. } => Vec::new(),
        }
    }

    /// Inside test; the boundary counts as inside.
    pub fn contains(&self, e: f64, n: f64) -> bool {
        match self {
            NoFlyZone::Circle {
                easting,
                northing,
                radius,
            } => (e - easting).hypot(n - northing) <= *radius,
            NoFlyZone::Polygon { .. } => {
                let ring = self.ring();
                let m = ring.len();
                let p = [e, n];
                let mut inside = false;
                for a in 0..m {
                    let u = ring[a];
                    let v = ring[(a + 1) % m];
                    if on_segment(u, v, p) {
                        return true;
                    }
                    if (u[1] > n) != (v[1] > n) {
                        let x_cross = u[0] + (n - u[1]) * (v[0] - u[0]) / (v[1] - u[1]);
                        if e < x_cross {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(u: [f64; 2], v: [f64; 2], p: [f64; 2]) -> bool {
    cross(u, v, p) == 0.0
        && p[0] >= u[0].min(v[0])
        && p[0] <= u[0].max(v[0])
        && p[1] >= u[1].min(v[1])
        && p[1] <= u[1].max(v[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

fn polygon_area2(ring: &[[f64; 2]]) -> f64 {
    let m = ring.len();
    (0..m)
        .map(|a| {
            let u = ring[a];
            let v = ring[(a + 1) % m];
            u[0] * v[1] - v[0] * u[1]
        })
        .sum::<f64>()
        .abs()
}

/// Split point indices into those outside every zone and those inside any.
pub fn nfz_filter(
    points: &[(f64, f64)],
    zones: &[NoFlyZone],
) -> Result<(Vec<usize>, Vec<usize>), FlightError> {
    for z in zones {
        z.validate()?;
    }
    let (excluded, retained): (Vec<usize>, Vec<usize>) = (0..points.len())
        .partition(|&i| zones.iter().any(|z| z.contains(points[i].0, points[i].1)));
    Ok((retained, excluded))
}
