//! Ambulance response surrogate, survival-odds demand weights and road-graph
//! route features.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flight::Location;
use crate::scalar::{log_sum_exp, Real};
use crate::surrogate::{LinearModel, LogNormalDist, SurrogateError};

/// Per-minute decay of survival odds.
pub const SURVIVAL_DECAY: f64 = 0.11;
/// Raw population densities are multiplied by this factor on ingestion.
pub const DENSITY_SCALE: f64 = 1000.0;

#[derive(Debug, thiserror::Error)]
pub enum DemandError {
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("path edges are not contiguous at position {0}")]
    BrokenPath(usize),
    #[error("no facility is reachable from incident {0}")]
    AllUnreachable(usize),
    #[error("invalid road graph: {0}")]
    InvalidGraph(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("all demand weights are zero")]
    DegenerateWeights,
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// Route features used by the ambulance surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AmbulanceFeatures {
    /// Routed travel time, minutes.
    pub t_astar: f64,
    pub big_intsects: f64,
    pub mid_intsects: f64,
    /// Radians.
    pub turns: f64,
    /// Length-weighted density per 1000 m².
    pub pop_density: f64,
    pub length_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub id: String,
    pub location: Location,
    pub hour: u8,
    pub features: AmbulanceFeatures,
}

impl IncidentRecord {
    /// `[1, T^{A*}, I_b, I_m, χ^A, ρ^w, l, sin(πH/12), cos(πH/12)]`.
    pub fn design_row(&self) -> [f64; 9] {
        let f = &self.features;
        let (s, c) = (std::f64::consts::PI * self.hour as f64 / 12.0).sin_cos();
        [
            1.0,
            f.t_astar,
            f.big_intsects,
            f.mid_intsects,
            f.turns,
            f.pop_density,
            f.length_km,
            s,
            c,
        ]
    }
}

pub const AMBULANCE_FEATURES: [&str; 9] = [
    "(Intercept)",
    "t_astar",
    "big_intsects",
    "mid_intsects",
    "turns",
    "pop_density",
    "length_km",
    "sin_hour",
    "cos_hour",
];

/// Shipped log-linear ambulance response model (minutes).
pub fn default_ambulance_model() -> LinearModel<f64> {
    LinearModel::from_estimates(
        &AMBULANCE_FEATURES,
        &[1.7654, 0.0290, 0.0038, 0.0051, -0.0019, -0.0464, 0.0289, 0.0260, 0.0850],
        &[0.0395, 0.0086, 0.0025, 0.0013, 0.0006, 0.0119, 0.0066, 0.0133, 0.0137],
        0.514,
        3056,
    )
}

pub fn ambulance_dist(
    model: &LinearModel<f64>,
    rec: &IncidentRecord,
) -> Result<LogNormalDist<f64>, DemandError> {
    Ok(model.predict(&rec.design_row())?)
}

/// `count` response-time draws in minutes.
pub fn sample_ambulance_time<R: Rng + ?Sized>(
    model: &LinearModel<f64>,
    rec: &IncidentRecord,
    rng: &mut R,
    count: usize,
) -> Result<Vec<f64>, DemandError> {
    Ok(ambulance_dist(model, rec)?.sample(rng, count))
}

/// Normalised survival-odds weights `e_i ∝ (exp(decay·T_i) − 1)^γ` for one
/// scenario. Computed on the log scale.
pub fn demand_weights<T: Real>(t_minutes: &[T], gamma: T, decay: T) -> Result<Vec<T>, DemandError> {
    if t_minutes.is_empty() {
        return Err(DemandError::DegenerateWeights);
    }
    if let Some(t) = t_minutes.iter().find(|t| !(**t > T::zero()) || !t.is_finite()) {
        return Err(DemandError::InvalidInput(format!(
            "response time must be positive and finite, got {t}"
        )));
    }
    if !(gamma >= T::zero()) {
        return Err(DemandError::InvalidInput(format!("gamma must be >= 0, got {gamma}")));
    }
    let n = T::lit(t_minutes.len() as f64);
    if gamma == T::zero() {
        return Ok(vec![T::one() / n; t_minutes.len()]);
    }
    let logs: Vec<T> = t_minutes
        .iter()
        .map(|&t| {
            let z = decay * t;
            // log(e^z − 1) = z + log(1 − e^{−z})
            gamma * (z + (-(-z).exp()).ln_1p())
        })
        .collect();
    let total = log_sum_exp(&logs);
    if !total.is_finite() {
        return Err(DemandError::DegenerateWeights);
    }
    Ok(logs.iter().map(|l| (*l - total).exp()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: String,
    pub easting: f64,
    pub northing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub u: String,
    pub v: String,
    pub length_m: f64,
    pub maxspeed_ms: f64,
    /// Radians in `(−π, π]` for travel from `u` to `v`.
    pub azimuth_rad: f64,
    /// Density as read from file.
    pub pop_density: f64,
}

impl RoadEdge {
    pub fn travel_time_s(&self) -> f64 {
        self.length_m / self.maxspeed_ms
    }
}

/// Undirected road network with time weights.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<RoadNode>,
    edges: Vec<RoadEdge>,
    index: HashMap<String, usize>,
    /// `(edge, neighbour, forward)` per node.
    adjacency: Vec<Vec<(usize, usize, bool)>>,
}

/// A traversal step: edge index and whether it is walked `u → v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub edge: usize,
    pub forward: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoutePath {
    pub nodes: Vec<usize>,
    pub steps: Vec<Step>,
}

impl RoadGraph {
    pub fn new(nodes: Vec<RoadNode>, edges: Vec<RoadEdge>) -> Result<Self, DemandError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(n.easting.is_finite() && n.northing.is_finite()) {
                return Err(DemandError::InvalidGraph(format!("node '{}' has non-finite coordinates", n.id)));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(DemandError::InvalidGraph(format!("duplicate node id '{}'", n.id)));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (k, e) in edges.iter().enumerate() {
            if !(e.length_m > 0.0 && e.length_m.is_finite()) {
                return Err(DemandError::InvalidGraph(format!("edge {k} length must be positive")));
            }
            if !(e.maxspeed_ms > 0.0 && e.maxspeed_ms.is_finite()) {
                return Err(DemandError::InvalidGraph(format!("edge {k} maxspeed must be positive")));
            }
            if !(e.azimuth_rad.is_finite() && e.pop_density.is_finite() && e.pop_density >= 0.0) {
                return Err(DemandError::InvalidGraph(format!("edge {k} has invalid azimuth or density")));
            }
            let u = *index.get(&e.u).ok_or_else(|| DemandError::UnknownNode(e.u.clone()))?;
            let v = *index.get(&e.v).ok_or_else(|| DemandError::UnknownNode(e.v.clone()))?;
            adjacency[u].push((k, v, true));
            if u != v {
                adjacency[v].push((k, u, false));
            }
        }
        Ok(Self {
            nodes,
            edges,
            index,
            adjacency,
        })
    }

    pub fn nodes(&self) -> &[RoadNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn node_index(&self, id: &str) -> Result<usize, DemandError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| DemandError::UnknownNode(id.to_string()))
    }

    /// Number of incident edge ends.
    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Closest node by straight-line distance, lowest index on ties.
    pub fn nearest_node(&self, easting: f64, northing: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n.easting - easting).hypot(n.northing - northing);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Travel-direction azimuth of a step.
    pub fn step_azimuth(&self, step: Step) -> f64 {
        let a = self.edges[step.edge].azimuth_rad;
        if step.forward {
            a
        } else {
            wrap_pi(a + std::f64::consts::PI)
        }
    }

    /// Single-source Dijkstra over travel time in seconds.
    pub fn dijkstra(&self, source: usize) -> ShortestPathTree {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<(usize, Step)>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapItem(0.0, source));
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(edge, v, forward) in &self.adjacency[u] {
                let nd = d + self.edges[edge].travel_time_s();
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = Some((u, Step { edge, forward }));
                    heap.push(HeapItem(nd, v));
                }
            }
        }
        ShortestPathTree { source, dist, pred }
    }
}

fn wrap_pi(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = a.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w - tau
    } else {
        w
    }
}

#[derive(Debug, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct ShortestPathTree {
    pub source: usize,
    /// Seconds; `+inf` where unreachable.
    pub dist: Vec<f64>,
    pred: Vec<Option<(usize, Step)>>,
}

impl ShortestPathTree {
    /// Path from the source to `target`, or `None` when unreachable.
    pub fn path_to(&self, target: usize) -> Option<RoutePath> {
        if !self.dist[target].is_finite() {
            return None;
        }
        let mut nodes = vec![target];
        let mut steps = Vec::new();
        let mut cur = target;
        while let Some((prev, step)) = self.pred[cur] {
            steps.push(step);
            nodes.push(prev);
            cur = prev;
        }
        nodes.reverse();
        steps.reverse();
        Some(RoutePath { nodes, steps })
    }
}

/// Travel-time matrix between node sets.
#[derive(Debug, Clone)]
pub struct PathMatrix {
    /// Seconds, `origins × destinations`; `+inf` where unreachable.
    pub cost: Vec<Vec<f64>>,
    pub paths: Vec<Vec<Option<RoutePath>>>,
}

impl PathMatrix {
    pub fn unreachable_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.cost.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if !c.is_finite() {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

pub fn shortest_time_paths(
    graph: &RoadGraph,
    origins: &[&str],
    destinations: &[&str],
) -> Result<PathMatrix, DemandError> {
    let o: Vec<usize> = origins.iter().map(|id| graph.node_index(id)).collect::<Result<_, _>>()?;
    let d: Vec<usize> = destinations.iter().map(|id| graph.node_index(id)).collect::<Result<_, _>>()?;
    let mut cost = Vec::with_capacity(o.len());
    let mut paths = Vec::with_capacity(o.len());
    for &src in &o {
        let tree = graph.dijkstra(src);
        cost.push(d.iter().map(|&t| tree.dist[t]).collect());
        paths.push(d.iter().map(|&t| tree.path_to(t)).collect());
    }
    Ok(PathMatrix { cost, paths })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFeatures {
    /// Minutes.
    pub comp_time: f64,
    pub big_intsects: usize,
    pub mid_intsects: usize,
    pub turns: f64,
    pub pop_dense: f64,
    /// Kilometres.
    pub length: f64,
}

impl From<PathFeatures> for AmbulanceFeatures {
    fn from(p: PathFeatures) -> Self {
        Self {
            t_astar: p.comp_time,
            big_intsects: p.big_intsects as f64,
            mid_intsects: p.mid_intsects as f64,
            turns: p.turns,
            pop_density: p.pop_dense,
            length_km: p.length,
        }
    }
}

/// Route features along `path`. Intersection counts use interior nodes and
/// full-graph degrees; densities are scaled per 1000 m².
pub fn extract_path_features(
    graph: &RoadGraph,
    path: &RoutePath,
    total_time_s: f64,
) -> Result<PathFeatures, DemandError> {
    if path.nodes.len() != path.steps.len() + 1 {
        return Err(DemandError::BrokenPath(0));
    }
    for (k, step) in path.steps.iter().enumerate() {
        let e = graph.edges.get(step.edge).ok_or(DemandError::BrokenPath(k))?;
        let (from, to) = if step.forward { (&e.u, &e.v) } else { (&e.v, &e.u) };
        if graph.index[from] != path.nodes[k] || graph.index[to] != path.nodes[k + 1] {
            return Err(DemandError::BrokenPath(k));
        }
    }
    let interior = path.nodes.len().saturating_sub(1).max(1);
    let (mut big, mut mid) = (0, 0);
    for &node in path.nodes.iter().take(interior).skip(1) {
        match graph.degree(node) {
            d if d > 3 => big += 1,
            3 => mid += 1,
            _ => {}
        }
    }
    let mut turns = 0.0;
    let mut len = 0.0;
    let mut dens = 0.0;
    for &step in &path.steps {
        let e = &graph.edges[step.edge];
        turns += graph.step_azimuth(step).abs();
        len += e.length_m;
        dens += e.pop_density * DENSITY_SCALE * e.length_m;
    }
    Ok(PathFeatures {
        comp_time: total_time_s / 60.0,
        big_intsects: big,
        mid_intsects: mid,
        turns,
        pop_dense: if len > 0.0 { dens / len } else { 0.0 },
        length: len / 1000.0,
    })
}

/// Closest facility for one incident's cost row (seconds), returned with the
/// travel time in minutes. Ties go to the lowest index.
pub fn nearest_facility(row: &[f64], incident: usize) -> Result<(usize, f64), DemandError> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &c) in row.iter().enumerate() {
        if c.is_finite() && best.is_none_or(|(_, b)| c < b) {
            best = Some((j, c));
        }
    }
    best.map(|(j, c)| (j, c / 60.0))
        .ok_or(DemandError::AllUnreachable(incident))
}

/// Route features from the nearest station for every incident, snapping
/// locations to the closest graph node.
pub fn features_from_graph(
    graph: &RoadGraph,
    stations: &[Location],
    incidents: &[Location],
) -> Result<Vec<AmbulanceFeatures>, DemandError> {
    use rayon::prelude::*;
    if graph.nodes.is_empty() {
        return Err(DemandError::InvalidGraph("graph has no nodes".into()));
    }
    let station_nodes: Vec<usize> = stations
        .iter()
        .map(|s| graph.nearest_node(s.easting, s.northing).expect("non-empty graph"))
        .collect();
    incidents
        .par_iter()
        .enumerate()
        .map(|(i, inc)| {
            let node = graph.nearest_node(inc.easting, inc.northing).expect("non-empty graph");
            // undirected graph: one search from the incident covers all stations
            let tree = graph.dijkstra(node);
            let row: Vec<f64> = station_nodes.iter().map(|&s| tree.dist[s]).collect();
            let (j, _) = nearest_facility(&row, i)?;
            let mut path = tree.path_to(station_nodes[j]).expect("finite cost");
            path.nodes.reverse();
            path.steps.reverse();
            for s in &mut path.steps {
                s.forward = !s.forward;
            }
            Ok(extract_path_features(graph, &path, row[j])?.into())
        })
        .collect()
}

fn csv_err(path: &FsPath) -> impl Fn(csv::Error) -> DemandError + '_ {
    move |source| DemandError::Csv {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_road_graph(nodes_csv: &FsPath, edges_csv: &FsPath) -> Result<RoadGraph, DemandError> {
    let mut nodes = Vec::new();
    let mut rdr = csv::Reader::from_path(nodes_csv).map_err(csv_err(nodes_csv))?;
    for rec in rdr.deserialize() {
        nodes.push(rec.map_err(csv_err(nodes_csv))?);
    }
    let mut edges = Vec::new();
    let mut rdr = csv::Reader::from_path(edges_csv).map_err(csv_err(edges_csv))?;
    for rec in rdr.deserialize() {
        edges.push(rec.map_err(csv_err(edges_csv))?);
    }
    RoadGraph::new(nodes, edges)
}

pub fn write_road_graph(graph: &RoadGraph, nodes_csv: &FsPath, edges_csv: &FsPath) -> Result<(), DemandError> {
    let mut w = csv::Writer::from_path(nodes_csv).map_err(csv_err(nodes_csv))?;
    for n in &graph.nodes {
        w.serialize(n).map_err(csv_err(nodes_csv))?;
    }
    w.flush().map_err(|e| csv_err(nodes_csv)(e.into()))?;
    let mut w = csv::Writer::from_path(edges_csv).map_err(csv_err(edges_csv))?;
    for e in &graph.edges {
        w.serialize(e).map_err(csv_err(edges_csv))?;
    }
    w.flush().map_err(|e| csv_err(edges_csv)(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn node(id: &str, e: f64, n: f64) -> RoadNode {
        RoadNode {
            id: id.into(),
            easting: e,
            northing: n,
        }
    }

    fn edge(u: &str, v: &str, len: f64, speed: f64) -> RoadEdge {
        RoadEdge {
            u: u.into(),
            v: v.into(),
            length_m: len,
            maxspeed_ms: speed,
            azimuth_rad: 0.0,
            pop_density: 0.0,
        }
    }

    fn record(hour: u8) -> IncidentRecord {
        IncidentRecord {
            id: "a".into(),
            location: Location::default(),
            hour,
            features: AmbulanceFeatures::default(),
        }
    }

    #[test]
    fn ambulance_log_means() {
        let m = default_ambulance_model();
        assert!((m.mean(&record(0).design_row()).unwrap() - 1.8504).abs() < 1e-9);
        let six = m.mean(&record(6).design_row()).unwrap();
        assert!((six.exp() - 5.99).abs() < 0.01);
        let noon = m.mean(&record(12).design_row()).unwrap();
        let midnight = m.mean(&record(0).design_row()).unwrap();
        assert!((midnight - noon - 2.0 * 0.0850).abs() < 1e-12);
    }

    #[test]
    fn ambulance_sampling_is_seeded() {
        let m = default_ambulance_model();
        let a = sample_ambulance_time(&m, &record(3), &mut stream(1, &[]), 5).unwrap();
        let b = sample_ambulance_time(&m, &record(3), &mut stream(1, &[]), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn demand_weight_examples() {
        assert_eq!(demand_weights(&[7.0, 7.0], 1.0, SURVIVAL_DECAY).unwrap(), vec![0.5, 0.5]);
        let u = demand_weights(&[1.0, 5.0, 30.0], 0.0, SURVIVAL_DECAY).unwrap();
        assert!(u.iter().all(|w| *w == 1.0 / 3.0));
        let w = demand_weights(&[6.0, 12.0], 1.0, SURVIVAL_DECAY).unwrap();
        let a = 0.66f64.exp_m1();
        let b = 1.32f64.exp_m1();
        assert!((w[0] - a / (a + b)).abs() < 1e-12);
        assert!((w[0] - 0.25414).abs() < 1e-5);
        assert!(demand_weights(&[0.0], 1.0, SURVIVAL_DECAY).is_err());
        assert!(demand_weights::<f64>(&[], 1.0, SURVIVAL_DECAY).is_err());
    }

    #[test]
    fn line_graph_paths() {
        let g = RoadGraph::new(
            vec![node("a", 0.0, 0.0), node("b", 1.0, 0.0), node("c", 2.0, 0.0), node("z", 9.0, 9.0)],
            vec![edge("a", "b", 600.0, 10.0), edge("b", "c", 600.0, 10.0)],
        )
        .unwrap();
        let pm = shortest_time_paths(&g, &["a"], &["c", "a", "z"]).unwrap();
        assert_eq!(pm.cost[0][0], 120.0);
        assert_eq!(pm.paths[0][0].as_ref().unwrap().nodes, vec![0, 1, 2]);
        assert_eq!(pm.cost[0][1], 0.0);
        assert!(pm.paths[0][1].as_ref().unwrap().steps.is_empty());
        assert!(pm.cost[0][2].is_infinite());
        assert_eq!(pm.unreachable_pairs(), vec![(0, 2)]);
        assert!(matches!(shortest_time_paths(&g, &["q"], &["a"]), Err(DemandError::UnknownNode(_))));
    }

    fn star_fixture() -> RoadGraph {
        // b has degree 4 through the spurs; c has degree 3
        let mut e1 = edge("a", "b", 100.0, 10.0);
        e1.pop_density = 0.002;
        e1.azimuth_rad = 0.5;
        let mut e2 = edge("b", "c", 300.0, 10.0);
        e2.pop_density = 0.004;
        e2.azimuth_rad = -0.3;
        RoadGraph::new(
            vec![
                node("a", 0.0, 0.0),
                node("b", 1.0, 0.0),
                node("c", 2.0, 0.0),
                node("s1", 1.0, 1.0),
                node("s2", 1.0, -1.0),
                node("s3", 2.0, 1.0),
                node("s4", 2.0, -1.0),
            ],
            vec![
                e1,
                e2,
                edge("b", "s1", 50.0, 5.0),
                edge("b", "s2", 50.0, 5.0),
                edge("c", "s3", 50.0, 5.0),
                edge("c", "s4", 50.0, 5.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn path_feature_fixture() {
        let g = star_fixture();
        let tree = g.dijkstra(0);
        let path = tree.path_to(2).unwrap();
        let f = extract_path_features(&g, &path, tree.dist[2]).unwrap();
        assert_eq!((f.big_intsects, f.mid_intsects), (1, 0));
        assert!((f.turns - 0.8).abs() < 1e-12);
        assert!((f.pop_dense - 3.5).abs() < 1e-12);
        assert!((f.length - 0.4).abs() < 1e-12);
        assert!((f.comp_time - 40.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn degrees_come_from_full_graph() {
        // the path a-b-c alone would give b degree 2
        let g = star_fixture();
        assert_eq!(g.degree(1), 4);
        assert_eq!(g.degree(2), 3);
        let tree = g.dijkstra(0);
        let f = extract_path_features(&g, &tree.path_to(5).unwrap(), 0.0).unwrap();
        assert_eq!((f.big_intsects, f.mid_intsects), (1, 1));
    }

    #[test]
    fn broken_path_rejected() {
        let g = star_fixture();
        let p = RoutePath {
            nodes: vec![0, 2],
            steps: vec![Step { edge: 1, forward: true }],
        };
        assert!(matches!(extract_path_features(&g, &p, 0.0), Err(DemandError::BrokenPath(0))));
    }

    #[test]
    fn reverse_traversal_flips_azimuth() {
        let g = star_fixture();
        let a = g.step_azimuth(Step { edge: 0, forward: false });
        assert!((a - (0.5 - std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn nearest_facility_rules() {
        assert_eq!(nearest_facility(&[f64::INFINITY, 120.0, 300.0], 0).unwrap(), (1, 2.0));
        assert_eq!(nearest_facility(&[60.0, 60.0, 60.0], 0).unwrap().0, 0);
        assert_eq!(nearest_facility(&[30.0], 0).unwrap().0, 0);
        assert!(nearest_facility(&[f64::INFINITY], 4).is_err());
    }

    #[test]
    fn graph_csv_round_trip() {
        let g = star_fixture();
        let dir = tempfile::tempdir().unwrap();
        let (n, e) = (dir.path().join("nodes.csv"), dir.path().join("edges.csv"));
        write_road_graph(&g, &n, &e).unwrap();
        let back = read_road_graph(&n, &e).unwrap();
        assert_eq!(back.nodes(), g.nodes());
        assert_eq!(back.edges(), g.edges());
    }

    fn floyd_warshall(g: &RoadGraph) -> Vec<Vec<f64>> {
        let n = g.nodes().len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for e in g.edges() {
            let (u, v) = (g.node_index(&e.u).unwrap(), g.node_index(&e.v).unwrap());
            let t = e.travel_time_s();
            if t < d[u][v] {
                d[u][v] = t;
                d[v][u] = t;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    fn random_graph(n: usize, m: usize, seed: u64) -> RoadGraph {
        let mut r = stream(seed, &[]);
        let nodes = (0..n).map(|i| node(&i.to_string(), i as f64, 0.0)).collect();
        let edges = (0..m)
            .map(|_| {
                let u = r.random_range(0..n);
                let v = r.random_range(0..n);
                // integer seconds keep path sums exact
                edge(&u.to_string(), &v.to_string(), r.random_range(1..100) as f64 * 10.0, 10.0)
            })
            .collect();
        RoadGraph::new(nodes, edges).unwrap()
    }

    proptest! {
        #[test]
        fn dijkstra_matches_floyd_warshall(n in 2usize..=30, m in 0usize..80, seed in any::<u64>()) {
            let g = random_graph(n, m, seed);
            let fw = floyd_warshall(&g);
            for s in 0..n {
                let t = g.dijkstra(s);
                for v in 0..n {
                    prop_assert_eq!(t.dist[v], fw[s][v]);
                }
            }
        }

        #[test]
        fn triangle_inequality(seed in any::<u64>()) {
            let g = random_graph(20, 40, seed);
            let d: Vec<Vec<f64>> = (0..20).map(|s| g.dijkstra(s).dist).collect();
            for a in 0..20 { for b in 0..20 { for c in 0..20 {
                prop_assert!(d[a][c] <= d[a][b] + d[b][c]);
            }}}
        }

        #[test]
        fn demand_weights_normalised(ts in prop::collection::vec(0.1f64..60.0, 1..40), gi in 0usize..4) {
            let gamma = [0.0, 0.5, 1.0, 2.0][gi];
            let w = demand_weights(&ts, gamma, SURVIVAL_DECAY).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if gamma > 0.0 {
                for i in 0..ts.len() { for j in 0..ts.len() {
                    if ts[i] < ts[j] { prop_assert!(w[i] <= w[j]); }
                }}
            }
        }
    }
}
