//! Posterior consumption: site selection, QALY and cost, and robustness to
//! station downtime.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{ambulance_dist, DemandError};
use crate::designer::{ChainTrace, DesignError, DesignInputs, SiteRecord};
use crate::environment::{sample_wind, EnvironmentError, SeasonCode, WindSample};
use crate::flight::{
    coverage_matrix, flight_geometry, CoverageLimits, CoverageMatrix, FlightDists, FlightError, FlightQuery,
    Location,
};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum PosthocError {
    #[error("no chain for season {season}, hour {hour}")]
    MissingConfiguration { season: u32, hour: u8 },
    #[error("QALY gain {0} is negative or not finite")]
    NonPositiveQALY(f64),
    #[error("{m} failures requested but only {active} sites are active")]
    TooManyFailures { m: usize, active: usize },
    #[error("downtime probability for site {0} is outside (0, 1)")]
    InvalidDowntime(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Flight(#[from] FlightError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
}

/// `[qaly]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QalyConfig {
    pub horizon_years: f64,
    pub witnessed_fraction: f64,
    pub shockable_fraction: f64,
    pub survival_decay: f64,
    /// Minutes for a bystander to retrieve and attach the AED.
    pub bystander_delay_min: f64,
    /// Minutes for paramedics to reach the patient after the ambulance arrives.
    pub ambulance_handover_min: f64,
    /// Add the bystander delay a second time inside the survival term.
    pub double_shock_delay: bool,
}

impl Default for QalyConfig {
    fn default() -> Self {
        Self {
            horizon_years: 12.0,
            witnessed_fraction: 0.22,
            shockable_fraction: 0.26,
            survival_decay: crate::demand::SURVIVAL_DECAY,
            bystander_delay_min: 2.0,
            ambulance_handover_min: 1.0,
            double_shock_delay: false,
        }
    }
}

impl QalyConfig {
    pub fn factor(&self) -> f64 {
        self.horizon_years * self.witnessed_fraction * self.shockable_fraction
    }

    pub fn survival(&self, minutes: f64) -> f64 {
        (-self.survival_decay * minutes).exp()
    }
}

/// `[costs]` section, in pounds per year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub drone: f64,
    pub charging_port: f64,
    pub maintenance: f64,
    pub new_site: f64,
    pub personnel: f64,
    pub per_mission: f64,
    pub nice_lower: f64,
    pub nice_upper: f64,
    /// Ceiling on cost per QALY when picking the best β.
    pub selection_threshold: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            drone: 10_000.0,
            charging_port: 2_000.0,
            maintenance: 2_000.0,
            new_site: 5_000.0,
            personnel: 200_000.0,
            per_mission: 20.0,
            nice_lower: 25_000.0,
            nice_upper: 35_000.0,
            selection_threshold: 30_000.0,
        }
    }
}

/// `[reliability]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReliabilityConfig {
    pub q_new: f64,
    pub q_existing: f64,
    pub replicates: usize,
    /// Largest m evaluated; `None` runs up to every active site.
    pub m_max: Option<usize>,
}

impl Default for ReliabilityConfig {
    fn default() -> Self {
        Self {
            q_new: 0.15,
            q_existing: 0.05,
            replicates: 200,
            m_max: None,
        }
    }
}

impl ReliabilityConfig {
    pub fn downtime(&self, sites: &[SiteRecord]) -> Vec<f64> {
        sites
            .iter()
            .map(|s| if s.is_new { self.q_new } else { self.q_existing })
            .collect()
    }
}

/// `[posthoc]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosthocConfig {
    pub tau: f64,
    /// Evaluation scenarios.
    pub k: usize,
    pub seed: u64,
}

impl Default for PosthocConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            k: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample mean and (n − 1) standard deviation; zero spread for one value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, sd: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSummary {
    pub site_ids: Vec<String>,
    /// `p_jsh[j][s][h]`.
    pub p_jsh: Vec<Vec<Vec<f64>>>,
    pub p_js: Vec<[f64; 4]>,
    pub p_j: Vec<f64>,
    pub tau: f64,
    pub x_star: Vec<bool>,
    pub x_star_seasonal: [Vec<bool>; 4],
}

impl ActivationSummary {
    pub fn n_selected(&self) -> usize {
        self.x_star.iter().filter(|x| **x).count()
    }

    pub fn n_selected_in(&self, season: SeasonCode) -> usize {
        self.x_star_seasonal[season.index()].iter().filter(|x| **x).count()
    }
}

/// Threshold yearly activation frequencies at `tau`.
pub fn select_sites(
    traces: &BTreeMap<(u32, u8), ChainTrace>,
    site_ids: &[String],
    burn_in: f64,
    tau: f64,
) -> Result<ActivationSummary, PosthocError> {
    let p = site_ids.len();
    let mut p_jsh = vec![vec![vec![0.0; 24]; 4]; p];
    for s in SeasonCode::ALL {
        for h in 0..24u8 {
            let t = traces
                .get(&(s.value(), h))
                .ok_or(PosthocError::MissingConfiguration { season: s.value(), hour: h })?;
            let act = t.activation(burn_in);
            if act.len() != p {
                return Err(PosthocError::DimensionMismatch(format!(
                    "trace has {} sites, expected {p}",
                    act.len()
                )));
            }
            for (j, a) in act.into_iter().enumerate() {
                p_jsh[j][s.index()][h as usize] = a;
            }
        }
    }
    let p_js: Vec<[f64; 4]> = p_jsh
        .iter()
        .map(|by_s| {
            let mut out = [0.0; 4];
            for (o, hours) in out.iter_mut().zip(by_s) {
                *o = hours.iter().sum::<f64>() / 24.0;
            }
            out
        })
        .collect();
    let p_j: Vec<f64> = p_js.iter().map(|s| s.iter().sum::<f64>() / 4.0).collect();
    let x_star_seasonal = std::array::from_fn(|s| p_js.iter().map(|v| v[s] >= tau).collect());
    Ok(ActivationSummary {
        site_ids: site_ids.to_vec(),
        x_star: p_j.iter().map(|&v| v >= tau).collect(),
        p_jsh,
        p_js,
        p_j,
        tau,
        x_star_seasonal,
    })
}

/// Drone and ambulance response-time samples for one network: `[k][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScenarios {
    pub seasons: Vec<SeasonCode>,
    /// `wind[k][j]`.
    pub wind: Vec<Vec<WindSample>>,
    /// Fastest battery-feasible drone flight in minutes, if any.
    pub drone_min: Vec<Vec<Option<f64>>>,
    pub ambulance_min: Vec<Vec<f64>>,
}

/// Season of evaluation scenario `k`; scenarios cycle through the year.
pub fn eval_season(k: usize) -> SeasonCode {
    SeasonCode::ALL[k % 4]
}

pub fn sample_eval_scenarios(
    x_star: &[bool],
    inputs: &DesignInputs<'_>,
    limits: &CoverageLimits,
    k: usize,
    seed: u64,
) -> Result<EvalScenarios, PosthocError> {
    let p = inputs.sites.len();
    if x_star.len() != p {
        return Err(PosthocError::DimensionMismatch(format!("{} flags for {p} sites", x_star.len())));
    }
    let seasons: Vec<SeasonCode> = (0..k).map(eval_season).collect();
    let wind: Vec<Vec<WindSample>> = (0..k)
        .map(|kk| {
            inputs
                .sites
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    let mut r = rng::stream(seed, &[rng::tag::EVAL_WIND, kk as u64, j as u64]);
                    Ok(sample_wind(inputs.wind, s.location.xy(), seasons[kk], &mut r, 1)?[0])
                })
                .collect::<Result<Vec<_>, PosthocError>>()
        })
        .collect::<Result<_, _>>()?;
    let active: Vec<usize> = (0..p).filter(|&j| x_star[j]).collect();
    let amb_dists = inputs
        .incidents
        .iter()
        .map(|r| ambulance_dist(inputs.ambulance, r))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<(Vec<Option<f64>>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|kk| {
            let mut drone = Vec::with_capacity(inputs.incidents.len());
            let mut amb = Vec::with_capacity(inputs.incidents.len());
            for (i, inc) in inputs.incidents.iter().enumerate() {
                let mut best: Option<f64> = None;
                for &j in &active {
                    let q = FlightQuery::from_geometry(
                        flight_geometry(&inputs.sites[j].location, &inc.location),
                        wind[kk][j],
                    );
                    let d = FlightDists::new(inputs.drone, &q)?;
                    let mut r = rng::stream(seed, &[rng::tag::EVAL_DRONE, kk as u64, i as u64, j as u64]);
                    let draw = d.sample(&mut r);
                    if draw.battery_ok(limits) {
                        let m = draw.time_s / 60.0;
                        best = Some(best.map_or(m, |b: f64| b.min(m)));
                    }
                }
                drone.push(best);
                let mut r = rng::stream(seed, &[rng::tag::EVAL_AMBULANCE, kk as u64, i as u64]);
                amb.push(amb_dists[i].sample_one(&mut r));
            }
            Ok((drone, amb))
        })
        .collect::<Result<_, PosthocError>>()?;
    let (drone_min, ambulance_min) = rows.into_iter().unzip();
    Ok(EvalScenarios {
        seasons,
        wind,
        drone_min,
        ambulance_min,
    })
}

/// Coverage matrices under the evaluation wind draws.
pub fn eval_coverage(
    inputs: &DesignInputs<'_>,
    eval: &EvalScenarios,
    limits: &CoverageLimits,
) -> Result<Vec<CoverageMatrix>, PosthocError> {
    let sites: Vec<Location> = inputs.sites.iter().map(|s| s.location).collect();
    let incidents: Vec<Location> = inputs.incidents.iter().map(|r| r.location).collect();
    eval.wind
        .iter()
        .map(|w| Ok(coverage_matrix(inputs.drone, &sites, &incidents, w, limits)?))
        .collect()
}

fn check_shapes(drone_min: &[Vec<Option<f64>>], ambulance_min: &[Vec<f64>]) -> Result<(), PosthocError> {
    if drone_min.len() != ambulance_min.len()
        || drone_min.iter().zip(ambulance_min).any(|(d, a)| d.len() != a.len())
    {
        return Err(PosthocError::DimensionMismatch("drone and ambulance samples differ in shape".into()));
    }
    Ok(())
}

/// Expected QALY gain over the evaluation scenarios.
pub fn qaly_gain(
    drone_min: &[Vec<Option<f64>>],
    ambulance_min: &[Vec<f64>],
    cfg: &QalyConfig,
) -> Result<MeanSd, PosthocError> {
    check_shapes(drone_min, ambulance_min)?;
    let extra = if cfg.double_shock_delay { cfg.bystander_delay_min } else { 0.0 };
    let per_k: Vec<f64> = drone_min
        .iter()
        .zip(ambulance_min)
        .map(|(d, a)| {
            let sum: f64 = d
                .iter()
                .zip(a)
                .filter_map(|(td, ta)| {
                    let t_eff = td.map(|t| t + cfg.bystander_delay_min)?;
                    Some(
                        (cfg.survival(t_eff + extra) - cfg.survival(ta + cfg.ambulance_handover_min)).max(0.0),
                    )
                })
                .sum();
            cfg.factor() * sum
        })
        .collect();
    Ok(MeanSd::of(&per_k))
}

/// Incidents per scenario where the drone-delivered AED beats the paramedics.
pub fn expected_missions(
    drone_min: &[Vec<Option<f64>>],
    ambulance_min: &[Vec<f64>],
    cfg: &QalyConfig,
) -> Result<MeanSd, PosthocError> {
    check_shapes(drone_min, ambulance_min)?;
    let per_k: Vec<f64> = drone_min
        .iter()
        .zip(ambulance_min)
        .map(|(d, a)| {
            d.iter()
                .zip(a)
                .filter(|(td, ta)| {
                    td.is_some_and(|t| t + cfg.bystander_delay_min + cfg.ambulance_handover_min < **ta)
                })
                .count() as f64
        })
        .collect();
    Ok(MeanSd::of(&per_k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n_sites: usize,
    pub n_new: usize,
    pub delta_qaly: MeanSd,
    pub expected_missions: MeanSd,
    pub c_infra: f64,
    pub c_pers: f64,
    pub c_op: f64,
    pub total: f64,
    /// `+∞` when the QALY gain is zero.
    #[serde(with = "finite_or_null")]
    pub cost_per_qaly: f64,
    pub cost_effective: bool,
    pub within_nice_band: bool,
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn cost_report(
    x_star: &[bool],
    sites: &[SiteRecord],
    delta_qaly: MeanSd,
    expected_missions: MeanSd,
    costs: &CostConfig,
) -> Result<CostReport, PosthocError> {
    if x_star.len() != sites.len() {
        return Err(PosthocError::DimensionMismatch(format!(
            "{} flags for {} sites",
            x_star.len(),
            sites.len()
        )));
    }
    if !(delta_qaly.mean >= 0.0) || !delta_qaly.mean.is_finite() {
        return Err(PosthocError::NonPositiveQALY(delta_qaly.mean));
    }
    let per_site = costs.drone + costs.charging_port + costs.maintenance;
    let mut n_sites = 0;
    let mut n_new = 0;
    let mut c_infra = 0.0;
    for (on, s) in x_star.iter().zip(sites) {
        if *on {
            n_sites += 1;
            c_infra += per_site;
            if s.is_new {
                n_new += 1;
                c_infra += costs.new_site;
            }
        }
    }
    let c_op = costs.per_mission * expected_missions.mean;
    let total = c_infra + c_op + costs.personnel;
    let cost_per_qaly = if delta_qaly.mean > 0.0 {
        total / delta_qaly.mean
    } else {
        f64::INFINITY
    };
    Ok(CostReport {
        n_sites,
        n_new,
        delta_qaly,
        expected_missions,
        c_infra,
        c_pers: costs.personnel,
        c_op,
        total,
        cost_per_qaly,
        cost_effective: cost_per_qaly <= costs.nice_upper,
        within_nice_band: (costs.nice_lower..=costs.nice_upper).contains(&cost_per_qaly),
    })
}

/// Index of the β with most QALY gained among those under the cost ceiling.
pub fn best_beta(reports: &[CostReport], costs: &CostConfig) -> Option<usize> {
    reports
        .iter()
        .enumerate()
        .filter(|(_, r)| r.cost_per_qaly < costs.selection_threshold)
        .max_by(|a, b| a.1.delta_qaly.mean.total_cmp(&b.1.delta_qaly.mean))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub response: String,
    /// Mean number of incidents reached per scenario.
    pub calls: f64,
    pub mean_minutes: f64,
    pub pct_under_6: f64,
    pub pct_under_8: f64,
}

fn coverage_stats(label: &str, times: &[Vec<Option<f64>>]) -> CoverageStats {
    let k = times.len().max(1) as f64;
    let mut reached = 0usize;
    let mut total_min = 0.0;
    let (mut u6, mut u8, mut all) = (0usize, 0usize, 0usize);
    for row in times {
        for t in row {
            all += 1;
            if let Some(t) = t {
                reached += 1;
                total_min += t;
                u6 += (*t < 6.0) as usize;
                u8 += (*t < 8.0) as usize;
            }
        }
    }
    let pct = |c: usize| if all == 0 { 0.0 } else { 100.0 * c as f64 / all as f64 };
    CoverageStats {
        response: label.to_string(),
        calls: reached as f64 / k,
        mean_minutes: if reached == 0 { f64::NAN } else { total_min / reached as f64 },
        pct_under_6: pct(u6),
        pct_under_8: pct(u8),
    }
}

/// Ambulance and drone response-time coverage rows.
pub fn coverage_table(eval: &EvalScenarios) -> [CoverageStats; 2] {
    let amb: Vec<Vec<Option<f64>>> = eval
        .ambulance_min
        .iter()
        .map(|r| r.iter().map(|t| Some(*t)).collect())
        .collect();
    [coverage_stats("ambulance", &amb), coverage_stats("drone", &eval.drone_min)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonRow {
    pub season: u32,
    pub sites: usize,
    pub mean_wind_ms: f64,
}

/// Seasonal site counts and mean site wind speed across evaluation scenarios.
pub fn seasonal_table(summary: &ActivationSummary, eval: &EvalScenarios) -> Vec<SeasonRow> {
    SeasonCode::ALL
        .iter()
        .map(|&s| {
            let speeds: Vec<f64> = eval
                .wind
                .iter()
                .zip(&eval.seasons)
                .filter(|(_, es)| **es == s)
                .flat_map(|(w, _)| w.iter().map(|v| v.speed))
                .collect();
            SeasonRow {
                season: s.value(),
                sites: summary.n_selected_in(s),
                mean_wind_ms: if speeds.is_empty() {
                    f64::NAN
                } else {
                    speeds.iter().sum::<f64>() / speeds.len() as f64
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub m: Vec<usize>,
    pub c_hat: Vec<f64>,
    /// Monte-Carlo standard error across failure replicates.
    pub c_hat_se: Vec<f64>,
    pub replicates: usize,
    pub scenarios: usize,
    pub q: Vec<f64>,
}

/// Order in which `candidates` fail: ascending `Exp(1)/q_j` keys, which is
/// successive sampling proportional to the remaining downtime probabilities.
pub fn failure_order<R: Rng + ?Sized>(candidates: &[usize], q: &[f64], rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&j| {
            let u: f64 = rng.random();
            (-(1.0 - u).ln() / q[j], j)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, j)| j).collect()
}

/// Mean aggregated coverage over incidents for every failure count
/// `0..=m_max`, with one failure ordering per replicate shared by all m.
pub fn reliability_curve(
    x_star: &[bool],
    scenarios: &[CoverageMatrix],
    q: &[f64],
    m_max: usize,
    replicates: usize,
    seed: u64,
) -> Result<ReliabilityCurve, PosthocError> {
    let p = x_star.len();
    if q.len() != p || scenarios.iter().any(|a| a.n_sites() != p) {
        return Err(PosthocError::DimensionMismatch("downtime or coverage width differs from sites".into()));
    }
    if scenarios.is_empty() {
        return Err(PosthocError::DimensionMismatch("no coverage scenarios".into()));
    }
    let active: Vec<usize> = (0..p).filter(|&j| x_star[j]).collect();
    if m_max > active.len() {
        return Err(PosthocError::TooManyFailures { m: m_max, active: active.len() });
    }
    if let Some(j) = active.iter().find(|&&j| !(q[j] > 0.0 && q[j] < 1.0)) {
        return Err(PosthocError::InvalidDowntime(*j));
    }
    let replicates = replicates.max(1);
    // per_r[r][m] = coverage averaged over scenarios and incidents
    let per_r: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let order = failure_order(&active, q, &mut rng::stream(seed, &[rng::tag::FAILURES, r as u64]));
            let mut sums = vec![0.0; m_max + 1];
            for a in scenarios {
                let n = a.n_incidents();
                for i in 0..n {
                    let row = a.row(i);
                    let mut log_miss = 0.0;
                    let mut certain = 0usize;
                    for &j in &active {
                        if row[j] >= 1.0 {
                            certain += 1;
                        } else {
                            log_miss += (-row[j]).ln_1p();
                        }
                    }
                    let cover = |lm: f64, c: usize| if c > 0 { 1.0 } else { -lm.exp_m1() };
                    sums[0] += cover(log_miss, certain) / n as f64;
                    for (m, &j) in order.iter().take(m_max).enumerate() {
                        if row[j] >= 1.0 {
                            certain -= 1;
                        } else {
                            log_miss -= (-row[j]).ln_1p();
                        }
                        let c = if m + 1 == active.len() { 0.0 } else { cover(log_miss, certain) };
                        sums[m + 1] += c / n as f64;
                    }
                }
            }
            sums.iter().map(|s| s / scenarios.len() as f64).collect()
        })
        .collect();
    let mut c_hat = Vec::with_capacity(m_max + 1);
    let mut c_hat_se = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let v: Vec<f64> = per_r.iter().map(|r| r[m]).collect();
        let s = MeanSd::of(&v);
        c_hat.push(s.mean);
        c_hat_se.push(s.sd / (v.len() as f64).sqrt());
    }
    Ok(ReliabilityCurve {
        m: (0..=m_max).collect(),
        c_hat,
        c_hat_se,
        replicates,
        scenarios: scenarios.len(),
        q: q.to_vec(),
    })
}
