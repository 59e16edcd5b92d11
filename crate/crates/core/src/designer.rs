//! Gibbs-posterior site activation: loss, prior, and single-flip
//! Metropolis–Hastings over cached scenarios.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{ambulance_dist, demand_weights, DemandError, IncidentRecord};
use crate::environment::{wind_scenarios, EnvironmentError, SeasonCode, WindField, WindSample};
use crate::flight::{coverage_matrix, CoverageLimits, CoverageMatrix, DronePhaseModels, FlightError, Location};
use crate::rng;
use crate::scalar::{logistic, softplus, Real};
use crate::surrogate::LinearModel;

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("no candidate sites")]
    EmptyCandidateSet,
    #[error("no incidents")]
    EmptyIncidentSet,
    #[error("site '{0}' has non-positive population density")]
    NonPositiveDensity(String),
    #[error("cannot derive a default weight: maximum {0} is not positive")]
    DegenerateCovariate(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Flight(#[from] FlightError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub id: String,
    pub location: Location,
    pub is_new: bool,
    pub cost: f64,
    pub pop_density: f64,
    /// Metres to the nearest existing infrastructure.
    pub dist_to_infra: f64,
}

/// `[design]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub beta: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Dispatch-weight separation exponent.
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    /// Scenarios per season.
    pub k: usize,
    /// MH iterations per season-hour chain.
    pub n_iter: usize,
    pub seed: u64,
    pub time_limit_s: f64,
    pub vtol_limit_ah: f64,
    pub cruise_limit_ah: f64,
    /// Fraction of each chain discarded before summarising.
    pub burn_in: f64,
    pub survival_decay: f64,
    pub odds_clip: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            beta: 10.0,
            eta: 0.2,
            gamma: 1.0,
            lambda: 5.0,
            a: 2.0,
            b: 15.0,
            k: 100,
            n_iter: 1000,
            seed: 0,
            time_limit_s: 360.0,
            vtol_limit_ah: 4.0,
            cruise_limit_ah: 12.0,
            burn_in: 0.2,
            survival_decay: crate::demand::SURVIVAL_DECAY,
            odds_clip: 1e-9,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |m: &str| Err(DesignError::InvalidConfig(m.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.eta >= 0.0) || !(self.gamma >= 0.0) {
            return bad("eta and gamma must be >= 0");
        }
        if !(self.lambda > 0.0) || !(self.a > 0.0) || !(self.b > 0.0) {
            return bad("lambda, a and b must be > 0");
        }
        if self.k == 0 {
            return bad("K must be >= 1");
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return bad("burn_in must lie in [0, 1)");
        }
        if !(self.time_limit_s > 0.0 && self.vtol_limit_ah > 0.0 && self.cruise_limit_ah > 0.0) {
            return bad("coverage limits must be positive");
        }
        if !(self.odds_clip > 0.0 && self.odds_clip < 0.5) {
            return bad("odds_clip must lie in (0, 0.5)");
        }
        Ok(())
    }

    pub fn limits(&self) -> CoverageLimits {
        CoverageLimits {
            time_s: self.time_limit_s,
            vtol_ah: self.vtol_limit_ah,
            cruise_ah: self.cruise_limit_ah,
        }
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            eta: self.eta,
            a: self.a,
            b: self.b,
        }
    }
}

/// `[prior]` section. Unset weights take their data-derived defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub theta0: f64,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub theta3: Option<f64>,
    pub d_thresh: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            theta0: -1.0,
            theta1: None,
            theta2: None,
            theta3: None,
            d_thresh: 3000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub theta: [f64; 4],
    pub d_thresh: f64,
}

impl PriorConfig {
    pub fn resolve(&self, sites: &[SiteRecord]) -> Result<PriorParams, DesignError> {
        let need_defaults = self.theta1.is_none() || self.theta2.is_none() || self.theta3.is_none();
        let (d1, d2, d3) = if need_defaults {
            default_thetas(sites)?
        } else {
            (0.0, 0.0, 0.0)
        };
        if !(self.d_thresh > 0.0) {
            return Err(DesignError::InvalidConfig("d_thresh must be > 0".into()));
        }
        Ok(PriorParams {
            theta: [
                self.theta0,
                self.theta1.unwrap_or(d1),
                self.theta2.unwrap_or(d2),
                self.theta3.unwrap_or(d3),
            ],
            d_thresh: self.d_thresh,
        })
    }
}

/// `(θ₁, θ₂, θ₃) = (1 / max log ρ, 1 / max c, 1)`.
pub fn default_thetas(sites: &[SiteRecord]) -> Result<(f64, f64, f64), DesignError> {
    if sites.is_empty() {
        return Err(DesignError::EmptyCandidateSet);
    }
    let mut max_log_rho = f64::NEG_INFINITY;
    let mut max_cost = f64::NEG_INFINITY;
    for s in sites {
        if !(s.pop_density > 0.0) {
            return Err(DesignError::NonPositiveDensity(s.id.clone()));
        }
        max_log_rho = max_log_rho.max(s.pop_density.ln());
        max_cost = max_cost.max(s.cost);
    }
    if !(max_log_rho > 0.0) {
        return Err(DesignError::DegenerateCovariate("log population density"));
    }
    if !(max_cost > 0.0) {
        return Err(DesignError::DegenerateCovariate("site cost"));
    }
    Ok((1.0 / max_log_rho, 1.0 / max_cost, 1.0))
}

/// Per-site additive prior score `g_j`.
pub fn site_scores(sites: &[SiteRecord], prior: &PriorParams) -> Result<Vec<f64>, DesignError> {
    let [t0, t1, t2, t3] = prior.theta;
    sites
        .iter()
        .map(|s| {
            if !(s.pop_density > 0.0) {
                return Err(DesignError::NonPositiveDensity(s.id.clone()));
            }
            let prox = if s.is_new {
                ((s.dist_to_infra - prior.d_thresh) / prior.d_thresh).min(0.0)
            } else {
                0.0
            };
            Ok(t0 + t1 * s.pop_density.ln() - t2 * s.cost + t3 * prox)
        })
        .collect()
}

/// `log π₀(x)` up to its normalising constant.
pub fn log_prior(x: &[bool], scores: &[f64]) -> f64 {
    x.iter().zip(scores).filter(|(on, _)| **on).map(|(_, g)| g).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPredictive {
    pub counts: Vec<usize>,
    pub analytic_mean: f64,
    pub analytic_var: f64,
    pub empirical_mean: f64,
}

/// Active-site counts under the prior, where sites are independent
/// Bernoulli(logistic(g_j)).
pub fn prior_predictive<R: Rng + ?Sized>(scores: &[f64], rng: &mut R, draws: usize) -> PriorPredictive {
    let probs: Vec<f64> = scores.iter().map(|&g| logistic(g)).collect();
    let counts: Vec<usize> = (0..draws)
        .map(|_| probs.iter().filter(|&&p| rng.random::<f64>() < p).count())
        .collect();
    let empirical_mean = counts.iter().sum::<usize>() as f64 / draws.max(1) as f64;
    PriorPredictive {
        analytic_mean: probs.iter().sum(),
        analytic_var: probs.iter().map(|p| p * (1.0 - p)).sum(),
        empirical_mean,
        counts,
    }
}

/// `φ(P) = −a · log(1 + exp(−b (P − 0.5)))`.
pub fn coverage_penalty<T: Real>(p: T, a: T, b: T) -> T {
    -a * softplus(-b * (p - T::lit(0.5)))
}

/// Row-normalised `(A/(1−A))^λ`, with `A` clipped to `[ε, 1−ε]`.
pub fn dispatch_weights(a: &CoverageMatrix, lambda: f64, clip: f64) -> Vec<f64> {
    let p = a.n_sites();
    let mut out = vec![0.0; a.n_incidents() * p];
    for i in 0..a.n_incidents() {
        let logs: Vec<f64> = a
            .row(i)
            .iter()
            .map(|&v| {
                let c = v.clamp(clip, 1.0 - clip);
                lambda * (c.ln() - (-c).ln_1p())
            })
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        for (o, l) in out[i * p..(i + 1) * p].iter_mut().zip(&logs) {
            *o = (l - m).exp() / total;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub eta: f64,
    pub a: f64,
    pub b: f64,
}

/// One environmental scenario: coverage, dispatch weights, and the
/// per-site service credit `c_j = Σ_i w_ij A_ij`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub a: CoverageMatrix,
    pub w: Vec<f64>,
    pub credit: Vec<f64>,
}

impl Scenario {
    pub fn new(a: CoverageMatrix, lambda: f64, clip: f64) -> Self {
        let w = dispatch_weights(&a, lambda, clip);
        let p = a.n_sites();
        let mut credit = vec![0.0; p];
        for i in 0..a.n_incidents() {
            for (j, c) in credit.iter_mut().enumerate() {
                *c += w[i * p + j] * a.get(i, j);
            }
        }
        Self { a, w, credit }
    }
}

/// SAA loss, evaluated densely. `demand[k]` holds the weights for scenario k.
pub fn sample_loss(
    x: &[bool],
    scenarios: &[Scenario],
    demand: &[Vec<f64>],
    params: &LossParams,
) -> Result<f64, DesignError> {
    if scenarios.is_empty() || scenarios.len() != demand.len() {
        return Err(DesignError::DimensionMismatch(format!(
            "{} scenarios, {} demand vectors",
            scenarios.len(),
            demand.len()
        )));
    }
    let mut total = 0.0;
    for (sc, e) in scenarios.iter().zip(demand) {
        let n = sc.a.n_incidents();
        if sc.a.n_sites() != x.len() || e.len() != n {
            return Err(DesignError::DimensionMismatch(format!(
                "state has {} sites, coverage is {}x{}, demand has {}",
                x.len(),
                n,
                sc.a.n_sites(),
                e.len()
            )));
        }
        let u1: f64 = (0..n)
            .map(|i| e[i] * coverage_penalty(crate::flight::aggregate_row(x, sc.a.row(i)), params.a, params.b))
            .sum();
        let u2: f64 = x.iter().zip(&sc.credit).filter(|(on, _)| **on).map(|(_, c)| c).sum();
        total += u1 + params.eta / n as f64 * u2;
    }
    Ok(-total / scenarios.len() as f64)
}

/// Coverage probabilities below this are dropped from the incremental state.
pub const NEGLIGIBLE_COVERAGE: f64 = 1e-15;

#[derive(Debug, Clone, Copy)]
struct Entry {
    i: u32,
    log_miss: f64,
    certain: bool,
}

/// Sparse per-season coverage columns shared by the 24 hourly chains.
#[derive(Debug, Clone)]
pub struct SeasonKernel {
    n: usize,
    p: usize,
    /// `cols[k][j]`.
    cols: Vec<Vec<Vec<Entry>>>,
    /// `credit[k][j]`.
    credit: Vec<Vec<f64>>,
}

impl SeasonKernel {
    pub fn new(scenarios: &[Scenario]) -> Result<Self, DesignError> {
        let first = scenarios
            .first()
            .ok_or_else(|| DesignError::DimensionMismatch("no scenarios".into()))?;
        let (n, p) = (first.a.n_incidents(), first.a.n_sites());
        let mut cols = Vec::with_capacity(scenarios.len());
        for sc in scenarios {
            if sc.a.n_incidents() != n || sc.a.n_sites() != p {
                return Err(DesignError::DimensionMismatch("scenario shapes differ".into()));
            }
            let mut c = vec![Vec::new(); p];
            for i in 0..n {
                for (j, &a) in sc.a.row(i).iter().enumerate() {
                    if a >= NEGLIGIBLE_COVERAGE {
                        c[j].push(Entry {
                            i: i as u32,
                            log_miss: if a < 1.0 { (-a).ln_1p() } else { 0.0 },
                            certain: a >= 1.0,
                        });
                    }
                }
            }
            cols.push(c);
        }
        Ok(Self {
            n,
            p,
            cols,
            credit: scenarios.iter().map(|s| s.credit.clone()).collect(),
        })
    }

    pub fn n_incidents(&self) -> usize {
        self.n
    }

    pub fn n_sites(&self) -> usize {
        self.p
    }

    pub fn n_scenarios(&self) -> usize {
        self.cols.len()
    }
}

/// Incremental MH chain over `x ∈ {0,1}^p`.
pub struct Chain<'a> {
    kernel: &'a SeasonKernel,
    demand: &'a [Vec<f64>],
    scores: &'a [f64],
    params: LossParams,
    beta: f64,
    x: Vec<bool>,
    /// Indexed `k * n + i`.
    log_miss: Vec<f64>,
    certain: Vec<u32>,
    phi: Vec<f64>,
    loss: f64,
    pending: Vec<(usize, f64, u32, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub site: usize,
    pub accepted: bool,
    pub loss: f64,
}

impl<'a> Chain<'a> {
    pub fn new(
        kernel: &'a SeasonKernel,
        demand: &'a [Vec<f64>],
        scores: &'a [f64],
        params: LossParams,
        beta: f64,
        x0: Vec<bool>,
    ) -> Result<Self, DesignError> {
        if x0.len() != kernel.p || scores.len() != kernel.p {
            return Err(DesignError::DimensionMismatch(format!(
                "state {} and scores {} for {} sites",
                x0.len(),
                scores.len(),
                kernel.p
            )));
        }
        if demand.len() != kernel.n_scenarios() || demand.iter().any(|e| e.len() != kernel.n) {
            return Err(DesignError::DimensionMismatch("demand weights do not match scenarios".into()));
        }
        let kn = kernel.n_scenarios() * kernel.n;
        let mut chain = Self {
            kernel,
            demand,
            scores,
            params,
            beta,
            x: vec![false; kernel.p],
            log_miss: vec![0.0; kn],
            certain: vec![0; kn],
            phi: vec![coverage_penalty(0.0, params.a, params.b); kn],
            loss: 0.0,
            pending: Vec::new(),
        };
        for (j, on) in x0.iter().enumerate() {
            if *on {
                chain.toggle(j);
            }
        }
        chain.loss = chain.full_loss();
        Ok(chain)
    }

    pub fn state(&self) -> &[bool] {
        &self.x
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn log_prior(&self) -> f64 {
        log_prior(&self.x, self.scores)
    }

    fn penalty(&self, log_miss: f64, certain: u32) -> f64 {
        let p = if certain > 0 { 1.0 } else { -log_miss.exp_m1() };
        coverage_penalty(p, self.params.a, self.params.b)
    }

    fn full_loss(&self) -> f64 {
        let (n, k) = (self.kernel.n, self.kernel.n_scenarios());
        let mut total = 0.0;
        for kk in 0..k {
            let e = &self.demand[kk];
            let u1: f64 = (0..n).map(|i| e[i] * self.phi[kk * n + i]).sum();
            let u2: f64 = self
                .x
                .iter()
                .zip(&self.kernel.credit[kk])
                .filter(|(on, _)| **on)
                .map(|(_, c)| c)
                .sum();
            total += u1 + self.params.eta / n as f64 * u2;
        }
        -total / k as f64
    }

    /// Loss change from flipping site `j`; stages the state update.
    fn stage_flip(&mut self, j: usize) -> f64 {
        let (n, k) = (self.kernel.n, self.kernel.n_scenarios());
        let sign = if self.x[j] { -1.0 } else { 1.0 };
        self.pending.clear();
        let mut gain = 0.0;
        for kk in 0..k {
            let e = &self.demand[kk];
            let mut u1 = 0.0;
            for ent in &self.kernel.cols[kk][j] {
                let idx = kk * n + ent.i as usize;
                let (lm, c) = if ent.certain {
                    (self.log_miss[idx], (self.certain[idx] as i64 + sign as i64) as u32)
                } else {
                    (self.log_miss[idx] + sign * ent.log_miss, self.certain[idx])
                };
                let phi = self.penalty(lm, c);
                u1 += e[ent.i as usize] * (phi - self.phi[idx]);
                self.pending.push((idx, lm, c, phi));
            }
            gain += u1 + sign * self.params.eta / n as f64 * self.kernel.credit[kk][j];
        }
        -gain / k as f64
    }

    fn commit(&mut self, j: usize, delta: f64) {
        for &(idx, lm, c, phi) in &self.pending {
            self.log_miss[idx] = lm;
            self.certain[idx] = c;
            self.phi[idx] = phi;
        }
        self.x[j] = !self.x[j];
        self.loss += delta;
    }

    fn toggle(&mut self, j: usize) {
        let d = self.stage_flip(j);
        self.commit(j, d);
    }

    /// Loss of the configuration with site `j` flipped.
    pub fn proposal_loss(&mut self, j: usize) -> f64 {
        self.loss + self.stage_flip(j)
    }

    /// One single-site-flip Metropolis–Hastings update.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> StepOutcome {
        let j = rng.random_range(0..self.kernel.p);
        let delta = self.stage_flip(j);
        let dprior = if self.x[j] { -self.scores[j] } else { self.scores[j] };
        let log_alpha = -self.beta * delta + dprior;
        let u: f64 = rng.random();
        let accepted = log_alpha >= 0.0 || u.ln() < log_alpha;
        if accepted {
            self.commit(j, delta);
        }
        StepOutcome {
            site: j,
            accepted,
            loss: self.loss,
        }
    }

    /// Recompute the loss from scratch, discarding accumulated rounding.
    pub fn refresh(&mut self) {
        let (n, k) = (self.kernel.n, self.kernel.n_scenarios());
        self.log_miss.iter_mut().for_each(|v| *v = 0.0);
        self.certain.iter_mut().for_each(|v| *v = 0);
        for kk in 0..k {
            for (j, col) in self.kernel.cols[kk].iter().enumerate() {
                if !self.x[j] {
                    continue;
                }
                for ent in col {
                    let idx = kk * n + ent.i as usize;
                    if ent.certain {
                        self.certain[idx] += 1;
                    } else {
                        self.log_miss[idx] += ent.log_miss;
                    }
                }
            }
        }
        for idx in 0..k * n {
            self.phi[idx] = self.penalty(self.log_miss[idx], self.certain[idx]);
        }
        self.loss = self.full_loss();
    }
}

/// Stored output of one season-hour chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub season: u32,
    pub hour: u8,
    pub initial: Vec<bool>,
    pub states: Vec<Vec<bool>>,
    pub accepted: Vec<bool>,
    pub loss: Vec<f64>,
    pub acceptance_rate: f64,
}

impl ChainTrace {
    /// Index of the first retained iterate.
    pub fn burn_in_index(&self, fraction: f64) -> usize {
        ((self.states.len() as f64 * fraction).floor() as usize).min(self.states.len().saturating_sub(1))
    }

    /// Activation frequency of every site after burn-in. A chain with no
    /// iterations reports its initial state.
    pub fn activation(&self, burn_in: f64) -> Vec<f64> {
        if self.states.is_empty() {
            return self.initial.iter().map(|&on| on as u8 as f64).collect();
        }
        let p = self.initial.len();
        let kept = &self.states[self.burn_in_index(burn_in)..];
        let mut freq = vec![0.0; p];
        for s in kept {
            for (f, &on) in freq.iter_mut().zip(s) {
                if on {
                    *f += 1.0;
                }
            }
        }
        freq.iter_mut().for_each(|f| *f /= kept.len().max(1) as f64);
        freq
    }
}

/// Run `n_iter` MH steps and record every iterate.
pub fn run_chain<R: Rng + ?Sized>(
    chain: &mut Chain<'_>,
    n_iter: usize,
    rng: &mut R,
    season: u32,
    hour: u8,
) -> ChainTrace {
    let initial = chain.state().to_vec();
    let mut states = Vec::with_capacity(n_iter);
    let mut accepted = Vec::with_capacity(n_iter);
    let mut loss = Vec::with_capacity(n_iter);
    for _ in 0..n_iter {
        let out = chain.step(rng);
        states.push(chain.state().to_vec());
        accepted.push(out.accepted);
        loss.push(out.loss);
    }
    let n_acc = accepted.iter().filter(|a| **a).count();
    ChainTrace {
        season,
        hour,
        initial,
        states,
        accepted,
        loss,
        acceptance_rate: if n_iter == 0 { 0.0 } else { n_acc as f64 / n_iter as f64 },
    }
}

/// Surrogates and fields consumed by the design stage.
pub struct DesignInputs<'a> {
    pub sites: &'a [SiteRecord],
    pub incidents: &'a [IncidentRecord],
    pub drone: &'a DronePhaseModels,
    pub ambulance: &'a LinearModel<f64>,
    pub wind: &'a dyn WindField,
}

/// Per-season scenario cache: wind draws and coverage scenarios.
#[derive(Debug, Clone)]
pub struct SeasonCache {
    pub season: SeasonCode,
    pub wind: Vec<Vec<WindSample>>,
    pub scenarios: Vec<Scenario>,
}

pub fn build_season_cache(
    inputs: &DesignInputs<'_>,
    cfg: &DesignConfig,
    season: SeasonCode,
) -> Result<SeasonCache, DesignError> {
    let xy: Vec<(f64, f64)> = inputs.sites.iter().map(|s| s.location.xy()).collect();
    let wind = wind_scenarios(inputs.wind, &xy, season, cfg.k, cfg.seed, rng::tag::WIND)?;
    let site_locs: Vec<Location> = inputs.sites.iter().map(|s| s.location).collect();
    let inc_locs: Vec<Location> = inputs.incidents.iter().map(|r| r.location).collect();
    let limits = cfg.limits();
    let scenarios = wind
        .iter()
        .map(|w| {
            let mut a = coverage_matrix(inputs.drone, &site_locs, &inc_locs, w, &limits)?;
            a.site_ids = inputs.sites.iter().map(|s| s.id.clone()).collect();
            a.incident_ids = inputs.incidents.iter().map(|r| r.id.clone()).collect();
            Ok(Scenario::new(a, cfg.lambda, cfg.odds_clip))
        })
        .collect::<Result<Vec<_>, DesignError>>()?;
    Ok(SeasonCache {
        season,
        wind,
        scenarios,
    })
}

/// `K` ambulance-time draws per incident at `hour`: `out[k][i]` in minutes.
pub fn ambulance_scenarios(
    incidents: &[IncidentRecord],
    model: &LinearModel<f64>,
    hour: u8,
    k: usize,
    seed: u64,
    keys: &[u64],
) -> Result<Vec<Vec<f64>>, DesignError> {
    let mut out = vec![vec![0.0; incidents.len()]; k];
    for (i, rec) in incidents.iter().enumerate() {
        let rec_h = IncidentRecord {
            hour,
            ..rec.clone()
        };
        let dist = ambulance_dist(model, &rec_h)?;
        let mut stream_keys = keys.to_vec();
        stream_keys.push(i as u64);
        let mut r = rng::stream(seed, &stream_keys);
        for row in out.iter_mut() {
            row[i] = dist.sample_one(&mut r);
        }
    }
    Ok(out)
}

pub fn hourly_demand(
    inputs: &DesignInputs<'_>,
    cfg: &DesignConfig,
    season: SeasonCode,
    hour: u8,
) -> Result<Vec<Vec<f64>>, DesignError> {
    let times = ambulance_scenarios(
        inputs.incidents,
        inputs.ambulance,
        hour,
        cfg.k,
        cfg.seed,
        &[rng::tag::AMBULANCE, season.value() as u64, hour as u64],
    )?;
    times
        .iter()
        .map(|t| Ok(demand_weights(t, cfg.gamma, cfg.survival_decay)?))
        .collect()
}

/// Initial state: existing infrastructure on, new sites off.
pub fn incumbent_state(sites: &[SiteRecord]) -> Vec<bool> {
    sites.iter().map(|s| !s.is_new).collect()
}

#[derive(Debug, Clone)]
pub struct DesignRun {
    pub traces: BTreeMap<(u32, u8), ChainTrace>,
    pub seasons: Vec<SeasonCache>,
}

/// Posterior sampling for every (season, hour) pair.
pub fn run_design(
    inputs: &DesignInputs<'_>,
    cfg: &DesignConfig,
    prior: &PriorParams,
    seasons: &[SeasonCode],
    hours: &[u8],
) -> Result<DesignRun, DesignError> {
    cfg.validate()?;
    if inputs.sites.is_empty() {
        return Err(DesignError::EmptyCandidateSet);
    }
    if inputs.incidents.is_empty() {
        return Err(DesignError::EmptyIncidentSet);
    }
    let scores = site_scores(inputs.sites, prior)?;
    let caches: Vec<SeasonCache> = seasons
        .par_iter()
        .map(|&s| build_season_cache(inputs, cfg, s))
        .collect::<Result<_, _>>()?;
    let kernels: Vec<SeasonKernel> = caches
        .iter()
        .map(|c| SeasonKernel::new(&c.scenarios))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, u8)> = (0..seasons.len())
        .flat_map(|s| hours.iter().map(move |&h| (s, h)))
        .collect();
    let x0 = incumbent_state(inputs.sites);
    let traces: Vec<ChainTrace> = jobs
        .par_iter()
        .map(|&(si, h)| {
            let season = seasons[si];
            let demand = hourly_demand(inputs, cfg, season, h)?;
            let mut chain = Chain::new(&kernels[si], &demand, &scores, cfg.loss_params(), cfg.beta, x0.clone())?;
            let mut r = rng::stream(cfg.seed, &[rng::tag::CHAIN, season.value() as u64, h as u64]);
            Ok(run_chain(&mut chain, cfg.n_iter, &mut r, season.value(), h))
        })
        .collect::<Result<_, DesignError>>()?;
    Ok(DesignRun {
        traces: traces.into_iter().map(|t| ((t.season, t.hour), t)).collect(),
        seasons: caches,
    })
}
