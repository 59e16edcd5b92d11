//! Fit → design → report orchestration shared by the CLI and tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{hash_file, BundleError, RegionBundle};
use crate::config::Config;
use crate::demand::IncidentRecord;
use crate::designer::{
    prior_predictive, run_design, site_scores, ChainTrace, DesignError, DesignInputs, PriorParams,
    PriorPredictive, SiteRecord,
};
use crate::environment::{SeasonCode, WindModel};
use crate::flight::DronePhaseModels;
use crate::plot;
use crate::posthoc::{
    best_beta, cost_report, coverage_table, eval_coverage, expected_missions, qaly_gain, reliability_curve,
    sample_eval_scenarios, seasonal_table, select_sites, ActivationSummary, CostReport, CoverageStats,
    PosthocError, ReliabilityCurve, SeasonRow,
};
use crate::rng::{self, tag};
use crate::surrogate::LinearModel;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Posthoc(#[from] PosthocError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("no traces for beta {0} in {1}")]
    MissingTraces(f64, String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes rows as CSV with a fixed header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let wr = |e: csv::Error| PipelineError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(wr)?;
    for r in rows {
        w.write_record(r).map_err(wr)?;
    }
    let bytes = w.into_inner().expect("in-memory writer");
    write_text(path, &String::from_utf8(bytes).expect("utf-8"))
}

/// Region after NFZ filtering with resolved surrogates.
pub struct Region {
    pub sites: Vec<SiteRecord>,
    pub incidents: Vec<IncidentRecord>,
    pub excluded_sites: Vec<String>,
    pub excluded_incidents: Vec<String>,
    pub drone: DronePhaseModels,
    pub ambulance: LinearModel<f64>,
    pub wind: WindModel,
}

impl Region {
    pub fn from_bundle(bundle: &RegionBundle) -> Result<Self, PipelineError> {
        let f = bundle.filtered()?;
        if !f.excluded_sites.is_empty() || !f.excluded_incidents.is_empty() {
            log::info!(
                "no-fly zones exclude {} sites and {} incidents",
                f.excluded_sites.len(),
                f.excluded_incidents.len()
            );
        }
        if f.sites.is_empty() {
            return Err(DesignError::EmptyCandidateSet.into());
        }
        if f.incidents.is_empty() {
            return Err(DesignError::EmptyIncidentSet.into());
        }
        Ok(Self {
            sites: f.sites,
            incidents: f.incidents,
            excluded_sites: f.excluded_sites,
            excluded_incidents: f.excluded_incidents,
            drone: bundle.drone_models(),
            ambulance: bundle.ambulance_model(),
            wind: bundle.wind()?.clone(),
        })
    }

    pub fn inputs(&self) -> DesignInputs<'_> {
        DesignInputs {
            sites: &self.sites,
            incidents: &self.incidents,
            drone: &self.drone,
            ambulance: &self.ambulance,
            wind: &self.wind,
        }
    }

    pub fn site_ids(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.id.clone()).collect()
    }
}

pub fn resolve_prior(cfg: &Config, sites: &[SiteRecord]) -> Result<PriorParams, PipelineError> {
    Ok(cfg.prior.resolve(sites)?)
}

/// Directory name for one β, stable under float formatting.
pub fn beta_dir(root: &Path, beta: f64) -> PathBuf {
    root.join(format!("beta_{beta:08.3}"))
}

/// On-disk chain: initial state plus the flipped site per iteration
/// (`-1` for a rejected proposal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactTrace {
    pub season: u32,
    pub hour: u8,
    pub initial: String,
    pub moves: Vec<i32>,
    pub loss: Vec<f64>,
}

fn bits(x: &[bool]) -> String {
    x.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

impl CompactTrace {
    pub fn from_trace(t: &ChainTrace) -> Self {
        let mut prev = t.initial.clone();
        let moves = t
            .states
            .iter()
            .map(|s| {
                let flipped = prev.iter().zip(s).position(|(a, b)| a != b);
                prev.clone_from(s);
                flipped.map_or(-1, |j| j as i32)
            })
            .collect();
        Self {
            season: t.season,
            hour: t.hour,
            initial: bits(&t.initial),
            moves,
            loss: t.loss.clone(),
        }
    }

    pub fn to_trace(&self) -> ChainTrace {
        let mut x: Vec<bool> = self.initial.chars().map(|c| c == '1').collect();
        let initial = x.clone();
        let mut states = Vec::with_capacity(self.moves.len());
        for &m in &self.moves {
            if m >= 0 {
                x[m as usize] = !x[m as usize];
            }
            states.push(x.clone());
        }
        let accepted: Vec<bool> = self.moves.iter().map(|m| *m >= 0).collect();
        let n_acc = accepted.iter().filter(|a| **a).count();
        ChainTrace {
            season: self.season,
            hour: self.hour,
            initial,
            acceptance_rate: if accepted.is_empty() { 0.0 } else { n_acc as f64 / accepted.len() as f64 },
            states,
            accepted,
            loss: self.loss.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub beta: f64,
    pub seed: u64,
    /// Hash of the inputs that produced the chains.
    pub fingerprint: String,
    pub site_ids: Vec<String>,
    pub burn_in: f64,
    pub chains: Vec<CompactTrace>,
}

impl TraceFile {
    pub fn traces(&self) -> BTreeMap<(u32, u8), ChainTrace> {
        self.chains
            .iter()
            .map(|c| ((c.season, c.hour), c.to_trace()))
            .collect()
    }
}

/// Hash of the bundle contents, the resolved config and β.
pub fn fingerprint(bundle_hashes: &BTreeMap<String, String>, cfg: &Config, beta: f64) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (k, v) in bundle_hashes {
        h.update(k.as_bytes());
        h.update(v.as_bytes());
    }
    h.update(cfg.to_toml_string().as_bytes());
    h.update(beta.to_bits().to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    pub beta: f64,
    pub n_selected: usize,
    pub n_new_selected: usize,
    pub mean_acceptance: f64,
    pub activation: ActivationSummary,
}

pub fn summarise_design(
    traces: &BTreeMap<(u32, u8), ChainTrace>,
    region: &Region,
    cfg: &Config,
    beta: f64,
) -> Result<DesignSummary, PipelineError> {
    let activation = select_sites(traces, &region.site_ids(), cfg.design.burn_in, cfg.posthoc.tau)?;
    let n_new_selected = activation
        .x_star
        .iter()
        .zip(&region.sites)
        .filter(|(on, s)| **on && s.is_new)
        .count();
    let mean_acceptance = traces.values().map(|t| t.acceptance_rate).sum::<f64>() / traces.len().max(1) as f64;
    Ok(DesignSummary {
        beta,
        n_selected: activation.n_selected(),
        n_new_selected,
        mean_acceptance,
        activation,
    })
}

/// Run (or reuse) the chains for one β and write them under `out`.
pub fn design_beta(
    region: &Region,
    cfg: &Config,
    beta: f64,
    out: &Path,
    fingerprint: &str,
) -> Result<(TraceFile, DesignSummary, bool), PipelineError> {
    let dir = beta_dir(out, beta);
    let trace_path = dir.join("traces.json");
    if trace_path.exists() {
        if let Ok(existing) = read_json::<TraceFile>(&trace_path) {
            if existing.fingerprint == fingerprint {
                log::info!("beta {beta}: reusing {}", trace_path.display());
                let summary = summarise_design(&existing.traces(), region, cfg, beta)?;
                return Ok((existing, summary, true));
            }
        }
        log::info!("beta {beta}: stale traces, rerunning");
    }
    let mut dcfg = cfg.design.clone();
    dcfg.beta = beta;
    let prior = resolve_prior(cfg, &region.sites)?;
    let hours: Vec<u8> = (0..24).collect();
    let run = run_design(&region.inputs(), &dcfg, &prior, &SeasonCode::ALL, &hours)?;
    let file = TraceFile {
        beta,
        seed: dcfg.seed,
        fingerprint: fingerprint.to_string(),
        site_ids: region.site_ids(),
        burn_in: dcfg.burn_in,
        chains: run.traces.values().map(CompactTrace::from_trace).collect(),
    };
    let summary = summarise_design(&run.traces, region, cfg, beta)?;
    write_json(&trace_path, &file)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_loss_trace(&dir.join("loss_trace.csv"), &run.traces)?;
    write_chains(&dir, &file)?;
    Ok((file, summary, false))
}

/// Per-site accepted flip counts for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainAcceptance {
    pub season: u32,
    pub hour: u8,
    pub acceptance_rate: f64,
    pub accepted_flips: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceCounts {
    pub site_ids: Vec<String>,
    /// Summed over chains.
    pub accepted_flips: Vec<usize>,
    pub chains: Vec<ChainAcceptance>,
}

/// `chains/s{season}_h{hour}.csv` with every iterate, plus
/// `acceptance_counts.json`.
fn write_chains(dir: &Path, file: &TraceFile) -> Result<(), PipelineError> {
    let p = file.site_ids.len();
    let mut total = vec![0usize; p];
    let mut chains = Vec::with_capacity(file.chains.len());
    for c in &file.chains {
        let mut flips = vec![0usize; p];
        let mut x: Vec<bool> = c.initial.chars().map(|ch| ch == '1').collect();
        let mut rows = Vec::with_capacity(c.moves.len());
        for (it, (&m, loss)) in c.moves.iter().zip(&c.loss).enumerate() {
            if m >= 0 {
                x[m as usize] = !x[m as usize];
                flips[m as usize] += 1;
            }
            rows.push(vec![(it + 1).to_string(), u8::from(m >= 0).to_string(), loss.to_string(), bits(&x)]);
        }
        write_csv(
            &dir.join("chains").join(format!("s{}_h{:02}.csv", c.season, c.hour)),
            &["iteration", "accepted", "loss", "state"],
            &rows,
        )?;
        let n_acc: usize = flips.iter().sum();
        for (t, f) in total.iter_mut().zip(&flips) {
            *t += f;
        }
        chains.push(ChainAcceptance {
            season: c.season,
            hour: c.hour,
            acceptance_rate: if c.moves.is_empty() { 0.0 } else { n_acc as f64 / c.moves.len() as f64 },
            accepted_flips: flips,
        });
    }
    write_json(
        &dir.join("acceptance_counts.json"),
        &AcceptanceCounts {
            site_ids: file.site_ids.clone(),
            accepted_flips: total,
            chains,
        },
    )
}

fn write_loss_trace(path: &Path, traces: &BTreeMap<(u32, u8), ChainTrace>) -> Result<(), PipelineError> {
    let n = traces.values().map(|t| t.loss.len()).max().unwrap_or(0);
    let rows: Vec<Vec<String>> = (0..n)
        .map(|it| {
            let v: Vec<f64> = traces.values().filter_map(|t| t.loss.get(it).copied()).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![(it + 1).to_string(), mean.to_string(), lo.to_string(), hi.to_string()]
        })
        .collect();
    write_csv(path, &["iteration", "mean_loss", "min_loss", "max_loss"], &rows)
}

pub fn load_traces(dir: &Path, beta: f64) -> Result<TraceFile, PipelineError> {
    let p = beta_dir(dir, beta).join("traces.json");
    if !p.exists() {
        return Err(PipelineError::MissingTraces(beta, dir.display().to_string()));
    }
    read_json(&p)
}

/// Every β with traces under `dir`, ascending.
pub fn available_betas(dir: &Path) -> Result<Vec<f64>, PipelineError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(b) = name.strip_prefix("beta_").and_then(|s| s.parse::<f64>().ok()) {
            if entry.path().join("traces.json").exists() {
                out.push(b);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub beta: f64,
    pub selected: Vec<String>,
    pub cost: CostReport,
    pub coverage: Vec<CoverageStats>,
    pub seasonal: Vec<SeasonRow>,
    pub reliability: ReliabilityCurve,
}

/// Evaluate the selected network for one β and write its artifacts.
pub fn report_beta(
    region: &Region,
    cfg: &Config,
    traces: &TraceFile,
    out: &Path,
) -> Result<BetaReport, PipelineError> {
    let beta = traces.beta;
    let summary = summarise_design(&traces.traces(), region, cfg, beta)?;
    let x = &summary.activation.x_star;
    let limits = cfg.design.limits();
    let inputs = region.inputs();
    let eval = sample_eval_scenarios(x, &inputs, &limits, cfg.posthoc.k, cfg.posthoc.seed)?;
    let dq = qaly_gain(&eval.drone_min, &eval.ambulance_min, &cfg.qaly)?;
    let em = expected_missions(&eval.drone_min, &eval.ambulance_min, &cfg.qaly)?;
    let cost = cost_report(x, &region.sites, dq, em, &cfg.costs)?;
    let cov = coverage_table(&eval);
    let seasonal = seasonal_table(&summary.activation, &eval);
    let n_active = summary.n_selected;
    let m_max = cfg.reliability.m_max.unwrap_or(n_active).min(n_active);
    let a = eval_coverage(&inputs, &eval, &limits)?;
    let q = cfg.reliability.downtime(&region.sites);
    let rel = reliability_curve(x, &a, &q, m_max, cfg.reliability.replicates, cfg.posthoc.seed)?;

    let dir = beta_dir(out, beta);
    write_activation(&dir, &summary.activation)?;
    write_json(&dir.join("cost.json"), &cost)?;
    write_csv(
        &dir.join("coverage.csv"),
        &["response", "calls", "mean_minutes", "pct_under_6", "pct_under_8"],
        &cov.iter()
            .map(|c| {
                vec![
                    c.response.clone(),
                    c.calls.to_string(),
                    c.mean_minutes.to_string(),
                    c.pct_under_6.to_string(),
                    c.pct_under_8.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        &dir.join("seasonal.csv"),
        &["season", "sites", "mean_wind_ms"],
        &seasonal
            .iter()
            .map(|s| vec![s.season.to_string(), s.sites.to_string(), s.mean_wind_ms.to_string()])
            .collect::<Vec<_>>(),
    )?;
    write_reliability(&dir, &rel)?;
    Ok(BetaReport {
        beta,
        selected: summary
            .activation
            .site_ids
            .iter()
            .zip(x)
            .filter(|(_, on)| **on)
            .map(|(id, _)| id.clone())
            .collect(),
        cost,
        coverage: cov.to_vec(),
        seasonal,
        reliability: rel,
    })
}

pub fn write_reliability(dir: &Path, rel: &ReliabilityCurve) -> Result<(), PipelineError> {
    write_csv(
        &dir.join("reliability.csv"),
        &["m", "c_hat", "se"],
        &rel.m
            .iter()
            .zip(&rel.c_hat)
            .zip(&rel.c_hat_se)
            .map(|((m, c), s)| vec![m.to_string(), c.to_string(), s.to_string()])
            .collect::<Vec<_>>(),
    )?;
    let pts: Vec<(f64, f64)> = rel.m.iter().zip(&rel.c_hat).map(|(m, c)| (*m as f64, *c)).collect();
    write_text(
        &dir.join("reliability.svg"),
        &plot::line_chart("Coverage under station failures", "failed stations m", "expected coverage", &[(
            "C_m", pts,
        )]),
    )
}

fn write_activation(dir: &Path, a: &ActivationSummary) -> Result<(), PipelineError> {
    write_json(&dir.join("activation.json"), a)?;
    let rows: Vec<Vec<String>> = a
        .site_ids
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let mut r = vec![id.clone(), a.p_j[j].to_string()];
            r.extend(a.p_js[j].iter().map(f64::to_string));
            r.push((a.x_star[j] as u8).to_string());
            r
        })
        .collect();
    write_csv(
        &dir.join("activation.csv"),
        &["site", "p_year", "p_s1", "p_s2", "p_s3", "p_s4", "selected"],
        &rows,
    )?;
    let hours: Vec<String> = (0..24).map(|h| h.to_string()).collect();
    for s in SeasonCode::ALL {
        let values: Vec<Vec<f64>> = a.p_jsh.iter().map(|by_s| by_s[s.index()].clone()).collect();
        write_text(
            &dir.join(format!("activation_s{}.svg", s.value())),
            &plot::heatmap(
                &format!("Activation probability, season {}", s.value()),
                &a.site_ids,
                &hours,
                &values,
            ),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub betas: Vec<f64>,
    pub best_beta: Option<f64>,
    pub reports: Vec<BetaReport>,
}

pub fn write_sweep(out: &Path, reports: &[BetaReport], cfg: &Config) -> Result<SweepReport, PipelineError> {
    let costs: Vec<CostReport> = reports.iter().map(|r| r.cost.clone()).collect();
    let best = best_beta(&costs, &cfg.costs).map(|i| reports[i].beta);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let c = &r.cost;
            vec![
                r.beta.to_string(),
                c.n_sites.to_string(),
                c.n_new.to_string(),
                c.delta_qaly.mean.to_string(),
                c.delta_qaly.sd.to_string(),
                c.expected_missions.mean.to_string(),
                c.expected_missions.sd.to_string(),
                c.c_infra.to_string(),
                c.c_op.to_string(),
                c.c_pers.to_string(),
                c.total.to_string(),
                if c.cost_per_qaly.is_finite() { c.cost_per_qaly.to_string() } else { "inf".into() },
                (c.cost_effective as u8).to_string(),
                (Some(r.beta) == best).then_some("1").unwrap_or("0").to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("sweep.csv"),
        &[
            "beta",
            "sites",
            "new_sites",
            "qaly_mean",
            "qaly_sd",
            "missions_mean",
            "missions_sd",
            "c_infra",
            "c_op",
            "c_pers",
            "total_cost",
            "cost_per_qaly",
            "cost_effective",
            "best",
        ],
        &rows,
    )?;
    let sites: Vec<(f64, f64)> = reports.iter().map(|r| (r.beta, r.cost.n_sites as f64)).collect();
    let qaly: Vec<(f64, f64)> = reports.iter().map(|r| (r.beta, r.cost.delta_qaly.mean)).collect();
    write_text(
        &out.join("sites_by_beta.svg"),
        &plot::line_chart("Selected sites", "beta", "sites", &[("sites", sites)]),
    )?;
    write_text(
        &out.join("qaly_by_beta.svg"),
        &plot::line_chart("QALY gain", "beta", "QALY", &[("QALY", qaly)]),
    )?;
    let sweep = SweepReport {
        betas: reports.iter().map(|r| r.beta).collect(),
        best_beta: best,
        reports: reports.to_vec(),
    };
    write_json(&out.join("report.json"), &sweep)?;
    Ok(sweep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCheck {
    pub theta: [f64; 4],
    pub analytic_mean: f64,
    pub analytic_sd: f64,
    pub empirical_mean: f64,
    pub draws: usize,
    /// `histogram[c]` = draws with `c` active sites.
    pub histogram: Vec<usize>,
}

pub fn prior_check(
    sites: &[SiteRecord],
    prior: &PriorParams,
    draws: usize,
    seed: u64,
) -> Result<PriorCheck, PipelineError> {
    let scores = site_scores(sites, prior)?;
    let pp: PriorPredictive = prior_predictive(&scores, &mut rng::stream(seed, &[tag::PRIOR]), draws);
    let mut histogram = vec![0usize; sites.len() + 1];
    for &c in &pp.counts {
        histogram[c] += 1;
    }
    Ok(PriorCheck {
        theta: prior.theta,
        analytic_mean: pp.analytic_mean,
        analytic_sd: pp.analytic_var.sqrt(),
        empirical_mean: pp.empirical_mean,
        draws,
        histogram,
    })
}

pub fn write_prior_check(out: &Path, pc: &PriorCheck) -> Result<(), PipelineError> {
    write_json(&out.join("prior_check.json"), pc)?;
    write_csv(
        &out.join("prior_check.csv"),
        &["active_sites", "count"],
        &pc.histogram
            .iter()
            .enumerate()
            .map(|(c, n)| vec![c.to_string(), n.to_string()])
            .collect::<Vec<_>>(),
    )?;
    let bars: Vec<(f64, f64)> = pc
        .histogram
        .iter()
        .enumerate()
        .map(|(c, n)| (c as f64, *n as f64 / pc.draws.max(1) as f64))
        .collect();
    write_text(
        &out.join("prior_check.svg"),
        &plot::bar_chart(
            &format!("Prior predictive, theta0 = {}", pc.theta[0]),
            "active sites",
            "probability",
            &bars,
        ),
    )
}

/// Provenance written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: Config,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &Config) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.design.seed,
            config: cfg.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<(), PipelineError> {
        self.inputs.insert(name.to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn add_inputs(&mut self, prefix: &str, hashes: &BTreeMap<String, String>) {
        for (k, v) in hashes {
            self.inputs.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        write_json(&dir.join("manifest.json"), self)
    }
}
