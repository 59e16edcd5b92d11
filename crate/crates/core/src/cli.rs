//! Command-line surface.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bundle::{hash_tree, BundleError, RegionBundle};
use crate::config::{Config, ConfigError};
use crate::demand::{features_from_graph, DemandError};
use crate::designer::DesignError;
use crate::flight::Location;
use crate::pipeline::{
    available_betas, design_beta, fingerprint, load_traces, prior_check, report_beta, resolve_prior,
    write_csv, write_json, write_prior_check, write_reliability, write_sweep, Manifest,
    PipelineError, Region,
};
use crate::posthoc::{eval_coverage, reliability_curve, sample_eval_scenarios, select_sites, PosthocError};
use crate::simulate::{simulate_region, SimulateError, SyntheticSpec};
use crate::surrogate::{
    kfold_cv, read_dataset, save_gp, save_linear, Fitter, GpFitOptions, GpFitter, KernelSpec,
    OlsFitter, SurrogateError, Trend,
};

pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dronenet", version, about = "Drone AED network design under uncertainty")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a bundle and preview no-fly-zone filtering.
    Validate {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Generate a synthetic region bundle.
    Simulate(SimulateArgs),
    /// Recompute incident route features from the bundle's road graph.
    ExtractFeatures {
        #[arg(long)]
        bundle: PathBuf,
        /// Output CSV (defaults to rewriting the bundle's incidents.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate surrogate models on a dataset.
    Fit(FitArgs),
    /// Prior predictive distribution of the number of active sites.
    PriorCheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Sample the site-activation posterior for each β.
    Design {
        #[command(flatten)]
        run: RunArgs,
        /// β values; overrides the sweep in the config.
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        n_iter: Option<usize>,
    },
    /// Evaluate designed networks: QALY, cost, coverage, robustness.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Directory written by `design`.
        #[arg(long)]
        traces: PathBuf,
        /// Evaluation scenarios.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Robustness curve for one designed network.
    Reliability {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        m_max: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Config file; replaces the bundle's config.toml.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DRONENET_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a synthetic region spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, env = "DRONENET_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_incidents: Option<usize>,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    #[arg(long)]
    pub n_existing: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with the response in the first column, features after.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, env = "DRONENET_SEED", default_value_t = 0)]
    pub seed: u64,
    /// GP kernels to compare: gaussian, matern52. Empty for OLS only.
    #[arg(long, value_delimiter = ',', default_value = "gaussian,matern52")]
    pub gp: Vec<String>,
    #[arg(long, default_value = "constant")]
    pub trend: String,
}

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<BundleError>() || cause.is::<ConfigError>() || cause.is::<clap::Error>() {
            return EXIT_SCHEMA;
        }
        if let Some(e) = cause.downcast_ref::<DesignError>() {
            return match e {
                DesignError::InvalidConfig(_)
                | DesignError::EmptyCandidateSet
                | DesignError::EmptyIncidentSet
                | DesignError::NonPositiveDensity(_)
                | DesignError::DegenerateCovariate(_) => EXIT_SCHEMA,
                _ => EXIT_NUMERICAL,
            };
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            match e {
                PipelineError::Bundle(_) | PipelineError::Parse { .. } | PipelineError::MissingTraces(..) => {
                    return EXIT_SCHEMA
                }
                PipelineError::Io { .. } => return EXIT_SCHEMA,
                _ => {}
            }
        }
        if let Some(SimulateError::InvalidSpec(_)) = cause.downcast_ref::<SimulateError>() {
            return EXIT_SCHEMA;
        }
        if let Some(SurrogateError::Data(_)) = cause.downcast_ref::<SurrogateError>() {
            return EXIT_SCHEMA;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_SCHEMA;
        }
    }
    EXIT_NUMERICAL
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Validate { bundle } => cmd_validate(&bundle),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::ExtractFeatures { bundle, out } => cmd_extract_features(&bundle, out.as_deref()),
        Command::Fit(a) => cmd_fit(&a),
        Command::PriorCheck { run, draws } => cmd_prior_check(&run, draws),
        Command::Design { run, beta, k, n_iter } => cmd_design(&run, &beta, k, n_iter),
        Command::Report { run, traces, k, replicates } => cmd_report(&run, &traces, k, replicates),
        Command::Reliability {
            run,
            traces,
            beta,
            m_max,
            replicates,
            k,
        } => cmd_reliability(&run, &traces, beta, m_max, replicates, k),
    }
}

/// Bundle plus resolved config: `--config` file, then seed flag or env var.
fn load_run(run: &RunArgs) -> Result<(RegionBundle, Config)> {
    let bundle = RegionBundle::read(&run.bundle)?;
    let mut cfg = match &run.config {
        Some(p) => Config::load(p)?,
        None => bundle.config.clone(),
    };
    if let Some(seed) = run.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok((bundle, cfg))
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    sites: usize,
    existing_sites: usize,
    incidents: usize,
    no_fly_zones: usize,
    excluded_sites: Vec<String>,
    excluded_incidents: Vec<String>,
    retained_sites: usize,
    retained_incidents: usize,
    roads: bool,
    stations: usize,
    elevation: bool,
    wind_surrogate: bool,
    ambulance_surrogate: &'static str,
    drone_surrogate: &'static str,
}

pub fn cmd_validate(dir: &Path) -> Result<()> {
    let b = RegionBundle::read(dir)?;
    b.config.validate()?;
    let f = b.filtered()?;
    let r = ValidationReport {
        sites: b.sites.len(),
        existing_sites: b.sites.iter().filter(|s| !s.is_new).count(),
        incidents: b.incidents.len(),
        no_fly_zones: b.nfz.len(),
        retained_sites: f.sites.len(),
        retained_incidents: f.incidents.len(),
        excluded_sites: f.excluded_sites,
        excluded_incidents: f.excluded_incidents,
        roads: b.roads.is_some(),
        stations: b.stations.len(),
        elevation: b.elevation.is_some(),
        wind_surrogate: b.wind.is_some(),
        ambulance_surrogate: if b.ambulance.is_some() { "bundle" } else { "default" },
        drone_surrogate: if b.drone.is_some() { "bundle" } else { "default" },
    };
    println!("{} candidate sites, {} retained", r.sites, r.retained_sites);
    println!("{} incidents, {} retained", r.incidents, r.retained_incidents);
    if !r.wind_surrogate {
        println!("warning: no wind surrogate; design and report will fail");
    }
    println!("{}", serde_json::to_string_pretty(&r)?);
    if r.retained_sites == 0 {
        return Err(DesignError::EmptyCandidateSet.into());
    }
    if r.retained_incidents == 0 {
        return Err(DesignError::EmptyIncidentSet.into());
    }
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            toml::from_str::<SyntheticSpec>(&text).map_err(|e| SimulateError::InvalidSpec(e.to_string()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.n_incidents {
        spec.n_incidents = n;
    }
    if let Some(n) = a.n_candidates {
        spec.n_candidates = n;
    }
    if let Some(n) = a.n_existing {
        spec.n_existing = n;
    }
    let (bundle, truth) = simulate_region(&spec)?;
    bundle.write(&a.out)?;
    write_json(&a.out.join("truth.json"), &truth)?;
    println!(
        "wrote {} sites ({} existing) and {} incidents to {}",
        bundle.sites.len(),
        bundle.sites.iter().filter(|s| !s.is_new).count(),
        bundle.incidents.len(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_extract_features(dir: &Path, out: Option<&Path>) -> Result<()> {
    let mut b = RegionBundle::read(dir)?;
    let Some(graph) = &b.roads else {
        bail!(BundleError::Schema {
            file: "roads".into(),
            row: None,
            column: None,
            message: "bundle has no road graph".into(),
        });
    };
    if b.stations.is_empty() {
        bail!(BundleError::Schema {
            file: "stations.csv".into(),
            row: None,
            column: None,
            message: "bundle has no ambulance stations".into(),
        });
    }
    let stations: Vec<Location> = b.stations.iter().map(|s| Location::new(s.easting, s.northing, 0.0)).collect();
    let incidents: Vec<Location> = b.incidents.iter().map(|r| r.location).collect();
    let feats = features_from_graph(graph, &stations, &incidents).map_err(|e| match e {
        DemandError::AllUnreachable(i) => anyhow::anyhow!("incident {} reaches no station", b.incidents[i].id),
        other => other.into(),
    })?;
    for (r, f) in b.incidents.iter_mut().zip(feats) {
        r.features = f;
    }
    match out {
        None => {
            b.write(dir)?;
            println!("updated {}", dir.join("incidents.csv").display());
        }
        Some(path) => {
            let rows: Vec<Vec<String>> = b
                .incidents
                .iter()
                .map(|r| {
                    let f = &r.features;
                    vec![
                        r.id.clone(),
                        f.t_astar.to_string(),
                        f.big_intsects.to_string(),
                        f.mid_intsects.to_string(),
                        f.turns.to_string(),
                        f.pop_density.to_string(),
                        f.length_km.to_string(),
                    ]
                })
                .collect();
            write_csv(
                path,
                &["id", "t_astar", "big_intsects", "mid_intsects", "turns", "pop_density", "length_km"],
                &rows,
            )?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let trend = match a.trend.as_str() {
        "constant" => Trend::Constant,
        "linear" => Trend::Linear,
        other => bail!(ConfigError::Invalid(format!("unknown trend '{other}'"))),
    };
    let d = data.x.n_cols();
    let dims: Vec<usize> = (0..d).collect();
    let mut gps = Vec::new();
    for name in a.gp.iter().filter(|s| !s.is_empty()) {
        let template = match name.as_str() {
            "gaussian" => KernelSpec::gaussian(dims.clone(), vec![1.0; d], 1.0),
            "matern52" => KernelSpec::matern52(dims.clone(), vec![1.0; d], 1.0),
            other => bail!(ConfigError::Invalid(format!("unknown kernel '{other}'"))),
        };
        gps.push(GpFitter {
            label: format!("gp_{name}"),
            template,
            trend,
            options: GpFitOptions {
                seed: a.seed,
                ..Default::default()
            },
        });
    }
    let ols = OlsFitter;
    let mut fitters: Vec<&dyn Fitter<f64>> = vec![&ols];
    fitters.extend(gps.iter().map(|g| g as &dyn Fitter<f64>));
    let report = kfold_cv(&data.x, &data.log_y, &fitters, a.folds, a.seed)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                opt(r.r2_mean),
                opt(r.r2_sd),
                r.rmse_mean.to_string(),
                r.rmse_sd.to_string(),
                r.mae_mean.to_string(),
                r.mae_sd.to_string(),
                r.pooled_r2.to_string(),
            ]
        })
        .collect();
    write_csv(
        &a.out.join("cv.csv"),
        &["model", "r2_mean", "r2_sd", "rmse_mean", "rmse_sd", "mae_mean", "mae_sd", "pooled_r2"],
        &rows,
    )?;
    write_json(&a.out.join("cv.json"), &report)?;
    let names: Vec<&str> = data.x.feature_names().iter().map(String::as_str).collect();
    let full = crate::surrogate::fit_ols(&data.x.with_intercept(), &data.log_y)?;
    save_linear(&full, &a.out.join("ols.json"))?;
    for g in &gps {
        let m = crate::surrogate::fit_gp(data.x.matrix(), &data.log_y, &g.template, g.trend, &g.options)?;
        save_gp(&m, &a.out.join(format!("{}.json", g.label)))?;
    }
    println!("features: {}", names.join(", "));
    for r in &report.rows {
        println!("{:<14} rmse {:.4}  mae {:.4}  r2 {}", r.model, r.rmse_mean, r.mae_mean, opt(r.r2_mean));
    }
    Ok(())
}

pub fn cmd_prior_check(run: &RunArgs, draws: usize) -> Result<()> {
    let (bundle, cfg) = load_run(run)?;
    let f = bundle.filtered()?;
    let prior = resolve_prior(&cfg, &f.sites)?;
    let pc = prior_check(&f.sites, &prior, draws, cfg.design.seed)?;
    write_prior_check(&run.out, &pc)?;
    let mut m = Manifest::new("prior-check", &cfg);
    m.add_inputs("bundle/", &hash_tree(&run.bundle)?);
    m.outputs = vec!["prior_check.json".into(), "prior_check.csv".into(), "prior_check.svg".into()];
    m.write(&run.out)?;
    println!(
        "expected active sites {:.3} (sd {:.3}); sampled mean {:.3} over {} draws",
        pc.analytic_mean, pc.analytic_sd, pc.empirical_mean, pc.draws
    );
    Ok(())
}

pub fn cmd_design(run: &RunArgs, betas: &[f64], k: Option<usize>, n_iter: Option<usize>) -> Result<()> {
    let (bundle, mut cfg) = load_run(run)?;
    if !betas.is_empty() {
        cfg.sweep.betas = betas.to_vec();
    }
    if let Some(k) = k {
        cfg.design.k = k;
    }
    if let Some(n) = n_iter {
        cfg.design.n_iter = n;
    }
    cfg.validate()?;
    let region = Region::from_bundle(&bundle)?;
    let hashes = hash_tree(&run.bundle)?;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for &beta in &cfg.sweep.betas {
        let fp = fingerprint(&hashes, &cfg, beta);
        let (_, summary, reused) = design_beta(&region, &cfg, beta, &run.out, &fp)?;
        println!(
            "beta {beta}: {} sites selected ({} new), acceptance {:.3}{}",
            summary.n_selected,
            summary.n_new_selected,
            summary.mean_acceptance,
            if reused { " [reused]" } else { "" }
        );
        rows.push(vec![
            beta.to_string(),
            summary.n_selected.to_string(),
            summary.n_new_selected.to_string(),
            summary.mean_acceptance.to_string(),
        ]);
        let d = crate::pipeline::beta_dir(Path::new(""), beta);
        outputs.push(d.join("traces.json").display().to_string());
    }
    write_csv(
        &run.out.join("design_summary.csv"),
        &["beta", "sites", "new_sites", "acceptance"],
        &rows,
    )?;
    let mut m = Manifest::new("design", &cfg);
    m.add_inputs("bundle/", &hashes);
    m.outputs = outputs;
    m.write(&run.out)?;
    Ok(())
}

pub fn cmd_report(run: &RunArgs, traces: &Path, k: Option<usize>, replicates: Option<usize>) -> Result<()> {
    let (bundle, mut cfg) = load_run(run)?;
    if let Some(k) = k {
        cfg.posthoc.k = k;
    }
    if let Some(r) = replicates {
        cfg.reliability.replicates = r;
    }
    cfg.validate()?;
    let region = Region::from_bundle(&bundle)?;
    let betas = available_betas(traces)?;
    if betas.is_empty() {
        bail!(PipelineError::MissingTraces(f64::NAN, traces.display().to_string()));
    }
    let mut reports = Vec::new();
    let mut m = Manifest::new("report", &cfg);
    m.add_inputs("bundle/", &hash_tree(&run.bundle)?);
    for beta in betas {
        let tf = load_traces(traces, beta)?;
        if tf.site_ids != region.site_ids() {
            bail!(BundleError::Schema {
                file: "traces.json".into(),
                row: None,
                column: None,
                message: format!("traces for beta {beta} were produced for a different site list"),
            });
        }
        m.add_input(
            &format!("traces/beta_{beta:08.3}"),
            &crate::pipeline::beta_dir(traces, beta).join("traces.json"),
        )?;
        let r = report_beta(&region, &cfg, &tf, &run.out)?;
        println!(
            "beta {beta}: {} sites, QALY {:.2} (sd {:.2}), missions {:.1}, cost/QALY {}",
            r.cost.n_sites,
            r.cost.delta_qaly.mean,
            r.cost.delta_qaly.sd,
            r.cost.expected_missions.mean,
            if r.cost.cost_per_qaly.is_finite() { format!("{:.0}", r.cost.cost_per_qaly) } else { "inf".into() }
        );
        reports.push(r);
    }
    let sweep = write_sweep(&run.out, &reports, &cfg)?;
    match sweep.best_beta {
        Some(b) => println!("best beta {b}"),
        None => println!("no beta meets the cost-per-QALY threshold"),
    }
    m.outputs = vec!["report.json".into(), "sweep.csv".into()];
    m.write(&run.out)?;
    Ok(())
}

pub fn cmd_reliability(
    run: &RunArgs,
    traces: &Path,
    beta: f64,
    m_max: Option<usize>,
    replicates: Option<usize>,
    k: Option<usize>,
) -> Result<()> {
    let (bundle, mut cfg) = load_run(run)?;
    if let Some(r) = replicates {
        cfg.reliability.replicates = r;
    }
    if let Some(k) = k {
        cfg.posthoc.k = k;
    }
    cfg.validate()?;
    let region = Region::from_bundle(&bundle)?;
    let tf = load_traces(traces, beta)?;
    let summary = select_sites(&tf.traces(), &region.site_ids(), cfg.design.burn_in, cfg.posthoc.tau)
        .map_err(PipelineError::from)?;
    let x = &summary.x_star;
    let active = summary.n_selected();
    let m_max = m_max.or(cfg.reliability.m_max).unwrap_or(active);
    if m_max > active {
        return Err(PosthocError::TooManyFailures { m: m_max, active }.into());
    }
    let limits = cfg.design.limits();
    let inputs = region.inputs();
    let eval = sample_eval_scenarios(x, &inputs, &limits, cfg.posthoc.k, cfg.posthoc.seed)?;
    let a = eval_coverage(&inputs, &eval, &limits)?;
    let q = cfg.reliability.downtime(&region.sites);
    let rel = reliability_curve(x, &a, &q, m_max, cfg.reliability.replicates, cfg.posthoc.seed)?;
    write_reliability(&run.out, &rel)?;
    write_json(&run.out.join("reliability.json"), &rel)?;
    let mut m = Manifest::new("reliability", &cfg);
    m.add_inputs("bundle/", &hash_tree(&run.bundle)?);
    m.add_input("traces", &crate::pipeline::beta_dir(traces, beta).join("traces.json"))?;
    m.outputs = vec!["reliability.csv".into(), "reliability.json".into(), "reliability.svg".into()];
    m.write(&run.out)?;
    for (m, c) in rel.m.iter().zip(&rel.c_hat) {
        println!("m = {m}: {c:.4}");
    }
    Ok(())
}
