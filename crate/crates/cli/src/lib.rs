//! Batch front end: `dlnmlps fit|predict|simulate|score`.

pub mod config;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dlnmlps::artifact::{content_hash, FitArtifact};
use dlnmlps::panel::{ingest_panel_reader, write_panel_csv, PanelData};
use dlnmlps::posterior::{Posterior, RiskGrid};
use dlnmlps::sim::{
    aggregate_rows, load_custom_surface, make_scenario, replicate_seed, run_replicate, simulate_panel, summer_dates,
    ReplicateResult, ScenarioParams, ScoreOptions, SimDesign, SimSetup, Truth, AGGREGATE_HEADER,
};
use dlnmlps::spatial::{load_adjacency, AdjacencyGraph, SpatialHypers, SpatialKind};
use dlnmlps::{LatentFit, ModelSpec};

pub use config::RunConfig;
use output::{atomic_write, csv_bytes, Stamp};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] dlnmlps::Error),
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged(_) | CliError::Core(dlnmlps::Error::NonConvergence { .. }) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::NotConverged(_) | CliError::Core(dlnmlps::Error::NonConvergence { .. }) => "non_convergence",
            CliError::Core(dlnmlps::Error::Io(_)) => "io",
            CliError::Core(dlnmlps::Error::Data { .. } | dlnmlps::Error::Csv(_)) => "data",
            CliError::Core(dlnmlps::Error::Graph(_)) => "graph",
            CliError::Core(_) => "model",
        }
    }

    /// Machine-readable form written to standard error.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Core(dlnmlps::Error::Data { row, .. }) = self {
            v["row"] = serde_json::json!(row);
        }
        v.to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "dlnmlps", version, about = "Spatial distributed lag non-linear models fitted by Laplace approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a panel and export risk summaries.
    Fit(RunArgs),
    /// Recompute exports from a saved fit.
    Predict(RunArgs),
    /// Simulate, fit and score replicate panels.
    Simulate(RunArgs),
    /// Aggregate replicate results from one or more simulate runs.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Saved fit artifact (predict).
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// none, independent, icar, convolution or leroux.
    #[arg(long)]
    spatial: Option<String>,
    /// Reference exposure for relative risks.
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    v_x: Option<usize>,
    #[arg(long)]
    v_l: Option<usize>,
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// `results.jsonl` files or simulate output directories.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Aggregate CSV path, or a directory to hold `aggregate.csv`.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for pair in &self.set {
            cfg.apply_pair(pair)?;
        }
        let paths = [("panel", &self.panel), ("adjacency", &self.adjacency), ("fit", &self.fit), ("out", &self.out)];
        for (k, v) in paths {
            if let Some(p) = v {
                cfg.set(k, &p.to_string_lossy())?;
            }
        }
        let flags: [(&str, Option<String>); 11] = [
            ("spatial", self.spatial.clone()),
            ("x0", self.x0.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("draws", self.draws.map(|v| v.to_string())),
            ("level", self.level.map(|v| v.to_string())),
            ("v_x", self.v_x.map(|v| v.to_string())),
            ("v_l", self.v_l.map(|v| v.to_string())),
            ("max_lag", self.max_lag.map(|v| v.to_string())),
            ("scenario", self.scenario.clone()),
            ("replicates", self.replicates.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", CliError::Input(e.to_string().trim().to_string()).to_json());
            return 1;
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => a.resolve().and_then(|c| run_fit(&c)),
        Command::Predict(a) => a.resolve().and_then(|c| run_predict(&c)),
        Command::Simulate(a) => a.resolve().and_then(|c| run_simulate(&c)),
        Command::Score(a) => run_score(&a.inputs, &a.out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf, CliError> {
    p.as_ref().ok_or_else(|| CliError::Input(format!("missing required setting '{key}'")))
}

fn read_input(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = required(&cfg.out, "out")?.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", out.display())))?;
    Ok(out)
}

/// Seed for posterior draws, on a stream no replicate uses.
pub fn draw_seed(master: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(0);
    rng.next_u64()
}

/// Fits the configured model and writes `fit.json`, `fit.log` and the
/// posterior exports.
pub fn run_fit(cfg: &RunConfig) -> Result<(), CliError> {
    let panel_path = required(&cfg.panel, "panel")?;
    let x0 = cfg.x0.ok_or_else(|| CliError::Input("missing required setting 'x0' (reference exposure)".into()))?;
    let panel_bytes = read_input(panel_path, "panel")?;
    let panel = ingest_panel_reader(&panel_bytes[..])?;
    info!("{}", panel.summary());

    let adj_bytes = match &cfg.adjacency {
        Some(p) => Some(read_input(p, "adjacency")?),
        None => None,
    };
    if cfg.spatial.is_some_and(SpatialKind::needs_graph) && adj_bytes.is_none() {
        return Err(CliError::Input(format!("spatial={} needs an adjacency file", cfg.spatial.unwrap().name())));
    }
    let graph = match &adj_bytes {
        Some(b) => {
            let loaded = load_adjacency(&b[..])?;
            for w in &loaded.warnings {
                warn!("adjacency: {w}");
            }
            Some(loaded.graph)
        }
        None => None,
    };
    let out = prepare_out(cfg)?;

    let canon = cfg.canonical_text();
    let hash = content_hash(&[canon.as_bytes(), &panel_bytes, adj_bytes.as_deref().unwrap_or(&[])]);
    let stamp = Stamp { config_hash: hash.clone(), master_seed: cfg.seed };

    let model = cfg.model_config()?;
    let spec = ModelSpec::from_panel(&panel, graph.as_ref(), &model)?;
    info!("fitting {} rows, latent dimension {}, {} hyperparameters", spec.n_obs(), spec.dim(), spec.n_hypers());
    let start = Instant::now();
    let fit = dlnmlps::fit(&spec, None, &cfg.fit_options())?;
    let elapsed = start.elapsed().as_secs_f64();

    let artifact = FitArtifact::new(&fit, cfg.echo(), hash, cfg.seed);
    let mut json = Vec::new();
    artifact.write(&mut json)?;
    atomic_write(&out.join("fit.json"), &json)?;
    atomic_write(&out.join("fit.log"), output::fit_log(&fit, &stamp, elapsed).as_bytes())?;
    export(&fit, Some(&panel), cfg, x0, &stamp, &out)?;

    if !fit.converged || !fit.hyper_converged {
        return Err(CliError::NotConverged(format!(
            "fit did not converge (newton: {}, hyperparameters: {}); artifacts written to {}",
            fit.converged,
            fit.hyper_converged,
            out.display()
        )));
    }
    info!("fit finished in {elapsed:.1}s");
    Ok(())
}

/// Rewrites the posterior exports from a saved `fit.json`.
pub fn run_predict(cfg: &RunConfig) -> Result<(), CliError> {
    let fit_path = required(&cfg.fit, "fit")?;
    let x0 = cfg.x0.ok_or_else(|| CliError::Input("missing required setting 'x0' (reference exposure)".into()))?;
    let artifact = FitArtifact::read(&read_input(fit_path, "fit artifact")?[..])?;
    let fit = artifact.to_fit()?;
    let panel = match &cfg.panel {
        Some(p) => Some(ingest_panel_reader(&read_input(p, "panel")?[..])?),
        None => None,
    };
    let out = prepare_out(cfg)?;
    let stamp = Stamp { config_hash: artifact.config_hash.clone(), master_seed: cfg.seed };
    export(&fit, panel.as_ref(), cfg, x0, &stamp, &out)
}

fn export(fit: &LatentFit, panel: Option<&PanelData>, cfg: &RunConfig, x0: f64, stamp: &Stamp, out: &Path) -> Result<(), CliError> {
    let post = Posterior::new(fit)?;
    let (lo, hi) = (fit.basis.exposure.lo, fit.basis.exposure.hi);
    if !(lo..=hi).contains(&x0) {
        return Err(CliError::Input(format!("x0 = {x0} lies outside the exposure domain [{lo}, {hi}]")));
    }
    let n = cfg.grid_points.max(2);
    let xs = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let grid = RiskGrid::new(xs, x0);
    let draws = (cfg.draws > 0).then(|| post.draw_latent(cfg.draws, draw_seed(stamp.master_seed)));

    let overall = post.rr_overall(&grid, cfg.level)?;
    let p_exceed = match &draws {
        Some(d) => Some(post.exceedance_rr(&grid, cfg.rr_threshold, d)?),
        None => None,
    };
    let rows = overall.iter().enumerate().map(|(i, p)| {
        vec![p.x.to_string(), p.rr.to_string(), p.lo.to_string(), p.hi.to_string(), output::opt(p_exceed.as_ref().map(|v| v[i]))]
    });
    atomic_write(&out.join("rr_overall.csv"), &csv_bytes(stamp, &["x", "rr_overall", "lo", "hi", "p_exceed"], rows)?)?;

    let mut lag_rows = Vec::new();
    for lag in 0..=fit.basis.max_lag {
        for p in post.rr_lag(&grid, lag, cfg.level)? {
            lag_rows.push(vec![p.x.to_string(), lag.to_string(), p.rr.to_string(), p.lo.to_string(), p.hi.to_string()]);
        }
    }
    atomic_write(&out.join("rr_lag.csv"), &csv_bytes(stamp, &["x", "lag", "rr", "lo", "hi"], lag_rows)?)?;

    let af = match (panel, &draws) {
        (Some(p), Some(d)) => {
            let mut all = post.exceedance_af(p, |_, _| Some("all".to_string()), x0, d, cfg.af_threshold)?;
            if p.has_dates() {
                let by_year = post.exceedance_af(
                    p,
                    |u, t| u.dates.as_ref().map(|ds| chrono::Datelike::year(&ds[t]).to_string()),
                    x0,
                    d,
                    cfg.af_threshold,
                )?;
                all.extend(by_year);
            }
            Some(all)
        }
        _ => None,
    };
    let af_all = |unit: &str| {
        af.as_ref()
            .and_then(|v| v.iter().find(|a| a.unit_id == unit && a.window == "all"))
            .map(|a| a.probability)
    };

    let re_rows: Vec<Vec<String>> = if fit.kind().is_some() {
        post.random_effect_summary(cfg.level)?
            .into_iter()
            .map(|(id, s)| {
                let p = output::opt(af_all(&id));
                vec![id, s.mean.to_string(), s.lo.to_string(), s.hi.to_string(), p]
            })
            .collect()
    } else {
        fit.unit_ids
            .iter()
            .map(|id| vec![id.clone(), String::new(), String::new(), String::new(), output::opt(af_all(id))])
            .collect()
    };
    atomic_write(
        &out.join("random_effects.csv"),
        &csv_bytes(stamp, &["unit_id", "re_mean", "lo", "hi", "p_af_exceed"], re_rows)?,
    )?;

    if let Some(af) = af {
        let rows = af
            .into_iter()
            .map(|a| vec![a.unit_id, a.window, a.n_points.to_string(), a.probability.to_string()]);
        atomic_write(
            &out.join("exceedance.csv"),
            &csv_bytes(stamp, &["unit_id", "window", "n_points", "p_af_exceed"], rows)?,
        )?;
    } else {
        info!("no panel or no draws: exceedance.csv not written");
    }
    Ok(())
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub master_seed: u64,
    pub result: ReplicateResult,
}

/// One line of `truths.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub config_hash: String,
    pub master_seed: u64,
    pub replicate: usize,
    pub truth: Truth,
}

fn true_hypers(kind: Option<SpatialKind>, variance: f64, rho: f64) -> Result<SpatialHypers, CliError> {
    if !(variance > 0.0) {
        return Err(CliError::Input(format!("true_variance must be positive, got {variance}")));
    }
    let tau = 1.0 / variance;
    Ok(match kind {
        None | Some(SpatialKind::Independent) => SpatialHypers::independent(tau),
        Some(SpatialKind::Icar) => SpatialHypers::icar(tau),
        Some(SpatialKind::Convolution) => SpatialHypers::convolution(tau, tau),
        Some(SpatialKind::Leroux) => SpatialHypers::leroux(tau, rho),
    })
}

/// Builds the simulation setup described by `cfg`.
pub fn sim_setup(cfg: &RunConfig) -> Result<SimSetup, CliError> {
    let custom = match &cfg.custom_surface {
        Some(p) => Some(load_custom_surface(&read_input(p, "custom surface")?[..])?),
        None => None,
    };
    if !(cfg.baseline > 0.0) {
        return Err(CliError::Input(format!("baseline incidence must be positive, got {}", cfg.baseline)));
    }
    let params = ScenarioParams {
        effect: cfg.effect,
        x0: cfg.x0,
        max_lag: cfg.max_lag,
        exposure_range: (cfg.exposure_lo.unwrap_or(0.0), cfg.exposure_hi.unwrap_or(10.0)),
        baseline: cfg.baseline.ln(),
        population: (cfg.pop_lo, cfg.pop_hi),
        custom,
    };
    let scenario = make_scenario(&cfg.scenario, &params)?;
    let dates = (!cfg.years.is_empty()).then(|| summer_dates(&cfg.years));
    let design = SimDesign {
        n_units: cfg.grid_rows * cfg.grid_cols,
        n_times: dates.as_ref().map_or(cfg.n_times, Vec::len),
        spatial: cfg.true_spatial,
        hypers: true_hypers(cfg.true_spatial, cfg.true_variance, cfg.true_rho)?,
        exposure: Default::default(),
        dates,
    };
    Ok(SimSetup {
        scenario,
        design,
        grid: (cfg.grid_rows, cfg.grid_cols),
        model: cfg.model_config()?,
        fit: cfg.fit_options(),
        score: ScoreOptions { level: cfg.level, width: cfg.score_width, grid_step: cfg.score_step },
    })
}

/// Runs replicates `first_replicate..first_replicate + replicates` and
/// writes `results.jsonl`, `truths.jsonl` and `aggregate.csv`.
pub fn run_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let setup = sim_setup(cfg)?;
    let out = prepare_out(cfg)?;
    let hash = content_hash(&[cfg.canonical_text().as_bytes()]);
    let stamp = Stamp { config_hash: hash.clone(), master_seed: cfg.seed };
    let workers = cfg.effective_workers();
    let range: Vec<usize> = (cfg.first_replicate..cfg.first_replicate + cfg.replicates).collect();
    info!("running {} replicates on {workers} workers", range.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    let outcomes: Vec<(usize, dlnmlps::Result<(ReplicateResult, Truth)>)> =
        pool.install(|| range.par_iter().map(|&i| (i, run_replicate(&setup, cfg.seed, i))).collect());

    let mut results = Vec::new();
    let mut results_text = String::new();
    let mut truths_text = String::new();
    let mut failures = Vec::new();
    for (i, outcome) in outcomes {
        match outcome {
            Ok((res, truth)) => {
                let rec = ResultRecord { config_hash: hash.clone(), master_seed: cfg.seed, result: res.clone() };
                results_text.push_str(&serde_json::to_string(&rec).map_err(dlnmlps::Error::from)?);
                results_text.push('\n');
                let rec = TruthRecord { config_hash: hash.clone(), master_seed: cfg.seed, replicate: i, truth };
                truths_text.push_str(&serde_json::to_string(&rec).map_err(dlnmlps::Error::from)?);
                truths_text.push('\n');
                results.push(res);
            }
            Err(e) => {
                warn!("replicate {i} failed: {e}");
                failures.push((i, e));
            }
        }
    }
    atomic_write(&out.join("results.jsonl"), results_text.as_bytes())?;
    atomic_write(&out.join("truths.jsonl"), truths_text.as_bytes())?;
    atomic_write(&out.join("aggregate.csv"), &csv_bytes(&stamp, &AGGREGATE_HEADER, aggregate_rows(&results))?)?;

    if cfg.keep_panels {
        let graph = AdjacencyGraph::grid(cfg.grid_rows, cfg.grid_cols);
        for &i in &range {
            let sim = simulate_panel(&setup.scenario, &setup.design, Some(&graph), replicate_seed(cfg.seed, i))?;
            let mut buf = Vec::new();
            write_panel_csv(&sim.panel, &mut buf)?;
            atomic_write(&out.join(format!("panel_{i:04}.csv")), &buf)?;
        }
        atomic_write(&out.join("adjacency.txt"), graph.to_edge_list().as_bytes())?;
    }

    if let Some((i, e)) = failures.iter().find(|(_, e)| !matches!(e, dlnmlps::Error::NonConvergence { .. })) {
        return Err(CliError::Input(format!("replicate {i}: {e}")));
    }
    let unconverged = results.iter().filter(|r| !r.converged).count() + failures.len();
    if unconverged > 0 {
        return Err(CliError::NotConverged(format!("{unconverged} of {} replicates did not converge", range.len())));
    }
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<ResultRecord>, CliError> {
    let file = if path.is_dir() { path.join("results.jsonl") } else { path.to_path_buf() };
    let text = String::from_utf8(read_input(&file, "results")?)
        .map_err(|_| CliError::Input(format!("{} is not UTF-8", file.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Input(format!("{} line {}: {e}", file.display(), n + 1)))
        })
        .collect()
}

/// Merges replicate streams that share one config hash into an aggregate CSV.
pub fn run_score(inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut records = Vec::new();
    for p in inputs {
        records.extend(read_records(p)?);
    }
    let first = records.first().ok_or_else(|| CliError::Input("no replicate results in the inputs".into()))?;
    let stamp = Stamp { config_hash: first.config_hash.clone(), master_seed: first.master_seed };
    if let Some(bad) = records.iter().find(|r| r.config_hash != stamp.config_hash || r.master_seed != stamp.master_seed) {
        return Err(CliError::Input(format!(
            "config hash mismatch: {} (seed {}) vs {} (seed {})",
            stamp.config_hash, stamp.master_seed, bad.config_hash, bad.master_seed
        )));
    }
    records.sort_by_key(|r| r.result.replicate);
    if let Some(w) = records.windows(2).find(|w| w[0].result.replicate == w[1].result.replicate) {
        return Err(CliError::Input(format!("replicate {} appears more than once", w[0].result.replicate)));
    }
    let results: Vec<ReplicateResult> = records.into_iter().map(|r| r.result).collect();
    let target = if out.is_dir() { out.join("aggregate.csv") } else { out.to_path_buf() };
    atomic_write(&target, &csv_bytes(&stamp, &AGGREGATE_HEADER, aggregate_rows(&results))?)?;
    Ok(())
}
