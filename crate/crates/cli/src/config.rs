//! Flat `key = value` run configuration shared by all commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dlnmlps::fit::{NelderMeadOptions, NewtonOptions};
use dlnmlps::model::PriorConstants;
use dlnmlps::spatial::SpatialKind;
use dlnmlps::{FitOptions, ModelConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub panel: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub custom_surface: Option<PathBuf>,

    pub v_x: usize,
    pub v_l: usize,
    pub max_lag: usize,
    pub degree: usize,
    pub diff_order: usize,
    pub ridge: bool,
    pub spatial: Option<SpatialKind>,
    pub exposure_lo: Option<f64>,
    pub exposure_hi: Option<f64>,
    pub nu: f64,
    pub zeta: f64,
    pub prior_a: f64,
    pub prior_b: f64,

    pub grad_tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub x_tol: f64,
    pub f_tol: f64,
    pub max_evals: usize,
    pub simplex_step: f64,
    pub bound: f64,

    pub x0: Option<f64>,
    pub level: f64,
    pub grid_points: usize,
    pub draws: usize,
    pub rr_threshold: f64,
    pub af_threshold: f64,

    pub seed: u64,
    pub workers: usize,

    pub scenario: String,
    pub replicates: usize,
    pub first_replicate: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub n_times: usize,
    pub years: Vec<i32>,
    pub true_spatial: Option<SpatialKind>,
    pub true_variance: f64,
    pub true_rho: f64,
    pub effect: f64,
    pub baseline: f64,
    pub pop_lo: f64,
    pub pop_hi: f64,
    pub score_step: f64,
    pub score_width: f64,
    pub keep_panels: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let f = FitOptions::default();
        Self {
            panel: None,
            adjacency: None,
            fit: None,
            out: None,
            custom_surface: None,
            v_x: m.v_x,
            v_l: m.v_l,
            max_lag: m.max_lag,
            degree: m.degree,
            diff_order: m.diff_order,
            ridge: m.ridge,
            spatial: None,
            exposure_lo: None,
            exposure_hi: None,
            nu: m.priors.nu,
            zeta: m.priors.zeta,
            prior_a: m.priors.a,
            prior_b: m.priors.b,
            grad_tol: f.newton.grad_tol,
            max_newton: f.newton.max_iter,
            max_halvings: f.newton.max_halvings,
            x_tol: f.outer.x_tol,
            f_tol: f.outer.f_tol,
            max_evals: f.outer.max_evals,
            simplex_step: f.outer.step,
            bound: f.bound,
            x0: None,
            level: 0.95,
            grid_points: 101,
            draws: 10_000,
            rr_threshold: 1.0,
            af_threshold: 0.0,
            seed: 1,
            workers: 1,
            scenario: "plane".into(),
            replicates: 10,
            first_replicate: 0,
            grid_rows: 5,
            grid_cols: 5,
            n_times: 200,
            years: Vec::new(),
            true_spatial: Some(SpatialKind::Leroux),
            true_variance: 0.5,
            true_rho: 0.95,
            effect: 0.5,
            baseline: 1e-4,
            pop_lo: 5000.0,
            pop_hi: 15000.0,
            score_step: 0.25,
            score_width: 1.0,
            keep_panels: false,
        }
    }
}

/// Keys that never change results and stay out of the config hash.
const UNHASHED: &[&str] = &["out", "workers", "replicates", "first_replicate", "keep_panels", "panel", "adjacency", "fit", "custom_surface"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Input(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Input(format!("invalid boolean '{value}' for '{key}'"))),
    }
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>, CliError> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse_spatial(value: &str) -> Result<Option<SpatialKind>, CliError> {
    SpatialKind::parse(value).map_err(|e| CliError::Input(e.to_string()))
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), ToString::to_string)
}

fn spatial_str(s: Option<SpatialKind>) -> String {
    s.map_or("none", SpatialKind::name).to_string()
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let k = key.trim().replace('-', "_");
        let v = value.trim();
        match k.as_str() {
            "panel" => self.panel = parse_path(v),
            "adjacency" => self.adjacency = parse_path(v),
            "fit" => self.fit = parse_path(v),
            "out" => self.out = parse_path(v),
            "custom_surface" => self.custom_surface = parse_path(v),
            "v_x" => self.v_x = parse(&k, v)?,
            "v_l" => self.v_l = parse(&k, v)?,
            "max_lag" | "lag" => self.max_lag = parse(&k, v)?,
            "degree" => self.degree = parse(&k, v)?,
            "diff_order" => self.diff_order = parse(&k, v)?,
            "ridge" => self.ridge = parse_bool(&k, v)?,
            "spatial" => self.spatial = parse_spatial(v)?,
            "exposure_lo" => self.exposure_lo = parse_opt_f64(&k, v)?,
            "exposure_hi" => self.exposure_hi = parse_opt_f64(&k, v)?,
            "nu" => self.nu = parse(&k, v)?,
            "zeta" => self.zeta = parse(&k, v)?,
            "prior_a" => self.prior_a = parse(&k, v)?,
            "prior_b" => self.prior_b = parse(&k, v)?,
            "grad_tol" => self.grad_tol = parse(&k, v)?,
            "max_newton" => self.max_newton = parse(&k, v)?,
            "max_halvings" => self.max_halvings = parse(&k, v)?,
            "x_tol" => self.x_tol = parse(&k, v)?,
            "f_tol" => self.f_tol = parse(&k, v)?,
            "max_evals" => self.max_evals = parse(&k, v)?,
            "simplex_step" => self.simplex_step = parse(&k, v)?,
            "bound" => self.bound = parse(&k, v)?,
            "x0" => self.x0 = parse_opt_f64(&k, v)?,
            "level" => self.level = parse(&k, v)?,
            "grid_points" => self.grid_points = parse(&k, v)?,
            "draws" => self.draws = parse(&k, v)?,
            "rr_threshold" => self.rr_threshold = parse(&k, v)?,
            "af_threshold" => self.af_threshold = parse(&k, v)?,
            "seed" => self.seed = parse(&k, v)?,
            "workers" => self.workers = parse(&k, v)?,
            "scenario" => self.scenario = v.to_string(),
            "replicates" => self.replicates = parse(&k, v)?,
            "first_replicate" => self.first_replicate = parse(&k, v)?,
            "grid_rows" => self.grid_rows = parse(&k, v)?,
            "grid_cols" => self.grid_cols = parse(&k, v)?,
            "n_times" => self.n_times = parse(&k, v)?,
            "years" => {
                self.years = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(&k, s))
                    .collect::<Result<_, _>>()?
            }
            "true_spatial" => self.true_spatial = parse_spatial(v)?,
            "true_variance" => self.true_variance = parse(&k, v)?,
            "true_rho" => self.true_rho = parse(&k, v)?,
            "effect" => self.effect = parse(&k, v)?,
            "baseline" => self.baseline = parse(&k, v)?,
            "pop_lo" => self.pop_lo = parse(&k, v)?,
            "pop_hi" => self.pop_hi = parse(&k, v)?,
            "score_step" => self.score_step = parse(&k, v)?,
            "score_width" => self.score_width = parse(&k, v)?,
            "keep_panels" => self.keep_panels = parse_bool(&k, v)?,
            _ => return Err(CliError::Input(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("override '{pair}' is not key=value")))?;
        self.set(k, v)
    }

    /// Every key with its canonical textual value, sorted by key.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let p = |v: &Option<PathBuf>| v.as_ref().map_or(String::new(), |p| p.display().to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("panel", p(&self.panel)),
            ("adjacency", p(&self.adjacency)),
            ("fit", p(&self.fit)),
            ("out", p(&self.out)),
            ("custom_surface", p(&self.custom_surface)),
            ("v_x", self.v_x.to_string()),
            ("v_l", self.v_l.to_string()),
            ("max_lag", self.max_lag.to_string()),
            ("degree", self.degree.to_string()),
            ("diff_order", self.diff_order.to_string()),
            ("ridge", self.ridge.to_string()),
            ("spatial", spatial_str(self.spatial)),
            ("exposure_lo", opt_str(&self.exposure_lo)),
            ("exposure_hi", opt_str(&self.exposure_hi)),
            ("nu", self.nu.to_string()),
            ("zeta", self.zeta.to_string()),
            ("prior_a", self.prior_a.to_string()),
            ("prior_b", self.prior_b.to_string()),
            ("grad_tol", self.grad_tol.to_string()),
            ("max_newton", self.max_newton.to_string()),
            ("max_halvings", self.max_halvings.to_string()),
            ("x_tol", self.x_tol.to_string()),
            ("f_tol", self.f_tol.to_string()),
            ("max_evals", self.max_evals.to_string()),
            ("simplex_step", self.simplex_step.to_string()),
            ("bound", self.bound.to_string()),
            ("x0", opt_str(&self.x0)),
            ("level", self.level.to_string()),
            ("grid_points", self.grid_points.to_string()),
            ("draws", self.draws.to_string()),
            ("rr_threshold", self.rr_threshold.to_string()),
            ("af_threshold", self.af_threshold.to_string()),
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("scenario", self.scenario.clone()),
            ("replicates", self.replicates.to_string()),
            ("first_replicate", self.first_replicate.to_string()),
            ("grid_rows", self.grid_rows.to_string()),
            ("grid_cols", self.grid_cols.to_string()),
            ("n_times", self.n_times.to_string()),
            ("years", self.years.iter().map(i32::to_string).collect::<Vec<_>>().join(",")),
            ("true_spatial", spatial_str(self.true_spatial)),
            ("true_variance", self.true_variance.to_string()),
            ("true_rho", self.true_rho.to_string()),
            ("effect", self.effect.to_string()),
            ("baseline", self.baseline.to_string()),
            ("pop_lo", self.pop_lo.to_string()),
            ("pop_hi", self.pop_hi.to_string()),
            ("score_step", self.score_step.to_string()),
            ("score_width", self.score_width.to_string()),
            ("keep_panels", self.keep_panels.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The `key=value` lines that determine results, one per line.
    pub fn canonical_text(&self) -> String {
        self.to_map()
            .into_iter()
            .filter(|(k, _)| !UNHASHED.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Config echo stored in fit artifacts (output paths and worker counts left out).
    pub fn echo(&self) -> serde_json::Value {
        let m: serde_json::Map<String, serde_json::Value> = self
            .to_map()
            .into_iter()
            .filter(|(k, _)| !matches!(k.as_str(), "out" | "workers"))
            .map(|(k, v)| (k, serde_json::Value::String(v)))
            .collect();
        serde_json::Value::Object(m)
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let exposure_range = match (self.exposure_lo, self.exposure_hi) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => return Err(CliError::Input("set both exposure_lo and exposure_hi or neither".into())),
        };
        Ok(ModelConfig {
            v_x: self.v_x,
            v_l: self.v_l,
            max_lag: self.max_lag,
            degree: self.degree,
            diff_order: self.diff_order,
            ridge: self.ridge,
            spatial: self.spatial,
            exposure_range,
            priors: PriorConstants { nu: self.nu, zeta: self.zeta, a: self.prior_a, b: self.prior_b },
            ..ModelConfig::default()
        })
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            newton: NewtonOptions { max_iter: self.max_newton, grad_tol: self.grad_tol, max_halvings: self.max_halvings },
            outer: NelderMeadOptions { max_evals: self.max_evals, x_tol: self.x_tol, f_tol: self.f_tol, step: self.simplex_step },
            bound: self.bound,
        }
    }

    /// Worker count after the `DLNMLPS_THREADS` cap.
    pub fn effective_workers(&self) -> usize {
        let cap = std::env::var("DLNMLPS_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
        let w = self.workers.max(1);
        cap.map_or(w, |c| w.min(c))
    }
}
