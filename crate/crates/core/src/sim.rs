//! Synthetic panels with known dose-lag-response surfaces and spatial
//! effects, and the RMSE/coverage scoring of fits against them.

use std::time::Instant;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions, LatentFit};
use crate::model::{ModelConfig, ModelSpec};
use crate::panel::{add_calendar_covariates, PanelData, UnitSeries};
use crate::posterior::{z_value, Posterior, RiskGrid};
use crate::spatial::{sample_spatial_effect, structure_matrix, AdjacencyGraph, SpatialHypers, SpatialKind};

/// Unnormalised shape of a true surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Surface {
    /// `x · (1 - l/(L+1))`.
    Plane,
    /// Convex J-shape in `x` around `x0` with exponential lag decay.
    TempLike { curvature: f64, lag_decay: f64 },
    /// Two exposure modes with different lag profiles.
    ComplexLike,
    /// Values on a rectangular `(x, lag)` grid, interpolated bilinearly.
    Custom { x: Vec<f64>, lags: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Largest absolute overall log RR over the exposure range; ignored for
    /// custom surfaces.
    pub effect: f64,
    pub x0: Option<f64>,
    pub max_lag: usize,
    pub exposure_range: (f64, f64),
    /// Log baseline incidence per population unit.
    pub baseline: f64,
    pub population: (f64, f64),
    pub custom: Option<Surface>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            effect: 0.5,
            x0: None,
            max_lag: 10,
            exposure_range: (0.0, 10.0),
            baseline: (1e-4f64).ln(),
            population: (5000.0, 15000.0),
            custom: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub surface: Surface,
    pub x0: f64,
    pub max_lag: usize,
    pub exposure_range: (f64, f64),
    pub baseline: f64,
    pub population: (f64, f64),
    scale: f64,
}

impl Scenario {
    fn shape(&self, x: f64, l: f64) -> f64 {
        let big_l = self.max_lag as f64;
        match &self.surface {
            Surface::Plane => x * (1.0 - l / (big_l + 1.0)),
            Surface::TempLike { curvature, lag_decay } => {
                let d = curvature * (x - self.x0);
                (d.exp() - 1.0 - d) * (-l / lag_decay).exp()
            }
            Surface::ComplexLike => {
                let (lo, hi) = self.exposure_range;
                let w = hi - lo;
                let bump = |c: f64, s: f64| (-0.5 * ((x - (lo + c * w)) / (s * w)).powi(2)).exp();
                let early = (-l / (0.15 * big_l + 1.0)).exp();
                let mid = (-0.5 * ((l - big_l / 3.0) / (big_l / 6.0 + 0.5)).powi(2)).exp();
                bump(0.25, 0.1) * early + 0.8 * bump(0.75, 0.12) * mid
            }
            Surface::Custom { x: gx, lags, values } => bilinear(gx, lags, values, x, l),
        }
    }

    /// True log RR contribution of exposure `x` at lag `l`, zero at `x0`.
    pub fn f(&self, x: f64, l: usize) -> f64 {
        let l = l as f64;
        self.scale * (self.shape(x, l) - self.shape(self.x0, l))
    }

    pub fn overall(&self, x: f64) -> f64 {
        (0..=self.max_lag).map(|l| self.f(x, l)).sum()
    }
}

fn bilinear(gx: &[f64], gl: &[f64], v: &[Vec<f64>], x: f64, l: f64) -> f64 {
    let locate = |g: &[f64], p: f64| -> (usize, f64) {
        if g.len() == 1 || p <= g[0] {
            return (0, 0.0);
        }
        if p >= g[g.len() - 1] {
            return (g.len() - 2, 1.0);
        }
        let i = g.partition_point(|&a| a <= p) - 1;
        (i, (p - g[i]) / (g[i + 1] - g[i]))
    };
    let (i, a) = locate(gx, x);
    let (k, b) = locate(gl, l);
    let at = |i: usize, k: usize| v[i.min(gx.len() - 1)][k.min(gl.len() - 1)];
    (1.0 - a) * (1.0 - b) * at(i, k) + a * (1.0 - b) * at(i + 1, k) + (1.0 - a) * b * at(i, k + 1) + a * b * at(i + 1, k + 1)
}

/// Builds `plane`, `temp-like`, `complex-like` or `custom` (which needs
/// `params.custom`).
pub fn make_scenario(name: &str, params: &ScenarioParams) -> Result<Scenario> {
    let (lo, hi) = params.exposure_range;
    if !(hi > lo) {
        return Err(Error::InvalidRange { lo, hi });
    }
    let (surface, x0) = match name {
        "plane" => (Surface::Plane, params.x0.unwrap_or(lo)),
        "temp-like" => (Surface::TempLike { curvature: 6.0 / (hi - lo), lag_decay: 3.0 }, params.x0.unwrap_or(lo + 0.4 * (hi - lo))),
        "complex-like" => (Surface::ComplexLike, params.x0.unwrap_or(lo + 0.5 * (hi - lo))),
        "custom" => match &params.custom {
            Some(s @ Surface::Custom { x, lags, values }) => {
                if x.len() < 2 || lags.is_empty() || values.len() != x.len() || values.iter().any(|r| r.len() != lags.len()) {
                    return Err(Error::Invalid("custom surface grid is ragged or too small".into()));
                }
                (s.clone(), params.x0.unwrap_or(lo))
            }
            _ => return Err(Error::Invalid("custom scenario needs a surface grid".into())),
        },
        other => return Err(Error::Invalid(format!("unknown scenario '{other}'"))),
    };
    if !(lo..=hi).contains(&x0) {
        return Err(Error::Invalid(format!("reference exposure {x0} outside {lo}..{hi}")));
    }
    let mut sc = Scenario {
        name: name.to_string(),
        surface,
        x0,
        max_lag: params.max_lag,
        exposure_range: params.exposure_range,
        baseline: params.baseline,
        population: params.population,
        scale: 1.0,
    };
    if !matches!(sc.surface, Surface::Custom { .. }) {
        let peak = (0..=200).map(|i| sc.overall(lo + (hi - lo) * i as f64 / 200.0).abs()).fold(0.0, f64::max);
        sc.scale = if peak > 0.0 { params.effect / peak } else { 0.0 };
    }
    Ok(sc)
}

/// Reads `x,lag,value` rows into a custom surface.
pub fn load_custom_surface<R: std::io::Read>(reader: R) -> Result<Surface> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut pts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Data { row: i + 1, message: "expected numeric x,lag,value".into() })
        };
        pts.push((get(0)?, get(1)?, get(2)?));
    }
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mut ls: Vec<f64> = pts.iter().map(|p| p.1).collect();
    for v in [&mut xs, &mut ls] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let mut values = vec![vec![f64::NAN; ls.len()]; xs.len()];
    for (x, l, v) in pts {
        let i = xs.iter().position(|&a| a == x).unwrap();
        let k = ls.iter().position(|&a| a == l).unwrap();
        values[i][k] = v;
    }
    if values.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::Invalid("custom surface does not cover a full x by lag grid".into()));
    }
    Ok(Surface::Custom { x: xs, lags: ls, values })
}

/// Exposure series for the simulated units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExposureSource {
    /// Shared AR(1) signal with seasonality plus unit-level AR(1) noise.
    Synthetic { phi: f64, seasonal_amplitude: f64, unit_sd: f64 },
    /// One series per unit, at least `T + L` long.
    Supplied(Vec<Vec<f64>>),
}

impl Default for ExposureSource {
    fn default() -> Self {
        Self::Synthetic { phi: 0.8, seasonal_amplitude: 1.5, unit_sd: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n_units: usize,
    pub n_times: usize,
    /// Kind of the true random effect; `None` for no effect.
    pub spatial: Option<SpatialKind>,
    pub hypers: SpatialHypers,
    pub exposure: ExposureSource,
    /// Dates for the `T` panel rows, if calendar covariates are wanted.
    pub dates: Option<Vec<NaiveDate>>,
}

/// Ground truth of one simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub scenario: Scenario,
    pub spatial: Option<SpatialKind>,
    pub hypers: SpatialHypers,
    pub beta0: f64,
    /// Area effects by unit, in panel order.
    pub u: Vec<f64>,
    /// Log incidence (per population unit) of every panel row, by unit.
    pub log_incidence: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: PanelData,
    pub truth: Truth,
}

/// Min-max map of all series onto `range`.
fn standardise(series: &mut [Vec<f64>], range: (f64, f64)) {
    let lo = series.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let w = if hi > lo { hi - lo } else { 1.0 };
    for s in series.iter_mut() {
        for v in s.iter_mut() {
            *v = (range.0 + (range.1 - range.0) * (*v - lo) / w).clamp(range.0, range.1);
        }
    }
}

fn synthetic_exposure<R: Rng>(rng: &mut R, j: usize, len: usize, phi: f64, amp: f64, unit_sd: f64) -> Vec<Vec<f64>> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut common = vec![0.0; len];
    let mut a: f64 = rng.sample(StandardNormal);
    for (t, c) in common.iter_mut().enumerate() {
        a = phi * a + innov * rng.sample::<f64, _>(StandardNormal);
        *c = a + amp * (std::f64::consts::PI * t as f64 / len as f64).sin();
    }
    (0..j)
        .map(|_| {
            let level: f64 = 0.5 * unit_sd * rng.sample::<f64, _>(StandardNormal);
            let mut e: f64 = rng.sample(StandardNormal);
            common
                .iter()
                .map(|c| {
                    e = 0.5 * e + (0.75f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
                    c + level + unit_sd * e
                })
                .collect()
        })
        .collect()
}

/// Simulates `y_tj ~ Poisson(pop_j · exp(β₀ + Σ_l f(x_{t-l,j}, l) + u_j))`.
/// Exposure histories of `L` extra days precede the `T` panel rows.
pub fn simulate_panel(scenario: &Scenario, design: &SimDesign, graph: Option<&AdjacencyGraph>, seed: u64) -> Result<SimulatedPanel> {
    let (j, t_len, l) = (design.n_units, design.n_times, scenario.max_lag);
    if j == 0 || t_len <= l {
        return Err(Error::Invalid(format!("need at least one unit and more than {l} time points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = match &design.exposure {
        ExposureSource::Synthetic { phi, seasonal_amplitude, unit_sd } => {
            synthetic_exposure(&mut rng, j, t_len + l, *phi, *seasonal_amplitude, *unit_sd)
        }
        ExposureSource::Supplied(s) => {
            if s.len() < j || s.iter().take(j).any(|v| v.len() < t_len + l) {
                return Err(Error::Invalid(format!("supplied exposures need {j} series of length {}", t_len + l)));
            }
            s.iter().take(j).map(|v| v[v.len() - (t_len + l)..].to_vec()).collect()
        }
    };
    standardise(&mut xs, scenario.exposure_range);
    let pop_dist = Uniform::new_inclusive(scenario.population.0, scenario.population.1)
        .map_err(|e| Error::Invalid(format!("population range: {e}")))?;
    let pops: Vec<f64> = (0..j).map(|_| rng.sample(pop_dist).round()).collect();
    let u = match design.spatial {
        None => vec![0.0; j],
        Some(kind) => {
            let g;
            let graph = match graph {
                Some(g) => g,
                None => {
                    g = AdjacencyGraph::from_edges(j, &[])?;
                    &g
                }
            };
            if graph.n_nodes() != j {
                return Err(Error::Dimension(format!("graph has {} nodes for {j} units", graph.n_nodes())));
            }
            let s = structure_matrix(graph);
            sample_spatial_effect(kind, &s, &design.hypers, &mut rng)?
        }
    };
    let mut units = Vec::with_capacity(j);
    let mut log_incidence = Vec::with_capacity(j);
    for (unit, x) in xs.iter().enumerate() {
        let mut y = Vec::with_capacity(t_len);
        let mut li = Vec::with_capacity(t_len);
        for t in l..t_len + l {
            let s: f64 = (0..=l).map(|k| scenario.f(x[t - k], k)).sum();
            let eta = scenario.baseline + s + u[unit];
            let mean = pops[unit] * eta.exp();
            let count = if mean > 0.0 {
                rng.sample(Poisson::new(mean).map_err(|e| Error::Invalid(format!("Poisson mean {mean}: {e}")))?)
            } else {
                0.0
            };
            y.push(count);
            li.push(eta);
        }
        log_incidence.push(li);
        units.push(UnitSeries {
            unit_id: (unit + 1).to_string(),
            t_start: 0,
            y,
            exposure: x[l..].to_vec(),
            population: vec![pops[unit]; t_len],
            covariates: Vec::new(),
            dates: design.dates.clone(),
        });
    }
    let mut panel = PanelData { units, covariate_names: Vec::new() };
    if design.dates.is_some() {
        add_calendar_covariates(&mut panel)?;
    }
    Ok(SimulatedPanel {
        panel,
        truth: Truth {
            seed,
            scenario: scenario.clone(),
            spatial: design.spatial,
            hypers: design.hypers,
            beta0: scenario.baseline,
            u,
            log_incidence,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub rmse: f64,
    pub coverage: f64,
}

impl Metric {
    /// RMSE and closed-interval coverage over `(estimate, lo, hi, truth)`.
    pub fn from_points(points: &[(f64, f64, f64, f64)]) -> Metric {
        let n = points.len() as f64;
        let rmse = (points.iter().map(|p| (p.0 - p.3).powi(2)).sum::<f64>() / n).sqrt();
        let coverage = points.iter().filter(|p| p.1 <= p.3 && p.3 <= p.2).count() as f64 / n;
        Metric { rmse, coverage }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub scenario: String,
    pub lag_rr: Metric,
    pub overall_rr: Metric,
    pub random_effect: Option<Metric>,
    /// On the log-incidence scale.
    pub incidence: Metric,
    /// Fitted log incidence under constant exposure `x0`, comparable to β₀.
    pub beta0_hat: f64,
    pub beta0_sd: f64,
    pub beta0_true: f64,
    pub rho_hat: Option<f64>,
    pub variance_hat: Option<f64>,
    pub converged: bool,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub level: f64,
    /// Multiplies every interval half-width.
    pub width: f64,
    pub grid_step: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { level: 0.95, width: 1.0, grid_step: 0.25 }
    }
}

/// Scores a fit against the truth it was simulated from: log RR on the
/// exposure grid (every lag and cumulated), area effects and log incidence.
/// Intrinsic-prior effects are compared with the centred truth.
pub fn score_replicate(spec: &ModelSpec, fit: &LatentFit, truth: &Truth, opts: &ScoreOptions) -> Result<ReplicateResult> {
    let sc = &truth.scenario;
    if fit.basis.max_lag != sc.max_lag {
        return Err(Error::Invalid(format!("fit uses max lag {} but the truth {}", fit.basis.max_lag, sc.max_lag)));
    }
    if spec.rows.iter().any(|&(j, t)| j >= truth.log_incidence.len() || t >= truth.log_incidence[j].len()) {
        return Err(Error::Invalid("fit rows do not match the simulated panel".into()));
    }
    let post = Posterior::new(fit)?;
    let half = z_value(opts.level)? * opts.width;
    let (lo, hi) = sc.exposure_range;
    let grid = RiskGrid::regular(lo, hi, opts.grid_step, sc.x0)?;

    let mut lag_pts = Vec::new();
    for l in 0..=sc.max_lag {
        for p in post.rr_lag(&grid, l, opts.level)? {
            lag_pts.push((p.log_rr, p.log_rr - half * p.sd, p.log_rr + half * p.sd, sc.f(p.x, l)));
        }
    }
    let overall_pts: Vec<_> = post
        .rr_overall(&grid, opts.level)?
        .into_iter()
        .map(|p| (p.log_rr, p.log_rr - half * p.sd, p.log_rr + half * p.sd, sc.overall(p.x)))
        .collect();

    let random_effect = match fit.kind() {
        None => None,
        Some(kind) => {
            let l = &fit.layout;
            let j = l.n_units;
            let mut u_true: Vec<f64> = vec![0.0; j];
            for (r, &(unit, _)) in spec.rows.iter().enumerate() {
                u_true[spec.unit_of_row[r]] = truth.u[unit];
            }
            // Effects are compared after centring, since their mean is
            // confounded with the intercept.
            let groups: Vec<Vec<usize>> = if kind.is_intrinsic() {
                let comp = &spec.spatial.as_ref().expect("spatial model").structure;
                (0..comp.n_components).map(|c| (0..j).filter(|&i| comp.component_of[i] == c).collect()).collect()
            } else {
                vec![(0..j).collect()]
            };
            let mut cs = DMatrix::zeros(fit.xi.len(), j);
            let blocks = if l.n_u() == 2 * j { 2 } else { 1 };
            for g in &groups {
                let m = g.iter().map(|&i| u_true[i]).sum::<f64>() / g.len() as f64;
                for &i in g {
                    u_true[i] -= m;
                    for b in 0..blocks {
                        let base = l.u().start + b * j;
                        for &k in g {
                            cs[(base + k, i)] -= 1.0 / g.len() as f64;
                        }
                        cs[(base + i, i)] += 1.0;
                    }
                }
            }
            let pts: Vec<_> = post
                .linear_summaries(&cs)
                .into_iter()
                .zip(&u_true)
                .map(|((m, sd), &t)| (m, m - half * sd, m + half * sd, t))
                .collect();
            Some(Metric::from_points(&pts))
        }
    };

    let incidence = {
        let d = fit.xi.len();
        let l = &fit.layout;
        let n = spec.n_obs();
        let mut cs = DMatrix::zeros(d, n);
        for r in 0..n {
            for c in 0..l.n_dense() {
                cs[(c, r)] = spec.x[(r, c)];
            }
            if l.n_u() > 0 {
                cs[(l.u().start + spec.unit_of_row[r], r)] = 1.0;
                if l.n_u() == 2 * l.n_units {
                    cs[(l.u().start + l.n_units + spec.unit_of_row[r], r)] = 1.0;
                }
            }
        }
        let pts: Vec<_> = post
            .linear_summaries(&cs)
            .into_iter()
            .zip(&spec.rows)
            .map(|((m, sd), &(j, t))| (m, m - half * sd, m + half * sd, truth.log_incidence[j][t]))
            .collect();
        Metric::from_points(&pts)
    };

    let (beta_hat, beta_sd) = {
        let mut c = nalgebra::DVector::zeros(fit.xi.len());
        c[0] = 1.0;
        let row = fit.basis.history_row(&vec![sc.x0; sc.max_lag + 1])?;
        let s = fit.layout.theta().start;
        for (k, v) in row.into_iter().enumerate() {
            c[s + k] = v;
        }
        post.linear_summary(&c)
    };
    Ok(ReplicateResult {
        replicate: 0,
        seed: truth.seed,
        scenario: sc.name.clone(),
        lag_rr: Metric::from_points(&lag_pts),
        overall_rr: Metric::from_points(&overall_pts),
        random_effect,
        incidence,
        beta0_hat: beta_hat,
        beta0_sd: beta_sd,
        beta0_true: truth.beta0,
        rho_hat: fit.natural("rho"),
        variance_hat: fit.natural("variance"),
        converged: fit.converged && fit.hyper_converged,
        runtime_secs: 0.0,
    })
}

/// Everything needed to simulate, fit and score one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub scenario: Scenario,
    pub design: SimDesign,
    /// Grid dimensions of the adjacency graph (`rows * cols = J`).
    pub grid: (usize, usize),
    pub model: ModelConfig,
    pub fit: FitOptions,
    pub score: ScoreOptions,
}

/// Seed of replicate `index` derived from the master seed.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// Simulates, fits and scores replicate `index`.
pub fn run_replicate(setup: &SimSetup, master_seed: u64, index: usize) -> Result<(ReplicateResult, Truth)> {
    let seed = replicate_seed(master_seed, index);
    let graph = AdjacencyGraph::grid(setup.grid.0, setup.grid.1);
    if graph.n_nodes() != setup.design.n_units {
        return Err(Error::Dimension(format!(
            "{}x{} grid for {} units",
            setup.grid.0, setup.grid.1, setup.design.n_units
        )));
    }
    let sim = simulate_panel(&setup.scenario, &setup.design, Some(&graph), seed)?;
    let mut cfg = setup.model.clone();
    cfg.max_lag = setup.scenario.max_lag;
    cfg.exposure_range = Some(setup.scenario.exposure_range);
    let start = Instant::now();
    let spec = ModelSpec::from_panel(&sim.panel, Some(&graph), &cfg)?;
    let fitted = fit(&spec, None, &setup.fit)?;
    let runtime = start.elapsed().as_secs_f64();
    let mut res = score_replicate(&spec, &fitted, &sim.truth, &setup.score)?;
    res.replicate = index;
    res.runtime_secs = runtime;
    Ok((res, sim.truth))
}

/// Runs replicates `0..n` on a pool of `workers` threads. Results come back
/// in replicate order regardless of scheduling.
pub fn run_replicates(setup: &SimSetup, master_seed: u64, n: usize, workers: usize) -> Result<Vec<Result<(ReplicateResult, Truth)>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(|i| run_replicate(setup, master_seed, i)).collect()))
}

pub const AGGREGATE_HEADER: [&str; 12] = [
    "replicate",
    "seed",
    "rmse_lag_log_rr",
    "coverage_lag_rr",
    "rmse_overall_log_rr",
    "coverage_overall_rr",
    "rmse_re",
    "coverage_re",
    "rmse_log_incidence",
    "coverage_incidence",
    "rho_hat",
    "variance_hat",
];

/// One row per replicate plus a `mean` summary row. Runtimes are left out so
/// the table is reproducible.
pub fn aggregate_rows(results: &[ReplicateResult]) -> Vec<Vec<String>> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    let mut rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.replicate.to_string(),
                r.seed.to_string(),
                r.lag_rr.rmse.to_string(),
                r.lag_rr.coverage.to_string(),
                r.overall_rr.rmse.to_string(),
                r.overall_rr.coverage.to_string(),
                opt(r.random_effect.map(|m| m.rmse)),
                opt(r.random_effect.map(|m| m.coverage)),
                r.incidence.rmse.to_string(),
                r.incidence.coverage.to_string(),
                opt(r.rho_hat),
                opt(r.variance_hat),
            ]
        })
        .collect();
    let mean = |f: &dyn Fn(&ReplicateResult) -> Option<f64>| {
        let v: Vec<f64> = results.iter().filter_map(f).collect();
        if v.is_empty() {
            String::new()
        } else {
            format!("{}", v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    rows.push(vec![
        "mean".into(),
        String::new(),
        mean(&|r| Some(r.lag_rr.rmse)),
        mean(&|r| Some(r.lag_rr.coverage)),
        mean(&|r| Some(r.overall_rr.rmse)),
        mean(&|r| Some(r.overall_rr.coverage)),
        mean(&|r| r.random_effect.map(|m| m.rmse)),
        mean(&|r| r.random_effect.map(|m| m.coverage)),
        mean(&|r| Some(r.incidence.rmse)),
        mean(&|r| Some(r.incidence.coverage)),
        mean(&|r| r.rho_hat),
        mean(&|r| r.variance_hat),
    ]);
    rows
}

/// Summer days (June to August) of the given years.
pub fn summer_dates(years: &[i32]) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    for &y in years {
        let mut d = NaiveDate::from_ymd_opt(y, 6, 1).expect("valid date");
        let end = NaiveDate::from_ymd_opt(y, 8, 31).expect("valid date");
        while d <= end {
            out.push(d);
            d = d.succ_opt().expect("valid date");
        }
    }
    out
}

/// Normal draws used by tests that need an independent reference stream.
pub fn normal_sample(seed: u64, n: usize, sd: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sd).expect("positive sd");
    (0..n).map(|_| rng.sample(d)).collect()
}
