//! Relative risks, attributable fractions, exceedance probabilities and
//! random-effect summaries from a fitted Gaussian approximation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fit::LatentFit;
use crate::panel::{PanelData, UnitSeries};
use crate::spatial::SpatialKind;

/// Exposure values at which risks are reported, relative to `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGrid {
    pub x: Vec<f64>,
    pub x0: f64,
}

impl RiskGrid {
    pub fn new(x: Vec<f64>, x0: f64) -> Self {
        Self { x, x0 }
    }

    /// `lo, lo + step, ...` up to `hi` inclusive.
    pub fn regular(lo: f64, hi: f64, step: f64, x0: f64) -> Result<Self> {
        if !(step > 0.0) || !(hi >= lo) {
            return Err(Error::Invalid(format!("bad grid {lo}..{hi} step {step}")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Ok(Self { x: (0..n).map(|i| lo + i as f64 * step).collect(), x0 })
    }
}

/// Point estimate and equal-tailed interval on the RR scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub x: f64,
    pub log_rr: f64,
    pub sd: f64,
    pub rr: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Posterior samples of `ξ`, one draw per column.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub samples: DMatrix<f64>,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.samples.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfExceedance {
    pub unit_id: String,
    pub window: String,
    pub n_points: usize,
    pub probability: f64,
}

/// Standard normal quantile for a two-sided interval of the given level.
pub fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("interval level must lie in (0, 1), got {level}")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

/// Precomputed factorisations for linear functionals of `ξ`.
pub struct Posterior<'a> {
    pub fit: &'a LatentFit,
    chol: Cholesky<f64, Dyn>,
    /// `(A, K⁻¹Aᵀ, chol(AK⁻¹Aᵀ))` for constrained fits.
    cond: Option<(DMatrix<f64>, DMatrix<f64>, Cholesky<f64, Dyn>)>,
}

impl<'a> Posterior<'a> {
    pub fn new(fit: &'a LatentFit) -> Result<Self> {
        let chol = fit.cholesky();
        let cond = match &fit.constraint {
            Some(a) => {
                let kinv_at = chol.solve(&a.transpose());
                let s = a * &kinv_at;
                let s = (&s + s.transpose()) * 0.5;
                let sc = s.cholesky().ok_or_else(|| Error::NotPositiveDefinite("constrained covariance".into()))?;
                Some((a.clone(), kinv_at, sc))
            }
            None => None,
        };
        Ok(Self { fit, chol, cond })
    }

    pub fn dim(&self) -> usize {
        self.fit.xi.len()
    }

    /// Means and standard deviations of `cᵀξ` for each column `c` of `cs`.
    pub fn linear_summaries(&self, cs: &DMatrix<f64>) -> Vec<(f64, f64)> {
        let means = cs.tr_mul(&self.fit.xi);
        let half = self.chol.l_dirty().solve_lower_triangular(cs).expect("nonsingular factor");
        let mut var: Vec<f64> = half.column_iter().map(|c| c.norm_squared()).collect();
        if let Some((_, kinv_at, sc)) = &self.cond {
            let w = kinv_at.tr_mul(cs);
            let r = sc.l_dirty().solve_lower_triangular(&w).expect("nonsingular factor");
            for (v, c) in var.iter_mut().zip(r.column_iter()) {
                *v -= c.norm_squared();
            }
        }
        means.iter().zip(var).map(|(&m, v)| (m, v.max(0.0).sqrt())).collect()
    }

    pub fn linear_summary(&self, c: &DVector<f64>) -> (f64, f64) {
        self.linear_summaries(&DMatrix::from_column_slice(c.len(), 1, c.as_slice()))[0]
    }

    /// Embeds a cross-basis coefficient vector into a full-length contrast.
    pub fn theta_contrast(&self, row: &[f64]) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim());
        c.rows_mut(self.fit.layout.theta().start, row.len()).copy_from_slice(row);
        c
    }

    fn risk_points(&self, grid: &RiskGrid, rows: Vec<Vec<f64>>, level: f64) -> Result<Vec<RiskPoint>> {
        let z = z_value(level)?;
        let mut cs = DMatrix::zeros(self.dim(), rows.len());
        let start = self.fit.layout.theta().start;
        for (j, r) in rows.iter().enumerate() {
            cs.view_mut((start, j), (r.len(), 1)).copy_from_slice(r);
        }
        Ok(self
            .linear_summaries(&cs)
            .into_iter()
            .zip(&grid.x)
            .map(|((m, sd), &x)| RiskPoint { x, log_rr: m, sd, rr: m.exp(), lo: (m - z * sd).exp(), hi: (m + z * sd).exp() })
            .collect())
    }

    /// Lag-specific relative risk at each grid value.
    pub fn rr_lag(&self, grid: &RiskGrid, lag: usize, level: f64) -> Result<Vec<RiskPoint>> {
        let b = &self.fit.basis;
        let rows = grid.x.iter().map(|&x| b.contrast_row(x, grid.x0, lag)).collect::<Result<Vec<_>>>()?;
        self.risk_points(grid, rows, level)
    }

    /// Relative risk cumulated over lags `0..=L`.
    pub fn rr_overall(&self, grid: &RiskGrid, level: f64) -> Result<Vec<RiskPoint>> {
        let b = &self.fit.basis;
        let rows = grid.x.iter().map(|&x| b.overall_contrast_row(x, grid.x0)).collect::<Result<Vec<_>>>()?;
        self.risk_points(grid, rows, level)
    }

    fn af_from_contrast(&self, c: &[f64]) -> f64 {
        let theta = self.fit.xi.rows(self.fit.layout.theta().start, c.len());
        let s: f64 = c.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        1.0 - (-s).exp()
    }

    /// Forward attributable fraction: `x_t` acting at every lag.
    pub fn af_forward(&self, xs: &[f64], t: usize, x0: f64) -> Result<f64> {
        let x = *xs.get(t).ok_or_else(|| Error::Invalid(format!("time {t} outside a series of length {}", xs.len())))?;
        Ok(self.af_from_contrast(&self.fit.basis.overall_contrast_row(x, x0)?))
    }

    /// Backward attributable fraction: exposures `x_{t-l}` for `l = 0..=L`.
    pub fn af_backward(&self, xs: &[f64], t: usize, x0: f64) -> Result<f64> {
        Ok(self.af_from_contrast(&backward_contrast(&self.fit.basis, xs, t, x0)?))
    }

    /// `ξ̂ + δ` with `δ ~ N(0, Σ̂)`, conditioned on the constraints.
    pub fn draw_latent(&self, n: usize, seed: u64) -> PosteriorDraws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut z = DMatrix::zeros(d, n);
        for j in 0..n {
            for i in 0..d {
                z[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        self.draws_from_normals(z, seed)
    }

    /// Transforms standard normal columns into posterior draws.
    pub fn draws_from_normals(&self, mut z: DMatrix<f64>, seed: u64) -> PosteriorDraws {
        self.chol.l_dirty().tr_solve_lower_triangular_mut(&mut z);
        if let Some((a, kinv_at, sc)) = &self.cond {
            let corr = kinv_at * sc.solve(&(a * &z));
            z -= corr;
        }
        for mut col in z.column_iter_mut() {
            col += &self.fit.xi;
        }
        PosteriorDraws { samples: z, seed }
    }

    /// Monte-Carlo probability that the overall RR exceeds `threshold`.
    pub fn exceedance_rr(&self, grid: &RiskGrid, threshold: f64, draws: &PosteriorDraws) -> Result<Vec<f64>> {
        let b = &self.fit.basis;
        let log_t = threshold.ln();
        let theta = draws.samples.rows(self.fit.layout.theta().start, b.n_coef());
        let mut out = Vec::with_capacity(grid.x.len());
        for &x in &grid.x {
            let c = DVector::from_vec(b.overall_contrast_row(x, grid.x0)?);
            let vals = theta.tr_mul(&c);
            let hits = vals.iter().filter(|&&v| v > log_t).count();
            out.push(hits as f64 / draws.n_draws() as f64);
        }
        Ok(out)
    }

    /// Per unit and window, the Monte-Carlo probability that the
    /// count-weighted backward AF `Σ AF_b(t) y_t / Σ y_t` exceeds `threshold`.
    /// `window_of` labels each eligible time point, or skips it with `None`.
    pub fn exceedance_af<F>(
        &self,
        panel: &PanelData,
        window_of: F,
        x0: f64,
        draws: &PosteriorDraws,
        threshold: f64,
    ) -> Result<Vec<AfExceedance>>
    where
        F: Fn(&UnitSeries, usize) -> Option<String>,
    {
        let b = &self.fit.basis;
        let l = b.max_lag;
        let theta = draws.samples.rows(self.fit.layout.theta().start, b.n_coef()).into_owned();
        let n_draws = draws.n_draws();
        let mut out = Vec::new();
        for unit in &panel.units {
            let mut windows: Vec<(String, Vec<usize>)> = Vec::new();
            for t in l..unit.len() {
                if let Some(w) = window_of(unit, t) {
                    match windows.iter_mut().find(|(name, _)| *name == w) {
                        Some((_, ts)) => ts.push(t),
                        None => windows.push((w, vec![t])),
                    }
                }
            }
            for (name, ts) in windows {
                let total: f64 = ts.iter().map(|&t| unit.y[t]).sum();
                let weighted: Vec<usize> = ts.iter().copied().filter(|&t| unit.y[t] > 0.0).collect();
                let mut an = DVector::<f64>::zeros(n_draws);
                if !weighted.is_empty() {
                    let mut cs = DMatrix::zeros(b.n_coef(), weighted.len());
                    for (k, &t) in weighted.iter().enumerate() {
                        cs.set_column(k, &DVector::from_vec(backward_contrast(b, &unit.exposure, t, x0)?));
                    }
                    let s = cs.tr_mul(&theta);
                    for (k, &t) in weighted.iter().enumerate() {
                        for d in 0..n_draws {
                            an[d] += unit.y[t] * (1.0 - (-s[(k, d)]).exp());
                        }
                    }
                }
                let hits = an.iter().filter(|&&v| total > 0.0 && v / total > threshold).count();
                out.push(AfExceedance {
                    unit_id: unit.unit_id.clone(),
                    window: name,
                    n_points: ts.len(),
                    probability: hits as f64 / n_draws as f64,
                });
            }
        }
        if out.is_empty() {
            return Err(Error::Invalid("no eligible time points in any window".into()));
        }
        Ok(out)
    }

    /// Marginal summaries of the area effects, `u₁ + u₂` for the convolution
    /// prior.
    pub fn random_effect_summary(&self, level: f64) -> Result<Vec<(String, EffectSummary)>> {
        let layout = &self.fit.layout;
        let kind = layout.spatial.ok_or_else(|| Error::Invalid("model has no random effects".into()))?;
        let z = z_value(level)?;
        let j = layout.n_units;
        let s = layout.u().start;
        let mut cs = DMatrix::zeros(self.dim(), j);
        for unit in 0..j {
            cs[(s + unit, unit)] = 1.0;
            if kind == SpatialKind::Convolution {
                cs[(s + j + unit, unit)] = 1.0;
            }
        }
        Ok(self
            .linear_summaries(&cs)
            .into_iter()
            .zip(&self.fit.unit_ids)
            .map(|((m, sd), id)| (id.clone(), EffectSummary { mean: m, sd, lo: m - z * sd, hi: m + z * sd }))
            .collect())
    }
}

/// Coefficient weights of the backward AF at time `t`.
pub fn backward_contrast(b: &crate::crossbasis::DlnmBasis, xs: &[f64], t: usize, x0: f64) -> Result<Vec<f64>> {
    let l = b.max_lag;
    if t < l || t >= xs.len() {
        return Err(Error::Invalid(format!(
            "backward AF at time {t} needs exposures back to lag {l} within a series of length {}",
            xs.len()
        )));
    }
    let history: Vec<f64> = (0..=l).map(|k| xs[t - k]).collect();
    let mut c = b.history_row(&history)?;
    for (v, r) in c.iter_mut().zip(b.history_row(&vec![x0; l + 1])?) {
        *v -= r;
    }
    Ok(c)
}
