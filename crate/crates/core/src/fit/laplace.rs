//! Conditional posterior of the latent vector and its Newton–Raphson mode.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Hypers, ModelSpec};
use crate::spatial::precision;

/// Linear predictors above this are treated as overflow.
pub const ETA_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Relative tolerance on the sup-norm of the (projected) gradient.
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 100, grad_tol: 1e-8, max_halvings: 30 }
    }
}

/// `Q = blkdiag(ζI, P(λ), G)`.
pub fn build_q(spec: &ModelSpec, hypers: &Hypers) -> Result<DMatrix<f64>> {
    let l = &spec.layout;
    let mut q = DMatrix::zeros(l.dim(), l.dim());
    q.view_mut((0, 0), (l.n_fixed, l.n_fixed)).fill_with_identity();
    q.view_mut((0, 0), (l.n_fixed, l.n_fixed)).scale_mut(spec.priors.zeta);
    let p = spec.penalty.assemble(&hypers.lambda)?;
    if p.nrows() != l.n_theta {
        return Err(Error::Dimension(format!("penalty of size {} for {} spline coefficients", p.nrows(), l.n_theta)));
    }
    q.view_mut((l.n_fixed, l.n_fixed), (l.n_theta, l.n_theta)).copy_from(&p);
    match (&spec.spatial, &hypers.spatial) {
        (None, None) => {}
        (Some(sp), Some(h)) => {
            let g = precision(sp.kind, &sp.structure, h)?;
            let s = l.u().start;
            q.view_mut((s, s), g.shape()).copy_from(&g);
        }
        _ => return Err(Error::InvalidHyper("spatial hyperparameters do not match the model".into())),
    }
    Ok(q)
}

/// Poisson log-likelihood without the `log y!` constant; `-∞` on overflow.
pub fn log_likelihood(spec: &ModelSpec, eta: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for (&y, &e) in spec.y.iter().zip(eta.iter()) {
        if !(e <= ETA_LIMIT) {
            return f64::NEG_INFINITY;
        }
        s += y * e - e.exp();
    }
    s
}

fn penalised(spec: &ModelSpec, q: &DMatrix<f64>, xi: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    let ll = log_likelihood(spec, eta);
    if ll == f64::NEG_INFINITY {
        return ll;
    }
    ll - 0.5 * xi.dot(&(q * xi))
}

pub fn log_cond_posterior(spec: &ModelSpec, q: &DMatrix<f64>, xi: &DVector<f64>) -> f64 {
    penalised(spec, q, xi, &spec.linear_predictor(xi))
}

/// `Hᵀ(y - μ)`.
pub fn score(spec: &ModelSpec, mu: &DVector<f64>) -> DVector<f64> {
    let l = &spec.layout;
    let resid = DVector::from_iterator(mu.len(), spec.y.iter().zip(mu.iter()).map(|(y, m)| y - m));
    let mut g = DVector::zeros(l.dim());
    g.rows_mut(0, l.n_dense()).copy_from(&spec.x.tr_mul(&resid));
    if l.n_u() > 0 {
        let s = l.u().start;
        for (&unit, r) in spec.unit_of_row.iter().zip(resid.iter()) {
            g[s + unit] += r;
        }
        if l.n_u() == 2 * l.n_units {
            for j in 0..l.n_units {
                g[s + l.n_units + j] = g[s + j];
            }
        }
    }
    g
}

/// `HᵀVH` with `V = diag(μ)`.
const CHUNK_ROWS: usize = 4096;
const GRAM_BLOCK: usize = 24;

pub fn information(spec: &ModelSpec, mu: &DVector<f64>) -> DMatrix<f64> {
    let l = &spec.layout;
    let n = spec.n_obs();
    let q = l.n_dense();
    let d = l.dim();
    let mut k = DMatrix::zeros(d, d);

    let mut xs = spec.x.clone();
    for mut col in xs.column_iter_mut() {
        for (v, m) in col.iter_mut().zip(mu.iter()) {
            *v *= m.sqrt();
        }
    }
    let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK_ROWS).map(|a| (a, (a + CHUNK_ROWS).min(n))).collect();
    let gram = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut g = DMatrix::<f64>::zeros(q, q);
            // Lower triangle only, in column blocks.
            for c0 in (0..q).step_by(GRAM_BLOCK) {
                let w = GRAM_BLOCK.min(q - c0);
                // SAFETY: `xs` is n x q column-major, so rows a..b of columns
                // c0.. start at offset c0*n + a with strides (1, n); the
                // result block g[c0.., c0..c0+w] starts at c0*q + c0 with
                // strides (1, q). All indices stay inside both buffers.
                unsafe {
                    let base = xs.as_ptr().add(c0 * n + a);
                    matrixmultiply::dgemm(
                        q - c0,
                        b - a,
                        w,
                        1.0,
                        base,
                        n as isize,
                        1,
                        base,
                        1,
                        n as isize,
                        0.0,
                        g.as_mut_ptr().add(c0 * q + c0),
                        1,
                        q as isize,
                    );
                }
            }
            g
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(DMatrix::zeros(q, q), |acc, g| acc + g);
    k.view_mut((0, 0), (q, q)).copy_from(&gram);
    for i in 0..q {
        for j in 0..i {
            k[(j, i)] = k[(i, j)];
        }
    }

    if l.n_u() > 0 {
        let j_units = l.n_units;
        let s = l.u().start;
        let conv = l.n_u() == 2 * j_units;
        let mut acc = vec![0.0; j_units];
        for i in 0..q {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for ((&unit, m), x) in spec.unit_of_row.iter().zip(mu.iter()).zip(spec.x.column(i).iter()) {
                acc[unit] += m * x;
            }
            for (j, &a) in acc.iter().enumerate() {
                k[(i, s + j)] = a;
                k[(s + j, i)] = a;
                if conv {
                    k[(i, s + j_units + j)] = a;
                    k[(s + j_units + j, i)] = a;
                }
            }
        }
        let mut tot = vec![0.0; j_units];
        for (&unit, m) in spec.unit_of_row.iter().zip(mu.iter()) {
            tot[unit] += m;
        }
        for (j, &t) in tot.iter().enumerate() {
            k[(s + j, s + j)] = t;
            if conv {
                k[(s + j_units + j, s + j_units + j)] = t;
                k[(s + j, s + j_units + j)] = t;
                k[(s + j_units + j, s + j)] = t;
            }
        }
    }
    k
}

fn mean(eta: &DVector<f64>) -> DVector<f64> {
    eta.map(f64::exp)
}

/// `Hᵀ(y - μ) - Qξ`.
pub fn gradient(spec: &ModelSpec, q: &DMatrix<f64>, xi: &DVector<f64>) -> DVector<f64> {
    score(spec, &mean(&spec.linear_predictor(xi))) - q * xi
}

/// `-(HᵀVH + Q)`.
pub fn hessian(spec: &ModelSpec, q: &DMatrix<f64>, xi: &DVector<f64>) -> DMatrix<f64> {
    -(information(spec, &mean(&spec.linear_predictor(xi))) + q)
}

/// `HᵀVH + Q`, plus `κAᵀA` under constraints, with `κ` the mean diagonal
/// of the constrained block. The extra term vanishes on `Aξ = 0`, so the
/// constrained mode, Newton steps and conditional Gaussian are unchanged; it
/// lifts the direction shared by the intercept and intrinsic effects, which
/// otherwise only the `ζ` prior separates.
pub fn stabilised_precision(
    spec: &ModelSpec,
    q: &DMatrix<f64>,
    mu: &DVector<f64>,
    constraint: Option<&Constraint>,
) -> DMatrix<f64> {
    stabilise(information(spec, mu) + q, constraint)
}

fn stabilise(mut k: DMatrix<f64>, constraint: Option<&Constraint>) -> DMatrix<f64> {
    if let Some(c) = constraint {
        let cols: Vec<usize> = (0..c.a.ncols()).filter(|&i| c.a.column(i).iter().any(|&v| v != 0.0)).collect();
        let kappa = cols.iter().map(|&i| k[(i, i)]).sum::<f64>() / cols.len().max(1) as f64;
        k += c.a.tr_mul(&c.a) * kappa;
    }
    k
}

/// [`stabilised_precision`] at `xi`.
pub fn precision_at(spec: &ModelSpec, q: &DMatrix<f64>, xi: &DVector<f64>, constraint: Option<&Constraint>) -> DMatrix<f64> {
    stabilised_precision(spec, q, &mean(&spec.linear_predictor(xi)), constraint)
}

/// Linear equality constraints `Aξ = 0`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub a: DMatrix<f64>,
    aat_inv: DMatrix<f64>,
}

impl Constraint {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let aat_inv = (&a * a.transpose())
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("constraint rows are linearly dependent".into()))?;
        Ok(Self { a, aat_inv })
    }

    /// Euclidean projection onto the null space of `A`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.a.transpose() * (&self.aat_inv * (&self.a * v))
    }

    /// `K⁻¹Aᵀ` and the Cholesky factor of `AK⁻¹Aᵀ`.
    pub fn conditioning(&self, chol: &Cholesky<f64, Dyn>) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
        let kinv_at = chol.solve(&self.a.transpose());
        let s = &self.a * &kinv_at;
        let s = (&s + s.transpose()) * 0.5;
        let sc = s.cholesky().ok_or_else(|| Error::NotPositiveDefinite("constrained covariance".into()))?;
        Ok((kinv_at, sc))
    }
}

/// Newton–Raphson result at (or near) the mode.
#[derive(Debug, Clone)]
pub struct Mode {
    pub xi: DVector<f64>,
    /// Cholesky factor of `HᵀVH + Q` at `xi`.
    pub chol: Cholesky<f64, Dyn>,
    pub logpost: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Log posterior after each accepted iteration, starting value first.
    pub path: Vec<f64>,
    /// `HᵀVH` at `xi`; it does not depend on the hyperparameters, so it
    /// serves as a warm start for the next evaluation.
    pub info: DMatrix<f64>,
}

impl Mode {
    /// `½ log|Σ̂|`, restricted to the constraint subspace when present.
    pub fn half_logdet_sigma(&self, constraint: Option<&Constraint>) -> Result<f64> {
        let logdet_k = 2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut v = -0.5 * logdet_k;
        if let Some(c) = constraint {
            let (_, sc) = c.conditioning(&self.chol)?;
            v -= sc.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Ok(v)
    }
}

/// Runs Newton–Raphson and reports non-convergence through the flag; fails
/// only when `HᵀVH + Q` is not positive definite.
pub fn newton_iterate(
    spec: &ModelSpec,
    q: &DMatrix<f64>,
    constraint: Option<&Constraint>,
    xi0: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<Mode> {
    newton_iterate_warm(spec, q, constraint, xi0, None, opts)
}

/// [`newton_iterate`] with `HᵀVH` at `xi0` supplied. The factorisation is
/// kept across iterations while the gradient keeps dropping by at least
/// [`REUSE_RATE`]; the returned factor is always evaluated at the returned
/// point.
pub fn newton_iterate_warm(
    spec: &ModelSpec,
    q: &DMatrix<f64>,
    constraint: Option<&Constraint>,
    xi0: Option<&DVector<f64>>,
    info0: Option<&DMatrix<f64>>,
    opts: &NewtonOptions,
) -> Result<Mode> {
    let project_point = |x: DVector<f64>| match constraint {
        Some(c) => c.project(&x),
        None => x,
    };
    let mut xi = project_point(xi0.cloned().unwrap_or_else(|| spec.default_start()));
    if xi.len() != spec.dim() {
        return Err(Error::Dimension(format!("start vector of length {} for dimension {}", xi.len(), spec.dim())));
    }
    let mut info = info0.filter(|_| xi0.is_some_and(|x| *x == xi)).cloned();
    if info.as_ref().is_some_and(|m| m.nrows() != xi.len()) {
        info = None;
    }
    let mut eta = spec.linear_predictor(&xi);
    let mut f = penalised(spec, q, &xi, &eta);
    if !f.is_finite() {
        xi = project_point(spec.default_start());
        eta = spec.linear_predictor(&xi);
        f = penalised(spec, q, &xi, &eta);
        info = None;
    }
    if !f.is_finite() {
        return Err(Error::Degenerate("log posterior is not finite at the starting point".into()));
    }
    let factor = |info: &DMatrix<f64>, iter: usize| {
        stabilise(info + q, constraint)
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("HᵀVH + Q at Newton iteration {iter}")))
    };
    let mut path = vec![f];
    let mut iter = 0;
    // Factor and whether it belongs to the current point.
    let mut cached: Option<(Cholesky<f64, Dyn>, bool)> = match &info {
        Some(m) => Some((factor(m, 0)?, true)),
        None => None,
    };
    let mut last_norm = f64::INFINITY;
    loop {
        let mu = mean(&eta);
        let g = score(spec, &mu) - q * &xi;
        let gp = match constraint {
            Some(c) => c.project(&g),
            None => g.clone(),
        };
        let grad_norm = gp.amax();
        let done = grad_norm < opts.grad_tol * (1.0 + xi.amax());
        let stale = !cached.as_ref().is_some_and(|c| c.1);
        if cached.is_none() || (stale && (done || iter >= opts.max_iter || grad_norm > REUSE_RATE * last_norm)) {
            let m = information(spec, &mu);
            cached = Some((factor(&m, iter)?, true));
            info = Some(m);
        }
        let (chol, fresh) = cached.as_ref().expect("factor computed above");
        if done || iter >= opts.max_iter {
            debug_assert!(*fresh);
            let info = info.expect("information at the final point");
            return Ok(Mode { xi, chol: chol.clone(), logpost: f, iterations: iter, grad_norm, converged: done, path, info });
        }
        last_norm = grad_norm;
        let mut d = chol.solve(&g);
        if let Some(c) = constraint {
            let (kinv_at, sc) = c.conditioning(chol)?;
            d -= &kinv_at * sc.solve(&(&c.a * &d));
        }
        let gain = g.dot(&d);
        let small = gain.abs() < 1e-10 * (1.0 + f.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for h in 0..=opts.max_halvings {
            let cand = &xi + &d * step;
            let eta_c = spec.linear_predictor(&cand);
            let f_c = penalised(spec, q, &cand, &eta_c);
            if f_c >= f || (h == 0 && small && f_c.is_finite()) {
                accepted = Some((cand, eta_c, f_c, h));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, eta_c, f_c, halvings)) => {
                xi = cand;
                eta = eta_c;
                f = f_c;
                path.push(f);
                if let Some(c) = cached.as_mut() {
                    c.1 = false;
                }
                if halvings > 0 {
                    last_norm = 0.0;
                }
            }
            None if !*fresh => {
                // A stale factor may give a poor direction; retry with a fresh one.
                last_norm = 0.0;
                if let Some(c) = cached.as_mut() {
                    c.1 = false;
                }
                continue;
            }
            None => {
                let info = info.expect("information at the current point");
                return Ok(Mode { xi, chol: chol.clone(), logpost: f, iterations: iter, grad_norm, converged: false, path, info });
            }
        }
        iter += 1;
    }
}

/// Required drop of the gradient norm per iteration for the factorisation to
/// be reused.
pub const REUSE_RATE: f64 = 0.05;

/// Newton–Raphson mode; non-convergence is an error carrying the last iterate.
pub fn newton_mode(
    spec: &ModelSpec,
    q: &DMatrix<f64>,
    constraint: Option<&Constraint>,
    xi0: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<Mode> {
    let m = newton_iterate(spec, q, constraint, xi0, opts)?;
    if !m.converged {
        return Err(Error::NonConvergence {
            iterations: m.iterations,
            grad_norm: m.grad_norm,
            last: m.xi.iter().copied().collect(),
        });
    }
    Ok(m)
}
