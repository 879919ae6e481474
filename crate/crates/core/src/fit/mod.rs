//! Two-step fitting: Nelder–Mead over the hyperparameter marginal posterior,
//! then the Laplace approximation of the latent vector at the optimum.

pub mod hyper;
pub mod laplace;
pub mod nelder_mead;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::crossbasis::DlnmBasis;
use crate::error::{Error, Result};
use crate::model::{Layout, ModelSpec};
use crate::spatial::SpatialKind;

pub use hyper::{evaluate, evaluate_warm, hyper_log_posterior, HyperEval, ObjectiveParts};
pub use laplace::{
    build_q, gradient, hessian, information, log_cond_posterior, log_likelihood, newton_iterate, newton_iterate_warm, newton_mode,
    precision_at, score, stabilised_precision, Constraint, Mode, NewtonOptions,
};
pub use nelder_mead::{minimize, NelderMeadOptions, NelderMeadResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub newton: NewtonOptions,
    pub outer: NelderMeadOptions,
    /// Transformed hyperparameters outside `[-bound, bound]` are rejected.
    pub bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { newton: NewtonOptions::default(), outer: NelderMeadOptions::default(), bound: 15.0 }
    }
}

/// One objective evaluation of the outer optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval: usize,
    pub v: Vec<f64>,
    pub objective: f64,
    pub newton_iters: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct HyperOptimum {
    pub v: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
    pub simplex: Vec<(Vec<f64>, f64)>,
    pub trace: Vec<TraceEntry>,
    /// Latent mode at `v`, usable as a warm start.
    pub xi: Option<DVector<f64>>,
}

/// Maximises the hyperparameter objective from `v0`.
pub fn optimize_hypers(spec: &ModelSpec, v0: &[f64], opts: &FitOptions) -> Result<HyperOptimum> {
    if v0.len() != spec.n_hypers() {
        return Err(Error::Dimension(format!("{} starting values for {} hyperparameters", v0.len(), spec.n_hypers())));
    }
    let constraint = spec.constraint().map(Constraint::new).transpose()?;
    let mut warm: Option<(DVector<f64>, DMatrix<f64>)> = None;
    let mut trace = Vec::new();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut first_error: Option<Error> = None;
    let result = minimize(
        |v| {
            let eval = trace.len() + 1;
            if v.iter().any(|x| x.abs() > opts.bound) {
                trace.push(TraceEntry { eval, v: v.to_vec(), objective: f64::NEG_INFINITY, newton_iters: 0, grad_norm: f64::NAN });
                return f64::INFINITY;
            }
            let (wx, wi) = warm.as_ref().map(|(x, i)| (x, i)).unzip();
            match evaluate_warm(spec, constraint.as_ref(), v, wx, wi, &opts.newton) {
                Ok(e) if e.mode.converged && e.value.is_finite() => {
                    trace.push(TraceEntry {
                        eval,
                        v: v.to_vec(),
                        objective: e.value,
                        newton_iters: e.mode.iterations,
                        grad_norm: e.mode.grad_norm,
                    });
                    if best.as_ref().is_none_or(|(b, _)| e.value > *b) {
                        best = Some((e.value, e.mode.xi.clone()));
                    }
                    warm = Some((e.mode.xi, e.mode.info));
                    -e.value
                }
                Ok(e) => {
                    log::warn!("inner Newton did not converge at v = {v:?} (gradient norm {:.3e})", e.mode.grad_norm);
                    trace.push(TraceEntry {
                        eval,
                        v: v.to_vec(),
                        objective: f64::NEG_INFINITY,
                        newton_iters: e.mode.iterations,
                        grad_norm: e.mode.grad_norm,
                    });
                    f64::INFINITY
                }
                Err(err) => {
                    log::warn!("objective failed at v = {v:?}: {err}");
                    trace.push(TraceEntry { eval, v: v.to_vec(), objective: f64::NEG_INFINITY, newton_iters: 0, grad_norm: f64::NAN });
                    first_error.get_or_insert(err);
                    f64::INFINITY
                }
            }
        },
        v0,
        &opts.outer,
    );
    if !result.f.is_finite() {
        return Err(first_error.unwrap_or_else(|| Error::Degenerate("hyperparameter objective is -inf everywhere visited".into())));
    }
    let xi = best.filter(|(b, _)| *b == -result.f).map(|(_, x)| x);
    Ok(HyperOptimum {
        v: result.x,
        value: -result.f,
        evals: result.evals,
        converged: result.converged,
        simplex: result.simplex.into_iter().map(|(x, f)| (x, -f)).collect(),
        trace,
        xi,
    })
}

/// Posterior mode and Gaussian approximation with fit diagnostics.
#[derive(Debug, Clone)]
pub struct LatentFit {
    pub xi: DVector<f64>,
    /// Lower Cholesky factor `L` of the posterior precision `HᵀVH + Q = LLᵀ`
    /// (stabilised by `κAᵀA` under constraints).
    pub precision_chol: DMatrix<f64>,
    /// Sum-to-zero constraints conditioning the Gaussian approximation.
    pub constraint: Option<DMatrix<f64>>,
    pub layout: Layout,
    pub basis: DlnmBasis,
    pub fixed_names: Vec<String>,
    pub unit_ids: Vec<String>,
    pub hyper_names: Vec<String>,
    /// Transformed hyperparameters at the optimum.
    pub hypers: Vec<f64>,
    pub logpost: f64,
    pub newton_iters: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub hyper_converged: bool,
    pub hyper_evals: usize,
    pub trace: Vec<TraceEntry>,
}

impl LatentFit {
    pub fn cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::pack_dirty(self.precision_chol.clone())
    }

    pub fn kind(&self) -> Option<SpatialKind> {
        self.layout.spatial
    }

    /// Named natural-scale hyperparameters: smoothing parameters, precisions,
    /// `rho`, and the spatial variance `1/τ` where defined.
    pub fn natural_hypers(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (name, &v) in self.hyper_names.iter().zip(&self.hypers) {
            if let Some(rest) = name.strip_prefix("log_lambda_") {
                out.push((format!("lambda_{rest}"), v.exp()));
            } else if let Some(rest) = name.strip_prefix("log_") {
                out.push((rest.to_string(), v.exp()));
                if rest == "tau" {
                    out.push(("variance".to_string(), (-v).exp()));
                }
            } else if name == "logit_rho" {
                out.push(("rho".to_string(), crate::model::logistic(v)));
            }
        }
        out
    }

    pub fn natural(&self, name: &str) -> Option<f64> {
        self.natural_hypers().into_iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Fitted means `μ̂` for every row of `spec`.
    pub fn fitted_mean(&self, spec: &ModelSpec) -> DVector<f64> {
        spec.linear_predictor(&self.xi).map(f64::exp)
    }
}

/// Final Laplace approximation at given transformed hyperparameters.
pub fn fit_at(
    spec: &ModelSpec,
    v: &[f64],
    warm: Option<&DVector<f64>>,
    opts: &FitOptions,
) -> Result<(LatentFit, HyperEval)> {
    let constraint = spec.constraint().map(Constraint::new).transpose()?;
    let e = evaluate(spec, constraint.as_ref(), v, warm, &opts.newton)?;
    let fit = LatentFit {
        xi: e.mode.xi.clone(),
        precision_chol: e.mode.chol.l(),
        constraint: constraint.map(|c| c.a),
        layout: spec.layout,
        basis: spec.basis.clone(),
        fixed_names: spec.fixed_names.clone(),
        unit_ids: spec.unit_ids.clone(),
        hyper_names: spec.hyper_names(),
        hypers: v.to_vec(),
        logpost: e.value,
        newton_iters: e.mode.iterations,
        grad_norm: e.mode.grad_norm,
        converged: e.mode.converged,
        hyper_converged: true,
        hyper_evals: 0,
        trace: Vec::new(),
    };
    Ok((fit, e))
}

/// Optimises the hyperparameters from `v0` (zeros by default) and returns the
/// Laplace approximation at the optimum.
pub fn fit(spec: &ModelSpec, v0: Option<&[f64]>, opts: &FitOptions) -> Result<LatentFit> {
    let zeros = vec![0.0; spec.n_hypers()];
    let opt = optimize_hypers(spec, v0.unwrap_or(&zeros), opts)?;
    let (mut fit, _) = fit_at(spec, &opt.v, opt.xi.as_ref(), opts)?;
    fit.hyper_converged = opt.converged;
    fit.hyper_evals = opt.evals;
    fit.trace = opt.trace;
    Ok(fit)
}
