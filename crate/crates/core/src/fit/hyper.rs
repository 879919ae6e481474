//! Approximate marginal log posterior of the transformed hyperparameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fit::laplace::{build_q, log_likelihood, newton_iterate_warm, Constraint, Mode, NewtonOptions};
use crate::model::{ModelSpec, PriorConstants};
use crate::penalty::logdet_penalty;
use crate::spatial::{logdet_g, SpatialKind};

/// The additive pieces of the hyperparameter objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub loglik: f64,
    pub half_logdet_penalty: f64,
    pub half_quad: f64,
    pub half_logdet_sigma: f64,
    pub penalty_prior: f64,
    pub spatial_prior: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.loglik + self.half_logdet_penalty - self.half_quad
            + self.half_logdet_sigma
            + self.penalty_prior
            + self.spatial_prior
    }
}

#[derive(Debug, Clone)]
pub struct HyperEval {
    pub value: f64,
    pub parts: ObjectiveParts,
    pub mode: Mode,
}

/// Log density of a log-precision `v` under the robust Gamma hierarchy with
/// the scale hyperparameter integrated out, excluding any `|G|` factor.
pub fn log_precision_prior(v: f64, p: &PriorConstants) -> f64 {
    let h = 0.5 * p.nu;
    h * v - (h + p.a) * (p.b + h * v.exp()).ln()
}

/// `½ v - log(1 + e^v)` for the logit of the Leroux mixing parameter.
pub fn logit_rho_prior(v: f64) -> f64 {
    0.5 * v - (v.max(0.0) + (-v.abs()).exp().ln_1p())
}

/// Hyperprior contribution of the random-effect parameters, including
/// `½ log|G|`.
pub fn spatial_prior_terms(spec: &ModelSpec, v: &[f64]) -> Result<f64> {
    let Some(sp) = &spec.spatial else { return Ok(0.0) };
    let nc = spec.penalty.n_components();
    let rest = &v[nc..];
    let h = spec.hypers_from(v)?.spatial.expect("spatial hypers for a spatial model");
    let p = &spec.priors;
    let mut s = 0.5 * logdet_g(sp.kind, &sp.structure, &h)?;
    match sp.kind {
        SpatialKind::Independent | SpatialKind::Icar => s += log_precision_prior(rest[0], p),
        SpatialKind::Convolution => s += log_precision_prior(rest[0], p) + log_precision_prior(rest[1], p),
        SpatialKind::Leroux => s += log_precision_prior(rest[0], p) + logit_rho_prior(rest[1]),
    }
    Ok(s)
}

/// Evaluates the objective at `v`, refitting the latent mode from `warm`.
/// A non-converged inner fit is returned as is; callers decide how to treat
/// it.
pub fn evaluate(
    spec: &ModelSpec,
    constraint: Option<&Constraint>,
    v: &[f64],
    warm: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<HyperEval> {
    evaluate_warm(spec, constraint, v, warm, None, opts)
}

/// [`evaluate`] with `HᵀVH` at `warm` supplied, typically from the previous
/// evaluation's mode.
pub fn evaluate_warm(
    spec: &ModelSpec,
    constraint: Option<&Constraint>,
    v: &[f64],
    warm: Option<&DVector<f64>>,
    warm_info: Option<&DMatrix<f64>>,
    opts: &NewtonOptions,
) -> Result<HyperEval> {
    let hypers = spec.hypers_from(v)?;
    let q = build_q(spec, &hypers)?;
    let mode = newton_iterate_warm(spec, &q, constraint, warm, warm_info, opts)?;
    let p = spec.penalty.assemble(&hypers.lambda)?;
    let xi = &mode.xi;
    let parts = ObjectiveParts {
        loglik: log_likelihood(spec, &spec.linear_predictor(xi)),
        half_logdet_penalty: 0.5 * logdet_penalty(&p)?,
        half_quad: 0.5 * xi.dot(&(&q * xi)),
        half_logdet_sigma: mode.half_logdet_sigma(constraint)?,
        penalty_prior: v[..spec.penalty.n_components()].iter().map(|&x| log_precision_prior(x, &spec.priors)).sum(),
        spatial_prior: spatial_prior_terms(spec, v)?,
    };
    Ok(HyperEval { value: parts.total(), parts, mode })
}

/// Objective value at `v`, with the inner mode started from the default
/// point; `-∞` when the inner fit fails.
pub fn hyper_log_posterior(spec: &ModelSpec, v: &[f64], opts: &NewtonOptions) -> Result<f64> {
    let constraint = spec.constraint().map(Constraint::new).transpose()?;
    let e = evaluate(spec, constraint.as_ref(), v, None, opts)?;
    Ok(if e.mode.converged { e.value } else { f64::NEG_INFINITY })
}
