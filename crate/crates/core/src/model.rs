//! Model assembly: the design `H = [Z : W : M]`, offsets, penalty and
//! spatial prior, and the hyperparameter layout.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crossbasis::{build_crossbasis, build_lag_matrix, DlnmBasis};
use crate::error::{Error, Result};
use crate::panel::PanelData;
use crate::penalty::{PenaltyAssembly, DEFAULT_JITTER};
use crate::spatial::{structure_matrix, AdjacencyGraph, SpatialHypers, SpatialKind, StructureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConstants {
    /// Degrees of freedom of the robust Gamma hyperpriors.
    pub nu: f64,
    /// Precision of the Gaussian prior on the fixed effects.
    pub zeta: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for PriorConstants {
    fn default() -> Self {
        Self { nu: 3.0, zeta: 1e-5, a: 1e-5, b: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub v_x: usize,
    pub v_l: usize,
    pub max_lag: usize,
    pub degree: usize,
    pub diff_order: usize,
    pub ridge: bool,
    pub jitter: f64,
    pub spatial: Option<SpatialKind>,
    /// Exposure basis domain; defaults to the observed range.
    pub exposure_range: Option<(f64, f64)>,
    pub priors: PriorConstants,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            v_x: 10,
            v_l: 10,
            max_lag: 7,
            degree: 3,
            diff_order: 2,
            ridge: true,
            jitter: DEFAULT_JITTER,
            spatial: None,
            exposure_range: None,
            priors: PriorConstants::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpatialModel {
    pub kind: SpatialKind,
    pub structure: StructureMatrix,
}

/// Block sizes of `ξ = (β, θ, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_fixed: usize,
    pub n_theta: usize,
    pub n_units: usize,
    pub spatial: Option<SpatialKind>,
}

impl Layout {
    pub fn n_u(&self) -> usize {
        self.spatial.map_or(0, |k| k.effect_dim(self.n_units))
    }

    pub fn dim(&self) -> usize {
        self.n_fixed + self.n_theta + self.n_u()
    }

    pub fn beta(&self) -> Range<usize> {
        0..self.n_fixed
    }

    pub fn theta(&self) -> Range<usize> {
        self.n_fixed..self.n_fixed + self.n_theta
    }

    pub fn u(&self) -> Range<usize> {
        let s = self.n_fixed + self.n_theta;
        s..s + self.n_u()
    }

    /// Columns of `[Z W]`.
    pub fn n_dense(&self) -> usize {
        self.n_fixed + self.n_theta
    }
}

/// Hyperparameters on their natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypers {
    pub lambda: Vec<f64>,
    pub spatial: Option<SpatialHypers>,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
    /// `[Z W]`, one row per observation with a complete lag window.
    pub x: DMatrix<f64>,
    pub layout: Layout,
    pub fixed_names: Vec<String>,
    pub basis: DlnmBasis,
    /// Spatial unit (graph node) of every row.
    pub unit_of_row: Vec<usize>,
    /// `(panel unit index, position in its series)` of every row.
    pub rows: Vec<(usize, usize)>,
    /// Unit identifiers ordered by graph node.
    pub unit_ids: Vec<String>,
    pub penalty: PenaltyAssembly,
    pub spatial: Option<SpatialModel>,
    pub priors: PriorConstants,
}

impl ModelSpec {
    /// Assembles a model from a validated panel. Units are matched to graph
    /// nodes by their integer id when every id lies in `1..=J`, otherwise by
    /// order of appearance.
    pub fn from_panel(panel: &PanelData, graph: Option<&AdjacencyGraph>, cfg: &ModelConfig) -> Result<Self> {
        let n_units = panel.n_units();
        if n_units == 0 {
            return Err(Error::Invalid("panel has no units".into()));
        }
        let node_of_unit = node_assignment(panel)?;
        let range = match cfg.exposure_range {
            Some(r) => r,
            None => panel.exposure_range().ok_or_else(|| Error::Invalid("panel has no exposures".into()))?,
        };
        let basis = DlnmBasis::equidistant(range, cfg.v_x, cfg.v_l, cfg.max_lag, cfg.degree)?;
        let lagmat = build_lag_matrix(panel, cfg.max_lag)?;
        let cb = build_crossbasis(&lagmat, &basis.exposure, &basis.lag)?;

        let n = lagmat.n_rows();
        let n_cov = panel.covariate_names.len();
        let n_fixed = 1 + n_cov;
        let n_theta = cb.n_coef();
        let mut x = DMatrix::zeros(n, n_fixed + n_theta);
        let mut y = Vec::with_capacity(n);
        let mut offset = Vec::with_capacity(n);
        let mut unit_of_row = Vec::with_capacity(n);
        for (r, &(j, t)) in lagmat.index.iter().enumerate() {
            let u = &panel.units[j];
            x[(r, 0)] = 1.0;
            for c in 0..n_cov {
                x[(r, 1 + c)] = u.covariates[c][t];
            }
            y.push(u.y[t]);
            offset.push(u.population[t].ln());
            unit_of_row.push(node_of_unit[j]);
        }
        x.view_mut((0, n_fixed), (n, n_theta)).copy_from(&cb.w);

        let mut unit_ids = vec![String::new(); n_units];
        for (j, u) in panel.units.iter().enumerate() {
            unit_ids[node_of_unit[j]] = u.unit_id.clone();
        }
        let mut fixed_names = vec!["intercept".to_string()];
        fixed_names.extend(panel.covariate_names.iter().cloned());

        let penalty = PenaltyAssembly::standard(cfg.v_x, cfg.v_l, cfg.diff_order, cfg.jitter, cfg.ridge)?;
        let spatial = match cfg.spatial {
            None => None,
            Some(kind) => Some(SpatialModel { kind, structure: spatial_structure(kind, graph, n_units)? }),
        };
        Ok(Self {
            y,
            offset,
            x,
            layout: Layout { n_fixed, n_theta, n_units, spatial: cfg.spatial },
            fixed_names,
            basis,
            unit_of_row,
            rows: lagmat.index.clone(),
            unit_ids,
            penalty,
            spatial,
            priors: cfg.priors,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn kind(&self) -> Option<SpatialKind> {
        self.spatial.as_ref().map(|s| s.kind)
    }

    /// Names of the transformed hyperparameters, in optimisation order.
    pub fn hyper_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.penalty.components.iter().map(|c| format!("log_lambda_{}", c.name)).collect();
        if let Some(kind) = self.kind() {
            for h in kind.hyper_names() {
                names.push(if *h == "rho" { "logit_rho".into() } else { format!("log_{h}") });
            }
        }
        names
    }

    pub fn n_hypers(&self) -> usize {
        self.hyper_names().len()
    }

    /// Maps the transformed vector `v` to natural-scale hyperparameters.
    pub fn hypers_from(&self, v: &[f64]) -> Result<Hypers> {
        if v.len() != self.n_hypers() {
            return Err(Error::Dimension(format!("{} hyperparameters for a model with {}", v.len(), self.n_hypers())));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidHyper(format!("non-finite hyperparameter {bad}")));
        }
        let nc = self.penalty.n_components();
        let lambda = v[..nc].iter().map(|x| x.exp()).collect();
        let rest = &v[nc..];
        let spatial = self.kind().map(|kind| match kind {
            SpatialKind::Independent => SpatialHypers::independent(rest[0].exp()),
            SpatialKind::Icar => SpatialHypers::icar(rest[0].exp()),
            SpatialKind::Convolution => SpatialHypers::convolution(rest[0].exp(), rest[1].exp()),
            SpatialKind::Leroux => SpatialHypers::leroux(rest[0].exp(), logistic(rest[1])),
        });
        Ok(Hypers { lambda, spatial })
    }

    /// `η = Hξ + offset`.
    pub fn linear_predictor(&self, xi: &DVector<f64>) -> DVector<f64> {
        let l = &self.layout;
        let mut eta = DVector::from_column_slice(&self.offset);
        eta.gemv(1.0, &self.x, &xi.rows(0, l.n_dense()), 1.0);
        if l.n_u() > 0 {
            let u = xi.rows(l.n_dense(), l.n_u());
            let j = l.n_units;
            let conv = l.n_u() == 2 * j;
            for (e, &unit) in eta.iter_mut().zip(&self.unit_of_row) {
                *e += u[unit];
                if conv {
                    *e += u[j + unit];
                }
            }
        }
        eta
    }

    /// Sum-to-zero constraints `Aξ = 0` for intrinsic priors, one row per
    /// connected component of the graph.
    pub fn constraint(&self) -> Option<DMatrix<f64>> {
        let sp = self.spatial.as_ref()?;
        if !sp.kind.is_intrinsic() {
            return None;
        }
        let start = self.layout.u().start + if sp.kind == SpatialKind::Convolution { self.layout.n_units } else { 0 };
        let ind = sp.structure.component_indicators();
        let mut a = DMatrix::zeros(ind.nrows(), self.dim());
        a.view_mut((0, start), ind.shape()).copy_from(&ind);
        Some(a)
    }

    /// Intercept at `log(mean(y / exp(offset)))`, everything else zero.
    pub fn default_start(&self) -> DVector<f64> {
        let mut xi = DVector::zeros(self.dim());
        let rate = self.y.iter().zip(&self.offset).map(|(y, o)| y / o.exp()).sum::<f64>() / self.n_obs() as f64;
        xi[0] = if rate > 0.0 { rate.ln() } else { (0.5 / self.n_obs() as f64).ln() };
        xi
    }
}

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn node_assignment(panel: &PanelData) -> Result<Vec<usize>> {
    let j = panel.n_units();
    let numeric: Option<Vec<usize>> = panel
        .units
        .iter()
        .map(|u| u.unit_id.trim().parse::<usize>().ok().filter(|&v| v >= 1 && v <= j).map(|v| v - 1))
        .collect();
    if let Some(ids) = numeric {
        let mut seen = vec![false; j];
        if ids.iter().all(|&i| !std::mem::replace(&mut seen[i], true)) {
            return Ok(ids);
        }
    }
    Ok((0..j).collect())
}

fn spatial_structure(kind: SpatialKind, graph: Option<&AdjacencyGraph>, n_units: usize) -> Result<StructureMatrix> {
    match graph {
        Some(g) => {
            if g.n_nodes() != n_units {
                return Err(Error::Dimension(format!(
                    "adjacency graph has {} nodes but the panel has {n_units} units",
                    g.n_nodes()
                )));
            }
            Ok(structure_matrix(g))
        }
        None if !kind.needs_graph() => Ok(structure_matrix(&AdjacencyGraph::from_edges(n_units, &[])?)),
        None => Err(Error::Invalid(format!("the {} prior needs an adjacency graph", kind.name()))),
    }
}
