//! Lagged exposure matrices and the DLNM cross-basis.
//!
//! Coefficients are flattened with the lag index fastest: column
//! `i * v_l + k` of the cross-basis pairs exposure basis `i` with lag basis
//! `k`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{bspline_eval, equidistant_knots, Boundary, KnotSet};
use crate::error::{Error, Result};
use crate::panel::PanelData;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagWindow {
    pub max_lag: usize,
}

impl LagWindow {
    pub fn lag_values(&self) -> Vec<f64> {
        (0..=self.max_lag).map(|l| l as f64).collect()
    }
}

/// One row per usable observation holding `(x_t, x_{t-1}, ..., x_{t-L})`.
#[derive(Debug, Clone)]
pub struct LagMatrix {
    pub max_lag: usize,
    values: Vec<f64>,
    /// `(unit index, position within the unit's series)` of each row.
    pub index: Vec<(usize, usize)>,
}

impl LagMatrix {
    pub fn n_rows(&self) -> usize {
        self.index.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.max_lag + 1;
        &self.values[r * w..(r + 1) * w]
    }

    pub fn from_series(series: &[&[f64]], max_lag: usize) -> Result<Self> {
        let mut values = Vec::new();
        let mut index = Vec::new();
        for (j, xs) in series.iter().enumerate() {
            if xs.len() <= max_lag {
                return Err(Error::SeriesTooShort { unit: j.to_string(), len: xs.len(), max_lag });
            }
            for t in max_lag..xs.len() {
                values.extend((0..=max_lag).map(|l| xs[t - l]));
                index.push((j, t));
            }
        }
        Ok(Self { max_lag, values, index })
    }
}

/// Drops the first `max_lag` observations of every series, which lack a
/// complete exposure history.
pub fn build_lag_matrix(panel: &PanelData, max_lag: usize) -> Result<LagMatrix> {
    for u in &panel.units {
        if u.len() <= max_lag {
            return Err(Error::SeriesTooShort { unit: u.unit_id.clone(), len: u.len(), max_lag });
        }
    }
    let series: Vec<&[f64]> = panel.units.iter().map(|u| u.exposure.as_slice()).collect();
    LagMatrix::from_series(&series, max_lag)
}

/// Marginal bases of a cross-basis; enough to rebuild any row or contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlnmBasis {
    pub exposure: KnotSet,
    pub lag: KnotSet,
    pub max_lag: usize,
}

impl DlnmBasis {
    /// Equidistant P-spline knots (extended past the boundaries) over the
    /// exposure range and over the lag window.
    pub fn equidistant(exposure_range: (f64, f64), v_x: usize, v_l: usize, max_lag: usize, degree: usize) -> Result<Self> {
        let exposure = equidistant_knots(exposure_range.0, exposure_range.1, v_x, degree)?.with_boundary(Boundary::Extended);
        let lag_hi = max_lag.max(1) as f64;
        let lag = equidistant_knots(0.0, lag_hi, v_l, degree)?.with_boundary(Boundary::Extended);
        Ok(Self { exposure, lag, max_lag })
    }

    pub fn v_x(&self) -> usize {
        self.exposure.n_basis()
    }

    pub fn v_l(&self) -> usize {
        self.lag.n_basis()
    }

    pub fn n_coef(&self) -> usize {
        self.v_x() * self.v_l()
    }

    /// The `(L+1) x v_l` lag basis evaluated on `0..=L`.
    pub fn lag_basis(&self) -> Result<DMatrix<f64>> {
        let lags = LagWindow { max_lag: self.max_lag }.lag_values();
        Ok(bspline_eval(&lags, &self.lag)?.values)
    }

    /// Cross-basis row for one exposure history `(x_t, ..., x_{t-L})`.
    pub fn history_row(&self, history: &[f64]) -> Result<Vec<f64>> {
        let lag_basis = self.lag_basis()?;
        let mut row = vec![0.0; self.n_coef()];
        accumulate_row(&self.exposure, &lag_basis, history, 0, &mut row, 1)?;
        Ok(row)
    }

    /// `(b_i(x) - b_i(x0)) * b_k(l)` in coefficient order.
    pub fn contrast_row(&self, x: f64, x0: f64, lag: usize) -> Result<Vec<f64>> {
        if lag > self.max_lag {
            return Err(Error::Invalid(format!("lag {lag} exceeds max lag {}", self.max_lag)));
        }
        let bx = self.exposure.eval_row(x)?;
        let b0 = self.exposure.eval_row(x0)?;
        let bl = self.lag.eval_row(lag as f64)?;
        let v_l = self.v_l();
        let mut row = vec![0.0; self.n_coef()];
        for i in 0..self.v_x() {
            let d = bx[i] - b0[i];
            if d != 0.0 {
                for k in 0..v_l {
                    row[i * v_l + k] = d * bl[k];
                }
            }
        }
        Ok(row)
    }

    /// Contrast cumulated over all lags `0..=L`.
    pub fn overall_contrast_row(&self, x: f64, x0: f64) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.n_coef()];
        for l in 0..=self.max_lag {
            for (t, v) in total.iter_mut().zip(self.contrast_row(x, x0, l)?) {
                *t += v;
            }
        }
        Ok(total)
    }
}

/// Adds `sum_l b(history[l]) (x) b_lag(l)` into `out` with stride `stride`.
fn accumulate_row(
    exposure: &KnotSet,
    lag_basis: &DMatrix<f64>,
    history: &[f64],
    row_index: usize,
    out: &mut [f64],
    stride: usize,
) -> Result<()> {
    let v_l = lag_basis.ncols();
    let mut local = vec![0.0; exposure.degree + 1];
    for (l, &x) in history.iter().enumerate() {
        let start = exposure.eval_local(x, row_index, &mut local)?;
        for (a, &bx) in local.iter().enumerate() {
            if bx == 0.0 {
                continue;
            }
            let base = (start + a) * v_l;
            for k in 0..v_l {
                out[(base + k) * stride] += bx * lag_basis[(l, k)];
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CrossBasis {
    /// `n_rows x (v_x * v_l)`.
    pub w: DMatrix<f64>,
    pub basis: DlnmBasis,
}

impl CrossBasis {
    pub fn n_coef(&self) -> usize {
        self.w.ncols()
    }
}

pub fn build_crossbasis(lagmat: &LagMatrix, exposure_knots: &KnotSet, lag_knots: &KnotSet) -> Result<CrossBasis> {
    let basis = DlnmBasis {
        exposure: exposure_knots.clone(),
        lag: lag_knots.clone(),
        max_lag: lagmat.max_lag,
    };
    let lag_basis = basis.lag_basis()?;
    let n = lagmat.n_rows();
    let mut w = DMatrix::zeros(n, basis.n_coef());
    // Column-major storage: entry (r, c) sits at r + c * n.
    let data = w.as_mut_slice();
    for r in 0..n {
        accumulate_row(exposure_knots, &lag_basis, lagmat.row(r), r, &mut data[r..], n)?;
    }
    Ok(CrossBasis { w, basis })
}
