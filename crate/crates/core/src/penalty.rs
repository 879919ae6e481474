//! Difference and ridge penalties on cross-basis coefficients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffMatrix {
    pub order: usize,
    pub values: DMatrix<f64>,
}

impl DiffMatrix {
    pub fn n(&self) -> usize {
        self.values.ncols()
    }
}

/// Order-`m` difference operator; the highest index carries the `+1`.
pub fn diff_matrix(m: usize, n: usize) -> Result<DiffMatrix> {
    if m == 0 || n <= m {
        return Err(Error::Dimension(format!("difference order {m} needs more than {m} columns, got {n}")));
    }
    let mut coef = vec![0.0; m + 1];
    for (j, c) in coef.iter_mut().enumerate() {
        let binom = (0..j).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64);
        *c = if (m - j) % 2 == 0 { binom } else { -binom };
    }
    let values = DMatrix::from_fn(n - m, n, |r, c| if c >= r && c - r <= m { coef[c - r] } else { 0.0 });
    Ok(DiffMatrix { order: m, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPenalty {
    pub s: DMatrix<f64>,
    pub jitter: f64,
}

/// `DᵀD + δI`.
pub fn marginal_penalty(d: &DiffMatrix, jitter: f64) -> Result<MarginalPenalty> {
    if !(jitter > 0.0) {
        return Err(Error::Invalid(format!("jitter must be positive, got {jitter}")));
    }
    let mut s = d.values.transpose() * &d.values;
    for i in 0..s.nrows() {
        s[(i, i)] += jitter;
    }
    Ok(MarginalPenalty { s, jitter })
}

/// Varying ridge on lag coefficients, `diag(0, 1, 4, ..., (v_l - 1)^2) + δI`.
pub fn ridge_lag_penalty(v_l: usize, jitter: f64) -> Result<MarginalPenalty> {
    if v_l == 0 {
        return Err(Error::Dimension("ridge penalty needs at least one coefficient".into()));
    }
    let s = DMatrix::from_fn(v_l, v_l, |r, c| if r == c { (r * r) as f64 + jitter } else { 0.0 });
    Ok(MarginalPenalty { s, jitter })
}

/// Which factor of the Kronecker product holds the marginal matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    /// `S ⊗ I_{v_l}`
    Exposure,
    /// `I_{v_x} ⊗ S`
    Lag,
}

#[derive(Debug, Clone)]
pub struct PenaltyComponent {
    pub name: String,
    pub placement: Placement,
    pub marginal: MarginalPenalty,
    /// Full `dim x dim` Kronecker-expanded matrix.
    pub expanded: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PenaltyAssembly {
    pub v_x: usize,
    pub v_l: usize,
    pub components: Vec<PenaltyComponent>,
}

impl PenaltyAssembly {
    pub fn new(v_x: usize, v_l: usize) -> Self {
        Self { v_x, v_l, components: Vec::new() }
    }

    /// Exposure and lag difference penalties, plus the lag ridge if asked.
    pub fn standard(v_x: usize, v_l: usize, order: usize, jitter: f64, ridge: bool) -> Result<Self> {
        let mut pa = Self::new(v_x, v_l);
        pa.push("exposure", Placement::Exposure, marginal_penalty(&diff_matrix(order, v_x)?, jitter)?)?;
        pa.push("lag", Placement::Lag, marginal_penalty(&diff_matrix(order, v_l)?, jitter)?)?;
        if ridge {
            pa.push("lag_ridge", Placement::Lag, ridge_lag_penalty(v_l, jitter)?)?;
        }
        Ok(pa)
    }

    pub fn dim(&self) -> usize {
        self.v_x * self.v_l
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn push(&mut self, name: &str, placement: Placement, marginal: MarginalPenalty) -> Result<()> {
        let expected = match placement {
            Placement::Exposure => self.v_x,
            Placement::Lag => self.v_l,
        };
        if marginal.s.nrows() != expected || marginal.s.ncols() != expected {
            return Err(Error::Dimension(format!(
                "penalty '{name}' is {}x{}, expected {expected}x{expected}",
                marginal.s.nrows(),
                marginal.s.ncols()
            )));
        }
        let expanded = match placement {
            Placement::Exposure => marginal.s.kronecker(&DMatrix::identity(self.v_l, self.v_l)),
            Placement::Lag => DMatrix::identity(self.v_x, self.v_x).kronecker(&marginal.s),
        };
        self.components.push(PenaltyComponent { name: name.into(), placement, marginal, expanded });
        Ok(())
    }

    /// `P(λ) = Σ_c λ_c K_c`.
    pub fn assemble(&self, lambda: &[f64]) -> Result<DMatrix<f64>> {
        if lambda.len() != self.components.len() {
            return Err(Error::Dimension(format!(
                "{} smoothing parameters for {} penalty components",
                lambda.len(),
                self.components.len()
            )));
        }
        if let Some(l) = lambda.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidHyper(format!("smoothing parameter must be positive, got {l}")));
        }
        let mut p = DMatrix::<f64>::zeros(self.dim(), self.dim());
        for (c, &l) in self.components.iter().zip(lambda) {
            p += &c.expanded * l;
        }
        Ok(p)
    }
}

pub fn assemble_penalty(marginals: &PenaltyAssembly, lambda: &[f64]) -> Result<DMatrix<f64>> {
    marginals.assemble(lambda)
}

/// `log|P|` through a Cholesky factorisation.
pub fn logdet_penalty(p: &DMatrix<f64>) -> Result<f64> {
    logdet_spd(p, "penalty matrix")
}

pub(crate) fn logdet_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn second_differences_pattern() {
        let d = diff_matrix(2, 5).unwrap();
        let expected = DMatrix::from_row_slice(3, 5, &[
            1.0, -2.0, 1.0, 0.0, 0.0,
            0.0, 1.0, -2.0, 1.0, 0.0,
            0.0, 0.0, 1.0, -2.0, 1.0,
        ]);
        assert_eq!(d.values, expected);
    }

    #[test]
    fn first_differences_sign() {
        let d = diff_matrix(1, 3).unwrap();
        assert_eq!(d.values, DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]));
    }

    #[test]
    fn third_differences_rows_sum_to_zero() {
        let d = diff_matrix(3, 6).unwrap();
        assert_eq!(d.values.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 3.0, -3.0, 1.0, 0.0, 0.0]);
        for r in 0..d.values.nrows() {
            assert_eq!(d.values.row(r).sum(), 0.0);
        }
    }

    #[test]
    fn second_differences_annihilate_linear() {
        for n in 3..12 {
            let d = diff_matrix(2, n).unwrap();
            let lin = DVector::from_fn(n, |i, _| (i + 1) as f64);
            assert!((&d.values * lin).iter().all(|&v| v == 0.0));
        }
        assert!(diff_matrix(2, 2).is_err());
    }

    #[test]
    fn marginal_penalty_entries() {
        let s = marginal_penalty(&diff_matrix(2, 5).unwrap(), 1e-12).unwrap();
        assert_eq!(s.s[(0, 0)], 1.0 + 1e-12);
        assert_eq!(s.s[(2, 2)], 6.0 + 1e-12);
        let n = 5;
        let rev = DMatrix::from_fn(n, n, |r, c| if r + c == n - 1 { 1.0 } else { 0.0 });
        assert_eq!(&rev * &s.s * &rev, s.s);
        let eig = s.s.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min >= 1e-12 * (1.0 - 1e-3), "min eigenvalue {min}");
        assert!(marginal_penalty(&diff_matrix(2, 5).unwrap(), 0.0).is_err());
    }

    #[test]
    fn ridge_diagonal() {
        let r = ridge_lag_penalty(10, 1e-12).unwrap();
        for k in 0..10 {
            assert_eq!(r.s[(k, k)], (k * k) as f64 + 1e-12);
        }
        for k in 1..10 {
            assert_abs_diff_eq!(r.s[(k, k)] - r.s[(k - 1, k - 1)], (2 * k - 1) as f64, epsilon = 1e-9);
        }
        let one = ridge_lag_penalty(1, 1e-12).unwrap();
        assert_eq!(one.s, DMatrix::from_element(1, 1, 1e-12));
    }

    #[test]
    fn kron_placement_matches_direct_construction() {
        let pa = PenaltyAssembly::standard(4, 3, 2, 1e-12, false).unwrap();
        let p = pa.assemble(&[1.0, 1.0]).unwrap();
        let sx = &pa.components[0].marginal.s;
        let sl = &pa.components[1].marginal.s;
        for r in 0..12 {
            for c in 0..12 {
                let (i, k) = (r / 3, r % 3);
                let (i2, k2) = (c / 3, c % 3);
                let mut v = 0.0;
                if k == k2 {
                    v += sx[(i, i2)];
                }
                if i == i2 {
                    v += sl[(k, k2)];
                }
                assert_abs_diff_eq!(p[(r, c)], v, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_component_limit() {
        let pa = PenaltyAssembly::standard(3, 3, 2, 1e-12, false).unwrap();
        let p = pa.assemble(&[1.0, 1e-300]).unwrap();
        let direct = pa.components[0].marginal.s.kronecker(&DMatrix::identity(3, 3));
        assert!((p - direct).abs().max() < 1e-9);
        assert!(pa.assemble(&[1.0]).is_err());
        assert!(pa.assemble(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn quadratic_form_expands_through_differences() {
        let (vx, vl, delta) = (5, 4, 1e-12);
        let pa = PenaltyAssembly::standard(vx, vl, 2, delta, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = DVector::from_fn(vx * vl, |_, _| rng.random_range(-1.0..1.0));
        let (lx, ll) = (2.5, 0.7);
        let p = pa.assemble(&[lx, ll]).unwrap();
        let dx = diff_matrix(2, vx).unwrap().values.kronecker(&DMatrix::identity(vl, vl));
        let dl = DMatrix::identity(vx, vx).kronecker(&diff_matrix(2, vl).unwrap().values);
        let expected = lx * (&dx * &theta).norm_squared()
            + ll * (&dl * &theta).norm_squared()
            + (lx + ll) * delta * theta.norm_squared();
        assert_abs_diff_eq!(theta.dot(&(&p * &theta)), expected, epsilon = 1e-10);
    }

    #[test]
    fn bilinear_surfaces_are_unpenalised_without_jitter() {
        let (vx, vl) = (6, 5);
        let mut pa = PenaltyAssembly::new(vx, vl);
        let zero_jitter = |m: usize, n: usize| {
            let d = diff_matrix(m, n).unwrap();
            MarginalPenalty { s: d.values.transpose() * &d.values, jitter: 0.0 }
        };
        pa.push("exposure", Placement::Exposure, zero_jitter(2, vx)).unwrap();
        pa.push("lag", Placement::Lag, zero_jitter(2, vl)).unwrap();
        let p = pa.assemble(&[3.0, 5.0]).unwrap();
        let theta = DVector::from_fn(vx * vl, |c, _| {
            let (i, k) = ((c / vl) as f64, (c % vl) as f64);
            (1.0 + 2.0 * i) * (0.5 - k)
        });
        assert!(theta.dot(&(&p * &theta)).abs() < 1e-9);
    }

    #[test]
    fn logdet_cases() {
        assert_abs_diff_eq!(logdet_penalty(&DMatrix::identity(9, 9)).unwrap(), 0.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 4.0]));
        assert_abs_diff_eq!(logdet_penalty(&d).unwrap(), 8f64.ln(), epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(6, 6) * 0.5;
        let oracle: f64 = spd.clone().symmetric_eigen().eigenvalues.iter().map(|v: &f64| v.ln()).sum();
        assert_abs_diff_eq!(logdet_penalty(&spd).unwrap(), oracle, epsilon = 1e-10);
        assert!(matches!(logdet_penalty(&(-DMatrix::identity(2, 2))), Err(Error::NotPositiveDefinite(_))));
    }

    proptest! {
        #[test]
        fn penalty_is_positive_and_linear(seed in 0u64..500, lx in 0.01f64..100.0, ll in 0.01f64..100.0, ls in 0.01f64..100.0) {
            let pa = PenaltyAssembly::standard(5, 4, 2, 1e-12, true).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
            let q1 = theta.dot(&(pa.assemble(&[lx, ll, ls]).unwrap() * &theta));
            let q2 = theta.dot(&(pa.assemble(&[2.0 * lx, 2.0 * ll, 2.0 * ls]).unwrap() * &theta));
            prop_assert!(q1 > 0.0);
            prop_assert!((q2 - 2.0 * q1).abs() <= 1e-10 * q1.abs().max(1.0));
        }
    }
}
