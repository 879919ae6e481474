//! B-spline and natural cubic spline bases.
//!
//! A B-spline knot set is either clamped (boundary knots repeated
//! `degree + 1` times, so the first basis function equals one at the lower
//! boundary) or extended (the knot spacing continues past both boundaries, as
//! in P-splines, so that difference penalties annihilate polynomials).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed when a point sits on a boundary up to rounding.
const DOMAIN_SLACK: f64 = 1e-12;

/// How the knot vector continues beyond `[lo, hi]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Clamped,
    /// `degree` extra knots on each side, spaced like the outermost interval.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    pub interior: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub degree: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl KnotSet {
    pub fn new(interior: Vec<f64>, lo: f64, hi: f64, degree: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange { lo, hi });
        }
        if degree == 0 {
            return Err(Error::InvalidKnots("degree must be at least 1".into()));
        }
        for (i, &k) in interior.iter().enumerate() {
            if !(k > lo && k < hi) {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {k} is not strictly inside ({lo}, {hi})"
                )));
            }
            if i > 0 && k < interior[i - 1] {
                return Err(Error::InvalidKnots("interior knots must be nondecreasing".into()));
            }
        }
        Ok(Self { interior, lo, hi, degree, boundary: Boundary::Clamped })
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn n_basis(&self) -> usize {
        self.interior.len() + self.degree + 1
    }

    /// Full knot vector of length `n_basis + degree + 1`; `lo` sits at
    /// index `degree` and `hi` at index `n_basis`.
    pub fn knot_vector(&self) -> Vec<f64> {
        let p = self.degree;
        let mut t = Vec::with_capacity(self.n_basis() + p + 1);
        match self.boundary {
            Boundary::Clamped => {
                t.extend(std::iter::repeat_n(self.lo, p + 1));
                t.extend_from_slice(&self.interior);
                t.extend(std::iter::repeat_n(self.hi, p + 1));
            }
            Boundary::Extended => {
                let h_lo = self.interior.first().unwrap_or(&self.hi) - self.lo;
                let h_hi = self.hi - self.interior.last().unwrap_or(&self.lo);
                t.extend((0..=p).map(|i| self.lo - (p - i) as f64 * h_lo));
                t.extend_from_slice(&self.interior);
                t.extend((0..=p).map(|i| self.hi + i as f64 * h_hi));
            }
        }
        t
    }

    pub fn contains(&self, x: f64) -> bool {
        let slack = DOMAIN_SLACK * (self.hi - self.lo);
        x >= self.lo - slack && x <= self.hi + slack
    }

    /// Evaluates the `degree + 1` basis functions that can be nonzero at `x`.
    ///
    /// Writes them into `out[..=degree]` and returns the column index of
    /// `out[0]`. `index` is only used for the error message.
    pub fn eval_local(&self, x: f64, index: usize, out: &mut [f64]) -> Result<usize> {
        if !x.is_finite() || !self.contains(x) {
            return Err(Error::OutOfDomain { index, value: x, lo: self.lo, hi: self.hi });
        }
        let x = x.clamp(self.lo, self.hi);
        let p = self.degree;
        let n = self.n_basis();
        let t = self.knot_vector();
        let span = find_span(&t, p, n, x);

        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        Ok(span - p)
    }

    /// Dense row of all `n_basis` values at `x`.
    pub fn eval_row(&self, x: f64) -> Result<Vec<f64>> {
        let mut local = vec![0.0; self.degree + 1];
        let start = self.eval_local(x, 0, &mut local)?;
        let mut row = vec![0.0; self.n_basis()];
        row[start..start + local.len()].copy_from_slice(&local);
        Ok(row)
    }
}

/// Index `s` of the knot interval with `t[s] <= x < t[s + 1]`; the upper
/// boundary belongs to the last nonempty interval.
fn find_span(t: &[f64], degree: usize, n_basis: usize, x: f64) -> usize {
    if x >= t[n_basis] {
        return n_basis - 1;
    }
    let (mut low, mut high) = (degree, n_basis);
    while high - low > 1 {
        let mid = (low + high) / 2;
        if x < t[mid] {
            high = mid;
        } else {
            low = mid;
        }
    }
    low
}

#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub knots: KnotSet,
}

impl BasisMatrix {
    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_basis(&self) -> usize {
        self.values.ncols()
    }
}

pub fn equidistant_knots(lo: f64, hi: f64, n_basis: usize, degree: usize) -> Result<KnotSet> {
    if !(lo < hi) {
        return Err(Error::InvalidRange { lo, hi });
    }
    if n_basis <= degree {
        return Err(Error::TooFewBasis { n_basis, degree });
    }
    let n_interior = n_basis - degree - 1;
    let step = (hi - lo) / (n_interior + 1) as f64;
    let interior = (1..=n_interior).map(|k| lo + step * k as f64).collect();
    KnotSet::new(interior, lo, hi, degree)
}

pub fn bspline_eval(points: &[f64], knots: &KnotSet) -> Result<BasisMatrix> {
    let mut values = DMatrix::zeros(points.len(), knots.n_basis());
    let mut local = vec![0.0; knots.degree + 1];
    for (r, &x) in points.iter().enumerate() {
        let start = knots.eval_local(x, r, &mut local)?;
        for (k, &v) in local.iter().enumerate() {
            values[(r, start + k)] = v;
        }
    }
    Ok(BasisMatrix { values, knots: knots.clone() })
}

/// Natural cubic spline basis with `df` columns and no intercept column.
///
/// Interior knots sit at the `k / df` quantiles of the points that fall
/// inside `boundary`. The basis is linear outside the boundary knots, so
/// points beyond them are allowed.
pub fn natural_cubic_eval(points: &[f64], df: usize, boundary: (f64, f64)) -> Result<BasisMatrix> {
    let (lo, hi) = boundary;
    if df == 0 {
        return Err(Error::TooFewBasis { n_basis: 0, degree: 3 });
    }
    if !(lo < hi) {
        return Err(Error::InvalidRange { lo, hi });
    }
    let first = points.first().copied().unwrap_or(f64::NAN);
    if points.is_empty() || points.iter().all(|&x| x == first) {
        return Err(Error::Degenerate("all points are equal".into()));
    }
    if let Some(i) = points.iter().position(|x| !x.is_finite()) {
        return Err(Error::OutOfDomain { index: i, value: points[i], lo, hi });
    }

    let mut inside: Vec<f64> = points.iter().copied().filter(|&x| x > lo && x < hi).collect();
    inside.sort_by(f64::total_cmp);
    let interior: Vec<f64> = if inside.is_empty() {
        (1..df).map(|k| lo + (hi - lo) * k as f64 / df as f64).collect()
    } else {
        (1..df).map(|k| quantile_sorted(&inside, k as f64 / df as f64)).collect()
    };

    let scale = |x: f64| (x - lo) / (hi - lo);
    // Knots on the unit scale: boundary, interior..., boundary.
    let mut knots = Vec::with_capacity(df + 1);
    knots.push(0.0);
    knots.extend(interior.iter().map(|&k| scale(k)));
    knots.push(1.0);
    let last = knots.len() - 1;
    let d = |k: usize, s: f64| -> f64 {
        let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
        (cube(s - knots[k]) - cube(s - knots[last])) / (knots[last] - knots[k])
    };

    let mut values = DMatrix::zeros(points.len(), df);
    for (r, &x) in points.iter().enumerate() {
        let s = scale(x);
        values[(r, 0)] = s;
        for k in 0..df - 1 {
            values[(r, k + 1)] = d(k, s) - d(last - 1, s);
        }
    }
    let knots = KnotSet {
        interior,
        lo,
        hi,
        degree: 3,
        boundary: Boundary::Clamped,
    };
    Ok(BasisMatrix { values, knots })
}

/// Linear-interpolation quantile (R type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let i = h.floor() as usize;
    let frac = h - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equidistant_interior_knots() {
        let k = equidistant_knots(0.0, 10.0, 10, 3).unwrap();
        assert_eq!(k.interior.len(), 6);
        for (i, &v) in k.interior.iter().enumerate() {
            assert_abs_diff_eq!(v, 10.0 * (i + 1) as f64 / 7.0, epsilon = 1e-12);
        }
        let k = equidistant_knots(0.0, 40.0, 10, 3).unwrap();
        for w in k.interior.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 40.0 / 7.0, epsilon = 1e-12);
        }
        let k = equidistant_knots(0.0, 1.0, 4, 3).unwrap();
        assert!(k.interior.is_empty());
        assert_eq!(k.n_basis(), 4);
    }

    #[test]
    fn equidistant_knot_errors() {
        assert!(matches!(equidistant_knots(1.0, 1.0, 10, 3), Err(Error::InvalidRange { .. })));
        assert!(matches!(equidistant_knots(0.0, 1.0, 3, 3), Err(Error::TooFewBasis { .. })));
    }

    #[test]
    fn lower_boundary_selects_first_basis() {
        let k = equidistant_knots(-2.0, 5.0, 8, 3).unwrap();
        let b = bspline_eval(&[-2.0], &k).unwrap();
        assert_eq!(b.values[(0, 0)], 1.0);
        assert!(b.values.row(0).iter().skip(1).all(|&v| v == 0.0));
        let b = bspline_eval(&[5.0], &k).unwrap();
        assert_abs_diff_eq!(b.values[(0, 7)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn partition_of_unity_on_grid() {
        let k = equidistant_knots(0.0, 10.0, 10, 3).unwrap();
        let b = bspline_eval(&linspace(0.0, 10.0, 50), &k).unwrap();
        for r in 0..b.n_points() {
            assert_abs_diff_eq!(b.values.row(r).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn hat_functions_by_hand() {
        let k = KnotSet::new(vec![1.0], 0.0, 2.0, 1).unwrap();
        let b = bspline_eval(&[0.5], &k).unwrap();
        assert_eq!(b.n_basis(), 3);
        assert_abs_diff_eq!(b.values[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.values[(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.values[(0, 2)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_names_index() {
        let k = equidistant_knots(0.0, 1.0, 5, 3).unwrap();
        match bspline_eval(&[0.2, 0.4, 1.5], &k) {
            Err(Error::OutOfDomain { index, value, .. }) => {
                assert_eq!(index, 2);
                assert_eq!(value, 1.5);
            }
            other => panic!("expected out-of-domain error, got {other:?}"),
        }
    }

    #[test]
    fn knot_set_validation() {
        assert!(KnotSet::new(vec![0.0], 0.0, 1.0, 3).is_err());
        assert!(KnotSet::new(vec![0.6, 0.4], 0.0, 1.0, 3).is_err());
        assert!(KnotSet::new(vec![], 0.0, 1.0, 0).is_err());
        assert!(KnotSet::new(vec![0.5, 0.5], 0.0, 1.0, 3).is_ok());
    }

    #[test]
    fn natural_spline_reproduces_linear() {
        let pts = linspace(-1.0, 4.0, 60);
        let b = natural_cubic_eval(&pts, 4, (-1.0, 4.0)).unwrap();
        // Least-squares projection of 3x - 2 onto [1, basis].
        let n = pts.len();
        let mut x = DMatrix::zeros(n, 5);
        for r in 0..n {
            x[(r, 0)] = 1.0;
            for c in 0..4 {
                x[(r, c + 1)] = b.values[(r, c)];
            }
        }
        let y = nalgebra::DVector::from_iterator(n, pts.iter().map(|&p| 3.0 * p - 2.0));
        let coef = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
        let fitted = &x * coef;
        for r in 0..n {
            assert_abs_diff_eq!(fitted[r], y[r], epsilon = 1e-10);
        }
    }

    #[test]
    fn natural_spline_single_df_is_monotone() {
        let pts = vec![3.0, 1.0, 2.0, 5.0];
        let b = natural_cubic_eval(&pts, 1, (0.0, 6.0)).unwrap();
        assert_eq!(b.n_basis(), 1);
        assert!(b.values[(1, 0)] < b.values[(2, 0)]);
        assert!(b.values[(2, 0)] < b.values[(0, 0)]);
        assert!(b.values[(0, 0)] < b.values[(3, 0)]);
    }

    #[test]
    fn natural_spline_is_linear_beyond_boundary() {
        let data = linspace(0.0, 1.0, 40);
        let b_data = natural_cubic_eval(&data, 4, (0.0, 1.0)).unwrap();
        let interior = b_data.knots.interior.clone();
        // Re-evaluate with the same knots on grids outside the boundary.
        for (a, z) in [(-2.0, -0.01), (1.01, 3.0)] {
            let grid = linspace(a, z, 200);
            let mut pts = data.clone();
            pts.extend_from_slice(&grid);
            let b = natural_cubic_eval(&pts, 4, (0.0, 1.0)).unwrap();
            assert_eq!(b.knots.interior.len(), interior.len());
            let off = data.len();
            for c in 0..4 {
                for i in 1..grid.len() - 1 {
                    let second = b.values[(off + i + 1, c)] - 2.0 * b.values[(off + i, c)]
                        + b.values[(off + i - 1, c)];
                    assert!(second.abs() < 1e-10, "column {c} curves outside boundary");
                }
            }
        }
    }

    #[test]
    fn natural_spline_degenerate_points() {
        assert!(matches!(
            natural_cubic_eval(&[2.0, 2.0, 2.0], 3, (0.0, 4.0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn extended_knots_reproduce_lines_from_linear_coefficients() {
        let k = equidistant_knots(0.0, 10.0, 10, 3).unwrap().with_boundary(Boundary::Extended);
        let t = k.knot_vector();
        assert_eq!(t.len(), 14);
        assert_abs_diff_eq!(t[0], -30.0 / 7.0, epsilon = 1e-12);
        assert_eq!(t[3], 0.0);
        assert_eq!(t[10], 10.0);
        let xs: Vec<f64> = (0..=200).map(|i| i as f64 * 0.05).collect();
        let b = bspline_eval(&xs, &k).unwrap();
        let f: Vec<f64> = (0..xs.len()).map(|r| (0..10).map(|i| i as f64 * b.values[(r, i)]).sum()).collect();
        for w in f.windows(3) {
            assert!((w[0] - 2.0 * w[1] + w[2]).abs() < 1e-10);
        }
        // With clamped knots the same coefficients bend near the boundary.
        let c = bspline_eval(&xs, &equidistant_knots(0.0, 10.0, 10, 3).unwrap()).unwrap();
        let g: Vec<f64> = (0..xs.len()).map(|r| (0..10).map(|i| i as f64 * c.values[(r, i)]).sum()).collect();
        assert!(g.windows(3).any(|w| (w[0] - 2.0 * w[1] + w[2]).abs() > 1e-6));
    }

    proptest! {
        #[test]
        fn partition_and_local_support(n in 4usize..16, xs in proptest::collection::vec(0.0f64..=1.0, 1..40), ext in any::<bool>()) {
            let boundary = if ext { Boundary::Extended } else { Boundary::Clamped };
            let k = equidistant_knots(0.0, 1.0, n, 3).unwrap().with_boundary(boundary);
            let b = bspline_eval(&xs, &k).unwrap();
            prop_assert_eq!(b.n_basis(), n);
            for r in 0..b.n_points() {
                let row = b.values.row(r);
                prop_assert!((row.sum() - 1.0).abs() < 1e-10);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!(row.iter().filter(|&&v| v != 0.0).count() <= 4);
            }
        }
    }
}
