//! Gauss–Hermite quadrature against a normal kernel.
//!
//! Univariate rules use the probabilists' convention: for `Z ~ N(0, 1)`,
//! `sum_k w_k g(v_k) = E[g(Z)]` exactly for polynomials of degree up to
//! `2n - 1`, and the weights sum to one. Multivariate rules are full tensor
//! grids that can be pruned by weight quantile and then rotated, scaled and
//! translated onto an arbitrary `N(mean, cov)`.
//!
//! Pruned weights are *not* renormalized by default. The missing mass is a
//! common factor of every marginal computed from the same rule, so it
//! cancels in Bayes factors and in self-normalized posterior means.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest supported univariate order.
pub const MAX_ORDER: usize = 100;
/// Largest supported tensor grid.
pub const MAX_POINTS: usize = 1_000_000;
/// Largest supported dimension.
pub const MAX_DIM: usize = 4;

/// Quadrature nodes (`len() x dim()`, row-major) with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(Error::domain("points and weights have inconsistent shapes"));
        }
        if weights.is_empty() {
            return Err(Error::domain("a quadrature rule needs at least one point"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::domain("quadrature weights must be positive"));
        }
        Ok(QuadratureRule {
            dim,
            points,
            weights,
        })
    }

    /// A single point carrying all the mass.
    pub fn single_point(point: &[f64]) -> Self {
        QuadratureRule {
            dim: point.len(),
            points: point.to_vec(),
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_k w_k f(v_k)`.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.points()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }

    /// Drop every point whose weight is at or below the `frac` quantile of
    /// the weights (R's default type-7 quantile). Weights are left as they are.
    pub fn prune(&self, frac: f64) -> Result<Self> {
        self.prune_with(frac, false)
    }

    /// Like [`prune`](Self::prune), optionally rescaling the surviving
    /// weights to keep the original total.
    pub fn prune_with(&self, frac: f64, renormalize: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&frac) {
            return Err(Error::domain(format!("prune fraction must lie in [0, 1), got {frac}")));
        }
        let cut = quantile_type7(&self.weights, frac);
        let mut points = Vec::with_capacity(self.points.len());
        let mut weights = Vec::with_capacity(self.weights.len());
        for (p, &w) in self.points().zip(&self.weights) {
            if w > cut {
                points.extend_from_slice(p);
                weights.push(w);
            }
        }
        if weights.is_empty() {
            return Err(Error::PrunedAway(frac));
        }
        if renormalize {
            let scale = self.weight_sum() / weights.iter().sum::<f64>();
            weights.iter_mut().for_each(|w| *w *= scale);
        }
        Ok(QuadratureRule {
            dim: self.dim,
            points,
            weights,
        })
    }

    /// Map a rule for the standard normal onto `N(mean, cov)`.
    pub fn affine_map(&self, mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let factor = CovarianceFactor::new(cov)?;
        self.transform(&factor, mean)
    }

    /// Apply `v -> R v + mean` with a precomputed factor `R`.
    pub fn transform(&self, factor: &CovarianceFactor, mean: &[f64]) -> Result<Self> {
        let d = self.dim;
        if factor.dim() != d || mean.len() != d {
            return Err(Error::domain(format!(
                "rule of dimension {d} cannot be mapped with a {}-dimensional factor and {}-vector mean",
                factor.dim(),
                mean.len()
            )));
        }
        let rot = &factor.rotation;
        let mut points = Vec::with_capacity(self.points.len());
        for p in self.points() {
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += rot[(i, j)] * p[j];
                }
                points.push(acc + mean[i]);
            }
        }
        Ok(QuadratureRule {
            dim: d,
            points,
            weights: self.weights.clone(),
        })
    }

    /// Add `offset` to every point. Mapping a standard rule with a zero mean
    /// and then translating gives bit-identical points to mapping with the
    /// mean directly.
    pub fn translated(&self, offset: &[f64]) -> Self {
        let mut points = self.points.clone();
        for chunk in points.chunks_exact_mut(self.dim) {
            for (x, o) in chunk.iter_mut().zip(offset) {
                *x += o;
            }
        }
        QuadratureRule {
            dim: self.dim,
            points,
            weights: self.weights.clone(),
        }
    }
}

/// `V diag(sqrt(eig))` from the eigendecomposition of a covariance matrix.
///
/// Eigenpairs are ordered by descending eigenvalue and each eigenvector is
/// signed so its first nonzero component is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactor {
    rotation: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl CovarianceFactor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        if d == 0 || cov.ncols() != d {
            return Err(Error::Decomposition("covariance must be a nonempty square matrix".into()));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Decomposition("covariance has non-finite entries".into()));
        }
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let max = eig.eigenvalues[order[0]];
        let min = eig.eigenvalues[order[d - 1]];
        if !(max > 0.0) || min <= 1e-12 * max {
            return Err(Error::Decomposition(format!(
                "covariance is not positive definite (eigenvalues {min:e} .. {max:e})"
            )));
        }
        let mut rotation = DMatrix::zeros(d, d);
        let mut eigenvalues = Vec::with_capacity(d);
        for (col, &k) in order.iter().enumerate() {
            let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-14) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            let lambda = eig.eigenvalues[k];
            rotation.set_column(col, &(v * lambda.sqrt()));
            eigenvalues.push(lambda);
        }
        Ok(CovarianceFactor {
            rotation,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.rotation.nrows()
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

/// `n`-point rule for the standard normal.
pub fn hermite_rule_1d(n: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::domain(format!("Hermite order must lie in 1..={MAX_ORDER}, got {n}")));
    }
    let (nodes, weights) = physicists_hermite(n);
    let scale = std::f64::consts::SQRT_2;
    let norm = std::f64::consts::PI.sqrt();
    let points = nodes.iter().map(|x| x * scale).collect();
    let weights = weights.iter().map(|w| w / norm).collect();
    QuadratureRule::new(1, points, weights)
}

/// Full tensor grid of `n`-point rules in `dim` dimensions; the first
/// coordinate varies fastest.
pub fn tensor_rule(n: usize, dim: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(Error::domain(format!("dimension must lie in 1..={MAX_DIM}, got {dim}")));
    }
    let size = (n as u128).pow(dim as u32);
    if size > MAX_POINTS as u128 {
        return Err(Error::RuleTooLarge {
            requested: size.min(usize::MAX as u128) as usize,
            cap: MAX_POINTS,
        });
    }
    let base = hermite_rule_1d(n)?;
    let k = size as usize;
    let mut points = Vec::with_capacity(k * dim);
    let mut weights = Vec::with_capacity(k);
    let mut idx = vec![0usize; dim];
    for _ in 0..k {
        let mut w = 1.0;
        for &i in &idx {
            points.push(base.points[i]);
            w *= base.weights[i];
        }
        weights.push(w);
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    QuadratureRule::new(dim, points, weights)
}

pub fn prune_rule(rule: &QuadratureRule, frac: f64) -> Result<QuadratureRule> {
    rule.prune(frac)
}

pub fn affine_map(rule: &QuadratureRule, mean: &[f64], cov: &DMatrix<f64>) -> Result<QuadratureRule> {
    rule.affine_map(mean, cov)
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`), the default of R's `quantile`.
pub fn quantile_type7(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

// Roots and weights for the weight function exp(-x^2), ascending, via Newton
// iteration on the orthonormal Hermite recurrence.
fn physicists_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        for _ in 0..100 {
            let (p, dp) = orthonormal_hermite(n, z);
            let step = p / dp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, dp) = orthonormal_hermite(n, z);
        x[i] = z;
        w[i] = 2.0 / (dp * dp);
        x[n - 1 - i] = -z;
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    x.reverse();
    w.reverse();
    (x, w)
}

// Orthonormal Hermite polynomial of degree n at z and its derivative.
fn orthonormal_hermite(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn low_order_rules() {
        let r = hermite_rule_1d(1).unwrap();
        assert_eq!(r.point(0), &[0.0]);
        assert_relative_eq!(r.weights()[0], 1.0, epsilon = 1e-15);

        let r = hermite_rule_1d(2).unwrap();
        assert_relative_eq!(r.point(0)[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(r.point(1)[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.weights()[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(r.weights()[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn fourth_moment_of_five_point_rule() {
        let r = hermite_rule_1d(5).unwrap();
        assert_relative_eq!(r.integrate(|v| v[0].powi(4)), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rules_are_normalized_and_symmetric() {
        for n in [3, 10, 20, 50, 100] {
            let r = hermite_rule_1d(n).unwrap();
            assert!((r.weight_sum() - 1.0).abs() < 1e-12, "n={n}: {}", r.weight_sum());
            for k in 0..n {
                assert_eq!(r.point(k)[0], -r.point(n - 1 - k)[0]);
            }
            // exact for x^(2n-2): (2n-3)!!
            let deg = (2 * n - 2).min(12) as i32;
            let double_fact: f64 = (1..deg).step_by(2).map(|v| v as f64).product();
            assert_relative_eq!(r.integrate(|v| v[0].powi(deg)), double_fact, max_relative = 1e-10);
        }
    }

    #[test]
    fn order_out_of_range() {
        assert!(hermite_rule_1d(0).is_err());
        assert!(hermite_rule_1d(101).is_err());
    }

    #[test]
    fn tensor_examples() {
        assert_eq!(tensor_rule(10, 3).unwrap().len(), 1000);
        let r = tensor_rule(2, 2).unwrap();
        assert_eq!(r.len(), 4);
        for (p, &w) in r.points().zip(r.weights()) {
            assert_relative_eq!(p[0].abs(), 1.0, epsilon = 1e-14);
            assert_relative_eq!(p[1].abs(), 1.0, epsilon = 1e-14);
            assert_relative_eq!(w, 0.25, epsilon = 1e-14);
        }
        // first coordinate varies fastest
        assert!(r.point(0)[0] < r.point(1)[0] && r.point(0)[1] == r.point(1)[1]);
        assert!((tensor_rule(7, 3).unwrap().weight_sum() - 1.0).abs() < 1e-12);
        assert!(matches!(tensor_rule(101, 3), Err(Error::RuleTooLarge { .. }) | Err(Error::Domain(_))));
        assert!(matches!(tensor_rule(32, 4), Err(Error::RuleTooLarge { .. })));
    }

    #[test]
    fn prune_zero_drops_the_minimum() {
        // five distinct weights, worked by hand: quantile(0) is the minimum
        let rule = QuadratureRule::new(
            1,
            vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            vec![0.05, 0.2, 0.4, 0.25, 0.1],
        )
        .unwrap();
        let pruned = rule.prune(0.0).unwrap();
        assert_eq!(pruned.len(), 4);
        assert!(!pruned.points().any(|p| p[0] == -2.0));
        // quantile(0.5) of the sorted weights is 0.2, so 0.2 goes too
        let half = rule.prune(0.5).unwrap();
        assert_eq!(half.weights(), &[0.4, 0.25]);
        // just below 1 leaves the heaviest point
        let top = rule.prune(0.999_999).unwrap();
        assert_eq!(top.weights(), &[0.4]);
    }

    #[test]
    fn prune_default_grid() {
        let r = tensor_rule(10, 3).unwrap().prune(0.2).unwrap();
        assert!((700..=900).contains(&r.len()), "{} points", r.len());
        assert!(r.weight_sum() <= 1.0);
        let renorm = tensor_rule(10, 3).unwrap().prune_with(0.2, true).unwrap();
        assert!((renorm.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prune_everything_is_an_error() {
        let r = QuadratureRule::new(1, vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert!(matches!(r.prune(0.5), Err(Error::PrunedAway(_))));
        assert!(r.prune(1.0).is_err());
    }

    #[test]
    fn pruning_barely_moves_a_smooth_integral() {
        let full = tensor_rule(10, 3).unwrap();
        let pruned = full.prune(0.2).unwrap();
        let f = |v: &[f64]| (-(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / 10.0).exp();
        let a = full.integrate(f);
        let b = pruned.integrate(f);
        assert!(((a - b) / a).abs() < 0.01);
    }

    #[test]
    fn affine_identity_is_noop() {
        let r = tensor_rule(5, 3).unwrap();
        let mapped = r.affine_map(&[0.0; 3], &DMatrix::identity(3, 3)).unwrap();
        for (a, b) in r.points().zip(mapped.points()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-14);
            }
        }
        assert_eq!(r.weights(), mapped.weights());
    }

    #[test]
    fn affine_reproduces_diagonal_variance() {
        let r = tensor_rule(5, 3).unwrap();
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0, 1.0]));
        let m = r.affine_map(&[0.0; 3], &cov).unwrap();
        assert_relative_eq!(m.integrate(|v| v[0] * v[0]), 4.0, epsilon = 1e-10);
        assert_relative_eq!(m.integrate(|v| v[1] * v[1]), 9.0, epsilon = 1e-10);
    }

    #[test]
    fn affine_reproduces_general_covariance() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.3, 0.6, 1.5, 0.2, -0.3, 0.2, 0.8]);
        let mean = [1.0, -2.0, 0.5];
        let m = tensor_rule(7, 3).unwrap().affine_map(&mean, &c).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let got = m.integrate(|v| (v[i] - mean[i]) * (v[j] - mean[j]));
                assert!((got - c[(i, j)]).abs() < 1e-8, "({i},{j}) {got}");
            }
        }
    }

    #[test]
    fn translation_matches_direct_mapping_bitwise() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.3, 0.6, 1.5, 0.2, -0.3, 0.2, 0.8]);
        let f = CovarianceFactor::new(&c).unwrap();
        let base = tensor_rule(4, 3).unwrap();
        let mean = [0.3, 1.7, -2.2];
        let direct = base.transform(&f, &mean).unwrap();
        let shifted = base.transform(&f, &[0.0; 3]).unwrap().translated(&mean);
        assert_eq!(direct, shifted);
    }

    #[test]
    fn factor_rejects_singular() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(CovarianceFactor::new(&c).is_err());
        let f = CovarianceFactor::new(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0])).unwrap();
        assert_eq!(f.eigenvalues(), &[3.0, 1.0]);
    }

    #[test]
    fn type7_quantile() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile_type7(&v, 0.0), 1.0);
        assert_eq!(quantile_type7(&v, 1.0), 4.0);
        assert_relative_eq!(quantile_type7(&v, 0.5), 2.5);
        assert_relative_eq!(quantile_type7(&v, 0.2), 1.6);
    }
}
