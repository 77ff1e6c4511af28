//! Pooled maximum-likelihood fit of the transformed Tweedie parameters.
//!
//! Every control observation is treated as a draw from one Tweedie law. The
//! optimum and the inverse of the numerical Hessian there become the mean
//! and covariance of the normal prior on `(logit(xi - 1), ln mu, ln phi)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tweedie::{NaturalParams, TransformedParams};

/// Data are summed in fixed-size chunks so the total does not depend on
/// how the chunks are scheduled.
const NLL_CHUNK: usize = 256;

/// Default starting values `(xi, phi)`.
pub const DEFAULT_INITS: (f64, f64) = (1.5, 2.0);

/// Normal prior on the transformed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mean: TransformedParams,
    pub cov: DMatrix<f64>,
    pub natural: NaturalParams,
}

impl PriorSpec {
    pub fn new(mean: TransformedParams, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != 3 || cov.ncols() != 3 {
            return Err(Error::domain("prior covariance must be 3x3"));
        }
        Ok(PriorSpec {
            natural: mean.to_natural(),
            mean,
            cov,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub prior: PriorSpec,
    pub neg_log_lik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub corr: DMatrix<f64>,
    /// Diagonal ridge added to the Hessian before inversion (0 when none).
    pub ridge: f64,
}

/// Serializable summary of a fit, for manifests and the `fit` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub eta: [f64; 3],
    pub natural: NaturalParams,
    pub cov: Vec<Vec<f64>>,
    pub corr: Vec<Vec<f64>>,
    pub neg_log_lik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub ridge: f64,
}

impl FitReport {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            eta: self.prior.mean.to_array(),
            natural: self.prior.natural,
            cov: matrix_rows(&self.prior.cov),
            corr: matrix_rows(&self.corr),
            neg_log_lik: self.neg_log_lik,
            iterations: self.iterations,
            evaluations: self.evaluations,
            converged: self.converged,
            ridge: self.ridge,
        }
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `-sum_j ln f(x_j; eta)`.
pub fn neg_log_lik(eta: TransformedParams, data: &[f64]) -> Result<f64> {
    let p = eta.to_natural();
    let partial: Vec<f64> = data
        .par_chunks(NLL_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&x| p.log_density(x))
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    Ok(-partial.iter().sum::<f64>())
}

/// Derivative-free simplex minimizer with the standard reflection (1),
/// expansion (2), contraction (1/2) and shrink (1/2) coefficients.
#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub reltol: f64,
    pub max_evals: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            reltol: 1e-8,
            max_evals: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimize `f` from `x0`. Non-finite values are treated as `+inf`, so
    /// the simplex steps back from regions where the objective fails.
    pub fn minimize(&self, mut f: impl FnMut(&[f64]) -> f64, x0: &[f64]) -> SimplexOutcome {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let size = 0.1 * x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let size = if size > 0.0 { size } else { 0.1 };
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = eval(x0, &mut evals);
        simplex.push((x0.to_vec(), v0));
        for i in 0..n {
            let mut x = x0.to_vec();
            x[i] += size;
            let v = eval(&x, &mut evals);
            simplex.push((x, v));
        }

        let mut iterations = 0;
        let converged = loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            if best.is_finite() && worst - best <= self.reltol * (best.abs() + self.reltol) {
                break true;
            }
            if evals >= self.max_evals {
                break false;
            }
            iterations += 1;

            let mut centroid = vec![0.0; n];
            for (x, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v / n as f64;
                }
            }
            let toward = |t: f64, from: &[f64]| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(from)
                    .map(|(c, x)| c + t * (x - c))
                    .collect()
            };

            let xr = toward(-1.0, &simplex[n].0);
            let fr = eval(&xr, &mut evals);
            if fr < best {
                let xe = toward(-2.0, &simplex[n].0);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < worst {
                let xc = toward(-0.5, &simplex[n].0);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = toward(0.5, &simplex[n].0);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fr.min(worst) {
                simplex[n] = (xc, fc);
                continue;
            }
            let anchor = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                let x: Vec<f64> = anchor
                    .iter()
                    .zip(&vertex.0)
                    .map(|(a, v)| a + 0.5 * (v - a))
                    .collect();
                let v = eval(&x, &mut evals);
                *vertex = (x, v);
            }
        };
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        SimplexOutcome {
            x,
            value,
            iterations,
            evaluations: evals,
            converged,
        }
    }
}

/// Symmetric matrix of second partials by central differences with
/// per-coordinate step `1e-4 * (1 + |x_i|)`.
pub fn numerical_hessian(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Result<DMatrix<f64>> {
    let n = at.len();
    let steps: Vec<f64> = at.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(x.to_vec()))
        }
    };
    let moved = |moves: &[(usize, f64)]| {
        let mut x = at.to_vec();
        for &(i, s) in moves {
            x[i] += s;
        }
        x
    };
    let f0 = eval(at)?;
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let hi = steps[i];
        let fp = eval(&moved(&[(i, hi)]))?;
        let fm = eval(&moved(&[(i, -hi)]))?;
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let fpp = eval(&moved(&[(i, hi), (j, hj)]))?;
            let fpm = eval(&moved(&[(i, hi), (j, -hj)]))?;
            let fmp = eval(&moved(&[(i, -hi), (j, hj)]))?;
            let fmm = eval(&moved(&[(i, -hi), (j, -hj)]))?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Central-difference gradient with a fixed absolute step.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], step: f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut up = at.to_vec();
            let mut down = at.to_vec();
            up[i] += step;
            down[i] -= step;
            (f(&up) - f(&down)) / (2.0 * step)
        })
        .collect()
}

/// Fit one Tweedie law to all of `data` and derive the normal prior.
pub fn fit_pooled(data: &[f64], inits: (f64, f64)) -> Result<FitReport> {
    fit_pooled_with(data, inits, NelderMead::default())
}

pub fn fit_pooled_with(data: &[f64], inits: (f64, f64), optimizer: NelderMead) -> Result<FitReport> {
    let (xi0, phi0) = inits;
    if data.len() < 10 {
        return Err(Error::domain(format!("pooled fit needs at least 10 values, got {}", data.len())));
    }
    if data.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::domain("pooled fit needs finite nonnegative data"));
    }
    let positives: Vec<f64> = data.iter().copied().filter(|&x| x > 0.0).collect();
    if positives.is_empty() {
        return Err(Error::domain("pooled fit needs at least one positive value"));
    }
    if !(xi0 > 1.0 && xi0 < 2.0) || !(phi0 > 0.0) {
        return Err(Error::domain(format!("initial values (xi={xi0}, phi={phi0}) out of range")));
    }
    let mean_pos = positives.iter().sum::<f64>() / positives.len() as f64;
    let start = [((xi0 - 1.0) / (2.0 - xi0)).ln(), mean_pos.ln(), phi0.ln()];

    let objective = |v: &[f64]| {
        neg_log_lik(TransformedParams::new(v[0], v[1], v[2]), data).unwrap_or(f64::INFINITY)
    };
    let outcome = optimizer.minimize(objective, &start);
    if !outcome.converged {
        log::warn!(
            "pooled fit stopped after {} evaluations without meeting the tolerance",
            outcome.evaluations
        );
    }
    let hessian = numerical_hessian(objective, &outcome.x)?;
    let (cov, ridge) = invert_hessian(&hessian)?;
    let corr = cov_to_corr(&cov);
    let mean = TransformedParams::new(outcome.x[0], outcome.x[1], outcome.x[2]);
    Ok(FitReport {
        prior: PriorSpec::new(mean, cov)?,
        neg_log_lik: outcome.value,
        iterations: outcome.iterations,
        evaluations: outcome.evaluations,
        converged: outcome.converged,
        corr,
        ridge,
    })
}

/// Invert a Hessian that should be positive definite. An ill-conditioned
/// but positive definite matrix gets a small ridge on the diagonal first.
fn invert_hessian(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = h.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || !(min > 0.0) {
        return Err(Error::SingularHessian(format!(
            "Hessian is not positive definite (eigenvalues {min:e} .. {max:e})"
        )));
    }
    let mut ridge = 0.0;
    let mut m = h.clone();
    if max / min > 1e12 {
        ridge = 1e-8 * h.trace() / h.nrows() as f64;
        log::warn!("Hessian condition number {:e} exceeds 1e12; adding ridge {ridge:e}", max / min);
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
    }
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::SingularHessian("inversion failed".into()))?;
    Ok(((&inv + inv.transpose()) * 0.5, ridge))
}

/// Correlation matrix of a covariance matrix.
pub fn cov_to_corr(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    })
}
