//! Row-wise screening of a test matrix against a control matrix.
//!
//! One direction proceeds in four steps:
//!
//! 1. A pooled fit over the control matrix gives a normal prior on the
//!    transformed parameters.
//! 2. Each control row gets a posterior mean under that prior by Gauss-Hermite
//!    integration.
//! 3. The posterior means are pushed through the regime shift to build an
//!    alternative prior.
//! 4. Each test row is scored by the Bayes factor of the alternative against
//!    its own control-row prior. The Bayes factors then feed a grid posterior
//!    for the proportion of rows that did not change.

use nalgebra::DMatrix;
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlfit::{fit_pooled, FitReport, DEFAULT_INITS};
use crate::quadrature::{tensor_rule, CovarianceFactor, QuadratureRule};
use crate::special::{ln_add_exp, ln_sum_exp};
use crate::tweedie::{RegimeShift, TransformedParams};

/// Environment variable that fixes the worker count.
pub const THREADS_ENV: &str = "TWEEDIE_SCREEN_THREADS";

/// Covariance used for the alternative prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AltCov {
    /// Sample covariance of the shifted posterior means.
    #[default]
    Empirical,
    /// The pooled-fit covariance of the control matrix.
    Control,
}

/// Evenly spaced grid of candidate values for the null proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pi0Grid {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Default for Pi0Grid {
    fn default() -> Self {
        Pi0Grid {
            from: 0.001,
            to: 0.999,
            step: 0.001,
        }
    }
}

impl Pi0Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.from > 0.0 && self.to < 1.0 && self.from <= self.to && self.step > 0.0) {
            return Err(Error::domain(format!(
                "pi0 grid ({}, {}, {}) must satisfy 0 < from <= to < 1 and step > 0",
                self.from, self.to, self.step
            )));
        }
        let n = ((self.to - self.from) / self.step + 1e-10).floor() as usize;
        Ok((0..=n).map(|g| self.from + g as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenOptions {
    pub ngridpts: usize,
    pub prune: f64,
    pub shift: RegimeShift,
    pub zeta: f64,
    pub pi0_grid: Pi0Grid,
    pub alt_cov: AltCov,
    pub inits: (f64, f64),
    /// Worker count; falls back to the environment and then the core count.
    pub threads: Option<usize>,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        ScreenOptions {
            ngridpts: 10,
            prune: 0.2,
            shift: RegimeShift::default(),
            zeta: 5.0,
            pi0_grid: Pi0Grid::default(),
            alt_cov: AltCov::default(),
            inits: DEFAULT_INITS,
            threads: None,
        }
    }
}

impl ScreenOptions {
    pub fn validate(&self) -> Result<()> {
        if self.ngridpts < 2 {
            return Err(Error::domain("ngridpts must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.prune) {
            return Err(Error::domain("prune must lie in [0, 1)"));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::domain("zeta must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::domain("thread count must be positive"));
        }
        self.pi0_grid.points().map(|_| ())
    }

    /// Pruned standard-normal rule in three dimensions.
    pub fn unit_rule(&self) -> Result<QuadratureRule> {
        tensor_rule(self.ngridpts, 3)?.prune(self.prune)
    }
}

/// Worker count: explicit request, then the environment, then cores - 2.
pub fn worker_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(THREADS_ENV).ok()?.trim().parse().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get().saturating_sub(2))
                .unwrap_or(1)
        })
        .max(1)
}

pub fn worker_pool(requested: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(requested))
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowPosterior {
    pub ln_marginal: f64,
    pub mean: TransformedParams,
}

/// Log marginal likelihood of one row under the prior represented by `rule`,
/// and the posterior mean of the transformed parameters.
///
/// Rule points whose likelihood cannot be evaluated contribute nothing.
pub fn row_posterior(rule: &QuadratureRule, row: &[f64]) -> Result<RowPosterior> {
    if rule.dim() != 3 {
        return Err(Error::domain("row posterior needs a three-dimensional rule"));
    }
    let log_terms: Vec<f64> = rule
        .points()
        .zip(rule.weights())
        .map(|(v, &w)| {
            let p = TransformedParams::new(v[0], v[1], v[2]).to_natural();
            let ll = row
                .iter()
                .map(|&x| p.log_density(x))
                .sum::<Result<f64>>()
                .unwrap_or(f64::NEG_INFINITY);
            w.ln() + ll
        })
        .collect();
    let ln_marginal = ln_sum_exp(&log_terms);
    if !ln_marginal.is_finite() {
        return Err(Error::domain(format!(
            "marginal likelihood is not finite ({ln_marginal})"
        )));
    }
    let mut mean = [0.0; 3];
    for (v, lt) in rule.points().zip(&log_terms) {
        let w = (lt - ln_marginal).exp();
        for (m, c) in mean.iter_mut().zip(v) {
            *m += w * c;
        }
    }
    Ok(RowPosterior {
        ln_marginal,
        mean: TransformedParams::from_array(mean),
    })
}

/// Row-specific means and one shared covariance for the alternative.
#[derive(Debug, Clone)]
pub struct AlternativePrior {
    pub means: Vec<TransformedParams>,
    pub cov: DMatrix<f64>,
    pub ridge: f64,
}

/// Shift each control posterior mean on the natural scale and collect the
/// covariance of the results.
pub fn build_alternative(
    control: &[TransformedParams],
    shift: RegimeShift,
    alt_cov: AltCov,
    control_cov: &DMatrix<f64>,
) -> Result<AlternativePrior> {
    let means = control
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.to_natural()
                .shift(shift)
                .and_then(|p| p.to_transformed())
                .map_err(|e| e.in_row((i + 1).to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (cov, ridge) = match alt_cov {
        AltCov::Control => (control_cov.clone(), 0.0),
        AltCov::Empirical => {
            let cov = sample_covariance(&means)?;
            regularize(cov)?
        }
    };
    Ok(AlternativePrior { means, cov, ridge })
}

fn sample_covariance(rows: &[TransformedParams]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::domain("alternative covariance needs at least two rows"));
    }
    let mut mean = [0.0; 3];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.to_array()) {
            *m += v / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(3, 3);
    for r in rows {
        let d: Vec<f64> = r.to_array().iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    Ok(cov / (n - 1) as f64)
}

// Adds 1e-8 * max(1, trace / 3) to the diagonal when the matrix is not
// comfortably positive definite.
fn regularize(mut cov: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = cov.clone().symmetric_eigenvalues();
    if eig.min() > 1e-12 * eig.max().max(0.0) && eig.max() > 0.0 {
        return Ok((cov, 0.0));
    }
    let ridge = 1e-8 * (cov.trace() / 3.0).max(1.0);
    log::warn!("alternative covariance is singular; adding ridge {ridge:e}");
    for i in 0..3 {
        cov[(i, i)] += ridge;
    }
    Ok((cov, ridge))
}

/// Grid posterior of the null proportion.
#[derive(Debug, Clone, PartialEq)]
pub struct Pi0Posterior {
    pub grid: Vec<f64>,
    /// Density normalized to integrate to one under the grid spacing.
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
    pub mean: f64,
    pub step: f64,
}

/// Posterior of the null proportion given log Bayes factors, with a
/// `Beta(zeta, 1)` prior.
pub fn pi0_posterior(ln_bayes: &[f64], zeta: f64, grid: Pi0Grid) -> Result<Pi0Posterior> {
    if ln_bayes.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::domain("log Bayes factors must be finite or -inf"));
    }
    let points = grid.points()?;
    let n = ln_bayes.len() as f64;
    let log_f: Vec<f64> = points
        .par_iter()
        .map(|&p| {
            let ln_odds = ((1.0 - p) / p).ln();
            (n + zeta - 1.0) * p.ln()
                + ln_bayes
                    .iter()
                    .map(|lb| ln_add_exp(0.0, ln_odds + lb))
                    .sum::<f64>()
        })
        .collect();
    let max = log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_f.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    let norm = total * grid.step;
    let density: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    let mut acc = 0.0;
    let cdf: Vec<f64> = raw
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect();
    let mean = 1.0 - grid.step * cdf.iter().sum::<f64>();
    Ok(Pi0Posterior {
        grid: points,
        density,
        cdf,
        mean,
        step: grid.step,
    })
}

/// Membership probabilities `(unchanged, changed)` of a row with log Bayes
/// factor `ln_b` when the null proportion is `pi0`.
pub fn conditional_membership(pi0: f64, ln_b: f64) -> (f64, f64) {
    let ln_odds = ((1.0 - pi0) / pi0).ln() + ln_b;
    let ln_total = ln_add_exp(0.0, ln_odds);
    ((-ln_total).exp(), (ln_odds - ln_total).exp())
}

/// Posterior probability that a row with log Bayes factor `ln_b` is
/// unchanged, averaged over the null-proportion posterior.
pub fn p_gamma0(ln_b: f64, post: &Pi0Posterior) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&p, &d) in post.grid.iter().zip(&post.density) {
        let w = d * post.step;
        num += w * conditional_membership(p, ln_b).0;
        den += w;
    }
    num / den
}

/// Both posterior membership probabilities, `(unchanged, changed)`.
pub fn membership(ln_b: f64, post: &Pi0Posterior) -> (f64, f64) {
    let p0 = p_gamma0(ln_b, post);
    (p0, 1.0 - p0)
}

#[derive(Debug, Clone)]
pub struct DirectionResult {
    pub fit: FitReport,
    pub control: Vec<RowPosterior>,
    pub alternative: AlternativePrior,
    /// Log marginal of each test row under its control-row prior.
    pub ln_same: Vec<f64>,
    /// Log marginal of each test row under the alternative.
    pub ln_alt: Vec<f64>,
    pub ln_bayes: Vec<f64>,
    pub p_same: Vec<f64>,
    pub pi0: Pi0Posterior,
}

impl DirectionResult {
    pub fn bayes_factors(&self) -> Vec<f64> {
        self.ln_bayes.iter().map(|v| v.exp()).collect()
    }
}

/// Screen `test` against `control` with the default rule.
pub fn run_direction(
    control: ArrayView2<f64>,
    test: ArrayView2<f64>,
    opts: &ScreenOptions,
) -> Result<DirectionResult> {
    opts.validate()?;
    let rule = opts.unit_rule()?;
    worker_pool(opts.threads)?.install(|| direction(control, test, &rule, opts))
}

/// Screen with a caller-supplied standard-normal rule.
pub fn run_direction_with_rule(
    control: ArrayView2<f64>,
    test: ArrayView2<f64>,
    unit_rule: &QuadratureRule,
    opts: &ScreenOptions,
) -> Result<DirectionResult> {
    opts.validate()?;
    worker_pool(opts.threads)?.install(|| direction(control, test, unit_rule, opts))
}

#[derive(Debug, Clone)]
pub struct BothDirections {
    /// `b` screened against `a`.
    pub forward: DirectionResult,
    /// `a` screened against `b`.
    pub reverse: DirectionResult,
}

/// Screen in both directions; the two runs share one worker pool.
pub fn run_both(a: ArrayView2<f64>, b: ArrayView2<f64>, opts: &ScreenOptions) -> Result<BothDirections> {
    opts.validate()?;
    let rule = opts.unit_rule()?;
    worker_pool(opts.threads)?.install(|| both_directions(a, b, &rule, opts))
}

/// Both directions on the current rayon pool.
pub(crate) fn both_directions(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    unit: &QuadratureRule,
    opts: &ScreenOptions,
) -> Result<BothDirections> {
    let (forward, reverse) = rayon::join(|| direction(a, b, unit, opts), || direction(b, a, unit, opts));
    Ok(BothDirections {
        forward: forward?,
        reverse: reverse?,
    })
}

fn row_vec(m: ArrayView2<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

fn direction(
    control: ArrayView2<f64>,
    test: ArrayView2<f64>,
    unit: &QuadratureRule,
    opts: &ScreenOptions,
) -> Result<DirectionResult> {
    let rows = control.nrows();
    if test.nrows() != rows {
        return Err(Error::domain(format!(
            "control has {rows} rows but test has {}",
            test.nrows()
        )));
    }
    if rows < 2 || control.ncols() == 0 || test.ncols() == 0 {
        return Err(Error::domain("screening needs at least two rows and one column on each side"));
    }
    if unit.dim() != 3 {
        return Err(Error::domain("screening needs a three-dimensional rule"));
    }

    let pooled: Vec<f64> = control.iter().copied().collect();
    let fit = fit_pooled(&pooled, opts.inits)?;
    let prior_mean = fit.prior.mean.to_array();
    let prior_factor = CovarianceFactor::new(&fit.prior.cov)?;
    let same_base = unit.transform(&prior_factor, &[0.0; 3])?;
    let prior_rule = same_base.translated(&prior_mean);

    let in_row = |i: usize| move |e: Error| e.in_row((i + 1).to_string());

    let control_post = (0..rows)
        .into_par_iter()
        .map(|i| row_posterior(&prior_rule, &row_vec(control, i)).map_err(in_row(i)))
        .collect::<Result<Vec<_>>>()?;

    let control_means: Vec<TransformedParams> = control_post.iter().map(|r| r.mean).collect();
    let alternative = build_alternative(&control_means, opts.shift, opts.alt_cov, &fit.prior.cov)?;
    let alt_base = unit.transform(&CovarianceFactor::new(&alternative.cov)?, &[0.0; 3])?;

    let scored = (0..rows)
        .into_par_iter()
        .map(|i| {
            let row = row_vec(test, i);
            let same = row_posterior(&same_base.translated(&control_means[i].to_array()), &row)
                .map_err(in_row(i))?;
            let alt = row_posterior(&alt_base.translated(&alternative.means[i].to_array()), &row)
                .map_err(in_row(i))?;
            Ok((same.ln_marginal, alt.ln_marginal))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ln_same, ln_alt): (Vec<f64>, Vec<f64>) = scored.into_iter().unzip();
    let ln_bayes: Vec<f64> = ln_alt.iter().zip(&ln_same).map(|(a, s)| a - s).collect();

    let pi0 = pi0_posterior(&ln_bayes, opts.zeta, opts.pi0_grid)?;
    let p_same = ln_bayes.iter().map(|&lb| p_gamma0(lb, &pi0)).collect();
    Ok(DirectionResult {
        fit,
        control: control_post,
        alternative,
        ln_same,
        ln_alt,
        ln_bayes,
        p_same,
        pi0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tweedie::NaturalParams;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Pi0Grid {
        Pi0Grid::default()
    }

    #[test]
    fn grid_has_999_points() {
        let g = grid().points().unwrap();
        assert_eq!(g.len(), 999);
        assert_relative_eq!(g[998], 0.999, epsilon = 1e-12);
    }

    #[test]
    fn neutral_factors_leave_the_prior() {
        let post = pi0_posterior(&[0.0; 40], 5.0, grid()).unwrap();
        assert!((post.mean - 5.0 / 6.0).abs() < 1e-3, "{}", post.mean);
        assert!((p_gamma0(0.0, &post) - post.mean).abs() < 1e-9);
        let dens: f64 = post.density.iter().sum::<f64>() * post.step;
        assert_relative_eq!(dens, 1.0, epsilon = 1e-12);
        assert_relative_eq!(*post.cdf.last().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_factors_push_towards_one() {
        let n = 229.0;
        let post = pi0_posterior(&vec![f64::NEG_INFINITY; 229], 5.0, grid()).unwrap();
        assert!((post.mean - (n + 5.0) / (n + 6.0)).abs() < 1e-3);
        assert_eq!(p_gamma0(f64::NEG_INFINITY, &post), 1.0);
    }

    #[test]
    fn membership_is_complementary_and_monotone() {
        let lbs: Vec<f64> = (0..30).map(|i| (i as f64 - 10.0) / 3.0).collect();
        let post = pi0_posterior(&lbs, 5.0, grid()).unwrap();
        let mut last = f64::INFINITY;
        for b in [0.0f64, 0.5, 1.0, 19.98, 488.0] {
            let (p0, p1) = membership(b.ln(), &post);
            assert!((p0 + p1 - 1.0).abs() < 1e-15);
            assert!(p0 < last);
            last = p0;
        }
    }

    #[test]
    fn huge_factors_do_not_overflow() {
        let post = pi0_posterior(&[800.0, -3.0, 1.0], 5.0, grid()).unwrap();
        assert!(post.mean.is_finite());
        assert!(p_gamma0(900.0, &post) >= 0.0 && p_gamma0(900.0, &post) < 1e-300);
    }

    #[test]
    fn alternative_uses_natural_mean_shift() {
        let base = NaturalParams::new(1.5, 4.0, 1.0).unwrap();
        let means: Vec<TransformedParams> = [1.0, 1.1, 0.9, 1.3]
            .iter()
            .map(|s| NaturalParams::new(1.5 + 0.1 * (s - 1.0), 4.0 * s, *s).unwrap().to_transformed().unwrap())
            .collect();
        let shift = RegimeShift::new(2.0, 2.0, 1.0).unwrap();
        let alt = build_alternative(&means, shift, AltCov::Empirical, &DMatrix::identity(3, 3)).unwrap();
        let first = alt.means[0].to_natural();
        assert_relative_eq!(first.mu, base.mu + 2.0, max_relative = 1e-12);
        assert_relative_eq!(first.xi, 5.0 / 3.0, max_relative = 1e-12);
        assert_eq!(alt.ridge, 0.0);
        let control = build_alternative(&means, shift, AltCov::Control, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(control.cov, DMatrix::identity(3, 3));
    }

    #[test]
    fn identical_shifted_means_get_a_ridge() {
        let t = NaturalParams::new(1.5, 4.0, 1.0).unwrap().to_transformed().unwrap();
        let alt = build_alternative(&[t; 5], RegimeShift::default(), AltCov::Empirical, &DMatrix::identity(3, 3))
            .unwrap();
        assert!(alt.ridge > 0.0);
        assert!(alt.cov.clone().symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn single_point_rule_gives_likelihood_ratio() {
        let p = NaturalParams::new(1.5, 3.0, 1.0).unwrap();
        let row = p.sample(6, &mut ChaCha8Rng::seed_from_u64(1));
        let at = p.to_transformed().unwrap();
        let rule = QuadratureRule::single_point(&at.to_array());
        let post = row_posterior(&rule, &row).unwrap();
        let direct: f64 = row.iter().map(|&x| p.log_density(x).unwrap()).sum();
        assert_relative_eq!(post.ln_marginal, direct, max_relative = 1e-14);
        assert_eq!(post.mean, at);
    }

    fn toy(seed: u64, rows: usize, cols: usize, shifted: bool) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Array2::zeros((rows, cols));
        for i in 0..rows {
            let mu = 2.0 + (i % 5) as f64 + if shifted && i % 4 == 0 { 25.0 } else { 0.0 };
            let p = NaturalParams::new(1.5, mu, 1.5).unwrap();
            for (j, v) in p.sample(cols, &mut rng).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    #[test]
    fn shifted_rows_score_higher() {
        let a = toy(3, 24, 8, false);
        let b = toy(4, 24, 8, true);
        let opts = ScreenOptions {
            ngridpts: 5,
            threads: Some(2),
            ..Default::default()
        };
        let res = run_direction(a.view(), b.view(), &opts).unwrap();
        let shifted: Vec<f64> = (0..24).filter(|i| i % 4 == 0).map(|i| res.p_same[i]).collect();
        let kept: Vec<f64> = (0..24).filter(|i| i % 4 != 0).map(|i| res.p_same[i]).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&shifted) < mean(&kept), "{shifted:?} vs {kept:?}");
        assert!(res.p_same.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let a = toy(5, 16, 6, false);
        let b = toy(6, 16, 6, true);
        let run = |t| {
            let opts = ScreenOptions {
                ngridpts: 4,
                threads: Some(t),
                ..Default::default()
            };
            run_both(a.view(), b.view(), &opts).unwrap()
        };
        let one = run(1);
        let many = run(4);
        assert_eq!(one.forward.ln_bayes, many.forward.ln_bayes);
        assert_eq!(one.reverse.p_same, many.reverse.p_same);
        assert_eq!(one.forward.pi0.density, many.forward.pi0.density);
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        let a = toy(1, 6, 4, false);
        let b = toy(2, 5, 4, false);
        assert!(run_direction(a.view(), b.view(), &ScreenOptions::default()).is_err());
    }
}
