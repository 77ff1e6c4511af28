//! Tweedie distributions with power `1 < xi < 2` (compound Poisson–Gamma),
//! plus the Gamma limit `xi = 2` as a separate closed-form branch.
//!
//! A Tweedie variable with mean `mu` and dispersion `phi` has variance
//! `phi * mu^xi`. For `1 < xi < 2` it is the sum of `N ~ Poisson(lambda)`
//! independent `Gamma(shape, scale)` jumps, which gives an atom of mass
//! `exp(-lambda)` at zero and a continuous density on `x > 0`. The density
//! and distribution function are evaluated by summing that representation
//! in log space, starting from the dominant Poisson index and expanding
//! outward until the terms are negligible.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_add_exp, ln_gamma, ln_gamma_pdf, ln_gamma_pq, ln_poisson_pmf};

/// Terms smaller than this fraction of the largest term end the series.
pub const SERIES_REL_TOL: f64 = 1e-14;
/// Hard cap on the number of series terms before giving up.
pub const SERIES_MAX_TERMS: usize = 100_000;

/// Natural Tweedie parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams {
    /// Power parameter, in `(1, 2]`; `2` selects the Gamma branch.
    pub xi: f64,
    /// Mean, `> 0`.
    pub mu: f64,
    /// Dispersion, `> 0`.
    pub phi: f64,
}

/// Unbounded coordinates `(logit(xi - 1), ln mu, ln phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedParams {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
}

/// The "different process" alternative: odds ratio on the power, additive
/// shift of the natural mean, multiplicative change of the dispersion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeShift {
    pub psi: f64,
    pub delta: f64,
    pub rho: f64,
}

impl RegimeShift {
    pub const IDENTITY: RegimeShift = RegimeShift {
        psi: 1.0,
        delta: 0.0,
        rho: 1.0,
    };

    pub fn new(psi: f64, delta: f64, rho: f64) -> Result<Self> {
        if !(psi > 0.0 && psi.is_finite()) {
            return Err(Error::domain(format!("odds ratio psi must be positive, got {psi}")));
        }
        if !delta.is_finite() {
            return Err(Error::domain("mean shift delta must be finite"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::domain(format!("dispersion factor rho must be positive, got {rho}")));
        }
        Ok(RegimeShift { psi, delta, rho })
    }
}

impl Default for RegimeShift {
    fn default() -> Self {
        RegimeShift {
            psi: 2.0,
            delta: 2.0,
            rho: 1.0,
        }
    }
}

/// Poisson rate and per-event Gamma shape/scale of the compound representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundPoissonDecomposition {
    pub lambda: f64,
    pub gamma_shape: f64,
    pub gamma_scale: f64,
}

impl TransformedParams {
    pub fn new(eta1: f64, eta2: f64, eta3: f64) -> Self {
        TransformedParams { eta1, eta2, eta3 }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        TransformedParams::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.eta1, self.eta2, self.eta3]
    }

    /// Map back to natural parameters. `xi` saturates at `2` for large
    /// `eta1` and is held just above `1` for very negative `eta1`.
    pub fn to_natural(self) -> NaturalParams {
        let odds = self.eta1.exp();
        // 1 + odds/(1+odds) written to stay finite when odds overflows
        let frac = if odds.is_infinite() {
            1.0
        } else {
            1.0 / (1.0 + (-self.eta1).exp())
        };
        let xi = (1.0 + frac).max(1.0 + f64::EPSILON);
        NaturalParams {
            xi,
            mu: self.eta2.exp(),
            phi: self.eta3.exp(),
        }
    }
}

impl NaturalParams {
    pub fn new(xi: f64, mu: f64, phi: f64) -> Result<Self> {
        let p = NaturalParams { xi, mu, phi };
        p.validate()?;
        Ok(p)
    }

    /// Exact Gamma member (`xi = 2`) with shape `1/phi` and scale `mu * phi`.
    pub fn gamma(mu: f64, phi: f64) -> Result<Self> {
        NaturalParams::new(2.0, mu, phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 1.0 && self.xi <= 2.0) {
            return Err(Error::domain(format!("power xi must lie in (1, 2], got {}", self.xi)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::domain(format!("mean must be positive, got {}", self.mu)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::domain(format!("dispersion must be positive, got {}", self.phi)));
        }
        Ok(())
    }

    pub fn is_gamma(&self) -> bool {
        self.xi >= 2.0
    }

    pub fn variance(&self) -> f64 {
        self.phi * self.mu.powf(self.xi)
    }

    pub fn from_transformed(t: TransformedParams) -> Self {
        t.to_natural()
    }

    pub fn to_transformed(&self) -> Result<TransformedParams> {
        if !(self.xi > 1.0 && self.xi < 2.0) {
            return Err(Error::domain(format!(
                "logit transform needs xi strictly inside (1, 2), got {}",
                self.xi
            )));
        }
        if !(self.mu > 0.0 && self.phi > 0.0) {
            return Err(Error::domain("mean and dispersion must be positive"));
        }
        Ok(TransformedParams {
            eta1: ((self.xi - 1.0) / (2.0 - self.xi)).ln(),
            eta2: self.mu.ln(),
            eta3: self.phi.ln(),
        })
    }

    /// Compound Poisson–Gamma representation; `None` on the Gamma branch.
    pub fn compound_poisson(&self) -> Option<CompoundPoissonDecomposition> {
        if self.is_gamma() {
            return None;
        }
        let (xi, mu, phi) = (self.xi, self.mu, self.phi);
        Some(CompoundPoissonDecomposition {
            lambda: mu.powf(2.0 - xi) / (phi * (2.0 - xi)),
            gamma_shape: (2.0 - xi) / (xi - 1.0),
            gamma_scale: phi * (xi - 1.0) * mu.powf(xi - 1.0),
        })
    }

    /// Probability of an exact zero, `exp(-lambda)`; `0` on the Gamma branch.
    pub fn zero_mass(&self) -> f64 {
        self.ln_zero_mass().exp()
    }

    pub fn ln_zero_mass(&self) -> f64 {
        match self.compound_poisson() {
            Some(cp) => -cp.lambda,
            None => f64::NEG_INFINITY,
        }
    }

    /// Log density at `x`: the log of the atom at zero for `x == 0`, the
    /// log of the continuous density for `x > 0`.
    pub fn log_density(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::domain(format!("density argument must be nonnegative, got {x}")));
        }
        let Some(cp) = self.compound_poisson() else {
            if x == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            return Ok(ln_gamma_pdf(x, 1.0 / self.phi, self.mu * self.phi));
        };
        if x == 0.0 {
            return Ok(-cp.lambda);
        }
        if x.is_infinite() {
            return Ok(f64::NEG_INFINITY);
        }
        let ln_lambda = cp.lambda.ln();
        let ln_x = x.ln();
        let ln_scale = cp.gamma_scale.ln();
        let alpha = cp.gamma_shape;
        let term = |n: u64| {
            let nf = n as f64;
            let shape = nf * alpha;
            nf * ln_lambda - cp.lambda - ln_gamma(nf + 1.0) + (shape - 1.0) * ln_x
                - x / cp.gamma_scale
                - ln_gamma(shape)
                - shape * ln_scale
        };
        ln_series(self.dominant_index(x), term, "density")
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::domain(format!("cdf argument must be nonnegative, got {x}")));
        }
        let Some(cp) = self.compound_poisson() else {
            return Ok(ln_gamma_pq(1.0 / self.phi, x / (self.mu * self.phi)).0.exp());
        };
        if x.is_infinite() {
            return Ok(1.0);
        }
        let y = x / cp.gamma_scale;
        let term = |n: u64| {
            ln_poisson_pmf(n, cp.lambda) + ln_gamma_pq(n as f64 * cp.gamma_shape, y).0
        };
        let start = pick_start(&term, cp.lambda.round().max(1.0) as u64, self.dominant_index(x));
        let ln_cont = if x == 0.0 {
            f64::NEG_INFINITY
        } else {
            ln_series(start, term, "cdf")?
        };
        Ok(ln_add_exp(-cp.lambda, ln_cont).exp().min(1.0))
    }

    /// `P(X > x)`, summed directly from the upper incomplete gamma so small
    /// tails keep relative precision.
    pub fn sf(&self, x: f64) -> Result<f64> {
        Ok(self.ln_sf(x)?.exp())
    }

    pub fn ln_sf(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::domain(format!("survival argument must be nonnegative, got {x}")));
        }
        if x.is_infinite() {
            return Ok(f64::NEG_INFINITY);
        }
        let Some(cp) = self.compound_poisson() else {
            return Ok(ln_gamma_pq(1.0 / self.phi, x / (self.mu * self.phi)).1);
        };
        let y = x / cp.gamma_scale;
        let term = |n: u64| {
            ln_poisson_pmf(n, cp.lambda) + ln_gamma_pq(n as f64 * cp.gamma_shape, y).1
        };
        let start = pick_start(&term, cp.lambda.round().max(1.0) as u64, self.dominant_index(x));
        Ok(ln_series(start, term, "survival")?.min(0.0))
    }

    /// Smallest `x` with `P(X > x) <= tail`, by bracketing and bisection.
    pub fn upper_quantile(&self, tail: f64) -> Result<f64> {
        if !(tail > 0.0 && tail < 1.0) {
            return Err(Error::domain(format!("tail probability must lie in (0, 1), got {tail}")));
        }
        let ln_tail = tail.ln();
        if self.ln_sf(0.0)? <= ln_tail {
            return Ok(0.0);
        }
        let sd = self.variance().sqrt();
        let mut hi = self.mu + 10.0 * sd;
        let mut lo = 0.0;
        let mut guard = 0;
        while self.ln_sf(hi)? > ln_tail {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::Integration(format!("could not bracket the {tail} tail quantile")));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.ln_sf(mid)? > ln_tail {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        Ok(hi)
    }

    /// Draw `n` values; deterministic for a given generator state.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self.compound_poisson() {
            None => {
                let g = Gamma::new(1.0 / self.phi, self.mu * self.phi).expect("validated params");
                (0..n).map(|_| g.sample(rng)).collect()
            }
            Some(cp) => {
                let pois = Poisson::new(cp.lambda).expect("positive rate");
                (0..n)
                    .map(|_| {
                        let events: f64 = pois.sample(rng);
                        if events == 0.0 {
                            0.0
                        } else {
                            Gamma::new(events * cp.gamma_shape, cp.gamma_scale)
                                .expect("positive shape")
                                .sample(rng)
                        }
                    })
                    .collect()
            }
        }
    }

    /// Apply a regime shift: multiply the power odds by `psi`, add `delta`
    /// to the natural mean, scale the dispersion by `rho`.
    pub fn shift(&self, s: RegimeShift) -> Result<NaturalParams> {
        let mu = self.mu + s.delta;
        if !(mu > 0.0) {
            return Err(Error::domain(format!(
                "shifted mean {} + {} is not positive",
                self.mu, s.delta
            )));
        }
        let xi = if self.is_gamma() {
            2.0
        } else {
            let a = s.psi * (self.xi - 1.0);
            let b = 2.0 - self.xi;
            (2.0 * a + b) / (a + b)
        };
        NaturalParams::new(xi, mu, s.rho * self.phi)
    }

    // Index of the largest term of the density series at x.
    fn dominant_index(&self, x: f64) -> u64 {
        let j = x.powf(2.0 - self.xi) / (self.phi * (2.0 - self.xi));
        if j.is_finite() {
            j.round().clamp(1.0, 1e15) as u64
        } else {
            1
        }
    }
}

pub fn to_transformed(p: NaturalParams) -> Result<TransformedParams> {
    p.to_transformed()
}

pub fn from_transformed(t: TransformedParams) -> NaturalParams {
    t.to_natural()
}

pub fn shift_params(p: NaturalParams, s: RegimeShift) -> Result<NaturalParams> {
    p.shift(s)
}

fn pick_start(term: &impl Fn(u64) -> f64, a: u64, b: u64) -> u64 {
    if a == b || term(a) >= term(b) {
        a
    } else {
        b
    }
}

/// Log of `sum_{n >= 1} exp(term(n))` for a unimodal sequence, expanding
/// from `start` in both directions until terms drop below the tolerance
/// relative to the running maximum.
fn ln_series(start: u64, term: impl Fn(u64) -> f64, what: &'static str) -> Result<f64> {
    let ln_tol = SERIES_REL_TOL.ln();
    let mut acc = LogAccumulator::default();
    let mut count = 0usize;
    let mut n = start.max(1);
    loop {
        let t = term(n);
        acc.push(t);
        count += 1;
        if t < acc.max + ln_tol || t == f64::NEG_INFINITY {
            break;
        }
        if count > SERIES_MAX_TERMS {
            return Err(Error::SeriesTruncated { what, cap: SERIES_MAX_TERMS });
        }
        n += 1;
    }
    let mut n = start.max(1);
    while n > 1 {
        n -= 1;
        let t = term(n);
        acc.push(t);
        count += 1;
        if t < acc.max + ln_tol || t == f64::NEG_INFINITY {
            break;
        }
        if count > SERIES_MAX_TERMS {
            return Err(Error::SeriesTruncated { what, cap: SERIES_MAX_TERMS });
        }
    }
    Ok(acc.value())
}

/// Running `ln(sum exp(t_i))` that rescales whenever a new maximum arrives.
#[derive(Debug, Clone, Copy)]
struct LogAccumulator {
    max: f64,
    scaled: f64,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        LogAccumulator {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }
}

impl LogAccumulator {
    fn push(&mut self, t: f64) {
        if t == f64::NEG_INFINITY {
            return;
        }
        if t > self.max {
            self.scaled = self.scaled * (self.max - t).exp() + 1.0;
            self.max = t;
        } else {
            self.scaled += (t - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            self.max
        } else {
            self.max + self.scaled.ln()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn p(xi: f64, mu: f64, phi: f64) -> NaturalParams {
        NaturalParams::new(xi, mu, phi).unwrap()
    }

    // Brute force: explicit sum over n = 1..=terms, no dominant-index logic.
    fn brute_density(x: f64, q: NaturalParams, terms: u64) -> f64 {
        let cp = q.compound_poisson().unwrap();
        let logs: Vec<f64> = (1..=terms)
            .map(|n| {
                ln_poisson_pmf(n, cp.lambda)
                    + ln_gamma_pdf(x, n as f64 * cp.gamma_shape, cp.gamma_scale)
            })
            .collect();
        crate::special::ln_sum_exp(&logs).exp()
    }

    #[test]
    fn transform_examples() {
        let t = p(1.5, 1.0, 1.0).to_transformed().unwrap();
        assert_eq!(t.to_array(), [0.0, 0.0, 0.0]);
        let t = p(1.75, E, E * E).to_transformed().unwrap();
        assert_relative_eq!(t.eta1, 3f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(t.eta2, 1.0, epsilon = 1e-14);
        assert_relative_eq!(t.eta3, 2.0, epsilon = 1e-14);

        let back = TransformedParams::new(3f64.ln(), 1.0, 2.0).to_natural();
        assert_relative_eq!(back.xi, 1.75, epsilon = 1e-14);
        assert_relative_eq!(back.mu, E, max_relative = 1e-14);
        assert_relative_eq!(back.phi, E * E, max_relative = 1e-14);

        let sat = TransformedParams::new(50.0, 0.0, 0.0).to_natural();
        assert!((2.0 - sat.xi).abs() < 1e-12 && sat.xi.is_finite());
    }

    #[test]
    fn transform_rejects_out_of_range() {
        assert!(p(2.0, 1.0, 1.0).to_transformed().is_err());
        assert!(NaturalParams::new(1.0, 1.0, 1.0).is_err());
        assert!(NaturalParams::new(1.5, 0.0, 1.0).is_err());
        assert!(NaturalParams::new(1.5, 1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn transform_round_trip(xi in 1.001f64..1.999, mu in 1e-3f64..1e4, phi in 1e-3f64..1e3) {
            let q = p(xi, mu, phi);
            let back = q.to_transformed().unwrap().to_natural();
            prop_assert!(((back.xi - xi) / xi).abs() < 1e-12);
            prop_assert!(((back.mu - mu) / mu).abs() < 1e-12);
            prop_assert!(((back.phi - phi) / phi).abs() < 1e-12);
        }

        #[test]
        fn odds_ratios_compose(xi in 1.01f64..1.99, a in 0.05f64..20.0, b in 0.05f64..20.0) {
            let q = p(xi, 3.0, 2.0);
            let two = q.shift(RegimeShift::new(a, 0.0, 1.0).unwrap()).unwrap()
                .shift(RegimeShift::new(b, 0.0, 1.0).unwrap()).unwrap();
            let one = q.shift(RegimeShift::new(a * b, 0.0, 1.0).unwrap()).unwrap();
            prop_assert!((two.xi - one.xi).abs() < 1e-12);
        }

        #[test]
        fn compound_decomposition_recovers_mean(xi in 1.01f64..1.99, mu in 0.01f64..100.0, phi in 0.01f64..50.0) {
            let cp = p(xi, mu, phi).compound_poisson().unwrap();
            let m = cp.lambda * cp.gamma_shape * cp.gamma_scale;
            prop_assert!(((m - mu) / mu).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mass_examples() {
        assert_relative_eq!(p(1.5, 1.0, 1.0).zero_mass(), (-2.0f64).exp(), max_relative = 1e-15);
        assert!(p(1.5, 1.0, 1e12).zero_mass() > 1.0 - 1e-9);
        assert_eq!(p(2.0, 3.0, 0.5).zero_mass(), 0.0);
    }

    #[test]
    fn density_examples() {
        assert_relative_eq!(p(2.0, 1.0, 1.0).log_density(1.0).unwrap(), -1.0, epsilon = 1e-14);
        let q = p(1.5, 1.0, 1.0);
        assert_relative_eq!(q.log_density(0.0).unwrap(), -2.0, epsilon = 1e-15);
        let oracle = brute_density(2.0, q, 500);
        assert_relative_eq!(q.density(2.0).unwrap(), oracle, max_relative = 1e-10);
        assert!(q.log_density(-1.0).is_err());
        assert_eq!(p(2.0, 1.0, 1.0).log_density(0.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn density_matches_brute_force_in_awkward_corners() {
        for &(xi, mu, phi, x) in &[
            (1.05, 20.0, 0.5, 31.0),
            (1.95, 0.5, 5.0, 0.01),
            (1.3, 5.0, 2.0, 80.0),
            (1.7, 1.0, 0.2, 3.0),
        ] {
            let q = p(xi, mu, phi);
            let oracle = brute_density(x, q, 2000);
            assert_relative_eq!(q.density(x).unwrap(), oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn gamma_branch_matches_closed_form() {
        let q = p(2.0, 3.0, 0.5);
        let (shape, scale) = (2.0, 1.5);
        for &x in &[0.1f64, 1.0, 4.0, 12.0] {
            let exact = x.powf(shape - 1.0) * (-x / scale).exp() / (scale * scale);
            assert_relative_eq!(q.density(x).unwrap(), exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn cdf_examples() {
        let q = p(1.5, 1.0, 1.0);
        assert_relative_eq!(q.cdf(0.0).unwrap(), q.zero_mass(), max_relative = 1e-15);
        assert_relative_eq!(p(2.0, 1.0, 1.0).cdf(1.0).unwrap(), 1.0 - (-1.0f64).exp(), max_relative = 1e-14);
        let far = q.mu + 40.0 * q.variance().sqrt();
        assert!((1.0 - q.cdf(far).unwrap()).abs() < 1e-9);
        assert!(q.cdf(-0.5).is_err());
    }

    #[test]
    fn cdf_and_survival_are_complements() {
        for &(xi, mu, phi) in &[(1.2, 5.0, 2.0), (1.5, 1.0, 1.0), (1.9, 20.0, 0.5)] {
            let q = p(xi, mu, phi);
            for &x in &[0.0, 0.3, 1.0, 5.0, 40.0] {
                let total = q.cdf(x).unwrap() + q.sf(x).unwrap();
                assert!((total - 1.0).abs() < 1e-12, "{q:?} at {x}: {total}");
            }
        }
    }

    #[test]
    fn cdf_derivative_is_density() {
        for &(xi, mu, phi) in &[(1.3, 5.0, 2.0), (1.6, 1.0, 1.0), (1.85, 10.0, 0.7)] {
            let q = p(xi, mu, phi);
            for &x in &[0.2, 1.0, 3.5, 12.0] {
                let h = 1e-5 * x;
                let fd = (q.cdf(x + h).unwrap() - q.cdf(x - h).unwrap()) / (2.0 * h);
                assert_relative_eq!(fd, q.density(x).unwrap(), max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn cdf_is_monotone() {
        let q = p(1.4, 3.0, 1.5);
        let mut last = 0.0;
        for i in 0..400 {
            let c = q.cdf(i as f64 * 0.05).unwrap();
            assert!(c >= last - 1e-15);
            last = c;
        }
    }

    #[test]
    fn upper_quantile_hits_tail() {
        let q = p(1.5, 5.0, 2.0);
        let x = q.upper_quantile(1e-9).unwrap();
        assert_relative_eq!(q.sf(x).unwrap(), 1e-9, max_relative = 1e-6);
    }

    #[test]
    fn near_poisson_limit() {
        // xi -> 1 with phi = 1 collapses onto Poisson(mu) masses at the integers.
        let q = p(1.0 + 1e-6, 4.0, 1.0);
        assert_relative_eq!(q.zero_mass(), (-4.0f64).exp(), max_relative = 1e-2);
        for k in 1..=10u64 {
            let (a, b) = (k as f64 - 0.5, k as f64 + 0.5);
            let nodes = 20_000;
            let h = (b - a) / nodes as f64;
            let mut acc = 0.0;
            for i in 0..=nodes {
                let w = if i == 0 || i == nodes { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * q.density(a + i as f64 * h).unwrap();
            }
            let mass = acc * h / 3.0;
            let pois = ln_poisson_pmf(k, 4.0).exp();
            assert_relative_eq!(mass, pois, max_relative = 1e-2);
        }
    }

    #[test]
    fn sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = p(1.5, 1.0, 1.0);
        let draws = q.sample(1_000_000, &mut rng);
        let zeros = draws.iter().filter(|&&v| v == 0.0).count() as f64 / draws.len() as f64;
        assert!((zeros - (-2.0f64).exp()).abs() < 0.003);

        let q = p(1.5, 5.0, 2.0);
        let draws = q.sample(1_000_000, &mut rng);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean / 5.0 - 1.0).abs() < 0.01);
        assert!((var / q.variance() - 1.0).abs() < 0.03);
    }

    #[test]
    fn sampler_is_deterministic() {
        let q = p(1.3, 2.0, 1.0);
        let a = q.sample(50, &mut ChaCha8Rng::seed_from_u64(3));
        let b = q.sample(50, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn shift_examples() {
        let q = p(1.5, 3.0, 2.0);
        assert_eq!(q.shift(RegimeShift::IDENTITY).unwrap(), q);
        let s = q.shift(RegimeShift::new(2.0, 2.0, 1.0).unwrap()).unwrap();
        assert_relative_eq!(s.xi, 5.0 / 3.0, epsilon = 1e-15);
        assert_eq!(s.mu, 5.0);
        assert_eq!(s.phi, 2.0);
        let extreme = p(1.01, 1.0, 1.0).shift(RegimeShift::new(100.0, 0.0, 1.0).unwrap()).unwrap();
        assert!(extreme.xi > 1.0 && extreme.xi < 2.0);
        assert!(q.shift(RegimeShift::new(1.0, -3.0, 1.0).unwrap()).is_err());
    }
}
