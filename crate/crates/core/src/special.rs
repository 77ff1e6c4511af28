//! Special functions used by the Tweedie kernels: log-gamma, the regularized
//! incomplete gamma function in log space, and log-sum-exp helpers.

pub use statrs::function::gamma::ln_gamma;

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

/// Log of the regularized lower and upper incomplete gamma functions,
/// `(ln P(a, x), ln Q(a, x))`, for shape `a > 0` and `x >= 0`.
///
/// The power series is used below `x < a + 1` and the Lentz continued
/// fraction above it; the complement is taken from whichever side was
/// computed directly, so the smaller of the two tails keeps full relative
/// precision.
pub fn ln_gamma_pq(a: f64, x: f64) -> (f64, f64) {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    if x.is_infinite() {
        return (0.0, f64::NEG_INFINITY);
    }
    let prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let ln_p = prefactor + lower_series(a, x).ln();
        (ln_p, ln_1m_exp(ln_p))
    } else {
        let ln_q = prefactor + upper_fraction(a, x).ln();
        (ln_1m_exp(ln_q), ln_q)
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    ln_gamma_pq(a, x).0.exp()
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    ln_gamma_pq(a, x).1.exp()
}

// sum_{n>=0} x^n / (a (a+1) ... (a+n)); P = x^a e^-x / Gamma(a) * sum
fn lower_series(a: f64, x: f64) -> f64 {
    let mut denom = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum
}

// Continued fraction for Q(a, x) * Gamma(a) / (x^a e^-x), modified Lentz.
fn upper_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let i = i as f64;
        let an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `ln(1 - exp(v))` for `v <= 0`, accurate at both ends.
pub fn ln_1m_exp(v: f64) -> f64 {
    if v > -std::f64::consts::LN_2 {
        (-v.exp_m1()).ln()
    } else {
        (-v.exp()).ln_1p()
    }
}

/// `ln(exp(a) + exp(b))`.
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum_i exp(v_i))` with a max shift; `-inf` for an empty or all `-inf` input.
pub fn ln_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

/// Log of the Poisson probability mass at `n` for rate `lambda > 0`.
pub fn ln_poisson_pmf(n: u64, lambda: f64) -> f64 {
    let n = n as f64;
    n * lambda.ln() - lambda - ln_gamma(n + 1.0)
}

/// Log of the Gamma density with the given shape and scale, for `x > 0`.
pub fn ln_gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_case_is_closed_form() {
        // a = 1: P(1, x) = 1 - e^-x
        for &x in &[1e-6f64, 0.1, 1.0, 2.5, 10.0, 50.0] {
            assert_relative_eq!(gamma_p(1.0, x), -(-x).exp_m1(), max_relative = 1e-14);
            assert_relative_eq!(gamma_q(1.0, x), (-x).exp(), max_relative = 1e-13);
        }
    }

    #[test]
    fn integer_shape_matches_poisson_tail() {
        // Q(k, x) = sum_{j<k} e^-x x^j / j!
        for &k in &[2u32, 5, 12] {
            for &x in &[0.5f64, 3.0, 11.0, 30.0] {
                let mut term = (-x).exp();
                let mut sum = term;
                for j in 1..k {
                    term *= x / j as f64;
                    sum += term;
                }
                assert_relative_eq!(gamma_q(k as f64, x), sum, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn lower_and_upper_are_complements() {
        for &a in &[0.05, 0.7, 3.3, 40.0, 900.0] {
            for &x in &[0.01, 0.9, a, a + 1.0, 2.0 * a + 5.0] {
                let (lp, lq) = ln_gamma_pq(a, x);
                assert!((lp.exp() + lq.exp() - 1.0).abs() < 1e-13, "a={a} x={x}");
            }
        }
    }

    #[test]
    fn far_tail_keeps_relative_precision() {
        // Q(1, 200) = e^-200 would vanish as 1 - P.
        let (_, lq) = ln_gamma_pq(1.0, 200.0);
        assert_relative_eq!(lq, -200.0, max_relative = 1e-13);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(ln_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(ln_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_relative_eq!(ln_sum_exp(&[1000.0, 1000.0]), 1000.0 + std::f64::consts::LN_2);
        assert_relative_eq!(ln_add_exp(-1e4, 0.0), 0.0);
        assert_relative_eq!(ln_1m_exp(-1e-20), (1e-20f64).ln(), max_relative = 1e-12);
    }
}
