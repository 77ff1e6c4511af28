//! Survival-type difference metrics between a control law and a test law.
//!
//! For thresholds `d` (or ratios `r`) these give the probability that a
//! test observation exceeds a control observation by more than the
//! threshold, split by whether the control value is zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::tensor_rule;
use crate::screen::DirectionResult;
use crate::tweedie::{NaturalParams, RegimeShift, TransformedParams};

/// Upper tail probability left out of the integration range.
pub const TAIL: f64 = 1e-9;
const START_INTERVALS: usize = 2000;
const MAX_REFINEMENTS: usize = 4;
const AGREEMENT: f64 = 1e-6;
/// Points per axis of the rule used for predictive mixtures.
pub const PREDICTIVE_GRIDPTS: usize = 3;

/// A nonnegative law with an atom at zero and a density on `(0, inf)`.
pub trait Law: Sync {
    fn zero_mass(&self) -> f64;
    /// Density of the continuous part.
    fn density(&self, x: f64) -> Result<f64>;
    /// `P(X > x)`.
    fn sf(&self, x: f64) -> Result<f64>;
    /// A point beyond which at most `tail` of the mass lies.
    fn upper_quantile(&self, tail: f64) -> Result<f64>;
    /// Smallest Gamma shape among the jumps; governs the density near zero.
    fn jump_shape(&self) -> f64;
}

impl Law for NaturalParams {
    fn zero_mass(&self) -> f64 {
        NaturalParams::zero_mass(self)
    }

    fn density(&self, x: f64) -> Result<f64> {
        NaturalParams::density(self, x)
    }

    fn sf(&self, x: f64) -> Result<f64> {
        NaturalParams::sf(self, x)
    }

    fn upper_quantile(&self, tail: f64) -> Result<f64> {
        NaturalParams::upper_quantile(self, tail)
    }

    fn jump_shape(&self) -> f64 {
        match self.compound_poisson() {
            Some(cp) => cp.gamma_shape,
            None => 1.0 / self.phi,
        }
    }
}

/// Finite mixture of Tweedie laws.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    components: Vec<NaturalParams>,
    weights: Vec<f64>,
}

impl Mixture {
    /// Weights are rescaled to sum to one.
    pub fn new(components: Vec<NaturalParams>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(Error::domain("mixture needs matching nonempty components and weights"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::domain("mixture weights must be nonnegative with a positive sum"));
        }
        Ok(Mixture {
            components,
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn components(&self) -> &[NaturalParams] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Apply the same regime shift to every component.
    pub fn shifted(&self, shift: RegimeShift) -> Result<Self> {
        Ok(Mixture {
            components: self
                .components
                .iter()
                .map(|c| c.shift(shift))
                .collect::<Result<_>>()?,
            weights: self.weights.clone(),
        })
    }

    fn weighted(&self, f: impl Fn(&NaturalParams) -> Result<f64>) -> Result<f64> {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| Ok(w * f(c)?))
            .sum()
    }
}

impl Law for Mixture {
    fn zero_mass(&self) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.zero_mass())
            .sum()
    }

    fn density(&self, x: f64) -> Result<f64> {
        self.weighted(|c| c.density(x))
    }

    fn sf(&self, x: f64) -> Result<f64> {
        self.weighted(|c| c.sf(x))
    }

    fn upper_quantile(&self, tail: f64) -> Result<f64> {
        self.components
            .iter()
            .map(|c| c.upper_quantile(tail))
            .try_fold(0.0f64, |m, q| Ok(m.max(q?)))
    }

    fn jump_shape(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.jump_shape())
            .fold(f64::INFINITY, f64::min)
    }
}

/// `∫ f_C(x) h_j(x) dx` over the positive part of the control law, for
/// every output `h_j` at once.
///
/// The range `(0, Q]` with `Q` the `1 - TAIL` quantile is mapped to `t` in
/// `(0, 1]` by `x = Q t^k`, with `k` chosen so the integrand vanishes at
/// zero. Composite Simpson is refined until successive estimates agree.
pub fn integrate_positive<L, H>(control: &L, outputs: usize, h: H) -> Result<Vec<f64>>
where
    L: Law + ?Sized,
    H: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let q = control.upper_quantile(TAIL)?;
    if q <= 0.0 {
        return Ok(vec![0.0; outputs]);
    }
    let k = (2.0 / control.jump_shape()).ceil().max(1.0);
    let node = |t: f64| -> Result<Vec<f64>> {
        if t == 0.0 {
            return Ok(vec![0.0; outputs]);
        }
        let x = q * t.powf(k);
        let jac = k * q * t.powf(k - 1.0);
        let f = control.density(x)? * jac;
        if f == 0.0 {
            return Ok(vec![0.0; outputs]);
        }
        let mut v = h(x)?;
        v.iter_mut().for_each(|y| *y *= f);
        Ok(v)
    };

    let mut n = START_INTERVALS;
    let mut values: Vec<Vec<f64>> = (0..=n)
        .into_par_iter()
        .map(|i| node(i as f64 / n as f64))
        .collect::<Result<_>>()?;
    let mut estimate = simpson(&values, n, outputs);
    for _ in 0..MAX_REFINEMENTS {
        let mids: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| node((2 * i + 1) as f64 / (2 * n) as f64))
            .collect::<Result<_>>()?;
        let mut merged = Vec::with_capacity(2 * n + 1);
        for (old, mid) in values.into_iter().zip(mids.into_iter().map(Some).chain(std::iter::once(None))) {
            merged.push(old);
            if let Some(m) = mid {
                merged.push(m);
            }
        }
        values = merged;
        n *= 2;
        let next = simpson(&values, n, outputs);
        let diff = next
            .iter()
            .zip(&estimate)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        estimate = next;
        if diff <= AGREEMENT {
            return Ok(estimate);
        }
    }
    log::warn!("survival integral still moving after {MAX_REFINEMENTS} refinements");
    Ok(estimate)
}

fn simpson(values: &[Vec<f64>], n: usize, outputs: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let mut acc = vec![0.0; outputs];
    for (i, v) in values.iter().enumerate() {
        let c = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        for (a, y) in acc.iter_mut().zip(v) {
            *a += c * y;
        }
    }
    acc.iter_mut().for_each(|a| *a *= h / 3.0);
    acc
}

/// `P(T > d | C = 0)`.
pub fn surv_given_zero(test: &impl Law, d: f64) -> Result<f64> {
    test.sf(d)
}

/// `P(T > C + d | C > 0)`.
pub fn surv_given_positive(control: &impl Law, test: &impl Law, d: f64) -> Result<f64> {
    let v = integrate_positive(control, 1, |x| Ok(vec![test.sf(x + d)?]))?;
    Ok(v[0] / (1.0 - control.zero_mass()))
}

/// `P(T > C + d)`.
pub fn surv_unconditional(control: &impl Law, test: &impl Law, d: f64) -> Result<f64> {
    let p0 = control.zero_mass();
    Ok(p0 * surv_given_zero(test, d)? + (1.0 - p0) * surv_given_positive(control, test, d)?)
}

/// `P(T > r C | C > 0)`.
pub fn ratio_surv(control: &impl Law, test: &impl Law, r: f64) -> Result<f64> {
    let v = integrate_positive(control, 1, |x| Ok(vec![test.sf(r * x)?]))?;
    Ok(v[0] / (1.0 - control.zero_mass()))
}

/// Average of two survival values weighted by a membership probability.
pub fn posterior_mixture_surv(p_same: f64, surv_same: f64, surv_diff: f64) -> f64 {
    p_same * surv_same + (1.0 - p_same) * surv_diff
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricsMode {
    /// Plug in each row's posterior mean parameters.
    #[default]
    Plugin,
    /// Average over a prior-shaped mixture centred on the posterior mean.
    Predictive,
}

/// The three survival values for one row at each target threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRow {
    pub given_zero: Vec<f64>,
    pub given_positive: Vec<f64>,
    pub unconditional: Vec<f64>,
}

impl SurvivalRow {
    /// `0`: given zero, `1`: given positive, `2`: unconditional.
    pub fn kind(&self, kind: usize) -> &[f64] {
        match kind {
            0 => &self.given_zero,
            1 => &self.given_positive,
            _ => &self.unconditional,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalTable {
    pub targets: Vec<f64>,
    /// Control law against itself.
    pub same: Vec<SurvivalRow>,
    /// Control law against its shifted version.
    pub different: Vec<SurvivalRow>,
}

/// Survival rows for a control law paired with itself and with `shifted`.
pub fn survival_pair<L: Law>(control: &L, shifted: &L, targets: &[f64]) -> Result<(SurvivalRow, SurvivalRow)> {
    let t = targets.len();
    let integrals = integrate_positive(control, 2 * t, |x| {
        let mut v = Vec::with_capacity(2 * t);
        for law in [control, shifted] {
            for d in targets {
                v.push(law.sf(x + d)?);
            }
        }
        Ok(v)
    })?;
    let p0 = control.zero_mass();
    let row = |law: &L, part: &[f64]| -> Result<SurvivalRow> {
        let given_zero = targets.iter().map(|&d| law.sf(d)).collect::<Result<Vec<_>>>()?;
        let given_positive: Vec<f64> = part.iter().map(|v| v / (1.0 - p0)).collect();
        let unconditional = given_zero
            .iter()
            .zip(&given_positive)
            .map(|(a, b)| p0 * a + (1.0 - p0) * b)
            .collect();
        Ok(SurvivalRow {
            given_zero,
            given_positive,
            unconditional,
        })
    };
    Ok((row(control, &integrals[..t])?, row(shifted, &integrals[t..])?))
}

/// Survival table for every row of a screening direction.
pub fn build_survival_table(
    result: &DirectionResult,
    shift: RegimeShift,
    targets: &[f64],
    mode: MetricsMode,
) -> Result<SurvivalTable> {
    let offsets: Option<(Vec<[f64; 3]>, Vec<f64>)> = match mode {
        MetricsMode::Plugin => None,
        MetricsMode::Predictive => {
            let rule = tensor_rule(PREDICTIVE_GRIDPTS, 3)?
                .affine_map(&[0.0; 3], &result.fit.prior.cov)?;
            let pts = rule.points().map(|p| [p[0], p[1], p[2]]).collect();
            Some((pts, rule.weights().to_vec()))
        }
    };
    let pairs = result
        .control
        .par_iter()
        .enumerate()
        .map(|(i, post)| {
            let centre = post.mean.to_array();
            let pair = match &offsets {
                None => {
                    let c = post.mean.to_natural();
                    survival_pair(&c, &c.shift(shift)?, targets)
                }
                Some((pts, weights)) => {
                    let comps = pts
                        .iter()
                        .map(|p| {
                            TransformedParams::new(centre[0] + p[0], centre[1] + p[1], centre[2] + p[2])
                                .to_natural()
                        })
                        .collect();
                    let c = Mixture::new(comps, weights.clone())?;
                    let s = c.shifted(shift)?;
                    survival_pair(&c, &s, targets)
                }
            };
            pair.map_err(|e| e.in_row((i + 1).to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (same, different) = pairs.into_iter().unzip();
    Ok(SurvivalTable {
        targets: targets.to_vec(),
        same,
        different,
    })
}
