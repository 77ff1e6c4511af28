//! Synthetic control/test matrices with known change labels, and scoring
//! of screening output against those labels.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tweedie::{NaturalParams, RegimeShift, TransformedParams};

#[derive(Debug, Clone)]
pub struct SimSpec {
    pub n_rows: usize,
    pub m_control: usize,
    pub m_test: usize,
    /// Probability that a row is unchanged.
    pub pi0_true: f64,
    /// Population centre of the row parameters.
    pub base: NaturalParams,
    /// Covariance of the row parameters on the transformed scale.
    pub eta_spread: DMatrix<f64>,
    pub shift: RegimeShift,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.m_control == 0 || self.m_test == 0 {
            return Err(Error::domain("row and column counts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.pi0_true) {
            return Err(Error::domain(format!("pi0_true must lie in [0, 1], got {}", self.pi0_true)));
        }
        if self.eta_spread.shape() != (3, 3) {
            return Err(Error::domain("eta_spread must be 3x3"));
        }
        self.base.to_transformed().map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub control: Array2<f64>,
    pub test: Array2<f64>,
    /// `true` where the test row was drawn from shifted parameters.
    pub labels: Vec<bool>,
    pub row_params: Vec<NaturalParams>,
}

/// Draw a synthetic data set. Each row uses its own generator stream, so
/// rows do not depend on how the work is scheduled.
pub fn generate(spec: &SimSpec) -> Result<SimData> {
    spec.validate()?;
    let centre = DVector::from_row_slice(&spec.base.to_transformed()?.to_array());
    let chol = spec
        .eta_spread
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Decomposition("eta_spread is not positive definite".into()))?;
    let l = chol.l();

    let rows = (0..spec.n_rows)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let z = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let eta = &centre + &l * z;
            let p = TransformedParams::new(eta[0], eta[1], eta[2]).to_natural();
            let control = p.sample(spec.m_control, &mut rng);
            let changed = rng.gen::<f64>() < 1.0 - spec.pi0_true;
            let test_params = if changed { p.shift(spec.shift)? } else { p };
            let test = test_params.sample(spec.m_test, &mut rng);
            Ok((control, test, changed, p))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut control = Array2::zeros((spec.n_rows, spec.m_control));
    let mut test = Array2::zeros((spec.n_rows, spec.m_test));
    let mut labels = Vec::with_capacity(spec.n_rows);
    let mut row_params = Vec::with_capacity(spec.n_rows);
    for (i, (c, t, changed, p)) in rows.into_iter().enumerate() {
        control.row_mut(i).iter_mut().zip(c).for_each(|(d, v)| *d = v);
        test.row_mut(i).iter_mut().zip(t).for_each(|(d, v)| *d = v);
        labels.push(changed);
        row_params.push(p);
    }
    Ok(SimData {
        control,
        test,
        labels,
        row_params,
    })
}

/// Operating characteristics of a screen against known labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenScore {
    /// Chance a changed row has a lower unchanged-probability than an
    /// unchanged row; absent when either class is empty.
    pub auc: Option<f64>,
    /// Share of changed rows not flagged.
    pub mdr: Option<f64>,
    /// Share of flagged rows that are unchanged.
    pub fdr: Option<f64>,
    pub threshold: f64,
}

/// A row is flagged when its unchanged-probability is below `threshold`.
pub fn score(labels: &[bool], p_same: &[f64], threshold: f64) -> Result<ScreenScore> {
    if labels.len() != p_same.len() {
        return Err(Error::domain(format!(
            "{} labels but {} probabilities",
            labels.len(),
            p_same.len()
        )));
    }
    let n_diff = labels.iter().filter(|&&l| l).count();
    let n_same = labels.len() - n_diff;
    if n_diff == 0 || n_same == 0 {
        log::warn!("one label class is empty; AUC is undefined");
    }

    let auc = (n_diff > 0 && n_same > 0).then(|| {
        let ranks = midranks(p_same);
        let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| !l).map(|(r, _)| r).sum();
        let u = rank_sum - (n_same * (n_same + 1)) as f64 / 2.0;
        u / (n_same * n_diff) as f64
    });
    let missed = labels
        .iter()
        .zip(p_same)
        .filter(|(&l, &p)| l && p >= threshold)
        .count();
    let flagged: Vec<bool> = labels
        .iter()
        .zip(p_same)
        .filter(|(_, &p)| p < threshold)
        .map(|(&l, _)| l)
        .collect();
    let mdr = (n_diff > 0).then(|| missed as f64 / n_diff as f64);
    let fdr = (!flagged.is_empty())
        .then(|| flagged.iter().filter(|&&l| !l).count() as f64 / flagged.len() as f64);
    Ok(ScreenScore {
        auc,
        mdr,
        fdr,
        threshold,
    })
}

// One-based ranks with ties sharing their average rank.
fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}
