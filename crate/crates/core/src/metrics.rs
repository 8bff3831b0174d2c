//! Entropy, KL and cosine monitors, and the distance-to-ETF diagnostic.
//! All logarithms are natural.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::world::PMF_TOL;

/// Floor applied to the second argument of [`kl`] and cross-entropies.
pub const PROB_FLOOR: f64 = 1e-12;
/// EMA decay for streaming centering.
pub const EMA_DECAY: f64 = 0.9;

/// `N x C` batch of categorical distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalBatch {
    probs: DMatrix<f64>,
}

impl CategoricalBatch {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(invalid("categorical batch", "empty"));
        }
        for (i, row) in probs.row_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) || (row.sum() - 1.0).abs() > PMF_TOL {
                return Err(invalid("categorical batch", format!("row {i} is not a probability vector")));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn marginal(&self) -> Vec<f64> {
        let n = self.probs.nrows() as f64;
        self.probs.column_iter().map(|c| c.sum() / n).collect()
    }
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| xlogx(v)).sum::<f64>()
}

/// `H[M̂]`: entropy of the batch-average distribution.
pub fn marginal_entropy(b: &CategoricalBatch) -> f64 {
    entropy(&b.marginal())
}

/// `H[M̂|X]`: mean row entropy.
pub fn conditional_entropy(b: &CategoricalBatch) -> f64 {
    let rows = b.probs.nrows() as f64;
    b.probs
        .row_iter()
        .map(|r| entropy(r.transpose().as_slice()))
        .sum::<f64>()
        / rows
}

/// `Σ p log(p / max(q, 1e-12))`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "kl needs equal supports");
    p.iter()
        .zip(q)
        .map(|(&a, &b)| if a > 0.0 { a * (a.ln() - b.max(PROB_FLOOR).ln()) } else { 0.0 })
        .sum()
}

pub fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "cross-entropy needs equal supports");
    -p.iter()
        .zip(q)
        .map(|(&a, &b)| if a > 0.0 { a * b.max(PROB_FLOOR).ln() } else { 0.0 })
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropyParts {
    pub ce: f64,
    pub kl: f64,
    pub h: f64,
    pub residual: f64,
}

/// `CE(p, q) = KL(p‖q) + H(p)`, with the residual of that identity.
pub fn cross_entropy_decomposition_check(p: &[f64], q: &[f64]) -> CrossEntropyParts {
    let ce = cross_entropy(p, q);
    let kl = kl(p, q);
    let h = entropy(p);
    CrossEntropyParts {
        ce,
        kl,
        h,
        residual: ce - (kl + h),
    }
}

/// Exponential moving average of batch means.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMean {
    pub decay: f64,
    mean: Option<DVector<f64>>,
}

impl RunningMean {
    pub fn new(decay: f64) -> Self {
        Self { decay, mean: None }
    }

    pub fn update(&mut self, batch: &DMatrix<f64>) -> &DVector<f64> {
        let m = batch.row_mean().transpose();
        let next = match self.mean.take() {
            Some(prev) => prev * self.decay + m * (1.0 - self.decay),
            None => m,
        };
        self.mean.insert(next)
    }

    pub fn get(&self) -> Option<&DVector<f64>> {
        self.mean.as_ref()
    }
}

impl Default for RunningMean {
    fn default() -> Self {
        Self::new(EMA_DECAY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtfDistance {
    /// `1 - E[cos]` over distinct same-class pairs.
    pub pos: f64,
    /// `E[cos]` over different-class pairs.
    pub neg: f64,
    pub total: f64,
    /// True when no class has two members, so `pos` is the vacuous 0.
    pub singleton_positives: bool,
    pub num_classes: usize,
}

impl EtfDistance {
    /// `total + 1/(C-1)`: zero exactly on collapsed simplex ETFs.
    pub fn gap(&self) -> f64 {
        self.total + 1.0 / (self.num_classes as f64 - 1.0)
    }
}

fn unit_rows(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    let scale = m.amax().max(1.0);
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if n <= 1e-12 * scale {
            return Err(Error::DegenerateClass(format!("row {i} vanishes and cannot be normalized")));
        }
        row /= n;
    }
    Ok(out)
}

fn class_count(class_of: &[usize]) -> Result<usize> {
    let c = class_of.iter().max().map_or(0, |&m| m + 1);
    let mut present = vec![false; c];
    class_of.iter().for_each(|&m| present[m] = true);
    if let Some(empty) = present.iter().position(|p| !p) {
        return Err(Error::DegenerateClass(format!("class {empty} has no rows")));
    }
    Ok(c)
}

/// Mean cosine over same-class and different-class ordered pairs `i != j`.
fn pair_means(unit: &DMatrix<f64>, class_of: &[usize]) -> (Option<f64>, Option<f64>) {
    let gram = unit * unit.transpose();
    let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..unit.nrows() {
        for j in 0..unit.nrows() {
            if i == j {
                continue;
            }
            if class_of[i] == class_of[j] {
                sp += gram[(i, j)];
                np += 1;
            } else {
                sn += gram[(i, j)];
                nn += 1;
            }
        }
    }
    ((np > 0).then(|| sp / np as f64), (nn > 0).then(|| sn / nn as f64))
}

/// Distance-to-ETF: centers rows (by `running_mean` when given, else the
/// batch mean), unit-normalizes them, then reports `pos`, `neg` and their
/// sum. The ideal is `pos = 0`, `neg = -1/(C-1)`.
pub fn etf_distance(reps: &DMatrix<f64>, class_of: &[usize], running_mean: Option<&DVector<f64>>) -> Result<EtfDistance> {
    if class_of.len() != reps.nrows() {
        return Err(Error::SizeMismatch("one class id per row".into()));
    }
    let c = class_count(class_of)?;
    if c < 2 {
        return Err(Error::DegenerateClass("need at least two classes".into()));
    }
    let center = running_mean.cloned().unwrap_or_else(|| reps.row_mean().transpose());
    let mut centered = reps.clone();
    for mut row in centered.row_iter_mut() {
        row -= center.transpose();
    }
    let unit = unit_rows(&centered)?;
    let (pos_cos, neg_cos) = pair_means(&unit, class_of);
    let pos = pos_cos.map_or(0.0, |v| 1.0 - v);
    let neg = neg_cos.expect("two classes give a negative pair");
    Ok(EtfDistance {
        pos,
        neg,
        total: pos + neg,
        singleton_positives: pos_cos.is_none(),
        num_classes: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineMonitors {
    pub cos_pos: Option<f64>,
    pub cos_neg: Option<f64>,
}

/// Uncentered mean cosine of equivalent and non-equivalent pairs.
pub fn cosine_monitors(reps: &DMatrix<f64>, class_of: &[usize]) -> Result<CosineMonitors> {
    if class_of.len() != reps.nrows() {
        return Err(Error::SizeMismatch("one class id per row".into()));
    }
    let unit = unit_rows(reps)?;
    let (cos_pos, cos_neg) = pair_means(&unit, class_of);
    Ok(CosineMonitors { cos_pos, cos_neg })
}

/// Largest label count for brute-force permutation matching.
pub const MAX_PERMUTATION_CLASSES: usize = 10;

/// Fraction of inputs where `pred` equals `truth` after the best relabeling
/// of predicted ids (a bijection over `0..c`), found by brute force.
pub fn permutation_accuracy(pred: &[usize], truth: &[usize], c: usize) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::SizeMismatch("prediction and truth need equal nonzero length".into()));
    }
    if c > MAX_PERMUTATION_CLASSES {
        return Err(Error::Capacity(format!("{c}! permutations exceed the guard")));
    }
    if let Some(&v) = pred.iter().chain(truth).find(|&&v| v >= c) {
        return Err(invalid("labels", format!("{v} outside 0..{c}")));
    }
    let mut counts = vec![vec![0usize; c]; c];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    fn search(counts: &[Vec<usize>], row: usize, used: &mut [bool], acc: usize, best: &mut usize) {
        if row == counts.len() {
            *best = (*best).max(acc);
            return;
        }
        for t in 0..counts.len() {
            if !used[t] {
                used[t] = true;
                search(counts, row + 1, used, acc + counts[row][t], best);
                used[t] = false;
            }
        }
    }
    let mut best = 0;
    search(&counts, 0, &mut vec![false; c], 0, &mut best);
    Ok(best as f64 / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::setf;
    use crate::nn::random_unit_rows;
    use crate::rng::rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn entropies() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.5, 0.5, 0.0, 0.0]) - LN2).abs() < 1e-15);

        let distinct = CategoricalBatch::new(DMatrix::identity(3, 3)).unwrap();
        assert!((marginal_entropy(&distinct) - 3f64.ln()).abs() < 1e-15);
        assert_eq!(conditional_entropy(&distinct), 0.0);
        let same = CategoricalBatch::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(marginal_entropy(&same), 0.0);
        let flat = CategoricalBatch::new(DMatrix::from_element(3, 5, 0.2)).unwrap();
        assert!((conditional_entropy(&flat) - 5f64.ln()).abs() < 1e-14);
        assert!(CategoricalBatch::new(DMatrix::from_element(1, 2, 0.6)).is_err());
    }

    #[test]
    fn divergences() {
        let p = [0.1, 0.2, 0.7];
        assert_eq!(kl(&p, &p), 0.0);
        assert!((kl(&[1.0, 0.0, 0.0, 0.0], &[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        let parts = cross_entropy_decomposition_check(&p, &p);
        assert!((parts.ce - parts.h).abs() < 1e-15 && parts.kl == 0.0);
        assert_eq!(cross_entropy(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn etf_on_frames() {
        let v = setf(3, 2).unwrap().vertices().clone();
        let d = etf_distance(&v, &[0, 1, 2], None).unwrap();
        assert!(d.singleton_positives && d.pos == 0.0);
        assert!((d.neg + 0.5).abs() < 1e-12);

        let c = 5;
        let v = setf(c, 6).unwrap().vertices().clone();
        let twice = DMatrix::from_fn(2 * c, 6, |i, j| v[(i % c, j)]);
        let ids: Vec<usize> = (0..2 * c).map(|i| i % c).collect();
        let d = etf_distance(&twice, &ids, None).unwrap();
        assert!(!d.singleton_positives && d.pos.abs() < 1e-12);
        assert!((d.neg + 0.25).abs() < 1e-12 && d.gap().abs() < 1e-12);

        let m = cosine_monitors(&twice, &ids).unwrap();
        assert!((m.cos_pos.unwrap() - 1.0).abs() < 1e-12 && (m.cos_neg.unwrap() + 0.25).abs() < 1e-12);
    }

    #[test]
    fn etf_degenerate() {
        let same = DMatrix::from_element(4, 3, 0.5);
        assert!(matches!(etf_distance(&same, &[0, 0, 1, 1], None), Err(Error::DegenerateClass(_))));
        assert!(matches!(
            etf_distance(&DMatrix::identity(3, 3), &[0, 2, 2], None),
            Err(Error::DegenerateClass(_))
        ));
        let single = cosine_monitors(&DMatrix::identity(2, 2), &[0, 0]).unwrap();
        assert!(single.cos_neg.is_none());
    }

    #[test]
    fn random_directions_are_nearly_orthogonal() {
        let x = random_unit_rows(200, 400, &mut rng(1));
        let ids: Vec<usize> = (0..200).collect();
        assert!(cosine_monitors(&x, &ids).unwrap().cos_neg.unwrap().abs() < 0.01);
    }

    #[test]
    fn permutation_matching() {
        assert_eq!(permutation_accuracy(&[2, 2, 0, 1], &[0, 0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(permutation_accuracy(&[0, 0, 0, 0], &[0, 1, 2, 2], 3).unwrap(), 0.5);
        assert!(permutation_accuracy(&[3], &[0], 3).is_err());
    }

    #[test]
    fn running_mean_ema() {
        let mut rm = RunningMean::default();
        rm.update(&DMatrix::from_row_slice(1, 1, &[1.0]));
        let m = rm.update(&DMatrix::from_row_slice(1, 1, &[0.0]))[0];
        assert!((m - 0.9).abs() < 1e-15);
    }
}
