//! Worst-case ERM risk: per-dataset closed form, brute-force oracle, exact
//! expectation over datasets, Monte Carlo estimates and coupon-collector
//! sample counts.
//!
//! Datasets carry the most likely label of each drawn input. For an
//! invariant encoder that shatters the classes, the ERMs on a dataset are
//! exactly the class labelings that agree with the Bayes label on every seen
//! class, so the worst ERM picks the least likely label on unseen classes.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{is_invariant, Encoder, RANK_TOL};
use crate::error::{invalid, Error, Result};
use crate::probes::shatterable_rank;
use crate::rng::sub_rng;
use crate::tasks::{class_label_map, most_likely_label, InvariantLabeling, Task};
use crate::world::{check_pmf, class_probabilities, EquivalenceRelation};

/// Largest number of completions [`brute_force_worst_erm`] enumerates.
pub const MAX_COMPLETIONS: u64 = 1 << 20;
/// Largest number of classes for inclusion–exclusion.
pub const MAX_COUPON_CLASSES: usize = 20;

/// `(input, most likely label)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    items: Vec<(usize, usize)>,
}

impl Dataset {
    /// Labels every input with its Bayes label under `t`.
    pub fn from_inputs(t: &Task, inputs: &[usize]) -> Result<Self> {
        let labels = most_likely_label(t)?;
        if let Some(&x) = inputs.iter().find(|&&x| x >= t.size()) {
            return Err(invalid("dataset", format!("input {x} outside 0..{}", t.size())));
        }
        Ok(Self {
            items: inputs.iter().map(|&x| (x, labels[x])).collect(),
        })
    }

    pub fn items(&self) -> &[(usize, usize)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `seen[c]` is true when some input of class `c` is in the dataset.
    pub fn seen_classes(&self, eq: &EquivalenceRelation) -> Vec<bool> {
        let mut seen = vec![false; eq.num_classes()];
        for &(x, _) in &self.items {
            seen[eq.class(x)] = true;
        }
        seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl McEstimate {
    /// Mean and standard error (sample std with `n - 1`) of `values`, summed
    /// in index order.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, trials: n }
    }

    /// `|mean - target| <= k * stderr`, with an absolute floor of 1e-12 for
    /// zero-variance estimates.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= (k * self.stderr).max(1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub closed_form: f64,
    pub mc_estimate: Option<McEstimate>,
    pub witness_erm: Option<InvariantLabeling>,
}

/// Per-class quantities the risk formulas need.
#[derive(Debug, Clone)]
struct ClassTable {
    prob: Vec<f64>,
    /// `max_y - min_y` of the class conditional.
    gap: Vec<f64>,
}

impl ClassTable {
    fn new(t: &Task, eq: &EquivalenceRelation) -> Result<Self> {
        require_invariant(t, eq)?;
        let cond = t.class_conditionals(eq)?;
        let gap = cond.row_iter().map(|r| r.max() - r.min()).collect();
        Ok(Self {
            prob: class_probabilities(t.px(), eq)?,
            gap,
        })
    }

    fn excess(&self, seen: &[bool]) -> f64 {
        (0..self.prob.len())
            .filter(|&c| !seen[c])
            .map(|c| self.prob[c] * self.gap[c])
            .sum()
    }
}

fn require_invariant(t: &Task, eq: &EquivalenceRelation) -> Result<Vec<usize>> {
    class_label_map(t, eq)?.ok_or_else(|| Error::Precondition("task is not invariant under the relation".into()))
}

/// `n` iid draws from the task's input distribution, each with its Bayes
/// label.
pub fn sample_dataset(t: &Task, n: usize, seed: u64) -> Result<Dataset> {
    let labels = most_likely_label(t)?;
    if n == 0 {
        return Ok(Dataset { items: Vec::new() });
    }
    let dist = WeightedIndex::new(t.px().pmf()).map_err(|e| invalid("input distribution", e.to_string()))?;
    let mut r = sub_rng(seed, 0);
    let items = (0..n)
        .map(|_| {
            let x = dist.sample(&mut r);
            (x, labels[x])
        })
        .collect();
    Ok(Dataset { items })
}

/// The ERM that predicts the Bayes label on seen classes and the least
/// likely label (lowest index on ties) on unseen ones.
pub fn construct_bad_erm(t: &Task, eq: &EquivalenceRelation, ds: &Dataset) -> Result<InvariantLabeling> {
    let bayes = require_invariant(t, eq)?;
    let cond = t.class_conditionals(eq)?;
    let seen = ds.seen_classes(eq);
    let labels = (0..eq.num_classes())
        .map(|c| {
            if seen[c] {
                bayes[c]
            } else {
                let row = cond.row(c);
                let min = row.min();
                row.iter().position(|&v| v == min).expect("nonempty row")
            }
        })
        .collect();
    InvariantLabeling::new(labels, t.num_labels())
}

/// `Σ_{unseen classes} p([x]) (max_y p(y|[x]) - min_y p(y|[x]))`.
pub fn excess_risk_closed_form(t: &Task, eq: &EquivalenceRelation, ds: &Dataset) -> Result<f64> {
    Ok(ClassTable::new(t, eq)?.excess(&ds.seen_classes(eq)))
}

/// Population excess 0-1 risk of a class labeling on an invariant task,
/// `Σ_[x] p([x]) (max_y p(y|[x]) - p(l([x]) | [x]))`, summed in class order
/// like [`excess_risk_closed_form`].
pub fn population_excess_risk(t: &Task, eq: &EquivalenceRelation, l: &InvariantLabeling) -> Result<f64> {
    require_invariant(t, eq)?;
    if l.num_classes() != eq.num_classes() {
        return Err(Error::SizeMismatch(format!(
            "labeling has {} classes, relation has {}",
            l.num_classes(),
            eq.num_classes()
        )));
    }
    let cond = t.class_conditionals(eq)?;
    let prob = class_probabilities(t.px(), eq)?;
    Ok((0..eq.num_classes())
        .map(|c| {
            let row = cond.row(c);
            prob[c] * (row.max() - row[l.label_of_class[c]])
        })
        .sum())
}

/// Worst population excess risk over all ERMs, by enumerating every
/// completion of the Bayes labeling on unseen classes.
///
/// The encoder must be invariant and shatter the classes with affine
/// probes; otherwise the ERM set is not the set of completions.
pub fn brute_force_worst_erm(e: &Encoder, t: &Task, eq: &EquivalenceRelation, ds: &Dataset) -> Result<RiskReport> {
    if !is_invariant(e, eq, RANK_TOL)? {
        return Err(Error::NotSampleOptimalEncoder("encoder is not invariant".into()));
    }
    let shattered = match shatterable_rank(&e.class_points(eq), RANK_TOL) {
        Ok(b) => b,
        Err(Error::DuplicatePoint(..)) => false,
        Err(other) => return Err(other),
    };
    if !shattered {
        return Err(Error::NotSampleOptimalEncoder(
            "class representations are not shattered by affine probes".into(),
        ));
    }
    let bayes = require_invariant(t, eq)?;
    let seen = ds.seen_classes(eq);
    let unseen: Vec<usize> = (0..eq.num_classes()).filter(|&c| !seen[c]).collect();
    let k = t.num_labels() as u64;
    let total = k
        .checked_pow(unseen.len() as u32)
        .filter(|&n| n <= MAX_COMPLETIONS)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "{k}^{} completions exceed the guard of {MAX_COMPLETIONS}",
                unseen.len()
            ))
        })?;
    let mut labels = bayes.clone();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for code in 0..total {
        let mut rest = code;
        for &c in unseen.iter().rev() {
            labels[c] = (rest % k) as usize;
            rest /= k;
        }
        let l = InvariantLabeling::new(labels.clone(), t.num_labels())?;
        let r = population_excess_risk(t, eq, &l)?;
        if best.as_ref().is_none_or(|(b, _)| r > *b) {
            best = Some((r, labels.clone()));
        }
    }
    let (risk, witness) = best.expect("at least one completion");
    Ok(RiskReport {
        closed_form: risk,
        mc_estimate: None,
        witness_erm: Some(InvariantLabeling::new(witness, t.num_labels())?),
    })
}

/// `Σ_[x] p([x]) Δ([x]) (1 - p([x]))^n`: the closed form averaged over
/// datasets of size `n`.
pub fn expected_excess_risk_exact(t: &Task, eq: &EquivalenceRelation, n: usize) -> Result<f64> {
    let table = ClassTable::new(t, eq)?;
    let n = i32::try_from(n).map_err(|_| invalid("sample size", "too large"))?;
    Ok(table
        .prob
        .iter()
        .zip(&table.gap)
        .map(|(&p, &g)| p * g * (1.0 - p).powi(n))
        .sum())
}

/// `(1 - 1/C)^n`.
pub fn worst_case_rate(c: usize, n: usize) -> Result<f64> {
    if c < 2 {
        return Err(invalid("class count", format!("C = {c} < 2")));
    }
    let n = i32::try_from(n).map_err(|_| invalid("sample size", "too large"))?;
    Ok((1.0 - 1.0 / c as f64).powi(n))
}

/// Average closed-form excess risk over `trials` sampled datasets. Trial `i`
/// draws with `sub_rng(seed, i)`; the reduction runs in trial order, so the
/// result does not depend on the thread count.
pub fn mc_expected_excess_risk(t: &Task, eq: &EquivalenceRelation, n: usize, trials: usize, seed: u64) -> Result<McEstimate> {
    if trials == 0 {
        return Err(invalid("trials", "need at least one trial"));
    }
    let table = ClassTable::new(t, eq)?;
    let dist = WeightedIndex::new(t.px().pmf()).map_err(|e| invalid("input distribution", e.to_string()))?;
    let class_of = eq.class_of();
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map_init(
            || vec![false; eq.num_classes()],
            |seen, i| {
                seen.iter_mut().for_each(|s| *s = false);
                let mut r = sub_rng(seed, i as u64);
                for _ in 0..n {
                    seen[class_of[dist.sample(&mut r)]] = true;
                }
                table.excess(seen)
            },
        )
        .collect();
    Ok(McEstimate::from_values(&values))
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn check_class_probs(probs: &[f64]) -> Result<()> {
    if probs.len() < 2 {
        return Err(invalid("class probabilities", format!("C = {} < 2", probs.len())));
    }
    check_pmf("class probabilities", probs)?;
    if probs.iter().any(|&p| p <= 0.0) {
        return Err(invalid("class probabilities", "every class needs positive mass"));
    }
    Ok(())
}

/// Exact expected number of iid draws until every class has appeared:
/// `Σ_{∅≠S} (-1)^{|S|+1} / p(S)`, summed in subset-rank order.
pub fn coupon_expected_samples(probs: &[f64]) -> Result<f64> {
    check_class_probs(probs)?;
    let c = probs.len();
    if c > MAX_COUPON_CLASSES {
        return Err(Error::Capacity(format!(
            "2^{c} subsets exceed the inclusion-exclusion guard (C <= {MAX_COUPON_CLASSES})"
        )));
    }
    let mut mass = vec![0.0f64; 1 << c];
    let mut acc = Neumaier::default();
    for s in 1usize..1 << c {
        let low = s.trailing_zeros() as usize;
        mass[s] = mass[s & (s - 1)] + probs[low];
        let sign = if s.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        acc.add(sign / mass[s]);
    }
    Ok(acc.value())
}

/// `Σ_i 1 / (i p_(i))` with probabilities sorted ascending; equals `C H_C`
/// for equiprobable classes.
pub fn coupon_weighted_asymptotic(probs: &[f64]) -> Result<f64> {
    check_class_probs(probs)?;
    let mut p = probs.to_vec();
    p.sort_by(f64::total_cmp);
    Ok(p.iter().enumerate().map(|(i, &pi)| 1.0 / ((i + 1) as f64 * pi)).sum())
}

/// Monte Carlo waiting time until all classes are seen.
pub fn mc_coupon_samples(probs: &[f64], trials: usize, seed: u64) -> Result<McEstimate> {
    check_class_probs(probs)?;
    if trials == 0 {
        return Err(invalid("trials", "need at least one trial"));
    }
    let dist = WeightedIndex::new(probs).map_err(|e| invalid("class probabilities", e.to_string()))?;
    let c = probs.len();
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map_init(
            || vec![false; c],
            |seen, i| {
                seen.iter_mut().for_each(|s| *s = false);
                let mut r = sub_rng(seed, i as u64);
                let (mut missing, mut draws) = (c, 0u64);
                while missing > 0 {
                    let j = dist.sample(&mut r);
                    draws += 1;
                    if !seen[j] {
                        seen[j] = true;
                        missing -= 1;
                    }
                }
                draws as f64
            },
        )
        .collect();
    Ok(McEstimate::from_values(&values))
}

/// `k`-th harmonic number.
pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

/// Uniform deterministic task with `C` equiprobable classes of
/// `per_class` inputs; class `c` is labeled `c mod k`.
pub fn equiprobable_task(c: usize, per_class: usize, k: usize) -> Result<(Task, EquivalenceRelation)> {
    let eq = EquivalenceRelation::blocks(c, per_class)?;
    let labels: Vec<usize> = eq.class_of().iter().map(|&m| m % k).collect();
    let t = Task::deterministic(crate::world::InputDistribution::uniform(eq.size()), &labels, k)?;
    Ok((t, eq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use crate::encoders::one_hot_encoder;
    use crate::world::{maximal_invariant, InputDistribution};

    fn uniform_identity(c: usize) -> (Task, EquivalenceRelation) {
        equiprobable_task(c, 1, c).unwrap()
    }

    #[test]
    fn sampling() {
        let (t, _) = uniform_identity(4);
        assert!(sample_dataset(&t, 0, 3).unwrap().is_empty());
        assert_eq!(sample_dataset(&t, 20, 3).unwrap(), sample_dataset(&t, 20, 3).unwrap());
        let point = Task::deterministic(InputDistribution::new(vec![0.0, 1.0, 0.0]).unwrap(), &[0, 1, 0], 2).unwrap();
        let ds = sample_dataset(&point, 5, 9).unwrap();
        assert!(ds.items().iter().all(|&(x, y)| x == 1 && y == 1));
    }

    #[test]
    fn bad_erm_rules() {
        let (t, eq) = equiprobable_task(4, 2, 2).unwrap();
        let all = Dataset::from_inputs(&t, &[0, 2, 4, 6]).unwrap();
        assert_eq!(construct_bad_erm(&t, &eq, &all).unwrap().label_of_class, vec![0, 1, 0, 1]);
        let some = Dataset::from_inputs(&t, &[0, 2, 4]).unwrap();
        assert_eq!(construct_bad_erm(&t, &eq, &some).unwrap().label_of_class, vec![0, 1, 0, 0]);

        let eq = EquivalenceRelation::identity(2).unwrap();
        let t = Task::new(
            InputDistribution::uniform(2),
            DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.2, 0.8]),
        )
        .unwrap();
        let ds = Dataset::from_inputs(&t, &[1]).unwrap();
        assert_eq!(construct_bad_erm(&t, &eq, &ds).unwrap().label_of_class, vec![1, 1]);
    }

    #[test]
    fn closed_form_examples() {
        let (t, eq) = uniform_identity(4);
        let ds = Dataset::from_inputs(&t, &[0, 1, 2]).unwrap();
        assert_eq!(excess_risk_closed_form(&t, &eq, &ds).unwrap(), 0.25);
        let all = Dataset::from_inputs(&t, &[3, 2, 1, 0]).unwrap();
        assert_eq!(excess_risk_closed_form(&t, &eq, &all).unwrap(), 0.0);

        let eq = EquivalenceRelation::identity(3).unwrap();
        let t = Task::deterministic(InputDistribution::new(vec![0.5, 0.3, 0.2]).unwrap(), &[0, 1, 0], 2).unwrap();
        let ds = Dataset::from_inputs(&t, &[0]).unwrap();
        assert!((excess_risk_closed_form(&t, &eq, &ds).unwrap() - 0.5).abs() < 1e-15);
        // Hand sum: 0.5 * 0.5^2 + 0.3 * 0.7^2 + 0.2 * 0.8^2.
        assert!((expected_excess_risk_exact(&t, &eq, 2).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn exact_law() {
        let (t, eq) = uniform_identity(4);
        assert_eq!(expected_excess_risk_exact(&t, &eq, 0).unwrap(), 1.0);
        assert!((expected_excess_risk_exact(&t, &eq, 3).unwrap() - 0.421875).abs() < 1e-15);
        assert_eq!(worst_case_rate(4, 1).unwrap(), 0.75);
        assert_eq!(worst_case_rate(2, 3).unwrap(), 0.125);
        assert_eq!(worst_case_rate(7, 0).unwrap(), 1.0);
        assert!(worst_case_rate(1, 2).is_err());
    }

    #[test]
    fn brute_force_matches_closed_form() {
        let (t, eq) = equiprobable_task(4, 2, 2).unwrap();
        let e = one_hot_encoder(&maximal_invariant(&eq));
        for inputs in [vec![], vec![0], vec![1, 3], vec![7, 7, 2]] {
            let ds = Dataset::from_inputs(&t, &inputs).unwrap();
            let r = brute_force_worst_erm(&e, &t, &eq, &ds).unwrap();
            assert_eq!(r.closed_form, excess_risk_closed_form(&t, &eq, &ds).unwrap());
            let w = r.witness_erm.unwrap();
            assert_eq!(population_excess_risk(&t, &eq, &w).unwrap(), r.closed_form);
        }
        let not_invariant = Encoder::new(DMatrix::identity(8, 8)).unwrap();
        let ds = Dataset::from_inputs(&t, &[0]).unwrap();
        assert!(matches!(
            brute_force_worst_erm(&not_invariant, &t, &eq, &ds),
            Err(Error::NotSampleOptimalEncoder(_))
        ));
    }

    #[test]
    fn mc_is_reproducible_and_exact_at_zero() {
        let (t, eq) = uniform_identity(4);
        let a = mc_expected_excess_risk(&t, &eq, 3, 2000, 5).unwrap();
        assert_eq!(a, mc_expected_excess_risk(&t, &eq, 3, 2000, 5).unwrap());
        assert!(a.agrees_with(0.421875, 4.0));
        let z = mc_expected_excess_risk(&t, &eq, 0, 100, 5).unwrap();
        assert_eq!((z.mean, z.stderr), (1.0, 0.0));
    }

    #[test]
    fn coupon() {
        assert!((coupon_expected_samples(&[0.5, 0.5]).unwrap() - 3.0).abs() < 1e-15);
        let p = vec![0.1; 10];
        assert!((coupon_expected_samples(&p).unwrap() - 10.0 * harmonic(10)).abs() < 1e-9);
        assert!((coupon_weighted_asymptotic(&p).unwrap() - 10.0 * harmonic(10)).abs() < 1e-12);
        assert!(coupon_expected_samples(&[1.0]).is_err());
        assert!(matches!(coupon_expected_samples(&[1.0 / 21.0; 21]), Err(Error::Capacity(_))));
        // Two classes with p, 1-p: 1/p + 1/(1-p) - 1.
        let v = coupon_expected_samples(&[0.2, 0.8]).unwrap();
        assert!((v - (5.0 + 1.25 - 1.0)).abs() < 1e-14);
    }
}
