//! Downstream tasks, invariant labelings and Bayes quantities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::world::{check_pmf, class_probabilities, EquivalenceRelation, InputDistribution};

/// Two probabilities closer than this are a tie for the Bayes label.
pub const TIE_TOL: f64 = 1e-12;

/// Largest `C` for which binary labelings are enumerated.
pub const MAX_ENUM_CLASSES: usize = 24;

/// Input distribution plus label conditional `p_t(y | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    px: InputDistribution,
    cond: DMatrix<f64>,
}

impl Task {
    pub fn new(px: InputDistribution, cond: DMatrix<f64>) -> Result<Self> {
        if cond.nrows() != px.size() {
            return Err(Error::SizeMismatch(format!(
                "task has {} conditional rows for {} inputs",
                cond.nrows(),
                px.size()
            )));
        }
        if cond.ncols() < 2 {
            return Err(invalid("task", format!("k = {} labels; need at least 2", cond.ncols())));
        }
        for r in 0..cond.nrows() {
            let row: Vec<f64> = cond.row(r).iter().copied().collect();
            check_pmf("task conditional", &row).map_err(|e| invalid("task", format!("row {r}: {e}")))?;
        }
        Ok(Self { px, cond })
    }

    /// Deterministic task with the given per-input labels.
    pub fn deterministic(px: InputDistribution, labels: &[usize], k: usize) -> Result<Self> {
        if labels.len() != px.size() {
            return Err(Error::SizeMismatch(format!(
                "{} labels for {} inputs",
                labels.len(),
                px.size()
            )));
        }
        let mut cond = DMatrix::zeros(labels.len(), k);
        for (x, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(invalid("task", format!("label {y} outside 0..{k}")));
            }
            cond[(x, y)] = 1.0;
        }
        Self::new(px, cond)
    }

    pub fn px(&self) -> &InputDistribution {
        &self.px
    }

    pub fn cond(&self) -> &DMatrix<f64> {
        &self.cond
    }

    pub fn num_labels(&self) -> usize {
        self.cond.ncols()
    }

    pub fn size(&self) -> usize {
        self.px.size()
    }

    /// `p_t(y | [x])`: the px-weighted average of the rows in each class.
    /// Classes of zero mass get the plain average of their rows.
    pub fn class_conditionals(&self, eq: &EquivalenceRelation) -> Result<DMatrix<f64>> {
        check_sizes(self, eq)?;
        let k = self.num_labels();
        let mut acc = DMatrix::zeros(eq.num_classes(), k);
        let mut mass = vec![0.0; eq.num_classes()];
        for x in 0..self.size() {
            let c = eq.class(x);
            let w = self.px.pmf()[x];
            mass[c] += w;
            for y in 0..k {
                acc[(c, y)] += w * self.cond[(x, y)];
            }
        }
        let members = eq.members();
        for c in 0..eq.num_classes() {
            if mass[c] > 0.0 {
                for y in 0..k {
                    acc[(c, y)] /= mass[c];
                }
            } else {
                let n = members[c].len() as f64;
                for y in 0..k {
                    acc[(c, y)] = members[c].iter().map(|&x| self.cond[(x, y)]).sum::<f64>() / n;
                }
            }
        }
        Ok(acc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TaskFile = serde_json::from_str(text)?;
        let n = f.cond.len();
        let k = f.cond.first().map_or(0, Vec::len);
        if f.cond.iter().any(|r| r.len() != k) {
            return Err(Error::SizeMismatch("ragged task conditional".into()));
        }
        let flat: Vec<f64> = f.cond.into_iter().flatten().collect();
        Self::new(InputDistribution::new(f.px)?, DMatrix::from_row_slice(n, k, &flat))
    }

    pub fn to_json(&self) -> String {
        let cond = (0..self.cond.nrows())
            .map(|r| self.cond.row(r).iter().copied().collect())
            .collect();
        serde_json::to_string(&TaskFile {
            px: self.px.pmf().to_vec(),
            cond,
        })
        .expect("task serializes")
    }
}

/// On-disk task: `{"px": [...], "cond": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub px: Vec<f64>,
    pub cond: Vec<Vec<f64>>,
}

fn check_sizes(t: &Task, eq: &EquivalenceRelation) -> Result<()> {
    if t.size() != eq.size() {
        return Err(Error::SizeMismatch(format!(
            "task has {} inputs, relation has {}",
            t.size(),
            eq.size()
        )));
    }
    Ok(())
}

/// A class-constant labeling with `k` labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InvariantLabeling {
    pub label_of_class: Vec<usize>,
    pub k: usize,
}

impl InvariantLabeling {
    pub fn new(label_of_class: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(invalid("labeling", format!("k = {k} < 2")));
        }
        if let Some(v) = label_of_class.iter().find(|&&v| v >= k) {
            return Err(invalid("labeling", format!("label {v} outside 0..{k}")));
        }
        Ok(Self { label_of_class, k })
    }

    pub fn num_classes(&self) -> usize {
        self.label_of_class.len()
    }

    /// Per-input labels under `eq`.
    pub fn per_input(&self, eq: &EquivalenceRelation) -> Vec<usize> {
        eq.class_of().iter().map(|&c| self.label_of_class[c]).collect()
    }
}

/// Unique argmax of a row, or `None` when the top two are within [`TIE_TOL`].
pub(crate) fn unique_argmax<'a>(row: impl IntoIterator<Item = &'a f64>) -> Option<usize> {
    let mut best = None::<(usize, f64)>;
    let mut second = f64::NEG_INFINITY;
    for (i, &v) in row.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => second = second.max(v),
            Some((_, b)) => {
                second = b;
                best = Some((i, v));
            }
            None => best = Some((i, v)),
        }
    }
    let (i, b) = best?;
    (b - second > TIE_TOL).then_some(i)
}

/// Per-input Bayes label `c_t(x)`.
pub fn most_likely_label(t: &Task) -> Result<Vec<usize>> {
    (0..t.size())
        .map(|x| unique_argmax(t.cond.row(x).iter()).ok_or(Error::Tie { input: x }))
        .collect()
}

pub fn is_invariant_task(t: &Task, eq: &EquivalenceRelation) -> Result<bool> {
    check_sizes(t, eq)?;
    Ok(class_label_map(t, eq)?.is_some())
}

/// The map `c` with `most_likely_label(x) = c(class(x))`, when it exists.
pub fn class_label_map(t: &Task, eq: &EquivalenceRelation) -> Result<Option<Vec<usize>>> {
    check_sizes(t, eq)?;
    let labels = most_likely_label(t)?;
    let mut map = vec![usize::MAX; eq.num_classes()];
    for (x, &y) in labels.iter().enumerate() {
        let c = eq.class(x);
        if map[c] == usize::MAX {
            map[c] = y;
        } else if map[c] != y {
            return Ok(None);
        }
    }
    Ok(Some(map))
}

/// Materializes a labeling as a deterministic task.
pub fn task_from_labeling(l: &InvariantLabeling, eq: &EquivalenceRelation, px: &InputDistribution) -> Result<Task> {
    if l.num_classes() != eq.num_classes() {
        return Err(Error::SizeMismatch(format!(
            "labeling covers {} classes, relation has {}",
            l.num_classes(),
            eq.num_classes()
        )));
    }
    Task::deterministic(px.clone(), &l.per_input(eq), l.k)
}

/// All `2^C` binary labelings in lexicographic order (class 0 is the most
/// significant digit).
pub fn enumerate_binary_labelings(c: usize) -> Result<impl Iterator<Item = InvariantLabeling> + Clone> {
    if c < 2 {
        return Err(invalid("labeling enumeration", format!("C = {c} < 2")));
    }
    if c > MAX_ENUM_CLASSES {
        return Err(Error::Capacity(format!(
            "2^{c} labelings exceed the enumeration guard (C <= {MAX_ENUM_CLASSES})"
        )));
    }
    Ok((0u64..1 << c).map(move |code| InvariantLabeling {
        label_of_class: (0..c).map(|i| ((code >> (c - 1 - i)) & 1) as usize).collect(),
        k: 2,
    }))
}

/// `E[1 - max_y p(y | x)]`.
pub fn bayes_error(t: &Task) -> f64 {
    (0..t.size())
        .map(|x| t.px.pmf()[x] * (1.0 - t.cond.row(x).max()))
        .sum()
}

/// `p([x])` under the task's input distribution.
pub fn task_class_probabilities(t: &Task, eq: &EquivalenceRelation) -> Result<Vec<f64>> {
    class_probabilities(&t.px, eq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize, k: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, k, v)
    }

    #[test]
    fn bayes_labels_and_ties() {
        let t = Task::deterministic(InputDistribution::uniform(3), &[1, 0, 1], 2).unwrap();
        assert_eq!(most_likely_label(&t).unwrap(), vec![1, 0, 1]);

        let t = Task::new(InputDistribution::uniform(1 + 1), rows(2, 2, &[0.6, 0.4, 0.3, 0.7])).unwrap();
        assert_eq!(most_likely_label(&t).unwrap(), vec![0, 1]);

        let t = Task::new(InputDistribution::uniform(2), rows(2, 2, &[0.6, 0.4, 0.5, 0.5])).unwrap();
        assert!(matches!(most_likely_label(&t), Err(Error::Tie { input: 1 })));
    }

    #[test]
    fn invariance_examples() {
        let eq = EquivalenceRelation::from_labels(vec![0, 0, 1, 1]).unwrap();
        let t = Task::deterministic(InputDistribution::uniform(4), &[0, 0, 1, 1], 2).unwrap();
        assert!(is_invariant_task(&t, &eq).unwrap());

        let t = Task::deterministic(InputDistribution::uniform(4), &[0, 1, 1, 1], 2).unwrap();
        assert!(!is_invariant_task(&t, &eq).unwrap());

        // Stochastic rows, argmax 0 on class 0 and 1 on class 1.
        let t = Task::new(
            InputDistribution::uniform(4),
            rows(4, 2, &[0.9, 0.1, 0.6, 0.4, 0.2, 0.8, 0.45, 0.55]),
        )
        .unwrap();
        assert!(is_invariant_task(&t, &eq).unwrap());
        assert_eq!(class_label_map(&t, &eq).unwrap(), Some(vec![0, 1]));
    }

    #[test]
    fn labeling_materialization() {
        let eq = EquivalenceRelation::from_labels(vec![0, 0, 1, 1]).unwrap();
        let px = InputDistribution::uniform(4);
        let t = task_from_labeling(&InvariantLabeling::new(vec![0, 1], 2).unwrap(), &eq, &px).unwrap();
        assert_eq!(most_likely_label(&t).unwrap(), vec![0, 0, 1, 1]);
        let t = task_from_labeling(&InvariantLabeling::new(vec![1, 0], 2).unwrap(), &eq, &px).unwrap();
        assert_eq!(most_likely_label(&t).unwrap(), vec![1, 1, 0, 0]);

        let eq3 = EquivalenceRelation::from_labels(vec![0, 1, 2]).unwrap();
        let t = task_from_labeling(&InvariantLabeling::new(vec![0, 1, 0], 2).unwrap(), &eq3, &InputDistribution::uniform(3)).unwrap();
        assert_eq!(most_likely_label(&t).unwrap(), vec![0, 1, 0]);
        assert!(is_invariant_task(&t, &eq3).unwrap());
    }

    #[test]
    fn binary_enumeration() {
        let all: Vec<_> = enumerate_binary_labelings(2).unwrap().map(|l| l.label_of_class).collect();
        assert_eq!(all, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(enumerate_binary_labelings(3).unwrap().count(), 8);
        assert!(matches!(enumerate_binary_labelings(25), Err(Error::Capacity(_))));
    }

    #[test]
    fn bayes_error_examples() {
        let t = Task::deterministic(InputDistribution::uniform(3), &[0, 1, 0], 2).unwrap();
        assert_eq!(bayes_error(&t), 0.0);

        let px = InputDistribution::new(vec![0.2, 0.8]).unwrap();
        let t = Task::new(px, rows(2, 2, &[0.7, 0.3, 0.7, 0.3])).unwrap();
        assert!((bayes_error(&t) - 0.3).abs() < 1e-15);

        let t = Task::new(InputDistribution::uniform(2), rows(2, 2, &[0.9, 0.1, 0.6, 0.4])).unwrap();
        assert!((bayes_error(&t) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn enumerated_labelings_are_invariant_and_bayes_free() {
        let eq = EquivalenceRelation::from_labels(vec![0, 1, 1, 2, 0]).unwrap();
        let px = InputDistribution::uniform(5);
        for l in enumerate_binary_labelings(3).unwrap() {
            let t = task_from_labeling(&l, &eq, &px).unwrap();
            assert!(is_invariant_task(&t, &eq).unwrap());
            assert_eq!(bayes_error(&t), 0.0);
        }
    }

    #[test]
    fn task_json() {
        let t = Task::from_json(r#"{"px": [0.5, 0.5], "cond": [[0.9, 0.1], [0.2, 0.8]]}"#).unwrap();
        assert_eq!(Task::from_json(&t.to_json()).unwrap(), t);
        assert!(Task::from_json(r#"{"px": [0.5, 0.5], "cond": [[0.9, 0.1]]}"#).is_err());
    }
}
