//! Finite input spaces, equivalence relations and their maximal invariants.
//!
//! Relations are stored as explicit partitions: `class_of[x]` is the class id
//! of input `x`. Class ids are dense in `0..num_classes`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Probability vectors must sum to one within this slack.
pub const PMF_TOL: f64 = 1e-9;

/// Entries of an augmentor above this value count as graph edges.
pub const EDGE_EPS: f64 = 1e-12;

pub(crate) fn check_pmf(what: &'static str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(invalid(what, "empty probability vector"));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(invalid(what, format!("entry {v} is negative or not finite")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PMF_TOL {
        return Err(invalid(what, format!("entries sum to {s}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpace {
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl InputSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(invalid("input space", format!("|X| = {size} < 2")));
        }
        Ok(Self { size, names: None })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let mut s = Self::new(names.len())?;
        s.names = Some(names);
        Ok(s)
    }
}

/// A partition of `0..size` into `num_classes >= 2` nonempty classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EquivalenceRelation {
    class_of: Vec<usize>,
    num_classes: usize,
}

impl EquivalenceRelation {
    pub fn new(class_of: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(invalid(
                "equivalence relation",
                format!("C = {num_classes}; at least two classes are required"),
            ));
        }
        if num_classes > class_of.len() {
            return Err(invalid(
                "equivalence relation",
                format!("C = {num_classes} exceeds |X| = {}", class_of.len()),
            ));
        }
        let mut seen = vec![false; num_classes];
        for (x, &c) in class_of.iter().enumerate() {
            if c >= num_classes {
                return Err(invalid(
                    "equivalence relation",
                    format!("input {x} has class {c} outside 0..{num_classes}"),
                ));
            }
            seen[c] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(invalid("equivalence relation", format!("class {c} is empty")));
        }
        Ok(Self {
            class_of,
            num_classes,
        })
    }

    /// Builds a relation from arbitrary labels, inferring `C = max + 1`.
    pub fn from_labels(class_of: Vec<usize>) -> Result<Self> {
        let c = class_of.iter().max().map_or(0, |m| m + 1);
        Self::new(class_of, c)
    }

    /// `classes` blocks of `per_class` consecutive inputs each.
    pub fn blocks(classes: usize, per_class: usize) -> Result<Self> {
        let class_of = (0..classes * per_class).map(|x| x / per_class.max(1)).collect();
        Self::new(class_of, classes)
    }

    /// The discrete relation: every input is its own class.
    pub fn identity(size: usize) -> Result<Self> {
        Self::new((0..size).collect(), size)
    }

    pub fn size(&self) -> usize {
        self.class_of.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_of(&self) -> &[usize] {
        &self.class_of
    }

    pub fn class(&self, x: usize) -> usize {
        self.class_of[x]
    }

    pub fn equivalent(&self, x: usize, y: usize) -> bool {
        self.class_of[x] == self.class_of[y]
    }

    /// Members of each class, in ascending input order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (x, &c) in self.class_of.iter().enumerate() {
            out[c].push(x);
        }
        out
    }

    /// Smallest member of each class.
    pub fn representatives(&self) -> Vec<usize> {
        let mut rep = vec![usize::MAX; self.num_classes];
        for (x, &c) in self.class_of.iter().enumerate() {
            if rep[c] == usize::MAX {
                rep[c] = x;
            }
        }
        rep
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PartitionFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PartitionFile::from(self)).expect("partition serializes")
    }
}

/// On-disk partition: `{"size": int, "class_of": [int, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub size: usize,
    pub class_of: Vec<usize>,
}

impl From<&EquivalenceRelation> for PartitionFile {
    fn from(eq: &EquivalenceRelation) -> Self {
        Self {
            size: eq.size(),
            class_of: eq.class_of.clone(),
        }
    }
}

impl TryFrom<PartitionFile> for EquivalenceRelation {
    type Error = Error;

    fn try_from(f: PartitionFile) -> Result<Self> {
        if f.size != f.class_of.len() {
            return Err(Error::SizeMismatch(format!(
                "partition declares size {} but lists {} classes",
                f.size,
                f.class_of.len()
            )));
        }
        EquivalenceRelation::from_labels(f.class_of)
    }
}

/// Canonical index of equivalence classes: `m_of[x] == m_of[y]` iff `x ~ y`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaximalInvariant {
    m_of: Vec<usize>,
    num_classes: usize,
}

impl MaximalInvariant {
    pub fn values(&self) -> &[usize] {
        &self.m_of
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn size(&self) -> usize {
        self.m_of.len()
    }

    pub fn get(&self, x: usize) -> usize {
        self.m_of[x]
    }

    /// Checks the defining property against `eq`.
    pub fn is_maximal_invariant_of(&self, eq: &EquivalenceRelation) -> bool {
        if self.size() != eq.size() {
            return false;
        }
        let n = self.size();
        (0..n).all(|x| (0..n).all(|y| (self.m_of[x] == self.m_of[y]) == eq.equivalent(x, y)))
    }

    /// The relation induced by this invariant.
    pub fn relation(&self) -> EquivalenceRelation {
        EquivalenceRelation {
            class_of: self.m_of.clone(),
            num_classes: self.num_classes,
        }
    }
}

/// Relabels classes so that ids increase with the smallest member input.
pub fn maximal_invariant(eq: &EquivalenceRelation) -> MaximalInvariant {
    let mut relabel = vec![usize::MAX; eq.num_classes];
    let mut next = 0;
    let m_of = eq
        .class_of
        .iter()
        .map(|&c| {
            if relabel[c] == usize::MAX {
                relabel[c] = next;
                next += 1;
            }
            relabel[c]
        })
        .collect();
    MaximalInvariant {
        m_of,
        num_classes: eq.num_classes,
    }
}

/// Whether every `fine` class sits inside a `coarse` class.
pub fn is_refinement(fine: &EquivalenceRelation, coarse: &EquivalenceRelation) -> Result<bool> {
    if fine.size() != coarse.size() {
        return Err(Error::SizeMismatch(format!(
            "fine relation has {} inputs, coarse has {}",
            fine.size(),
            coarse.size()
        )));
    }
    // Each fine class must map to a single coarse class.
    let mut image = vec![usize::MAX; fine.num_classes];
    for x in 0..fine.size() {
        let f = fine.class_of[x];
        let c = coarse.class_of[x];
        if image[f] == usize::MAX {
            image[f] = c;
        } else if image[f] != c {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Row-stochastic conditional `A(x̃ | x)`, rows indexed by inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentor {
    cond: DMatrix<f64>,
}

impl Augmentor {
    pub fn new(cond: DMatrix<f64>) -> Result<Self> {
        if cond.nrows() == 0 || cond.ncols() == 0 {
            return Err(invalid("augmentor", "empty matrix"));
        }
        for r in 0..cond.nrows() {
            let row: Vec<f64> = cond.row(r).iter().copied().collect();
            check_pmf("augmentor row", &row).map_err(|e| invalid("augmentor", format!("row {r}: {e}")))?;
        }
        Ok(Self { cond })
    }

    pub fn identity(size: usize) -> Self {
        Self {
            cond: DMatrix::identity(size, size),
        }
    }

    /// Uniform resampling within each class of `eq`.
    pub fn block_uniform(eq: &EquivalenceRelation) -> Self {
        let n = eq.size();
        let members = eq.members();
        let mut cond = DMatrix::zeros(n, n);
        for x in 0..n {
            let cls = &members[eq.class(x)];
            let w = 1.0 / cls.len() as f64;
            for &y in cls {
                cond[(x, y)] = w;
            }
        }
        Self { cond }
    }

    pub fn cond(&self) -> &DMatrix<f64> {
        &self.cond
    }

    pub fn input_size(&self) -> usize {
        self.cond.nrows()
    }

    pub fn aug_space_size(&self) -> usize {
        self.cond.ncols()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: MatrixFile = serde_json::from_str(text)?;
        Self::new(f.into_matrix()?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MatrixFile::from_matrix(&self.cond)).expect("matrix serializes")
    }
}

/// Row-major matrix with declared shape: `{"shape": [rows, cols], "data": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl MatrixFile {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|r| m.row(r).iter().copied().collect::<Vec<_>>()).collect();
        Self {
            shape: [m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn into_matrix(self) -> Result<DMatrix<f64>> {
        let [r, c] = self.shape;
        if r * c != self.data.len() {
            return Err(Error::SizeMismatch(format!(
                "shape {r}x{c} needs {} entries, got {}",
                r * c,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(r, c, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    pmf: Vec<f64>,
}

impl InputDistribution {
    pub fn new(pmf: Vec<f64>) -> Result<Self> {
        check_pmf("input distribution", &pmf)?;
        Ok(Self { pmf })
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            pmf: vec![1.0 / size as f64; size],
        }
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn size(&self) -> usize {
        self.pmf.len()
    }

    pub fn has_full_support(&self) -> bool {
        self.pmf.iter().all(|&p| p > 0.0)
    }

    pub fn in_support(&self, x: usize) -> bool {
        self.pmf[x] > 0.0
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the augmentation graph on `supp(px)`.
///
/// Inputs outside the support are singleton classes. Class ids are canonical
/// (ordered by smallest member). Only square augmentors are supported.
pub fn equivalence_from_augmentor(a: &Augmentor, px: &InputDistribution) -> Result<EquivalenceRelation> {
    let n = a.input_size();
    if a.aug_space_size() != n {
        return Err(Error::SizeMismatch(format!(
            "component extraction needs a square augmentor, got {}x{}",
            n,
            a.aug_space_size()
        )));
    }
    if px.size() != n {
        return Err(Error::SizeMismatch(format!(
            "augmentor has {n} inputs, distribution has {}",
            px.size()
        )));
    }
    let mut uf = UnionFind::new(n);
    for x in 0..n {
        if !px.in_support(x) {
            continue;
        }
        for y in 0..n {
            if a.cond[(x, y)] > EDGE_EPS && px.in_support(y) {
                uf.union(x, y);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|x| uf.find(x)).collect();
    let mut id = vec![usize::MAX; n];
    let mut next = 0;
    let class_of = roots
        .iter()
        .map(|&r| {
            if id[r] == usize::MAX {
                id[r] = next;
                next += 1;
            }
            id[r]
        })
        .collect();
    EquivalenceRelation::new(class_of, next)
}

/// Whether equivalent inputs share their augmentation distribution (rows
/// equal within `tol` in max-abs norm). Rectangular augmentors are accepted.
pub fn check_markov_augmentor(a: &Augmentor, eq: &EquivalenceRelation, tol: f64) -> Result<bool> {
    if a.input_size() != eq.size() {
        return Err(Error::SizeMismatch(format!(
            "augmentor has {} inputs, relation has {}",
            a.input_size(),
            eq.size()
        )));
    }
    for cls in eq.members() {
        let first = cls[0];
        for &x in &cls[1..] {
            let diff = (a.cond.row(x) - a.cond.row(first)).amax();
            if diff > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `p([x])` for every class.
pub fn class_probabilities(px: &InputDistribution, eq: &EquivalenceRelation) -> Result<Vec<f64>> {
    if px.size() != eq.size() {
        return Err(Error::SizeMismatch(format!(
            "distribution has {} inputs, relation has {}",
            px.size(),
            eq.size()
        )));
    }
    let mut out = vec![0.0; eq.num_classes];
    for (x, &p) in px.pmf.iter().enumerate() {
        out[eq.class_of[x]] += p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eq(v: &[usize]) -> EquivalenceRelation {
        EquivalenceRelation::from_labels(v.to_vec()).unwrap()
    }

    #[test]
    fn canonical_relabel() {
        assert_eq!(maximal_invariant(&eq(&[0, 0, 1, 1])).values(), &[0, 0, 1, 1]);
        assert_eq!(maximal_invariant(&eq(&[1, 1, 0, 0])).values(), &[0, 0, 1, 1]);
        assert_eq!(maximal_invariant(&eq(&[2, 0, 2, 1])).values(), &[0, 1, 0, 2]);
        let e = eq(&[2, 0, 2, 1]);
        assert!(maximal_invariant(&e).is_maximal_invariant_of(&e));
    }

    #[test]
    fn relation_invariants() {
        assert!(EquivalenceRelation::new(vec![0, 0, 0], 1).is_err());
        assert!(EquivalenceRelation::new(vec![0, 2, 2], 3).is_err());
        assert!(EquivalenceRelation::new(vec![0, 1], 3).is_err());
        assert!(EquivalenceRelation::new(vec![0, 1, 3], 3).is_err());
        assert!(InputSpace::new(1).is_err());
        assert_eq!(InputSpace::new(4).unwrap().size, 4);
    }

    #[test]
    fn refinement_examples() {
        assert!(is_refinement(&eq(&[0, 1, 2, 3]), &eq(&[0, 0, 1, 1])).unwrap());
        assert!(!is_refinement(&eq(&[0, 0, 1, 1]), &eq(&[0, 1, 0, 1])).unwrap());
        let e = eq(&[0, 1, 1, 0]);
        assert!(is_refinement(&e, &e).unwrap());
        assert!(matches!(
            is_refinement(&eq(&[0, 1]), &eq(&[0, 1, 1])),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn components_of_identity_and_blocks() {
        let u = InputDistribution::uniform(4);
        let r = equivalence_from_augmentor(&Augmentor::identity(4), &u).unwrap();
        assert_eq!(r.num_classes(), 4);

        let blocks = Augmentor::block_uniform(&eq(&[0, 0, 1, 1]));
        let r = equivalence_from_augmentor(&blocks, &u).unwrap();
        assert_eq!(r.class_of(), &[0, 0, 1, 1]);
    }

    #[test]
    fn chain_components_are_transitive() {
        // 0 -> 1 -> 2 -> 2 chain plus an isolated self-loop at 3.
        let a = Augmentor::new(DMatrix::from_row_slice(
            4,
            4,
            &[0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 0., 1.],
        ))
        .unwrap();
        let r = equivalence_from_augmentor(&a, &InputDistribution::uniform(4)).unwrap();
        assert_eq!(r.class_of(), &[0, 0, 0, 1]);
    }

    #[test]
    fn off_support_inputs_are_singletons() {
        let a = Augmentor::new(DMatrix::from_element(3, 3, 1.0 / 3.0)).unwrap();
        let px = InputDistribution::new(vec![0.5, 0.5, 0.0]).unwrap();
        let r = equivalence_from_augmentor(&a, &px).unwrap();
        assert_eq!(r.class_of(), &[0, 0, 1]);
    }

    #[test]
    fn rectangular_augmentor_rejected_for_components() {
        let a = Augmentor::new(DMatrix::from_element(2, 3, 1.0 / 3.0)).unwrap();
        assert!(matches!(
            equivalence_from_augmentor(&a, &InputDistribution::uniform(2)),
            Err(Error::SizeMismatch(_))
        ));
        // ...but the Markov check accepts it.
        assert!(check_markov_augmentor(&a, &eq(&[0, 1]), 1e-9).unwrap());
    }

    #[test]
    fn markov_check_examples() {
        let e = eq(&[0, 0, 1, 1]);
        assert!(check_markov_augmentor(&Augmentor::block_uniform(&e), &e, 1e-9).unwrap());
        assert!(!check_markov_augmentor(&Augmentor::identity(4), &e, 1e-9).unwrap());

        let mut m = Augmentor::block_uniform(&e).cond().clone();
        m[(1, 0)] += 1e-12;
        m[(1, 1)] -= 1e-12;
        assert!(check_markov_augmentor(&Augmentor::new(m).unwrap(), &e, 1e-9).unwrap());
    }

    #[test]
    fn connectivity_is_not_markov() {
        // Components {0,1} and {2,3} but rows differ inside each component.
        let a = Augmentor::new(DMatrix::from_row_slice(
            4,
            4,
            &[0.5, 0.5, 0., 0., 0.1, 0.9, 0., 0., 0., 0., 1., 0., 0., 0., 0.5, 0.5],
        ))
        .unwrap();
        let r = equivalence_from_augmentor(&a, &InputDistribution::uniform(4)).unwrap();
        assert_eq!(r.class_of(), &[0, 0, 1, 1]);
        assert!(!check_markov_augmentor(&a, &r, 1e-9).unwrap());
    }

    #[test]
    fn class_probability_examples() {
        let p = class_probabilities(&InputDistribution::uniform(4), &eq(&[0, 0, 1, 1])).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let px = InputDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let p = class_probabilities(&px, &eq(&[0, 1, 0, 1])).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
        let p = class_probabilities(&InputDistribution::uniform(9), &EquivalenceRelation::blocks(3, 3).unwrap()).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn partition_json_round_trip() {
        let e = eq(&[1, 0, 1, 2]);
        let back = EquivalenceRelation::from_json(&e.to_json()).unwrap();
        assert_eq!(back, e);
        assert!(EquivalenceRelation::from_json(r#"{"size": 3, "class_of": [0, 1]}"#).is_err());
        assert!(EquivalenceRelation::from_json(r#"{"size": 2, "class_of": [0, 1], "x": 1}"#).is_err());
    }

    #[test]
    fn augmentor_json() {
        let a = Augmentor::from_json(r#"{"shape": [2, 2], "data": [0.5, 0.5, 0.0, 1.0]}"#).unwrap();
        assert_eq!(a.cond()[(1, 1)], 1.0);
        assert_eq!(Augmentor::from_json(&a.to_json()).unwrap(), a);
        assert!(Augmentor::from_json(r#"{"shape": [2, 2], "data": [0.5, 0.4, 0.0, 1.0]}"#).is_err());
    }
}
