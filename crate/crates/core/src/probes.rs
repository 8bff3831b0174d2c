//! Downstream probe families, shattering checks and the sample-optimality
//! verdict for an encoder.
//!
//! Linear probes are affine by default (`include_bias = true`). A binary
//! linear probe predicts label 1 iff its logit is `>= 0`; multiclass probes
//! predict the argmax logit. Exact shattering verdicts for linear probes come
//! from an affine-rank test; perceptrons construct the witnesses. MLP
//! verdicts are empirical: a labeling counts as realizable when gradient
//! training reaches zero training error.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{distinct_rows, is_invariant, matrix_rank, setf, Encoder};
use crate::error::{invalid, Error, Result};
use crate::nn::{log_softmax_rows, random_points, softmax_rows, Activation, Mlp};
use crate::rng::{derive, rng, sub_rng};
use crate::tasks::{enumerate_binary_labelings, unique_argmax};
use crate::world::{maximal_invariant, EquivalenceRelation, MaximalInvariant};

/// Smallest accepted perceptron score margin. Keeps separators usable as
/// parts of composite predictors, whose ties are judged at `TIE_TOL`.
pub const SEPARATION_MARGIN: f64 = 1e-9;

/// Gradient-training settings for MLP probes.
pub const MLP_LEARNING_RATE: f64 = 0.1;
pub const MLP_STEPS: usize = 5000;
pub const MLP_RESTARTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProbeKind {
    Linear,
    Mlp { hidden_widths: Vec<usize> },
}

/// A family of downstream predictors. Serialized as its string form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProbeFamily {
    pub kind: ProbeKind,
    pub activation: Activation,
    pub include_bias: bool,
}

impl ProbeFamily {
    pub fn linear() -> Self {
        Self {
            kind: ProbeKind::Linear,
            activation: Activation::Relu,
            include_bias: true,
        }
    }

    /// Linear probes through the origin.
    pub fn homogeneous() -> Self {
        Self {
            include_bias: false,
            ..Self::linear()
        }
    }

    pub fn mlp(hidden_widths: Vec<usize>) -> Result<Self> {
        if hidden_widths.is_empty() || hidden_widths.contains(&0) {
            return Err(invalid("probe family", "MLP needs at least one positive hidden width"));
        }
        Ok(Self {
            kind: ProbeKind::Mlp { hidden_widths },
            activation: Activation::Relu,
            include_bias: true,
        })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, ProbeKind::Linear)
    }

    /// Default search budget: perceptron epochs `10 * 2^C * C` for linear
    /// families, gradient steps per restart for MLPs.
    pub fn default_budget(&self, num_classes: usize) -> usize {
        match self.kind {
            ProbeKind::Linear => 10 * (1usize << num_classes.min(40)) * num_classes,
            ProbeKind::Mlp { .. } => MLP_STEPS,
        }
    }
}

impl fmt::Display for ProbeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.kind, self.include_bias) {
            (ProbeKind::Linear, true) => write!(f, "linear"),
            (ProbeKind::Linear, false) => write!(f, "linear-homogeneous"),
            (ProbeKind::Mlp { hidden_widths }, _) => {
                let w: Vec<String> = hidden_widths.iter().map(ToString::to_string).collect();
                write!(f, "mlp:{}", w.join(","))
            }
        }
    }
}

impl FromStr for ProbeFamily {
    type Err = Error;

    /// `linear`, `linear-homogeneous`, or `mlp:<w1>,<w2>,...`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(Self::linear()),
            "linear-homogeneous" => Ok(Self::homogeneous()),
            other => {
                let widths = other
                    .strip_prefix("mlp:")
                    .ok_or_else(|| Error::Parse(format!("unknown probe family `{other}`")))?;
                let widths = widths
                    .split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse(format!("bad MLP widths `{widths}`: {e}")))?;
                Self::mlp(widths)
            }
        }
    }
}

impl TryFrom<String> for ProbeFamily {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ProbeFamily> for String {
    fn from(f: ProbeFamily) -> Self {
        f.to_string()
    }
}

/// Affine map `x ↦ Wᵀx + b` with `k` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    /// `d x k`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LinearPredictor {
    pub fn zeros(d: usize, k: usize) -> Self {
        Self {
            weights: DMatrix::zeros(d, k),
            bias: DVector::zeros(k),
        }
    }

    pub fn num_outputs(&self) -> usize {
        self.weights.ncols()
    }

    /// Logits for every row of `points` (`n x k`).
    pub fn logits(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = points * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        out
    }

    /// Binary rule on output 0: label 1 iff logit `>= 0`.
    pub fn predict_binary(&self, points: &DMatrix<f64>) -> Vec<usize> {
        self.logits(points).column(0).iter().map(|&v| usize::from(v >= 0.0)).collect()
    }

    /// Strict argmax per row; `None` entries mark ties.
    pub fn predict(&self, points: &DMatrix<f64>) -> Vec<Option<usize>> {
        argmax_rows(&self.logits(points))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPredictor {
    pub net: Mlp,
}

impl MlpPredictor {
    pub fn logits(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        self.net.forward(points)
    }

    pub fn predict(&self, points: &DMatrix<f64>) -> Vec<Option<usize>> {
        argmax_rows(&self.logits(points))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Linear(LinearPredictor),
    Mlp(MlpPredictor),
}

impl Predictor {
    pub fn logits(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Predictor::Linear(p) => p.logits(points),
            Predictor::Mlp(p) => p.logits(points),
        }
    }

    pub fn predict(&self, points: &DMatrix<f64>) -> Vec<Option<usize>> {
        argmax_rows(&self.logits(points))
    }
}

fn argmax_rows(logits: &DMatrix<f64>) -> Vec<Option<usize>> {
    (0..logits.nrows()).map(|i| unique_argmax(logits.row(i).iter())).collect()
}

fn augment(points: &DMatrix<f64>, include_bias: bool) -> DMatrix<f64> {
    if include_bias {
        points.clone().insert_column(points.ncols(), 1.0)
    } else {
        points.clone()
    }
}

fn split_augmented(w: &DMatrix<f64>, d: usize, include_bias: bool) -> LinearPredictor {
    let k = w.ncols();
    LinearPredictor {
        weights: w.rows(0, d).into_owned(),
        bias: if include_bias {
            w.row(d).transpose()
        } else {
            DVector::zeros(k)
        },
    }
}

/// Affine perceptron; see [`linear_separate_with`].
pub fn linear_separate(points: &DMatrix<f64>, labeling: &[usize], budget: usize, seed: u64) -> Option<LinearPredictor> {
    linear_separate_with(points, labeling, true, budget, seed)
}

/// Searches for a binary linear predictor with strict margin: logits
/// `> SEPARATION_MARGIN` on label-1 points and `< -SEPARATION_MARGIN` on
/// label-0 points. Runs a perceptron over
/// (optionally bias-augmented) points with seeded per-epoch shuffling for at
/// most `budget` epochs.
pub fn linear_separate_with(
    points: &DMatrix<f64>,
    labeling: &[usize],
    include_bias: bool,
    budget: usize,
    seed: u64,
) -> Option<LinearPredictor> {
    let (n, d) = points.shape();
    assert_eq!(labeling.len(), n, "one label per point");
    if include_bias && labeling.iter().all(|&l| l == labeling[0]) {
        let mut p = LinearPredictor::zeros(d, 1);
        p.bias[0] = if labeling[0] == 1 { 1.0 } else { -1.0 };
        return Some(p);
    }
    let x = augment(points, include_bias);
    let dim = x.ncols();
    let sign: Vec<f64> = labeling.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let mut w = DVector::<f64>::zeros(dim);
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng(seed);
    for _ in 0..budget {
        order.shuffle(&mut r);
        let mut clean = true;
        for &i in &order {
            let s = x.row(i).dot(&w.transpose());
            if sign[i] * s <= SEPARATION_MARGIN {
                w += x.row(i).transpose() * sign[i];
                clean = false;
            }
        }
        if clean {
            let p = split_augmented(&DMatrix::from_column_slice(dim, 1, w.as_slice()), d, include_bias);
            return Some(p);
        }
    }
    None
}

fn check_distinct(points: &DMatrix<f64>, tol: f64) -> Result<()> {
    let scale = points.amax().max(1.0);
    for i in 0..points.nrows() {
        for j in i + 1..points.nrows() {
            if (points.row(i) - points.row(j)).amax() <= tol * scale {
                return Err(Error::DuplicatePoint(i, j));
            }
        }
    }
    Ok(())
}

/// Exact criterion for classical shattering by affine probes: the points
/// `p_i - p_0` have rank `C - 1`.
pub fn shatterable_rank(points: &DMatrix<f64>, tol: f64) -> Result<bool> {
    check_distinct(points, tol)?;
    let c = points.nrows();
    if c <= 1 {
        return Ok(true);
    }
    let diffs = DMatrix::from_fn(c - 1, points.ncols(), |i, j| points[(i + 1, j)] - points[(0, j)]);
    Ok(matrix_rank(&diffs, tol) == c - 1)
}

/// Shattering by probes through the origin: the points are linearly
/// independent.
pub fn shatterable_rank_homogeneous(points: &DMatrix<f64>, tol: f64) -> Result<bool> {
    check_distinct(points, tol)?;
    Ok(matrix_rank(points, tol) == points.nrows())
}

/// A binary labeling no affine probe realizes, with its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct InseparabilityWitness {
    pub labeling: Vec<usize>,
    /// `Σ λ_i = 0` and `Σ λ_i p_i = 0`, `λ ≠ 0`.
    pub coefficients: Vec<f64>,
    pub residual: f64,
}

/// For affinely dependent points, the labeling `1{λ_i > 0}` of an affine
/// dependence `λ` is unrealizable: any affine `f` with the right signs gives
/// `Σ λ_i f(p_i) > 0`, while the dependence forces it to be `0`.
pub fn inseparability_witness(points: &DMatrix<f64>, tol: f64) -> Option<InseparabilityWitness> {
    let (c, d) = points.shape();
    // Rows: coordinates then the all-ones row. Columns: points.
    let a = DMatrix::from_fn(d + 1, c, |i, j| if i < d { points[(j, i)] } else { 1.0 });
    let gram = a.transpose() * &a;
    let eig = SymmetricEigen::new(gram);
    let (idx, &smallest) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let largest = eig.eigenvalues.amax().max(1e-300);
    if smallest > tol * largest {
        return None;
    }
    let mut lambda: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    let scale = lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    lambda.iter_mut().for_each(|v| *v /= scale);
    let residual = (&a * DVector::from_column_slice(&lambda)).amax();
    let labeling = lambda.iter().map(|&v| usize::from(v > 1e-9)).collect();
    Some(InseparabilityWitness {
        labeling,
        coefficients: lambda,
        residual,
    })
}

/// Multiclass perceptron: returns `W` with strict argmax equal to `targets`.
fn multiclass_perceptron(
    points: &DMatrix<f64>,
    targets: &[usize],
    k: usize,
    include_bias: bool,
    budget: usize,
    seed: u64,
) -> Option<LinearPredictor> {
    let (n, d) = points.shape();
    let x = augment(points, include_bias);
    let dim = x.ncols();
    let mut w = DMatrix::<f64>::zeros(dim, k);
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng(seed);
    for _ in 0..budget {
        order.shuffle(&mut r);
        let mut clean = true;
        for &i in &order {
            let scores = x.row(i) * &w;
            let t = targets[i];
            // Strongest competitor; ties with the target count as mistakes.
            let (rival, rival_score) = (0..k)
                .filter(|&j| j != t)
                .map(|j| (j, scores[j]))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("k >= 2");
            if scores[t] - rival_score <= SEPARATION_MARGIN {
                let xi = x.row(i).transpose();
                w.column_mut(t).axpy(1.0, &xi, 1.0);
                w.column_mut(rival).axpy(-1.0, &xi, 1.0);
                clean = false;
            }
        }
        if clean {
            return Some(split_augmented(&w, d, include_bias));
        }
    }
    None
}

/// Multiclass perceptron keeping the weights with the best training
/// accuracy seen after any update. Returns the predictor and that
/// accuracy; ties in the argmax count as errors.
pub fn fit_linear_probe(points: &DMatrix<f64>, targets: &[usize], k: usize, budget: usize, seed: u64) -> (LinearPredictor, f64) {
    pocket_perceptron(points, targets, k, budget, seed, true)
}

fn pocket_perceptron(
    points: &DMatrix<f64>,
    targets: &[usize],
    k: usize,
    budget: usize,
    seed: u64,
    bias: bool,
) -> (LinearPredictor, f64) {
    let (n, d) = points.shape();
    let x = augment(points, bias);
    let dim = x.ncols();
    let mut w = DMatrix::<f64>::zeros(dim, k);
    let accuracy = |w: &DMatrix<f64>| {
        let scores = &x * w;
        (0..n).filter(|&i| unique_argmax(scores.row(i).iter()) == Some(targets[i])).count() as f64 / n as f64
    };
    let mut best = (w.clone(), accuracy(&w));
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng(seed);
    for _ in 0..budget {
        if best.1 == 1.0 {
            break;
        }
        order.shuffle(&mut r);
        for &i in &order {
            let scores = x.row(i) * &w;
            let t = targets[i];
            let (rival, rival_score) = (0..k)
                .filter(|&j| j != t)
                .map(|j| (j, scores[j]))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("k >= 2");
            if scores[t] - rival_score <= SEPARATION_MARGIN {
                let xi = x.row(i).transpose();
                w.column_mut(t).axpy(1.0, &xi, 1.0);
                w.column_mut(rival).axpy(-1.0, &xi, 1.0);
                let acc = accuracy(&w);
                if acc > best.1 {
                    best = (w.clone(), acc);
                    if acc == 1.0 {
                        break;
                    }
                }
            }
        }
    }
    (split_augmented(&best.0, d, bias), best.1)
}

/// Trains an MLP probe by full-batch gradient descent on softmax
/// cross-entropy. Succeeds as soon as the training error is exactly zero.
pub fn train_mlp_probe(
    points: &DMatrix<f64>,
    targets: &[usize],
    k: usize,
    hidden: &[usize],
    steps: usize,
    seed: u64,
) -> Option<MlpPredictor> {
    mlp_descent(points, targets, k, hidden, steps, seed).0
}

fn mlp_fit_accuracy(points: &DMatrix<f64>, targets: &[usize], k: usize, hidden: &[usize], steps: usize, seed: u64) -> f64 {
    mlp_descent(points, targets, k, hidden, steps, seed).1
}

/// The solving network if any restart reaches zero error, and the best
/// training accuracy observed.
fn mlp_descent(
    points: &DMatrix<f64>,
    targets: &[usize],
    k: usize,
    hidden: &[usize],
    steps: usize,
    seed: u64,
) -> (Option<MlpPredictor>, f64) {
    let n = points.nrows();
    let mut sizes = vec![points.ncols()];
    sizes.extend_from_slice(hidden);
    sizes.push(k);
    let mut best = 0.0f64;
    for restart in 0..MLP_RESTARTS {
        let mut r = sub_rng(seed, restart as u64);
        let mut net = Mlp::init(&sizes, true, &mut r);
        for step in 0..=steps {
            let (logits, cache) = net.forward_cached(points);
            let correct = (0..n).filter(|&i| unique_argmax(logits.row(i).iter()) == Some(targets[i])).count();
            best = best.max(correct as f64 / n as f64);
            if correct == n {
                return (Some(MlpPredictor { net }), 1.0);
            }
            if step == steps {
                break;
            }
            let mut d = softmax_rows(&logits);
            for (i, &t) in targets.iter().enumerate() {
                d[(i, t)] -= 1.0;
            }
            d /= n as f64;
            let (g, _) = net.backward(&cache, &d);
            let mut theta = net.flatten();
            for (p, gv) in theta.iter_mut().zip(g.flatten()) {
                *p -= MLP_LEARNING_RATE * gv;
            }
            net.assign_flat(&theta);
        }
    }
    (None, best)
}

/// Mean softmax cross-entropy of an MLP probe (diagnostics).
pub fn mlp_cross_entropy(p: &MlpPredictor, points: &DMatrix<f64>, targets: &[usize]) -> f64 {
    let lp = log_softmax_rows(&p.logits(points));
    -targets.iter().enumerate().map(|(i, &t)| lp[(i, t)]).sum::<f64>() / targets.len() as f64
}

/// A predictor in `fam` whose argmax recovers `m(x)` on every input.
///
/// `budget` is perceptron epochs for linear families and gradient steps per
/// restart for MLPs.
pub fn m_predictable(
    e: &Encoder,
    m: &MaximalInvariant,
    fam: &ProbeFamily,
    budget: usize,
    seed: u64,
) -> Result<Option<Predictor>> {
    if e.size() != m.size() {
        return Err(Error::SizeMismatch(format!(
            "encoder has {} rows, invariant has {} inputs",
            e.size(),
            m.size()
        )));
    }
    let reps = e.reps();
    // Identical representations with different targets are never separable.
    for i in 0..e.size() {
        for j in i + 1..e.size() {
            if m.get(i) != m.get(j) && reps.row(i) == reps.row(j) {
                return Ok(None);
            }
        }
    }
    let k = m.num_classes();
    Ok(match &fam.kind {
        ProbeKind::Linear => {
            multiclass_perceptron(reps, m.values(), k, fam.include_bias, budget, seed).map(Predictor::Linear)
        }
        ProbeKind::Mlp { hidden_widths } => {
            train_mlp_probe(reps, m.values(), k, hidden_widths, budget, seed).map(Predictor::Mlp)
        }
    })
}

fn eval_binary(p: &LinearPredictor, points: &DMatrix<f64>) -> Vec<f64> {
    p.logits(points).column(0).iter().copied().collect()
}

/// Builds a `k`-class predictor from a `(k-1)`-class predictor for the
/// labeling with the last two classes merged plus two binary predictors.
///
/// Preconditions, checked on `points`: `f_km1` has strict argmax
/// `min(target, k-2)`; `f2` has logit `> 0` exactly where `target == k-1`
/// and `<= 0` elsewhere; `f2p` likewise for `target == k-2`. The output
/// copies the first `k-2` logits and sets logit `k-2` to
/// `f_km1[k-2] + f2p` and logit `k-1` to `f_km1[k-2] + f2`.
pub fn kary_from_binary(
    f_km1: &LinearPredictor,
    f2: &LinearPredictor,
    f2p: &LinearPredictor,
    points: &DMatrix<f64>,
    target: &[usize],
) -> Result<LinearPredictor> {
    let k = f_km1.num_outputs() + 1;
    let d = points.ncols();
    if target.len() != points.nrows() {
        return Err(Error::SizeMismatch("one target per point".into()));
    }
    if f2.num_outputs() != 1 || f2p.num_outputs() != 1 {
        return Err(Error::Precondition("binary parts must have a single logit".into()));
    }
    if [f_km1.weights.nrows(), f2.weights.nrows(), f2p.weights.nrows()].iter().any(|&r| r != d) {
        return Err(Error::SizeMismatch("predictor input dimension differs from points".into()));
    }
    if let Some(t) = target.iter().find(|&&t| t >= k) {
        return Err(Error::Precondition(format!("target label {t} outside 0..{k}")));
    }
    let merged = f_km1.predict(points);
    for (i, &t) in target.iter().enumerate() {
        if merged[i] != Some(t.min(k - 2)) {
            return Err(Error::Precondition(format!(
                "merged predictor gives {:?} at point {i}, expected {}",
                merged[i],
                t.min(k - 2)
            )));
        }
    }
    let fires = |p: &LinearPredictor, label: usize, name: &str| -> Result<()> {
        for (i, (&v, &t)) in eval_binary(p, points).iter().zip(target).enumerate() {
            if (v > 0.0) != (t == label) {
                return Err(Error::Precondition(format!(
                    "{name} logit {v} at point {i} (target {t}) should fire iff target == {label}"
                )));
            }
        }
        Ok(())
    };
    fires(f2, k - 1, "f2")?;
    fires(f2p, k - 2, "f2p")?;

    let mut weights = DMatrix::zeros(d, k);
    let mut bias = DVector::zeros(k);
    for j in 0..k - 2 {
        weights.set_column(j, &f_km1.weights.column(j));
        bias[j] = f_km1.bias[j];
    }
    let base_w = f_km1.weights.column(k - 2);
    let base_b = f_km1.bias[k - 2];
    weights.set_column(k - 2, &(base_w + f2p.weights.column(0)));
    bias[k - 2] = base_b + f2p.bias[0];
    weights.set_column(k - 1, &(base_w + f2.weights.column(0)));
    bias[k - 1] = base_b + f2.bias[0];
    let out = LinearPredictor { weights, bias };

    let pred = out.predict(points);
    if let Some(i) = (0..target.len()).find(|&i| pred[i] != Some(target[i])) {
        return Err(Error::Precondition(format!("constructed predictor misclassifies point {i}")));
    }
    Ok(out)
}

/// Realizes any `k`-ary labeling on affinely shattered points by recursing
/// through [`kary_from_binary`], with binary parts from [`linear_separate`].
pub fn kary_predictor(
    points: &DMatrix<f64>,
    target: &[usize],
    k: usize,
    budget: usize,
    seed: u64,
) -> Result<LinearPredictor> {
    let d = points.ncols();
    if k == 1 {
        if target.iter().any(|&t| t != 0) {
            return Err(Error::Precondition("1-class labeling must be constant 0".into()));
        }
        return Ok(LinearPredictor::zeros(d, 1));
    }
    let merged: Vec<usize> = target.iter().map(|&t| t.min(k - 2)).collect();
    let f_km1 = kary_predictor(points, &merged, k - 1, budget, derive(seed, k as u64))?;
    let last: Vec<usize> = target.iter().map(|&t| usize::from(t == k - 1)).collect();
    let second: Vec<usize> = target.iter().map(|&t| usize::from(t == k - 2)).collect();
    let f2 = linear_separate(points, &last, budget, derive(seed, 2 * k as u64 + 1))
        .ok_or_else(|| Error::Precondition(format!("no separator for class {} within budget", k - 1)))?;
    let f2p = linear_separate(points, &second, budget, derive(seed, 2 * k as u64))
        .ok_or_else(|| Error::Precondition(format!("no separator for class {} within budget", k - 2)))?;
    kary_from_binary(&f_km1, &f2, &f2p, points, target)
}

/// Shattering verdict; MLP verdicts are training-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shattered {
    Exact(bool),
    Empirical { empirical: bool },
}

impl Shattered {
    pub fn holds(self) -> bool {
        match self {
            Shattered::Exact(b) | Shattered::Empirical { empirical: b } => b,
        }
    }
}

/// The three conditions characterizing sample-optimal encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub invariant: bool,
    pub m_predictable: bool,
    pub shattered: Shattered,
    pub verdict: bool,
}

/// Whether every binary labeling of `points` is realized by `fam`.
///
/// Exact for linear families; for MLPs every labeling is trained
/// (in parallel, seeded per labeling index).
pub fn family_shatters(points: &DMatrix<f64>, fam: &ProbeFamily, tol: f64, budget: usize, seed: u64) -> Result<Shattered> {
    if distinct_rows(points, 0.0) < points.nrows() || check_distinct(points, tol).is_err() {
        return Ok(match fam.kind {
            ProbeKind::Linear => Shattered::Exact(false),
            ProbeKind::Mlp { .. } => Shattered::Empirical { empirical: false },
        });
    }
    match &fam.kind {
        ProbeKind::Linear if fam.include_bias => Ok(Shattered::Exact(shatterable_rank(points, tol)?)),
        ProbeKind::Linear => Ok(Shattered::Exact(shatterable_rank_homogeneous(points, tol)?)),
        ProbeKind::Mlp { hidden_widths } => {
            let c = points.nrows();
            if c == 1 {
                return Ok(Shattered::Empirical { empirical: true });
            }
            let labelings: Vec<_> = enumerate_binary_labelings(c)?.collect();
            let ok = labelings.par_iter().enumerate().all(|(i, l)| {
                train_mlp_probe(points, &l.label_of_class, 2, hidden_widths, budget, derive(seed, i as u64)).is_some()
            });
            Ok(Shattered::Empirical { empirical: ok })
        }
    }
}

pub fn sample_optimality_report(
    e: &Encoder,
    eq: &EquivalenceRelation,
    fam: &ProbeFamily,
    tol: f64,
    budget: usize,
    seed: u64,
) -> Result<OptimalityReport> {
    let invariant = is_invariant(e, eq, tol)?;
    let m = maximal_invariant(eq);
    let mp = m_predictable(e, &m, fam, budget, derive(seed, 0))?.is_some();
    let shattered = family_shatters(&e.class_points(eq), fam, tol, budget, derive(seed, 1))?;
    Ok(OptimalityReport {
        invariant,
        m_predictable: mp,
        shattered,
        verdict: invariant && mp && shattered.holds(),
    })
}

/// Smallest dimension in `d_range` at which some `C`-point configuration is
/// shattered by `fam`.
///
/// Configurations: the sETF when `d >= C - 1`, otherwise random points
/// (unit vectors for `d >= 2`, uniform on `[-1, 1]` for `d == 1`) searched by
/// gradient training. General position of random points is assumed, not
/// certified.
pub fn empirical_min_dimension(
    eq: &EquivalenceRelation,
    fam: &ProbeFamily,
    d_range: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Option<usize>> {
    Ok(min_dimension_configuration(eq, fam, d_range, trials, seed)?.map(|(d, _)| d))
}

/// [`empirical_min_dimension`] together with the shattered class points.
pub fn min_dimension_configuration(
    eq: &EquivalenceRelation,
    fam: &ProbeFamily,
    d_range: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Option<(usize, DMatrix<f64>)>> {
    if d_range.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("dimension range", "must be strictly ascending"));
    }
    let c = eq.num_classes();
    let tol = crate::encoders::RANK_TOL;
    for &d in d_range {
        if d == 0 {
            continue;
        }
        let budget = fam.default_budget(c);
        if d + 1 >= c {
            let points = setf(c, d)?.vertices().clone();
            if family_shatters(&points, fam, tol, budget, derive(seed, d as u64))?.holds() {
                return Ok(Some((d, points)));
            }
            continue;
        }
        if fam.is_linear() && fam.include_bias {
            // C points in R^d with d < C - 1 are never affinely independent.
            continue;
        }
        for t in 0..trials.max(1) {
            let cell = derive(seed, (d as u64) << 32 | t as u64);
            let points = random_points(c, d, &mut rng(cell));
            if family_shatters(&points, fam, tol, budget, derive(cell, 1))?.holds() {
                return Ok(Some((d, points)));
            }
        }
    }
    Ok(None)
}

/// Best training accuracy `fam` reaches on `(points, targets)`.
///
/// Linear families use the pocket perceptron, MLPs the gradient trainer; an
/// MLP run that does not reach zero error reports its best restart.
pub fn fit_accuracy(points: &DMatrix<f64>, targets: &[usize], k: usize, fam: &ProbeFamily, seed: u64) -> f64 {
    let budget = fam.default_budget(points.nrows()).min(2000);
    match &fam.kind {
        ProbeKind::Linear => pocket_perceptron(points, targets, k, budget, seed, fam.include_bias).1,
        ProbeKind::Mlp { hidden_widths } => mlp_fit_accuracy(points, targets, k, hidden_widths, budget, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{one_hot_encoder, setf_encoder};

    fn check_separator(p: &LinearPredictor, points: &DMatrix<f64>, labels: &[usize]) {
        for (i, v) in eval_binary(p, points).iter().enumerate() {
            if labels[i] == 1 {
                assert!(*v > 0.0);
            } else {
                assert!(*v < 0.0);
            }
        }
    }

    #[test]
    fn xor_accuracy_by_family() {
        let points = DMatrix::from_row_slice(4, 2, &[0.1, 0.05, 0.9, 1.0, 0.05, 0.95, 1.0, 0.1]);
        let xor = [0, 0, 1, 1];
        assert_eq!(fit_accuracy(&points, &xor, 2, &ProbeFamily::linear(), 0), 0.75);
        assert_eq!(fit_accuracy(&points, &xor, 2, &ProbeFamily::mlp(vec![8]).unwrap(), 0), 1.0);
        let antipodal = DMatrix::from_row_slice(4, 2, &[-0.5, -0.4, 0.5, 0.4, -0.3, 0.5, 0.3, -0.5]);
        assert_eq!(fit_accuracy(&antipodal, &[1, 1, 0, 0], 2, &ProbeFamily::homogeneous(), 0), 0.5);
    }

    #[test]
    fn family_serde_uses_strings() {
        let f: ProbeFamily = serde_json::from_str("\"mlp:64,64\"").unwrap();
        assert_eq!(f, ProbeFamily::mlp(vec![64, 64]).unwrap());
        assert_eq!(serde_json::to_string(&ProbeFamily::homogeneous()).unwrap(), "\"linear-homogeneous\"");
        assert!(serde_json::from_str::<ProbeFamily>("\"quadratic\"").is_err());
    }

    #[test]
    fn family_parsing() {
        assert_eq!("linear".parse::<ProbeFamily>().unwrap(), ProbeFamily::linear());
        let f: ProbeFamily = "mlp:64,64".parse().unwrap();
        assert_eq!(f.kind, ProbeKind::Mlp { hidden_widths: vec![64, 64] });
        assert_eq!(f.to_string(), "mlp:64,64");
        assert!("mlp:".parse::<ProbeFamily>().is_err());
        assert!("mlp:0".parse::<ProbeFamily>().is_err());
        assert!("svm".parse::<ProbeFamily>().is_err());
    }

    #[test]
    fn separates_one_vertex_of_setf() {
        let pts = setf(3, 2).unwrap().vertices().clone();
        let labels = [1, 0, 0];
        let p = linear_separate(&pts, &labels, 1000, 0).expect("separable");
        check_separator(&p, &pts, &labels);
        // The vertex direction itself separates: <v0, v0> = 1, <v0, vj> = -1/2.
        let manual = LinearPredictor {
            weights: DMatrix::from_column_slice(2, 1, pts.row(0).transpose().as_slice()),
            bias: DVector::zeros(1),
        };
        check_separator(&manual, &pts, &labels);
    }

    #[test]
    fn identical_points_cannot_be_split() {
        let pts = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, 0.3, 0.4]);
        assert!(linear_separate(&pts, &[1, 0], 200, 0).is_none());
    }

    #[test]
    fn constant_labeling_uses_bias() {
        let pts = setf(4, 3).unwrap().vertices().clone();
        let p = linear_separate(&pts, &[1, 1, 1, 1], 10, 0).unwrap();
        assert_eq!(p.weights, DMatrix::zeros(3, 1));
        assert!(p.bias[0] > 0.0);
    }

    #[test]
    fn rank_criterion_examples() {
        assert!(shatterable_rank(setf(4, 3).unwrap().vertices(), 1e-8).unwrap());
        let line = DMatrix::from_fn(4, 3, |i, j| if j == 0 { i as f64 } else { 0.0 });
        assert!(!shatterable_rank(&line, 1e-8).unwrap());
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(shatterable_rank(&dup, 1e-8), Err(Error::DuplicatePoint(0, 1))));
    }

    #[test]
    fn collinear_triple_fails_alternating_labeling() {
        let pts = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        assert!(!shatterable_rank(&pts, 1e-8).unwrap());
        let failing: Vec<Vec<usize>> = enumerate_binary_labelings(3)
            .unwrap()
            .map(|l| l.label_of_class)
            .filter(|l| linear_separate(&pts, l, 2000, 1).is_none())
            .collect();
        assert_eq!(failing, vec![vec![0, 1, 0], vec![1, 0, 1]]);
        let w = inseparability_witness(&pts, 1e-8).unwrap();
        assert!(failing.contains(&w.labeling));
        assert!(w.residual < 1e-10);
    }

    #[test]
    fn m_predictability() {
        let m = maximal_invariant(&EquivalenceRelation::from_labels(vec![0, 0, 1, 2, 2]).unwrap());
        let fam = ProbeFamily::linear();
        let p = m_predictable(&one_hot_encoder(&m), &m, &fam, 1000, 0).unwrap().unwrap();
        let pred = p.predict(one_hot_encoder(&m).reps());
        assert!(pred.iter().zip(m.values()).all(|(a, b)| *a == Some(*b)));

        let constant = Encoder::new(DMatrix::from_element(5, 2, 1.0)).unwrap();
        assert!(m_predictable(&constant, &m, &fam, 100, 0).unwrap().is_none());

        let m4 = maximal_invariant(&EquivalenceRelation::from_labels(vec![0, 1, 2, 3]).unwrap());
        let e = setf_encoder(&m4, 3).unwrap();
        assert!(m_predictable(&e, &m4, &fam, 1000, 0).unwrap().is_some());
    }

    #[test]
    fn kary_three_classes_on_one_hot() {
        let m = maximal_invariant(&EquivalenceRelation::from_labels(vec![0, 1, 2, 0, 1, 2]).unwrap());
        let pts = one_hot_encoder(&m).into_reps();
        let target: Vec<usize> = m.values().to_vec();
        // Two-class predictor for merged labels [0, 1, 1]: logits (1 - x0... ) by hand.
        let f_km1 = LinearPredictor {
            weights: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]),
            bias: DVector::zeros(2),
        };
        let f2 = LinearPredictor {
            weights: DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
            bias: DVector::from_element(1, -0.5),
        };
        let f2p = LinearPredictor {
            weights: DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]),
            bias: DVector::from_element(1, -0.5),
        };
        let out = kary_from_binary(&f_km1, &f2, &f2p, &pts, &target).unwrap();
        let pred = out.predict(&pts);
        assert!(pred.iter().zip(&target).all(|(a, b)| *a == Some(*b)));

        // Swapping the binary parts violates the firing precondition.
        assert!(matches!(
            kary_from_binary(&f_km1, &f2p, &f2, &pts, &target),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn kary_two_class_passthrough() {
        let pts = setf(3, 2).unwrap().vertices().clone();
        let target = [1, 0, 1];
        let f2 = linear_separate(&pts, &target, 1000, 3).unwrap();
        let f2p = linear_separate(&pts, &[0, 1, 0], 1000, 4).unwrap();
        let out = kary_from_binary(&LinearPredictor::zeros(2, 1), &f2, &f2p, &pts, &target).unwrap();
        let binary = f2.predict_binary(&pts);
        let multi: Vec<usize> = out.predict(&pts).into_iter().map(Option::unwrap).collect();
        assert_eq!(binary, multi);
    }

    #[test]
    fn reports() {
        let eq = EquivalenceRelation::from_labels(vec![0, 0, 1, 1, 2, 3]).unwrap();
        let m = maximal_invariant(&eq);
        let fam = ProbeFamily::linear();
        let r = sample_optimality_report(&one_hot_encoder(&m), &eq, &fam, 1e-8, 2000, 0).unwrap();
        assert!(r.verdict);

        // sETF squeezed into C-2 dimensions by dropping a coordinate.
        let full = setf_encoder(&m, 3).unwrap();
        let squeezed = Encoder::new(full.reps().columns(0, 2).into_owned()).unwrap();
        let r = sample_optimality_report(&squeezed, &eq, &fam, 1e-8, 200, 0).unwrap();
        assert_eq!(r.shattered, Shattered::Exact(false));
        assert!(!r.verdict);

        // Shattered but not invariant.
        let mut reps = one_hot_encoder(&m).into_reps();
        reps[(1, 0)] = 0.5;
        let r = sample_optimality_report(&Encoder::new(reps).unwrap(), &eq, &fam, 1e-8, 2000, 0).unwrap();
        assert!(!r.invariant && r.shattered.holds() && !r.verdict);
    }

    #[test]
    fn report_json_shape() {
        let r = OptimalityReport {
            invariant: true,
            m_predictable: true,
            shattered: Shattered::Empirical { empirical: false },
            verdict: false,
        };
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        assert_eq!(v["shattered"]["empirical"], false);
        let r = OptimalityReport {
            shattered: Shattered::Exact(true),
            verdict: true,
            ..r
        };
        assert_eq!(serde_json::to_value(r).unwrap()["shattered"], true);
    }

    #[test]
    fn min_dimension_linear_small() {
        let eq = EquivalenceRelation::identity(2).unwrap();
        assert_eq!(empirical_min_dimension(&eq, &ProbeFamily::linear(), &[1, 2, 3], 1, 0).unwrap(), Some(1));
        let eq = EquivalenceRelation::identity(5).unwrap();
        assert_eq!(empirical_min_dimension(&eq, &ProbeFamily::linear(), &[1, 2, 3, 4, 5], 2, 0).unwrap(), Some(4));
    }
}
