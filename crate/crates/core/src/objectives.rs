//! The ISSL log loss on free features, and desk-scale CISSL and DISSL
//! objectives with analytic gradients and small trainers.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::Encoder;
use crate::error::{invalid, Error, Result};
use crate::metrics::{
    conditional_entropy, cosine_monitors, etf_distance, kl, marginal_entropy, permutation_accuracy, CategoricalBatch,
    PROB_FLOOR,
};
use crate::nn::{
    log_softmax_backward, log_softmax_rows, normalize_rows, normalize_rows_backward, random_unit_rows, softmax_backward,
    softmax_rows, Adam, Mlp,
};
use crate::probes::fit_linear_probe;
use crate::rng::{derive, rng, sub_rng};
use crate::synthetic::ClusterWorld;
use crate::tasks::unique_argmax;
use crate::world::{InputDistribution, MaximalInvariant};

/// Unit-norm tolerance for sphere parameters.
pub const SPHERE_TOL: f64 = 1e-9;

/// Training hyperparameters. Every run records the full config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// Pairs per step; `None` means the whole dataset.
    pub batch_size: Option<usize>,
    pub lambda: f64,
    pub beta: f64,
    pub teacher_temp: f64,
    pub cissl_temp: f64,
    /// Negatives per anchor (CISSL).
    pub negatives: usize,
    /// Teacher output size (DISSL).
    pub num_pseudo_classes: usize,
    pub hidden: usize,
    pub z_dim: usize,
    pub proj_dim: usize,
    pub symmetric: bool,
    pub two_positives: bool,
    /// Decoupled weight decay for the Adam trainers.
    pub weight_decay: f64,
    /// Independent DISSL initializations; the one with the lowest loss on
    /// clean inputs is kept.
    pub restarts: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Free-feature defaults.
    fn default() -> Self {
        Self {
            lr: 0.05,
            steps: 3000,
            batch_size: None,
            lambda: 2.3,
            beta: 0.8,
            teacher_temp: 0.5,
            cissl_temp: 0.07,
            negatives: 31,
            num_pseudo_classes: 8,
            hidden: 64,
            z_dim: 16,
            proj_dim: 16,
            symmetric: true,
            two_positives: true,
            weight_decay: 0.0,
            restarts: 1,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Adam settings for the DISSL trainer.
    pub fn dissl() -> Self {
        Self {
            lr: 0.003,
            steps: 3000,
            hidden: 32,
            restarts: 8,
            ..Self::default()
        }
    }

    /// Adam settings for the CISSL trainer.
    pub fn cissl() -> Self {
        Self {
            lr: 0.01,
            steps: 600,
            batch_size: Some(32),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("teacher_temp", self.teacher_temp),
            ("cissl_temp", self.cissl_temp),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("train config", format!("{name} = {v} must be positive")));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0 && self.beta.is_finite() && self.beta >= 0.0) {
            return Err(invalid("train config", "lambda and beta must be finite and non-negative"));
        }
        if self.negatives == 0 {
            return Err(invalid("train config", "need k >= 1 negatives"));
        }
        if self.num_pseudo_classes < 2 || self.hidden == 0 || self.z_dim == 0 || self.proj_dim == 0 {
            return Err(invalid("train config", "layer sizes must be positive and C >= 2"));
        }
        if self.batch_size == Some(0) || self.log_every == 0 || self.restarts == 0 {
            return Err(invalid("train config", "batch_size, log_every and restarts must be positive"));
        }
        Ok(())
    }
}

/// One monitor row; absent values are written as empty CSV cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub mxml: Option<f64>,
    pub det_inv: Option<f64>,
    pub dstl: Option<f64>,
    #[serde(rename = "H_marginal")]
    pub h_marginal: Option<f64>,
    #[serde(rename = "H_conditional")]
    pub h_conditional: Option<f64>,
    pub kl_invariance: Option<f64>,
    pub kl_distill: Option<f64>,
    pub cos_pos: Option<f64>,
    pub cos_neg: Option<f64>,
    pub etf_distance: Option<f64>,
}

impl TraceRow {
    pub const COLUMNS: [&'static str; 12] = [
        "step",
        "loss",
        "mxml",
        "det_inv",
        "dstl",
        "H_marginal",
        "H_conditional",
        "kl_invariance",
        "kl_distill",
        "cos_pos",
        "cos_neg",
        "etf_distance",
    ];

    /// Values in [`TraceRow::COLUMNS`] order.
    pub fn values(&self) -> [Option<f64>; 11] {
        [
            Some(self.loss),
            self.mxml,
            self.det_inv,
            self.dstl,
            self.h_marginal,
            self.h_conditional,
            self.kl_invariance,
            self.kl_distill,
            self.cos_pos,
            self.cos_neg,
            self.etf_distance,
        ]
    }
}

fn check_finite(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, loss })
    }
}

// ---------------------------------------------------------------------------
// ISSL log loss on the sphere

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureLayout {
    /// One feature row per class.
    PerClass,
    /// One feature row per input.
    PerInput,
}

/// Free features `z` and class weights `w`, rows on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereParams {
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub layout: FeatureLayout,
}

impl SphereParams {
    pub fn new(z: DMatrix<f64>, w: DMatrix<f64>, layout: FeatureLayout) -> Result<Self> {
        let p = Self { z, w, layout };
        if p.z.ncols() != p.w.ncols() {
            return Err(Error::Shape(format!("z has d={}, w has d={}", p.z.ncols(), p.w.ncols())));
        }
        if !p.is_on_sphere(SPHERE_TOL) {
            return Err(invalid("sphere params", "rows must have unit norm"));
        }
        Ok(p)
    }

    pub fn random(rows: usize, c: usize, d: usize, layout: FeatureLayout, seed: u64) -> Self {
        let mut r = rng(seed);
        let z = random_unit_rows(rows, d, &mut r);
        let w = random_unit_rows(c, d, &mut r);
        Self { z, w, layout }
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn is_on_sphere(&self, tol: f64) -> bool {
        self.z.row_iter().chain(self.w.row_iter()).all(|r| (r.norm() - 1.0).abs() <= tol)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.z.transpose().iter().chain(self.w.transpose().iter()).copied().collect()
    }

    /// Overwrites `z` then `w` from a row-major flat vector.
    pub fn assign_flat(&mut self, src: &[f64]) {
        let d = self.dim();
        let nz = self.z.len();
        self.z = DMatrix::from_row_slice(self.z.nrows(), d, &src[..nz]);
        self.w = DMatrix::from_row_slice(self.w.nrows(), d, &src[nz..nz + self.w.len()]);
    }

    /// Per-input encoder induced by the features.
    pub fn encoder(&self, m: &MaximalInvariant) -> Result<Encoder> {
        match self.layout {
            FeatureLayout::PerInput => Encoder::new(self.z.clone()),
            FeatureLayout::PerClass => Encoder::new(DMatrix::from_fn(m.size(), self.dim(), |x, j| self.z[(m.get(x), j)])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrad {
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl SphereGrad {
    pub fn flatten(&self) -> Vec<f64> {
        self.z.transpose().iter().chain(self.w.transpose().iter()).copied().collect()
    }
}

fn check_issl_shapes(p: &SphereParams, m: &MaximalInvariant, px: &InputDistribution) -> Result<()> {
    let c = m.num_classes();
    if px.size() != m.size() {
        return Err(Error::Shape(format!("px has {} inputs, invariant has {}", px.size(), m.size())));
    }
    if p.w.nrows() != c {
        return Err(Error::Shape(format!("w has {} rows, expected C={c}", p.w.nrows())));
    }
    let rows = match p.layout {
        FeatureLayout::PerClass => c,
        FeatureLayout::PerInput => m.size(),
    };
    if p.z.nrows() != rows {
        return Err(Error::Shape(format!("z has {} rows, expected {rows}", p.z.nrows())));
    }
    if p.z.ncols() != p.w.ncols() {
        return Err(Error::Shape("z and w dimensions differ".into()));
    }
    Ok(())
}

fn z_row(p: &SphereParams, m: &MaximalInvariant, x: usize) -> usize {
    match p.layout {
        FeatureLayout::PerClass => m.get(x),
        FeatureLayout::PerInput => x,
    }
}

/// `E_px[-log softmax(W z(x))[m(x)]]`.
pub fn issl_log_loss(p: &SphereParams, m: &MaximalInvariant, px: &InputDistribution) -> Result<f64> {
    Ok(grad_issl_log_loss(p, m, px)?.0)
}

/// Loss and its Euclidean gradient with respect to every `z` and `w` row.
pub fn grad_issl_log_loss(p: &SphereParams, m: &MaximalInvariant, px: &InputDistribution) -> Result<(f64, SphereGrad)> {
    check_issl_shapes(p, m, px)?;
    let logits = &p.z * p.w.transpose();
    let lp = log_softmax_rows(&logits);
    let probs = softmax_rows(&logits);
    let mut gz = DMatrix::zeros(p.z.nrows(), p.dim());
    let mut gw = DMatrix::zeros(p.w.nrows(), p.dim());
    let mut loss = 0.0;
    for x in 0..m.size() {
        let weight = px.pmf()[x];
        if weight == 0.0 {
            continue;
        }
        let r = z_row(p, m, x);
        let target = m.get(x);
        loss -= weight * lp[(r, target)];
        let mut dlogit = probs.row(r).clone_owned() * weight;
        dlogit[target] -= weight;
        let dz = &dlogit * &p.w;
        let mut zr = gz.row_mut(r);
        zr += dz;
        gw += dlogit.transpose() * p.z.row(r);
    }
    Ok((loss, SphereGrad { z: gz, w: gw }))
}

/// Removes the radial component of each gradient row.
pub fn tangent_project(points: &DMatrix<f64>, grad: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = grad.clone();
    for i in 0..points.nrows() {
        let radial = points.row(i).dot(&grad.row(i));
        let p = points.row(i).clone_owned();
        let mut row = out.row_mut(i);
        row -= p * radial;
    }
    out
}

fn retract(points: &mut DMatrix<f64>, step: &DMatrix<f64>) {
    *points -= step;
    for mut row in points.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

/// Riemannian gradient norm (tangent components of both blocks).
pub fn riemannian_grad_norm(p: &SphereParams, g: &SphereGrad) -> f64 {
    let tz = tangent_project(&p.z, &g.z);
    let tw = tangent_project(&p.w, &g.w);
    (tz.norm_squared() + tw.norm_squared()).sqrt()
}

fn free_feature_row(step: usize, loss: f64, p: &SphereParams) -> Result<TraceRow> {
    let ids: Vec<usize> = (0..p.z.nrows()).collect();
    let etf = etf_distance(&p.z, &ids, None).ok().map(|e| e.gap());
    let cos = cosine_monitors(&p.z, &ids).ok();
    Ok(TraceRow {
        step,
        loss,
        cos_neg: cos.and_then(|c| c.cos_neg),
        etf_distance: etf,
        ..TraceRow::default()
    })
}

/// Minimizes the ISSL log loss over per-class features and class weights on
/// the unit sphere, starting from seeded uniform points.
///
/// For `d >= 2` each step moves every row along its tangent-projected
/// gradient and renormalizes. For `d = 1` the sphere is `{-1, +1}`, so the
/// search flips single signs while the loss strictly decreases.
///
/// The trace column `etf_distance` holds `pos + neg + 1/(C-1)` for the
/// feature rows, which is zero exactly on a simplex ETF.
pub fn minimize_issl_free_features(
    c: usize,
    d: usize,
    px_class: &[f64],
    cfg: &TrainConfig,
) -> Result<(SphereParams, Vec<TraceRow>)> {
    if c < 2 || d == 0 {
        return Err(invalid("free features", format!("need C >= 2 and d >= 1, got C={c}, d={d}")));
    }
    if px_class.len() != c {
        return Err(Error::Shape(format!("{} class probabilities for C={c}", px_class.len())));
    }
    cfg.validate()?;
    let px = InputDistribution::new(px_class.to_vec())?;
    let m = crate::world::maximal_invariant(&crate::world::EquivalenceRelation::identity(c)?);
    let mut p = SphereParams::random(c, c, d, FeatureLayout::PerClass, cfg.seed);
    let mut trace = Vec::new();

    if d == 1 {
        let mut loss = issl_log_loss(&p, &m, &px)?;
        trace.push(free_feature_row(0, loss, &p)?);
        for sweep in 1..=cfg.steps {
            let mut improved = false;
            for idx in 0..2 * c {
                let mut q = p.clone();
                if idx < c {
                    q.z[(idx, 0)] *= -1.0;
                } else {
                    q.w[(idx - c, 0)] *= -1.0;
                }
                let l = issl_log_loss(&q, &m, &px)?;
                if l < loss {
                    p = q;
                    loss = l;
                    improved = true;
                }
            }
            if !improved {
                trace.push(free_feature_row(sweep, loss, &p)?);
                break;
            }
        }
        return Ok((p, trace));
    }

    for step in 0..=cfg.steps {
        let (loss, g) = grad_issl_log_loss(&p, &m, &px)?;
        check_finite(step, loss)?;
        if step % cfg.log_every == 0 || step == cfg.steps {
            trace.push(free_feature_row(step, loss, &p)?);
        }
        if step == cfg.steps {
            break;
        }
        let tz = tangent_project(&p.z, &g.z) * cfg.lr;
        let tw = tangent_project(&p.w, &g.w) * cfg.lr;
        retract(&mut p.z, &tz);
        retract(&mut p.w, &tw);
    }
    Ok((p, trace))
}

// ---------------------------------------------------------------------------
// Shared three-network model

/// Encoder plus teacher and student heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadedModel {
    pub encoder: Mlp,
    pub teacher: Mlp,
    pub student: Mlp,
}

impl HeadedModel {
    /// Encoder `input -> hidden -> z`, teacher `z -> hidden -> out`, linear
    /// student `z -> out`.
    pub fn init(input: usize, hidden: usize, z_dim: usize, out: usize, student_bias: bool, seed: u64) -> Self {
        let mut r = rng(seed);
        Self {
            encoder: Mlp::init(&[input, hidden, z_dim], true, &mut r),
            teacher: Mlp::init(&[z_dim, hidden, out], true, &mut r),
            student: Mlp::init(&[z_dim, out], student_bias, &mut r),
        }
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.teacher.num_params() + self.student.num_params()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.encoder.flatten();
        v.extend(self.teacher.flatten());
        v.extend(self.student.flatten());
        v
    }

    pub fn assign_flat(&mut self, src: &[f64]) {
        let mut used = self.encoder.assign_flat(src);
        used += self.teacher.assign_flat(&src[used..]);
        self.student.assign_flat(&src[used..]);
    }

    fn check(&self, input_dim: usize) -> Result<()> {
        let z = self.encoder.output_dim();
        if self.encoder.input_dim() != input_dim {
            return Err(Error::Shape(format!(
                "encoder expects {} features, batch has {input_dim}",
                self.encoder.input_dim()
            )));
        }
        if self.teacher.input_dim() != z || self.student.input_dim() != z {
            return Err(Error::Shape("heads must read the encoder output".into()));
        }
        if self.teacher.output_dim() != self.student.output_dim() {
            return Err(Error::Shape("teacher and student output sizes differ".into()));
        }
        Ok(())
    }

    /// Encoder output for every row.
    pub fn represent(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.encoder.forward(x)
    }

    fn zero_grad(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            teacher: self.teacher.zeros_like(),
            student: self.student.zeros_like(),
        }
    }
}

fn add_flat(acc: &mut Mlp, g: &Mlp) {
    let mut a = acc.flatten();
    for (x, y) in a.iter_mut().zip(g.flatten()) {
        *x += y;
    }
    acc.assign_flat(&a);
}

// ---------------------------------------------------------------------------
// CISSL

/// Row indices into an input matrix: one anchor, its positive and its
/// negatives per example.
#[derive(Debug, Clone, PartialEq)]
pub struct CisslBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl CisslBatch {
    /// Inputs laid out as `[x1; x2]` with `b` pairs; the negatives of pair
    /// `i` are the positives of every other pair.
    pub fn in_batch(b: usize) -> Self {
        Self {
            anchors: (0..b).collect(),
            positives: (b..2 * b).collect(),
            negatives: (0..b).map(|i| (0..b).filter(|&j| j != i).map(|j| b + j).collect()).collect(),
        }
    }

    fn check(&self, rows: usize) -> Result<()> {
        let n = self.anchors.len();
        if n == 0 || self.positives.len() != n || self.negatives.len() != n {
            return Err(Error::Shape("anchors, positives and negatives must align".into()));
        }
        if self.negatives.iter().any(Vec::is_empty) {
            return Err(invalid("CISSL batch", "need k >= 1 negatives per anchor"));
        }
        let all = self.anchors.iter().chain(&self.positives).chain(self.negatives.iter().flatten());
        if let Some(&i) = all.into_iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("row index {i} outside 0..{rows}")));
        }
        Ok(())
    }

    /// Candidate rows and target weights for anchor `i`.
    fn candidates(&self, i: usize, two_positives: bool) -> (Vec<usize>, Vec<f64>) {
        let mut rows = Vec::with_capacity(self.negatives[i].len() + 2);
        let mut target = Vec::with_capacity(rows.capacity());
        if two_positives {
            rows.push(self.anchors[i]);
            target.push(0.5);
            rows.push(self.positives[i]);
            target.push(0.5);
        } else {
            rows.push(self.positives[i]);
            target.push(1.0);
        }
        for &n in &self.negatives[i] {
            rows.push(n);
            target.push(0.0);
        }
        (rows, target)
    }
}

/// Mean over anchors of the cross-entropy between the target over
/// candidates and `softmax(<s(anchor), t(candidate)> / τ)`, with unit-normalized
/// student and teacher head outputs.
pub fn cissl_loss(model: &HeadedModel, inputs: &DMatrix<f64>, batch: &CisslBatch, tau: f64, two_positives: bool) -> Result<f64> {
    Ok(cissl_loss_grad(model, inputs, batch, tau, two_positives)?.0)
}

pub fn cissl_loss_grad(
    model: &HeadedModel,
    inputs: &DMatrix<f64>,
    batch: &CisslBatch,
    tau: f64,
    two_positives: bool,
) -> Result<(f64, HeadedModel)> {
    model.check(inputs.ncols())?;
    batch.check(inputs.nrows())?;
    if !(tau > 0.0) {
        return Err(invalid("temperature", "must be positive"));
    }
    let (z, cz) = model.encoder.forward_cached(inputs);
    let (s_raw, cs) = model.student.forward_cached(&z);
    let (t_raw, ct) = model.teacher.forward_cached(&z);
    let (s, ns) = normalize_rows(&s_raw);
    let (t, nt) = normalize_rows(&t_raw);
    let mut ds = DMatrix::zeros(s.nrows(), s.ncols());
    let mut dt = DMatrix::zeros(t.nrows(), t.ncols());
    let b = batch.anchors.len() as f64;
    let mut loss = 0.0;
    for i in 0..batch.anchors.len() {
        let a = batch.anchors[i];
        let (rows, target) = batch.candidates(i, two_positives);
        let logits = DMatrix::from_fn(1, rows.len(), |_, j| s.row(a).dot(&t.row(rows[j])) / tau);
        let lp = log_softmax_rows(&logits);
        let p = softmax_rows(&logits);
        loss -= target.iter().enumerate().map(|(j, w)| w * lp[(0, j)]).sum::<f64>() / b;
        for (j, &r) in rows.iter().enumerate() {
            let g = (p[(0, j)] - target[j]) / (b * tau);
            let tr = t.row(r).clone_owned();
            let sa = s.row(a).clone_owned();
            let mut da = ds.row_mut(a);
            da += tr * g;
            let mut dr = dt.row_mut(r);
            dr += sa * g;
        }
    }
    let ds_raw = normalize_rows_backward(&s, &ns, &ds);
    let dt_raw = normalize_rows_backward(&t, &nt, &dt);
    let (gs, dzs) = model.student.backward(&cs, &ds_raw);
    let (gt, dzt) = model.teacher.backward(&ct, &dt_raw);
    let (ge, _) = model.encoder.backward(&cz, &(dzs + dzt));
    Ok((
        loss,
        HeadedModel {
            encoder: ge,
            teacher: gt,
            student: gs,
        },
    ))
}

/// Outcome of a CISSL run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CisslSummary {
    pub final_loss: f64,
    pub probe_train_accuracy: f64,
    pub cos_pos_first: Option<f64>,
    pub cos_pos_last: Option<f64>,
}

fn cluster_monitors(model: &HeadedModel, world: &ClusterWorld) -> (Option<f64>, Option<f64>) {
    let z = model.represent(world.points());
    match cosine_monitors(&z, world.relation().class_of()) {
        Ok(c) => (c.cos_pos, c.cos_neg),
        Err(_) => (None, None),
    }
}

/// Linear probe on frozen encoder outputs, predicting the true class.
pub fn frozen_probe_accuracy(model: &HeadedModel, world: &ClusterWorld, seed: u64) -> f64 {
    let z = model.represent(world.points());
    fit_linear_probe(&z, world.relation().class_of(), world.num_classes(), 2000, seed).1
}

/// Adam on the CISSL loss. Each step draws `negatives + 1` anchors
/// uniformly, one augmented positive each, and uses in-batch negatives.
pub fn train_cissl(world: &ClusterWorld, cfg: &TrainConfig) -> Result<(HeadedModel, Vec<TraceRow>, CisslSummary)> {
    cfg.validate()?;
    let b = cfg.negatives + 1;
    let mut model = HeadedModel::init(world.dim(), cfg.hidden, cfg.z_dim, cfg.proj_dim, true, cfg.seed);
    let mut opt = Adam::new(cfg.lr, model.num_params()).with_weight_decay(cfg.weight_decay);
    let batch = CisslBatch::in_batch(b);
    let mut r = sub_rng(cfg.seed, 1);
    let mut trace = Vec::new();
    let mut last_loss = f64::NAN;
    for step in 0..=cfg.steps {
        let anchors: Vec<usize> = (0..b).map(|_| r.random_range(0..world.size())).collect();
        let x1 = world.augment(&anchors, &mut r);
        let x2 = world.augment(&anchors, &mut r);
        let mut inputs = DMatrix::zeros(2 * b, world.dim());
        inputs.rows_mut(0, b).copy_from(&x1);
        inputs.rows_mut(b, b).copy_from(&x2);
        let (loss, g) = cissl_loss_grad(&model, &inputs, &batch, cfg.cissl_temp, cfg.two_positives)?;
        check_finite(step, loss)?;
        last_loss = loss;
        if step % cfg.log_every == 0 || step == cfg.steps {
            let (cos_pos, cos_neg) = cluster_monitors(&model, world);
            trace.push(TraceRow {
                step,
                loss,
                cos_pos,
                cos_neg,
                ..TraceRow::default()
            });
        }
        if step == cfg.steps {
            break;
        }
        let mut theta = model.flatten();
        opt.step(&mut theta, &g.flatten());
        model.assign_flat(&theta);
    }
    let summary = CisslSummary {
        final_loss: last_loss,
        probe_train_accuracy: frozen_probe_accuracy(&model, world, cfg.seed),
        cos_pos_first: trace.first().and_then(|t| t.cos_pos),
        cos_pos_last: trace.last().and_then(|t| t.cos_pos),
    };
    Ok((model, trace, summary))
}

// ---------------------------------------------------------------------------
// DISSL

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisslLossConfig {
    pub lambda: f64,
    pub beta: f64,
    pub tau: f64,
    pub symmetric: bool,
}

impl From<&TrainConfig> for DisslLossConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lambda: c.lambda,
            beta: c.beta,
            tau: c.teacher_temp,
            symmetric: c.symmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisslParts {
    pub total: f64,
    /// `Σ_m t(m) log t(m) = -H[M̂]`.
    pub mxml: f64,
    pub det_inv: f64,
    pub dstl: f64,
}

impl DisslParts {
    fn scale_add(&mut self, o: &DisslParts, w: f64) {
        self.total += w * o.total;
        self.mxml += w * o.mxml;
        self.det_inv += w * o.det_inv;
        self.dstl += w * o.dstl;
    }
}

fn floor_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// One direction of the loss: the teacher reads `z1`, the second teacher
/// view and the student read `z2`. Returns the parts and the gradients with
/// respect to `z1`, `z2` and the head parameters.
fn dissl_asym(
    model: &HeadedModel,
    z1: &DMatrix<f64>,
    z2: &DMatrix<f64>,
    cfg: &DisslLossConfig,
) -> (DisslParts, DMatrix<f64>, DMatrix<f64>, Mlp, Mlp) {
    let n = z1.nrows() as f64;
    let (g1, c1) = model.teacher.forward_cached(z1);
    let (g2, c2) = model.teacher.forward_cached(z2);
    let (sl, cs) = model.student.forward_cached(z2);
    let l1 = g1 / cfg.tau;
    let l2 = g2 / cfg.tau;
    let t1 = softmax_rows(&l1);
    let ls2 = log_softmax_rows(&l2);
    let lss = log_softmax_rows(&sl);
    let k = t1.ncols();
    let marg: Vec<f64> = t1.column_iter().map(|c| c.sum() / n).collect();
    let mxml: f64 = marg.iter().map(|&p| p * floor_ln(p)).sum();
    let det_inv = t1.component_mul(&ls2).sum() / n;
    let dstl = t1.component_mul(&lss).sum() / n;
    let total = cfg.lambda * mxml - cfg.beta * det_inv - dstl;

    // d mxml / d marg_m = log marg_m + 1 (or the floored constant).
    let dmarg: Vec<f64> = marg
        .iter()
        .map(|&p| if p >= PROB_FLOOR { p.ln() + 1.0 } else { PROB_FLOOR.ln() })
        .collect();
    let dt1 = DMatrix::from_fn(t1.nrows(), k, |i, m| {
        (cfg.lambda * dmarg[m] - cfg.beta * ls2[(i, m)] - lss[(i, m)]) / n
    });
    let dls2 = &t1 * (-cfg.beta / n);
    let dlss = &t1 * (-1.0 / n);
    let dl1 = softmax_backward(&t1, &dt1);
    let dl2 = log_softmax_backward(&softmax_rows(&l2), &dls2);
    let dsl = log_softmax_backward(&softmax_rows(&sl), &dlss);
    let (gt1, dz1) = model.teacher.backward(&c1, &(dl1 / cfg.tau));
    let (gt2, dz2t) = model.teacher.backward(&c2, &(dl2 / cfg.tau));
    let (gs, dz2s) = model.student.backward(&cs, &dsl);
    let mut gt = gt1;
    add_flat(&mut gt, &gt2);
    (
        DisslParts {
            total,
            mxml,
            det_inv,
            dstl,
        },
        dz1,
        dz2t + dz2s,
        gt,
        gs,
    )
}

/// Batched DISSL loss `λ mxml - β det_inv - dstl` on views `x1`, `x2`.
/// With `symmetric`, the average of both directions.
pub fn dissl_loss(model: &HeadedModel, x1: &DMatrix<f64>, x2: &DMatrix<f64>, cfg: &DisslLossConfig) -> Result<DisslParts> {
    Ok(dissl_loss_grad(model, x1, x2, cfg)?.0)
}

pub fn dissl_loss_grad(
    model: &HeadedModel,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    cfg: &DisslLossConfig,
) -> Result<(DisslParts, HeadedModel)> {
    model.check(x1.ncols())?;
    if x1.shape() != x2.shape() || x1.nrows() == 0 {
        return Err(Error::Shape("views must have equal nonzero shapes".into()));
    }
    if !(cfg.tau > 0.0) {
        return Err(invalid("temperature", "must be positive"));
    }
    let (z1, c1) = model.encoder.forward_cached(x1);
    let (z2, c2) = model.encoder.forward_cached(x2);
    let mut grad = model.zero_grad();
    let mut parts = DisslParts {
        total: 0.0,
        mxml: 0.0,
        det_inv: 0.0,
        dstl: 0.0,
    };
    let directions: &[(bool, f64)] = if cfg.symmetric { &[(false, 0.5), (true, 0.5)] } else { &[(false, 1.0)] };
    let mut dz1 = DMatrix::zeros(z1.nrows(), z1.ncols());
    let mut dz2 = DMatrix::zeros(z2.nrows(), z2.ncols());
    for &(swap, w) in directions {
        let (a, b) = if swap { (&z2, &z1) } else { (&z1, &z2) };
        let (p, da, db, gt, gs) = dissl_asym(model, a, b, cfg);
        parts.scale_add(&p, w);
        let (d1, d2) = if swap { (db, da) } else { (da, db) };
        dz1 += d1 * w;
        dz2 += d2 * w;
        let mut gt_flat = grad.teacher.flatten();
        gt_flat.iter_mut().zip(gt.flatten()).for_each(|(x, y)| *x += w * y);
        grad.teacher.assign_flat(&gt_flat);
        let mut gs_flat = grad.student.flatten();
        gs_flat.iter_mut().zip(gs.flatten()).for_each(|(x, y)| *x += w * y);
        grad.student.assign_flat(&gs_flat);
    }
    let (ge1, _) = model.encoder.backward(&c1, &dz1);
    let (ge2, _) = model.encoder.backward(&c2, &dz2);
    grad.encoder = ge1;
    add_flat(&mut grad.encoder, &ge2);
    Ok((parts, grad))
}

/// Teacher distribution `softmax(g(enc(x)) / τ)`.
pub fn teacher_probs(model: &HeadedModel, x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    softmax_rows(&(model.teacher.forward(&model.encoder.forward(x)) / tau))
}

/// Student distribution `softmax(Wᵀ enc(x))`.
pub fn student_probs(model: &HeadedModel, x: &DMatrix<f64>) -> DMatrix<f64> {
    softmax_rows(&model.student.forward(&model.encoder.forward(x)))
}

fn mean_row_kl(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let n = p.nrows() as f64;
    (0..p.nrows())
        .map(|i| {
            let a: Vec<f64> = p.row(i).iter().copied().collect();
            let b: Vec<f64> = q.row(i).iter().copied().collect();
            kl(&a, &b)
        })
        .sum::<f64>()
        / n
}

/// Outcome of a DISSL run, measured on the clean inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisslSummary {
    pub final_loss: f64,
    /// Index of the kept restart and the clean loss of every restart.
    pub restart: usize,
    pub restart_losses: Vec<f64>,
    pub teacher_accuracy: f64,
    pub h_marginal: f64,
    pub h_conditional: f64,
    pub probe_train_accuracy: f64,
    pub student_teacher_agreement: f64,
}

/// Adam on the DISSL loss. Each step draws two augmented views of a batch
/// of inputs (all inputs when `batch_size` is `None`).
///
/// With `restarts > 1` each restart `i` uses seed `derive(seed, i)` and the
/// run with the lowest loss on un-augmented inputs is returned. Labels play
/// no part in the choice.
pub fn train_dissl(world: &ClusterWorld, cfg: &TrainConfig) -> Result<(HeadedModel, Vec<TraceRow>, DisslSummary)> {
    cfg.validate()?;
    let runs: Vec<(HeadedModel, Vec<TraceRow>, f64)> = if cfg.restarts == 1 {
        vec![dissl_single_run(world, cfg, cfg.seed)?]
    } else {
        (0..cfg.restarts)
            .into_par_iter()
            .map(|i| dissl_single_run(world, cfg, derive(cfg.seed, i as u64)))
            .collect::<Result<_>>()?
    };
    let loss_cfg = DisslLossConfig::from(cfg);
    let clean: Vec<f64> = runs
        .iter()
        .map(|(m, _, _)| dissl_loss(m, world.points(), world.points(), &loss_cfg).map(|p| p.total))
        .collect::<Result<_>>()?;
    let best = (0..clean.len()).fold(0, |b, i| if clean[i] < clean[b] { i } else { b });
    let (model, trace, final_loss) = runs.into_iter().nth(best).expect("at least one restart");
    let mut summary = dissl_summary(&model, world, cfg, final_loss)?;
    summary.restart = best;
    summary.restart_losses = clean;
    Ok((model, trace, summary))
}

fn dissl_single_run(world: &ClusterWorld, cfg: &TrainConfig, seed: u64) -> Result<(HeadedModel, Vec<TraceRow>, f64)> {
    let loss_cfg = DisslLossConfig::from(cfg);
    let mut model = HeadedModel::init(world.dim(), cfg.hidden, cfg.z_dim, cfg.num_pseudo_classes, false, seed);
    let mut opt = Adam::new(cfg.lr, model.num_params()).with_weight_decay(cfg.weight_decay);
    let mut r = sub_rng(seed, 1);
    let all: Vec<usize> = (0..world.size()).collect();
    let mut trace = Vec::new();
    let mut last = None;
    for step in 0..=cfg.steps {
        let xs: Vec<usize> = match cfg.batch_size {
            None => all.clone(),
            Some(b) => (0..b).map(|_| r.random_range(0..world.size())).collect(),
        };
        let x1 = world.augment(&xs, &mut r);
        let x2 = world.augment(&xs, &mut r);
        let (parts, g) = dissl_loss_grad(&model, &x1, &x2, &loss_cfg)?;
        check_finite(step, parts.total)?;
        last = Some(parts);
        if step % cfg.log_every == 0 || step == cfg.steps {
            let t_clean = teacher_probs(&model, world.points(), cfg.teacher_temp);
            let s_clean = student_probs(&model, world.points());
            let batch = CategoricalBatch::new(t_clean.clone())?;
            let (cos_pos, cos_neg) = cluster_monitors(&model, world);
            trace.push(TraceRow {
                step,
                loss: parts.total,
                mxml: Some(parts.mxml),
                det_inv: Some(parts.det_inv),
                dstl: Some(parts.dstl),
                h_marginal: Some(marginal_entropy(&batch)),
                h_conditional: Some(conditional_entropy(&batch)),
                kl_invariance: Some(mean_row_kl(
                    &teacher_probs(&model, &x1, cfg.teacher_temp),
                    &teacher_probs(&model, &x2, cfg.teacher_temp),
                )),
                kl_distill: Some(mean_row_kl(&t_clean, &s_clean)),
                cos_pos,
                cos_neg,
                etf_distance: None,
            });
        }
        if step == cfg.steps {
            break;
        }
        let mut theta = model.flatten();
        opt.step(&mut theta, &g.flatten());
        model.assign_flat(&theta);
    }
    Ok((model, trace, last.map_or(f64::NAN, |p| p.total)))
}

fn argmax_labels(p: &DMatrix<f64>) -> Vec<Option<usize>> {
    (0..p.nrows()).map(|i| unique_argmax(p.row(i).iter())).collect()
}

fn dissl_summary(model: &HeadedModel, world: &ClusterWorld, cfg: &TrainConfig, final_loss: f64) -> Result<DisslSummary> {
    let t = teacher_probs(model, world.points(), cfg.teacher_temp);
    let s = student_probs(model, world.points());
    let batch = CategoricalBatch::new(t.clone())?;
    let truth = world.relation().class_of();
    let k = cfg.num_pseudo_classes;
    let c = world.num_classes();
    // Ties count as wrong: they are mapped to an id that cannot match.
    let teacher_labels: Vec<Option<usize>> = argmax_labels(&t);
    let teacher_accuracy = if k == c {
        let pred: Vec<usize> = teacher_labels.iter().map(|l| l.unwrap_or(0)).collect();
        let tied = teacher_labels.iter().filter(|l| l.is_none()).count() as f64 / pred.len() as f64;
        (permutation_accuracy(&pred, truth, c)? - tied).max(0.0)
    } else {
        f64::NAN
    };
    let student_labels = argmax_labels(&s);
    let agree = teacher_labels
        .iter()
        .zip(&student_labels)
        .filter(|(a, b)| a.is_some() && a == b)
        .count() as f64
        / truth.len() as f64;
    Ok(DisslSummary {
        final_loss,
        restart: 0,
        restart_losses: Vec::new(),
        teacher_accuracy,
        h_marginal: marginal_entropy(&batch),
        h_conditional: conditional_entropy(&batch),
        probe_train_accuracy: frozen_probe_accuracy(model, world, cfg.seed),
        student_teacher_agreement: agree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::setf;
    use crate::gradcheck::{central_difference, max_rel_error, rel_error_norm};
    use crate::synthetic::ClusterSpec;
    use crate::world::{maximal_invariant, EquivalenceRelation};

    fn ident(c: usize) -> MaximalInvariant {
        maximal_invariant(&EquivalenceRelation::identity(c).unwrap())
    }

    #[test]
    fn issl_loss_examples() {
        let m = ident(2);
        let px = InputDistribution::uniform(2);
        let z = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let p = SphereParams::new(z.clone(), z, FeatureLayout::PerClass).unwrap();
        let expect = (1.0 + (-2f64).exp()).ln();
        assert!((issl_log_loss(&p, &m, &px).unwrap() - expect).abs() < 1e-15);

        let m = ident(3);
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let w = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.0, 1.0, 0.0, -1.0]);
        let p = SphereParams::new(z, w, FeatureLayout::PerClass).unwrap();
        assert!((issl_log_loss(&p, &m, &InputDistribution::uniform(3)).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn issl_shape_errors() {
        let p = SphereParams::random(3, 3, 2, FeatureLayout::PerClass, 0);
        assert!(matches!(issl_log_loss(&p, &ident(4), &InputDistribution::uniform(4)), Err(Error::Shape(_))));
    }

    #[test]
    fn issl_gradient_matches_differences() {
        let m = maximal_invariant(&EquivalenceRelation::from_labels(vec![0, 1, 2, 1]).unwrap());
        let px = InputDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        for (seed, layout, rows) in [(1, FeatureLayout::PerClass, 3), (2, FeatureLayout::PerInput, 4)] {
            let p = SphereParams::random(rows, 3, 2, layout, seed);
            let (_, g) = grad_issl_log_loss(&p, &m, &px).unwrap();
            let num = central_difference(&p.flatten(), 1e-5, |t| {
                let mut q = p.clone();
                q.assign_flat(t);
                issl_log_loss(&q, &m, &px).unwrap()
            });
            assert!(max_rel_error(&g.flatten(), &num) < 1e-5);
        }
    }

    #[test]
    fn setf_is_stationary() {
        let c = 4;
        let v = setf(c, 3).unwrap().vertices().clone();
        let p = SphereParams::new(v.clone(), v, FeatureLayout::PerClass).unwrap();
        let (loss, g) = grad_issl_log_loss(&p, &ident(c), &InputDistribution::uniform(c)).unwrap();
        assert!(riemannian_grad_norm(&p, &g) < 1e-12);
        assert!(loss < (c as f64).ln());
    }

    #[test]
    fn free_features_two_classes_in_one_dimension() {
        let (p, _) = minimize_issl_free_features(2, 1, &[0.5, 0.5], &TrainConfig::default()).unwrap();
        assert_eq!(p.z[(0, 0)], -p.z[(1, 0)]);
        assert_eq!(p.z, p.w);
    }

    #[test]
    fn cissl_limits() {
        let model = HeadedModel::init(2, 4, 3, 3, true, 0);
        let inputs = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.3, -0.2]);
        let batch = CisslBatch {
            anchors: vec![0],
            positives: vec![1],
            negatives: vec![vec![0]],
        };
        // The positive and the negative are the same point.
        let l = cissl_loss(&model, &inputs, &batch, 0.07, false).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let none = CisslBatch {
            negatives: vec![vec![]],
            ..batch
        };
        assert!(cissl_loss(&model, &inputs, &none, 0.07, false).is_err());
    }

    #[test]
    fn cissl_gradient_matches_differences() {
        let model = HeadedModel::init(2, 5, 3, 4, true, 7);
        let x = random_unit_rows(8, 2, &mut rng(8));
        let batch = CisslBatch::in_batch(4);
        for two in [false, true] {
            let (_, g) = cissl_loss_grad(&model, &x, &batch, 0.5, two).unwrap();
            let num = central_difference(&model.flatten(), 1e-5, |t| {
                let mut m = model.clone();
                m.assign_flat(t);
                cissl_loss(&m, &x, &batch, 0.5, two).unwrap()
            });
            assert!(rel_error_norm(&g.flatten(), &num) < 1e-6);
        }
    }

    #[test]
    fn dissl_uniform_and_matched_cases() {
        let mut model = HeadedModel::init(2, 4, 3, 5, false, 1);
        let zeros = vec![0.0; model.teacher.num_params()];
        model.teacher.assign_flat(&zeros);
        model.student.assign_flat(&vec![0.0; model.student.num_params()]);
        let x = random_unit_rows(6, 2, &mut rng(2));
        let cfg = DisslLossConfig {
            lambda: 2.3,
            beta: 0.8,
            tau: 0.5,
            symmetric: true,
        };
        let p = dissl_loss(&model, &x, &x, &cfg).unwrap();
        let lc = 5f64.ln();
        assert!((p.mxml + lc).abs() < 1e-12 && (p.det_inv + lc).abs() < 1e-12 && (p.dstl + lc).abs() < 1e-12);
        assert!((p.total - (-2.3 * lc + 1.8 * lc)).abs() < 1e-12);
    }

    #[test]
    fn dissl_gradient_matches_differences() {
        let model = HeadedModel::init(2, 5, 3, 4, false, 3);
        let mut r = rng(4);
        let x1 = random_unit_rows(6, 2, &mut r);
        let x2 = random_unit_rows(6, 2, &mut r);
        for symmetric in [false, true] {
            let cfg = DisslLossConfig {
                lambda: 2.3,
                beta: 0.8,
                tau: 0.5,
                symmetric,
            };
            let (p, g) = dissl_loss_grad(&model, &x1, &x2, &cfg).unwrap();
            assert!((p.total - (2.3 * p.mxml - 0.8 * p.det_inv - p.dstl)).abs() < 1e-12);
            let num = central_difference(&model.flatten(), 1e-5, |t| {
                let mut m = model.clone();
                m.assign_flat(t);
                dissl_loss(&m, &x1, &x2, &cfg).unwrap().total
            });
            assert!(rel_error_norm(&g.flatten(), &num) < 1e-6);
        }
    }

    #[test]
    fn config_guards() {
        let cfg = TrainConfig {
            negatives: 0,
            ..TrainConfig::cissl()
        };
        assert!(cfg.validate().is_err());
        let world = ClusterWorld::new(&ClusterSpec::default(), 0).unwrap();
        assert!(train_cissl(&world, &cfg).is_err());
    }
}
