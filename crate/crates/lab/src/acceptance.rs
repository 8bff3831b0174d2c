//! The acceptance suite: twelve end-to-end checks with pinned tolerances.
//!
//! Shared by `issl-lab selftest` and the `acceptance` test target. Every
//! check compares library output against a value computed here
//! independently, or against a structural property.

use std::f64::consts::LN_2;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use serde_json::json;

use issl_core::encoders::{one_hot_encoder, setf};
use issl_core::gradcheck::{central_difference, max_rel_error, rel_error_norm};
use issl_core::metrics::{cross_entropy_decomposition_check, entropy, kl};
use issl_core::nn::random_unit_rows;
use issl_core::objectives::{
    cissl_loss, cissl_loss_grad, dissl_loss, dissl_loss_grad, grad_issl_log_loss, issl_log_loss, CisslBatch,
    DisslLossConfig, FeatureLayout, HeadedModel, SphereParams, TrainConfig,
};
use issl_core::probes::{inseparability_witness, kary_predictor, linear_separate, shatterable_rank, ProbeFamily};
use issl_core::risk::{
    brute_force_worst_erm, construct_bad_erm, coupon_expected_samples, excess_risk_closed_form, expected_excess_risk_exact,
    mc_coupon_samples, mc_expected_excess_risk, population_excess_risk, Dataset,
};
use issl_core::rng::{derive, rng};
use issl_core::tasks::{enumerate_binary_labelings, task_from_labeling, InvariantLabeling, Task};
use issl_core::world::{maximal_invariant, EquivalenceRelation, InputDistribution};

use crate::scenarios::collapse::collapse_cell;
use crate::scenarios::dim_sweep::{DimSweep, DimSweepParams};
use crate::scenarios::training::{Cissl, CisslParams, Dissl, DisslParams};
use crate::scenarios::Scenario;

/// Seed for every randomized acceptance check.
pub const SEED: u64 = 20_220_601;

pub const EXACT_LAW_TOL: f64 = 1e-12;
pub const MC_SIGMAS: f64 = 3.0;
pub const SETF_TOL: f64 = 1e-10;
/// C = 3 dot products, in units of machine epsilon.
pub const C3_ULPS: f64 = 4.0;
pub const COLLAPSE_ETF_TOL: f64 = 1e-3;
pub const COUPON_TOL: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_INSTANCES: usize = 20;
pub const DECOMPOSITION_TOL: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-12;

pub const DISSL_MIN_ACCURACY: f64 = 0.99;
pub const DISSL_MIN_ENTROPY_FRACTION: f64 = 0.95;
pub const DISSL_MAX_CONDITIONAL: f64 = 0.1;
pub const DISSL_CONTROL_MAX_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    /// Fails when `elapsed` exceeds `limit`, keeping the detail.
    fn within(self, elapsed: Duration, limit: Duration) -> Self {
        let on_time = elapsed <= limit;
        Self::new(
            self.passed && on_time,
            format!("{}; {:.1}s (limit {}s)", self.detail, elapsed.as_secs_f64(), limit.as_secs()),
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub check: fn() -> Outcome,
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "equiprobable excess-risk law", check: c01_risk_law },
        Criterion { id: 2, name: "closed form equals brute-force worst ERM", check: c02_brute_force },
        Criterion { id: 3, name: "simplex ETF geometry", check: c03_setf },
        Criterion { id: 4, name: "free-feature collapse", check: c04_collapse },
        Criterion { id: 5, name: "shattering boundary", check: c05_shattering },
        Criterion { id: 6, name: "k-ary from binary predictors", check: c06_kary },
        Criterion { id: 7, name: "coupon collector", check: c07_coupon },
        Criterion { id: 8, name: "analytic gradients", check: c08_gradients },
        Criterion { id: 9, name: "DISSL end to end", check: c09_dissl },
        Criterion { id: 10, name: "CISSL end to end", check: c10_cissl },
        Criterion { id: 11, name: "monotonicity", check: c11_monotonicity },
        Criterion { id: 12, name: "information identities", check: c12_identities },
    ]
}

#[derive(Debug, Clone)]
pub struct Report {
    pub id: u8,
    pub name: &'static str,
    pub outcome: Outcome,
    pub elapsed: Duration,
}

impl Report {
    pub fn line(&self) -> String {
        format!(
            "{} [{:>2}] {}: {} ({:.2}s)",
            if self.outcome.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.outcome.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs the selected criteria (all when `only` is empty) in id order,
/// calling `on_report` as each finishes.
pub fn run(only: &[u8], mut on_report: impl FnMut(&Report)) -> Vec<Report> {
    criteria()
        .into_iter()
        .filter(|c| only.is_empty() || only.contains(&c.id))
        .map(|c| {
            let start = Instant::now();
            let outcome = match std::panic::catch_unwind(c.check) {
                Ok(o) => o,
                Err(e) => {
                    let msg = e
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    Outcome::new(false, format!("panicked: {msg}"))
                }
            };
            let report = Report {
                id: c.id,
                name: c.name,
                outcome,
                elapsed: start.elapsed(),
            };
            on_report(&report);
            report
        })
        .collect()
}

fn equiprobable(c: usize) -> (Task, EquivalenceRelation) {
    let eq = EquivalenceRelation::identity(c).expect("C >= 2");
    let labels: Vec<usize> = (0..c).map(|x| x % 2).collect();
    let t = Task::deterministic(InputDistribution::uniform(c), &labels, 2).expect("valid task");
    (t, eq)
}

fn c01_risk_law() -> Outcome {
    let start = Instant::now();
    let mut worst_exact = 0.0f64;
    let mut worst_sigma = 0.0f64;
    let mut failures = Vec::new();
    let mut cell = 0u64;
    for c in [2usize, 3, 4, 8] {
        let (t, eq) = equiprobable(c);
        let mut oracle = 1.0f64;
        for n in 0..=10usize {
            let exact = expected_excess_risk_exact(&t, &eq, n).expect("valid task");
            let err = (exact - oracle).abs();
            worst_exact = worst_exact.max(err);
            if err > EXACT_LAW_TOL {
                failures.push(format!("exact C={c} n={n}: {exact} vs {oracle}"));
            }
            let mc = mc_expected_excess_risk(&t, &eq, n, 50_000, derive(SEED, cell)).expect("valid task");
            cell += 1;
            if mc.stderr > 1e-9 {
                worst_sigma = worst_sigma.max((mc.mean - oracle).abs() / mc.stderr);
            }
            if !mc.agrees_with(oracle, MC_SIGMAS) {
                failures.push(format!("mc C={c} n={n}: {} ± {} vs {oracle}", mc.mean, mc.stderr));
            }
            oracle *= 1.0 - 1.0 / c as f64;
        }
    }
    let (t4, eq4) = equiprobable(4);
    let pinned = expected_excess_risk_exact(&t4, &eq4, 3).expect("valid task");
    if (pinned - 0.421875).abs() > EXACT_LAW_TOL {
        failures.push(format!("C=4 n=3 gives {pinned}, expected 0.421875"));
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "44 cells; max |exact - (1-1/C)^n| = {worst_exact:.1e}; max MC deviation {worst_sigma:.2} sigma; C=4,n=3 -> {pinned}{}",
            summarize(&failures)
        ),
    )
    .within(start.elapsed(), Duration::from_secs(10))
}

fn summarize(failures: &[String]) -> String {
    match failures.len() {
        0 => String::new(),
        n => format!("; {n} failures, first: {}", failures[0]),
    }
}

/// Every sequence of `n` inputs from `0..size`.
fn all_sequences(size: usize, n: usize) -> Vec<Vec<usize>> {
    (0..size.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let x = code % size;
                    code /= size;
                    x
                })
                .collect()
        })
        .collect()
}

fn c02_brute_force() -> Outcome {
    let start = Instant::now();
    let eq = EquivalenceRelation::blocks(4, 2).expect("valid blocks");
    let e = one_hot_encoder(&maximal_invariant(&eq));
    let skewed: Vec<f64> = (1..=8).map(|i| i as f64 / 36.0).collect();
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for px in [InputDistribution::uniform(8), InputDistribution::new(skewed).expect("valid pmf")] {
        for l in enumerate_binary_labelings(4).expect("C = 4") {
            let t = task_from_labeling(&l, &eq, &px).expect("valid labeling");
            for n in 0..=3 {
                for inputs in all_sequences(8, n) {
                    let ds = Dataset::from_inputs(&t, &inputs).expect("inputs in range");
                    let brute = brute_force_worst_erm(&e, &t, &eq, &ds).expect("one-hot is sample optimal");
                    let closed = excess_risk_closed_form(&t, &eq, &ds).expect("valid dataset");
                    let witness = construct_bad_erm(&t, &eq, &ds).expect("valid dataset");
                    let attained = population_excess_risk(&t, &eq, &witness).expect("invariant task");
                    checked += 1;
                    if brute.closed_form != closed || attained != closed {
                        failures.push(format!(
                            "labels {:?} inputs {inputs:?}: brute {} closed {closed} witness {attained}",
                            l.label_of_class, brute.closed_form
                        ));
                    }
                }
            }
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!("{checked} (task, dataset) pairs; brute force, closed form and witness risk bit-identical{}", summarize(&failures)),
    )
    .within(start.elapsed(), Duration::from_secs(30))
}

fn c03_setf() -> Outcome {
    let mut worst = 0.0f64;
    let mut grids = 0;
    for c in 2..=12usize {
        for d in c - 1..=2 * c {
            let v = setf(c, d).expect("d >= C - 1").vertices().clone();
            let gram = &v * v.transpose();
            for i in 0..c {
                for j in 0..c {
                    // Diagonal 1, off-diagonal -1/(C-1).
                    let want = if i == j { 1.0 } else { -1.0 / (c as f64 - 1.0) };
                    worst = worst.max((gram[(i, j)] - want).abs());
                }
            }
            grids += 1;
        }
    }
    // Coordinates of a planar C = 3 frame involve sqrt(3), so -1/2 is met to
    // rounding, not bitwise.
    let mut dots = Vec::new();
    for d in 2..=6 {
        let v = setf(3, d).expect("valid").vertices().clone();
        dots.extend([(0, 1), (0, 2), (1, 2)].iter().map(|&(i, j)| v.row(i).dot(&v.row(j))));
    }
    let c3_worst = dots.iter().map(|x| (x + 0.5).abs()).fold(0.0, f64::max);
    let c3 = c3_worst <= C3_ULPS * f64::EPSILON;
    Outcome::new(
        worst <= SETF_TOL && c3,
        format!("{grids} (C, d) frames; max Gram deviation {worst:.1e}; C=3 max |dot + 1/2| = {c3_worst:.1e}"),
    )
}

fn c04_collapse() -> Outcome {
    let start = Instant::now();
    let train = TrainConfig::default();
    let fam = ProbeFamily::linear();
    let good = match collapse_cell(4, 3, 2, &fam, 1e-6, &train) {
        Ok(c) => c,
        Err(e) => return Outcome::new(false, format!("C=4 d=3 failed: {e}")),
    };
    let low = match collapse_cell(4, 1, 2, &fam, 1e-6, &train) {
        Ok(c) => c,
        Err(e) => return Outcome::new(false, format!("C=4 d=1 failed: {e}")),
    };
    let r = &good.report;
    let passed = good.etf_gap <= COLLAPSE_ETF_TOL && r.invariant && r.m_predictable && r.shattered.holds() && !low.rank_shatterable;
    Outcome::new(
        passed,
        format!(
            "d=3: loss {:.6}, etf gap {:.1e}, invariant {}, M-predictable {}, shattered {}; d=1 shatterable {}",
            good.final_loss,
            good.etf_gap,
            r.invariant,
            r.m_predictable,
            r.shattered.holds(),
            low.rank_shatterable
        ),
    )
    .within(start.elapsed(), Duration::from_secs(60))
}

fn c05_shattering() -> Outcome {
    let mut failures = Vec::new();
    let mut r = rng(derive(SEED, 5));
    let mut labelings = 0usize;
    for c in 2..=8usize {
        let v = setf(c, c - 1).expect("valid").vertices().clone();
        if !shatterable_rank(&v, 1e-9).unwrap_or(false) {
            failures.push(format!("sETF C={c} not rank-shatterable"));
        }
        for l in enumerate_binary_labelings(c).expect("small C") {
            labelings += 1;
            match linear_separate(&v, &l.label_of_class, ProbeFamily::linear().default_budget(c), derive(SEED, c as u64)) {
                Some(p) if p.predict_binary(&v) == l.label_of_class => {}
                _ => failures.push(format!("sETF C={c} labeling {:?} not separated", l.label_of_class)),
            }
        }
        if c >= 3 {
            // Rank deficient: C points in C - 2 dimensions, plus a flattened sETF.
            let random = DMatrix::from_fn(c, c - 2, |_, _| r.random_range(-1.0..1.0));
            let flat = v.columns(0, c - 2).into_owned();
            for (what, pts) in [("random", random), ("flattened sETF", flat)] {
                if matches!(shatterable_rank(&pts, 1e-9), Ok(true)) {
                    failures.push(format!("{what} C={c} wrongly rank-shatterable"));
                    continue;
                }
                let Some(w) = inseparability_witness(&pts, 1e-9) else {
                    failures.push(format!("{what} C={c} has no witness"));
                    continue;
                };
                let unseparated = (0..4).all(|s| linear_separate(&pts, &w.labeling, 2000, derive(SEED, s)).is_none());
                if !unseparated {
                    failures.push(format!("{what} C={c} witness {:?} was separated", w.labeling));
                }
                // Cross-validation: exactly the labelings the perceptron solves
                // must not include the witness, and some labeling must fail.
                let failing = enumerate_binary_labelings(c)
                    .expect("small C")
                    .filter(|l| linear_separate(&pts, &l.label_of_class, 200, SEED).is_none())
                    .count();
                labelings += 1 << c;
                if failing == 0 {
                    failures.push(format!("{what} C={c}: every labeling separated"));
                }
            }
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!("{labelings} labelings run through the perceptron for C <= 8{}", summarize(&failures)),
    )
}

fn c06_kary() -> Outcome {
    let c = 5;
    let points = setf(c, c - 1).expect("valid").vertices().clone();
    let budget = ProbeFamily::linear().default_budget(c);
    let binary_ok = enumerate_binary_labelings(c)
        .expect("C = 5")
        .all(|l| linear_separate(&points, &l.label_of_class, budget, SEED).is_some());
    let mut r = rng(derive(SEED, 6));
    let mut mismatches = 0usize;
    let mut errors = Vec::new();
    for trial in 0..200u64 {
        let target: Vec<usize> = (0..c).map(|_| r.random_range(0..5)).collect();
        let labeling = InvariantLabeling::new(target.clone(), 5).expect("labels below k");
        match kary_predictor(&points, &labeling.label_of_class, 5, budget, derive(SEED, trial)) {
            Ok(f) => {
                mismatches += f.predict(&points).iter().zip(&target).filter(|(p, t)| **p != Some(**t)).count();
            }
            Err(e) => errors.push(format!("{target:?}: {e}")),
        }
    }
    Outcome::new(
        binary_ok && mismatches == 0 && errors.is_empty(),
        format!(
            "binary-shattered {binary_ok}; 200 random 5-ary labelings, {mismatches} mismatches{}",
            summarize(&errors)
        ),
    )
}

fn c07_coupon() -> Outcome {
    let probs = vec![0.1; 10];
    let oracle: f64 = (1..=10).map(|i| 10.0 / i as f64).sum();
    let exact = coupon_expected_samples(&probs).expect("C = 10");
    let mc = mc_coupon_samples(&probs, 100_000, derive(SEED, 7)).expect("valid probs");
    let passed = (exact - oracle).abs() <= COUPON_TOL && (oracle - 29.2897).abs() < 1e-4 && mc.agrees_with(oracle, MC_SIGMAS);
    Outcome::new(
        passed,
        format!(
            "inclusion-exclusion {exact:.12} vs 10*H_10 {oracle:.12}; MC {:.4} ± {:.4} ({:.2} sigma)",
            mc.mean,
            mc.stderr,
            (mc.mean - oracle).abs() / mc.stderr
        ),
    )
}

/// A model with every parameter drawn at random. Initialization zeroes the
/// biases, which can leave ReLU inputs exactly at the kink.
fn generic_model(input: usize, student_bias: bool, r: &mut impl Rng) -> HeadedModel {
    let mut m = HeadedModel::init(input, 5, 3, 4, student_bias, 0);
    let theta: Vec<f64> = (0..m.num_params()).map(|_| r.random_range(-1.0..1.0)).collect();
    m.assign_flat(&theta);
    m
}

fn c08_gradients() -> Outcome {
    let mut r = rng(derive(SEED, 8));
    let (mut issl_worst, mut cissl_worst, mut dissl_worst) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..GRAD_INSTANCES {
        let c = r.random_range(2..6usize);
        let d = r.random_range(1..5usize);
        let n = c + r.random_range(0..4usize);
        let mut class_of: Vec<usize> = (0..n).map(|x| if x < c { x } else { r.random_range(0..c) }).collect();
        class_of.rotate_left(r.random_range(0..n));
        let m = maximal_invariant(&EquivalenceRelation::from_labels(class_of).expect("C >= 2"));
        let w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let px = InputDistribution::new(w.iter().map(|v| v / total).collect()).expect("valid pmf");
        let (layout, rows) = if i % 2 == 0 { (FeatureLayout::PerClass, c) } else { (FeatureLayout::PerInput, n) };
        let p = SphereParams::random(rows, c, d, layout, derive(SEED, 100 + i as u64));
        let (_, g) = grad_issl_log_loss(&p, &m, &px).expect("shapes agree");
        let num = central_difference(&p.flatten(), GRAD_STEP, |t| {
            let mut q = p.clone();
            q.assign_flat(t);
            issl_log_loss(&q, &m, &px).expect("shapes agree")
        });
        issl_worst = issl_worst.max(max_rel_error(&g.flatten(), &num));

        let input = r.random_range(2..4usize);
        let model = generic_model(input, true, &mut r);
        let b = r.random_range(2..5usize);
        let x = random_unit_rows(2 * b, input, &mut r);
        let batch = CisslBatch::in_batch(b);
        let tau = r.random_range(0.1..1.0);
        let two = i % 2 == 1;
        let (_, g) = cissl_loss_grad(&model, &x, &batch, tau, two).expect("valid batch");
        let num = central_difference(&model.flatten(), GRAD_STEP, |t| {
            let mut mm = model.clone();
            mm.assign_flat(t);
            cissl_loss(&mm, &x, &batch, tau, two).expect("valid batch")
        });
        cissl_worst = cissl_worst.max(rel_error_norm(&g.flatten(), &num));

        let model = generic_model(input, false, &mut r);
        let x1 = random_unit_rows(5, input, &mut r);
        let x2 = random_unit_rows(5, input, &mut r);
        let cfg = DisslLossConfig {
            lambda: r.random_range(0.0..3.0),
            beta: r.random_range(0.0..1.5),
            tau: r.random_range(0.3..1.0),
            symmetric: i % 2 == 0,
        };
        let (_, g) = dissl_loss_grad(&model, &x1, &x2, &cfg).expect("valid views");
        let num = central_difference(&model.flatten(), GRAD_STEP, |t| {
            let mut mm = model.clone();
            mm.assign_flat(t);
            dissl_loss(&mm, &x1, &x2, &cfg).expect("valid views").total
        });
        dissl_worst = dissl_worst.max(rel_error_norm(&g.flatten(), &num));
    }
    Outcome::new(
        issl_worst <= GRAD_TOL && cissl_worst <= GRAD_TOL && dissl_worst <= GRAD_TOL,
        format!(
            "{GRAD_INSTANCES} instances each; worst relative error issl {issl_worst:.1e}, cissl {cissl_worst:.1e}, dissl {dissl_worst:.1e}"
        ),
    )
}

fn c09_dissl() -> Outcome {
    let start = Instant::now();
    let p = DisslParams::default();
    if let Err(e) = Dissl::validate(&p) {
        return Outcome::new(false, e.to_string());
    }
    let out = match Dissl::run(&p, 0) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let log_c = out.log_classes;
    let s = &out.main.summary;
    let control_h = out.control.as_ref().map_or(f64::NAN, |c| c.summary.h_marginal);
    let passed = s.teacher_accuracy >= DISSL_MIN_ACCURACY
        && s.h_marginal >= DISSL_MIN_ENTROPY_FRACTION * log_c
        && s.h_conditional <= DISSL_MAX_CONDITIONAL
        && s.probe_train_accuracy == 1.0
        && control_h <= DISSL_CONTROL_MAX_FRACTION * log_c;
    Outcome::new(
        passed,
        format!(
            "teacher accuracy {:.4}, H[M] {:.4} / log 8 = {:.4}, H[M|X] {:.2e}, probe {:.4}; lambda=0 H[M] {:.4}",
            s.teacher_accuracy, s.h_marginal, log_c, s.h_conditional, s.probe_train_accuracy, control_h
        ),
    )
    .within(start.elapsed(), Duration::from_secs(120))
}

fn c10_cissl() -> Outcome {
    let start = Instant::now();
    let p = CisslParams::default();
    let ok = p.train.negatives == 31 && p.train.cissl_temp == 0.07 && p.world.classes == 8;
    let out = match Cissl::validate(&p).and_then(|_| Cissl::run(&p, 0)) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    Outcome::new(
        ok && out.summary.probe_train_accuracy == 1.0,
        format!(
            "k = {} negatives, tau = {}; frozen linear probe accuracy {:.4}",
            p.train.negatives, p.train.cissl_temp, out.summary.probe_train_accuracy
        ),
    )
    .within(start.elapsed(), Duration::from_secs(120))
}

fn c11_monotonicity() -> Outcome {
    let mut failures = Vec::new();
    for c in 2..=8usize {
        let (t, eq) = equiprobable(c);
        let (t_next, eq_next) = equiprobable(c + 1);
        let mut prev = f64::INFINITY;
        for n in 0..=30 {
            let v = expected_excess_risk_exact(&t, &eq, n).expect("valid task");
            if v > prev + EXACT_LAW_TOL {
                failures.push(format!("C={c}: risk rises at n={n}"));
            }
            let finer = expected_excess_risk_exact(&t_next, &eq_next, n).expect("valid task");
            if finer < v - EXACT_LAW_TOL {
                failures.push(format!("n={n}: C={} below C={c}", c + 1));
            }
            prev = v;
        }
    }
    // A refinement of the same task: every class split in two.
    let coarse = EquivalenceRelation::blocks(4, 2).expect("valid");
    let fine = EquivalenceRelation::identity(8).expect("valid");
    let labels: Vec<usize> = coarse.class_of().iter().map(|&c| c % 2).collect();
    let t = Task::deterministic(InputDistribution::uniform(8), &labels, 2).expect("valid");
    for n in 0..=30 {
        let a = expected_excess_risk_exact(&t, &coarse, n).expect("valid");
        let b = expected_excess_risk_exact(&t, &fine, n).expect("valid");
        if b < a - EXACT_LAW_TOL {
            failures.push(format!("refinement lowers risk at n={n}"));
        }
    }
    let sweep = DimSweep::run(&DimSweepParams::default(), SEED);
    let (dims, monotone, linear) = match &sweep {
        Ok(out) => (
            out.rows
                .iter()
                .map(|r| json!({ "family": r.family.to_string(), "min_dim": r.min_dim }))
                .collect::<Vec<_>>(),
            out.monotone,
            out.rows.first().and_then(|r| r.min_dim),
        ),
        Err(e) => {
            failures.push(format!("dimension sweep: {e}"));
            (Vec::new(), false, None)
        }
    };
    Outcome::new(
        failures.is_empty() && monotone && linear == Some(9),
        format!(
            "risk monotone in n and C for C <= 9, n <= 30; min dimension for C = 10: {}{}",
            serde_json::Value::from(dims),
            summarize(&failures)
        ),
    )
}

fn random_pmf(r: &mut impl Rng, c: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|_| r.random_range(1e-3..1.0f64).powi(3)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn c12_identities() -> Outcome {
    let mut r = rng(derive(SEED, 12));
    let (mut worst_ce, mut worst_kl, mut worst_parts) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..500 {
        let c = r.random_range(2..20usize);
        let p = random_pmf(&mut r, c);
        let q = random_pmf(&mut r, c);
        worst_ce = worst_ce.max(cross_entropy_decomposition_check(&p, &q).residual.abs());
        let uniform = vec![1.0 / c as f64; c];
        worst_kl = worst_kl.max((kl(&p, &uniform) - ((c as f64).ln() - entropy(&p))).abs());
    }
    for i in 0..50u64 {
        let model = HeadedModel::init(3, 6, 4, 5, false, derive(SEED, 400 + i));
        let x1 = random_unit_rows(7, 3, &mut r);
        let x2 = random_unit_rows(7, 3, &mut r);
        let cfg = DisslLossConfig {
            lambda: r.random_range(0.0..3.0),
            beta: r.random_range(0.0..2.0),
            tau: r.random_range(0.2..2.0),
            symmetric: i % 2 == 0,
        };
        let parts = dissl_loss(&model, &x1, &x2, &cfg).expect("valid views");
        worst_parts = worst_parts.max((parts.total - (cfg.lambda * parts.mxml - cfg.beta * parts.det_inv - parts.dstl)).abs());
    }
    // Two-point sanity value: KL(Bernoulli(1/2) || uniform) = 0, H = log 2.
    let h_half = entropy(&[0.5, 0.5]);
    Outcome::new(
        worst_ce <= DECOMPOSITION_TOL && worst_kl <= IDENTITY_TOL && worst_parts <= IDENTITY_TOL && (h_half - LN_2).abs() < 1e-15,
        format!("max residuals: CE = KL + H {worst_ce:.1e}; KL to uniform {worst_kl:.1e}; DISSL parts {worst_parts:.1e}"),
    )
}
