//! Free-feature ISSL log loss minimization over a `(C, d)` grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use issl_core::encoders::Encoder;
use issl_core::metrics::etf_distance;
use issl_core::objectives::{minimize_issl_free_features, TraceRow, TrainConfig};
use issl_core::probes::{sample_optimality_report, shatterable_rank, OptimalityReport, ProbeFamily};
use issl_core::rng::derive;
use issl_core::world::{maximal_invariant, EquivalenceRelation};

use super::{ensure, Scenario};
use crate::error::LabResult;
use crate::output::{g17, trace_table, Artifact, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollapseParams {
    pub classes: Vec<usize>,
    pub dims: Vec<usize>,
    /// Inputs per class for the induced encoder.
    pub per_class: usize,
    pub family: ProbeFamily,
    pub tol: f64,
    pub train: TrainConfig,
}

impl Default for CollapseParams {
    fn default() -> Self {
        Self {
            classes: vec![2, 3, 4, 5],
            dims: (1..=5).collect(),
            per_class: 2,
            family: ProbeFamily::linear(),
            tol: 1e-6,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseCell {
    pub c: usize,
    pub d: usize,
    pub final_loss: f64,
    /// Distance to the simplex ETF geometry; 0 on a collapsed sETF.
    pub etf_gap: f64,
    pub rank_shatterable: bool,
    pub report: OptimalityReport,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

pub struct Collapse;

/// Minimizes at `(c, d)` with equiprobable classes and audits the induced
/// per-input encoder.
pub fn collapse_cell(c: usize, d: usize, per_class: usize, family: &ProbeFamily, tol: f64, train: &TrainConfig) -> LabResult<CollapseCell> {
    let (params, trace) = minimize_issl_free_features(c, d, &vec![1.0 / c as f64; c], train)?;
    let eq = EquivalenceRelation::blocks(c, per_class)?;
    let m = maximal_invariant(&eq);
    let e: Encoder = params.encoder(&m)?;
    let gap = etf_distance(e.reps(), eq.class_of(), None)?.gap();
    let budget = family.default_budget(c);
    let report = sample_optimality_report(&e, &eq, family, tol, budget, derive(train.seed, 1))?;
    Ok(CollapseCell {
        c,
        d,
        final_loss: trace.last().map_or(f64::NAN, |r| r.loss),
        etf_gap: gap,
        // Collapsed duplicates cannot be shattered.
        rank_shatterable: match shatterable_rank(&params.z, tol) {
            Err(issl_core::Error::DuplicatePoint(..)) => false,
            r => r?,
        },
        report,
        trace,
    })
}

impl Scenario for Collapse {
    type Params = CollapseParams;
    type Output = Vec<CollapseCell>;

    fn validate(p: &CollapseParams) -> LabResult<()> {
        ensure(!p.classes.is_empty() && p.classes.iter().all(|&c| c >= 2), || "classes must be >= 2".into())?;
        ensure(!p.dims.is_empty() && p.dims.iter().all(|&d| d >= 1), || "dims must be >= 1".into())?;
        ensure(p.per_class >= 2, || "per_class must be >= 2 so positives exist".into())?;
        ensure(p.tol >= 0.0, || "tol must be non-negative".into())?;
        p.train.validate().map_err(|e| crate::error::LabError::validation(e.to_string()))
    }

    fn run(p: &CollapseParams, seed: u64) -> LabResult<Vec<CollapseCell>> {
        let cells: Vec<(usize, usize)> = p.classes.iter().flat_map(|&c| p.dims.iter().map(move |&d| (c, d))).collect();
        cells
            .par_iter()
            .enumerate()
            .map(|(i, &(c, d))| {
                let train = TrainConfig {
                    seed: derive(seed, i as u64),
                    ..p.train.clone()
                };
                collapse_cell(c, d, p.per_class, &p.family, p.tol, &train)
            })
            .collect()
    }

    fn artifacts(out: &Vec<CollapseCell>) -> Vec<Artifact> {
        let mut t = Table::new(&[
            "C",
            "d",
            "final_loss",
            "log_C",
            "etf_gap",
            "rank_shatterable",
            "invariant",
            "m_predictable",
            "verdict",
            "d_at_least_C_minus_1",
        ]);
        for cell in out {
            t.push(vec![
                cell.c.to_string(),
                cell.d.to_string(),
                g17(cell.final_loss),
                g17((cell.c as f64).ln()),
                g17(cell.etf_gap),
                cell.rank_shatterable.to_string(),
                cell.report.invariant.to_string(),
                cell.report.m_predictable.to_string(),
                cell.report.verdict.to_string(),
                (cell.d + 1 >= cell.c).to_string(),
            ]);
        }
        let trace = trace_table(
            &["C", "d"],
            out.iter()
                .flat_map(|cell| cell.trace.iter().map(move |r| (vec![cell.c.to_string(), cell.d.to_string()], r))),
        );
        vec![Artifact::csv("", &t), Artifact::csv("trace", &trace)]
    }
}
