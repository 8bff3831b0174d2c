//! Worst-ERM excess risk over a `(C, n)` grid, optionally against a finer
//! partition of the same inputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use issl_core::risk::{worst_case_rate, expected_excess_risk_exact, mc_expected_excess_risk};
use issl_core::rng::derive;
use issl_core::tasks::Task;
use issl_core::world::{EquivalenceRelation, InputDistribution};

use super::{ensure, Scenario};
use crate::error::LabResult;
use crate::output::{g17, Artifact, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcessRiskParams {
    pub classes: Vec<usize>,
    pub sizes: Vec<usize>,
    pub per_class: usize,
    pub labels: usize,
    pub trials: usize,
    /// Split every class into this many subclasses for comparison rows.
    pub refine: Option<usize>,
}

impl Default for ExcessRiskParams {
    fn default() -> Self {
        Self {
            classes: vec![2, 3, 4, 8],
            sizes: (0..=10).collect(),
            per_class: 1,
            labels: 2,
            trials: 50_000,
            refine: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Exact,
    Finer,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRow {
    pub relation: Relation,
    /// Classes of the partition the ERM is invariant to.
    pub c: usize,
    pub n: usize,
    pub closed_form: f64,
    pub exact: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub trials: usize,
}

pub struct ExcessRisk;

/// Uniform task over `c * refine * per_class` inputs labeled by coarse
/// class mod `k`, with the coarse and the refined partitions.
fn grid_task(c: usize, refine: usize, per_class: usize, k: usize) -> LabResult<(Task, EquivalenceRelation, EquivalenceRelation)> {
    let coarse = EquivalenceRelation::blocks(c, refine * per_class)?;
    let fine = EquivalenceRelation::blocks(c * refine, per_class)?;
    let labels: Vec<usize> = coarse.class_of().iter().map(|&m| m % k).collect();
    let t = Task::deterministic(InputDistribution::uniform(coarse.size()), &labels, k)?;
    Ok((t, coarse, fine))
}

impl Scenario for ExcessRisk {
    type Params = ExcessRiskParams;
    type Output = Vec<RiskRow>;

    fn validate(p: &ExcessRiskParams) -> LabResult<()> {
        ensure(!p.classes.is_empty() && p.classes.iter().all(|&c| c >= 2), || "classes must be >= 2".into())?;
        ensure(!p.sizes.is_empty(), || "sizes must not be empty".into())?;
        ensure(p.per_class >= 1 && p.labels >= 2 && p.trials >= 2, || {
            "need per_class >= 1, labels >= 2 and trials >= 2".into()
        })?;
        ensure(p.refine.is_none_or(|r| r >= 2), || "refine must be >= 2".into())
    }

    fn run(p: &ExcessRiskParams, seed: u64) -> LabResult<Vec<RiskRow>> {
        let relations: &[Relation] = if p.refine.is_some() {
            &[Relation::Exact, Relation::Finer]
        } else {
            &[Relation::Exact]
        };
        let cells: Vec<(usize, Relation, usize)> = p
            .classes
            .iter()
            .flat_map(|&c| relations.iter().flat_map(move |&r| p.sizes.iter().map(move |&n| (c, r, n))))
            .collect();
        cells
            .par_iter()
            .enumerate()
            .map(|(i, &(c, relation, n))| {
                let (t, coarse, fine) = grid_task(c, p.refine.unwrap_or(1), p.per_class, p.labels)?;
                let eq = match relation {
                    Relation::Exact => coarse,
                    Relation::Finer => fine,
                };
                let mc = mc_expected_excess_risk(&t, &eq, n, p.trials, derive(seed, i as u64))?;
                Ok(RiskRow {
                    relation,
                    c: eq.num_classes(),
                    n,
                    closed_form: worst_case_rate(eq.num_classes(), n)?,
                    exact: expected_excess_risk_exact(&t, &eq, n)?,
                    mc_mean: mc.mean,
                    mc_stderr: mc.stderr,
                    trials: mc.trials,
                })
            })
            .collect()
    }

    fn artifacts(out: &Vec<RiskRow>) -> Vec<Artifact> {
        let mut t = Table::new(&["relation", "C", "n", "closed_form", "exact", "mc_mean", "mc_stderr", "trials"]);
        for r in out {
            let relation = match r.relation {
                Relation::Exact => "exact",
                Relation::Finer => "finer",
            };
            t.push(vec![
                relation.into(),
                r.c.to_string(),
                r.n.to_string(),
                g17(r.closed_form),
                g17(r.exact),
                g17(r.mc_mean),
                g17(r.mc_stderr),
                r.trials.to_string(),
            ]);
        }
        vec![Artifact::csv("", &t)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_follow_the_law_and_refinement_costs() {
        let p = ExcessRiskParams {
            classes: vec![2, 3],
            sizes: vec![0, 2, 5],
            refine: Some(2),
            trials: 2000,
            ..Default::default()
        };
        ExcessRisk::validate(&p).unwrap();
        let rows = ExcessRisk::run(&p, 1).unwrap();
        assert_eq!(rows.len(), 12);
        for r in &rows {
            let law = (1.0 - 1.0 / r.c as f64).powi(r.n as i32);
            assert!((r.exact - law).abs() < 1e-12, "{r:?}");
            assert!((r.closed_form - law).abs() < 1e-12);
        }
        for pair in rows.chunks(6) {
            let (exact, finer) = pair.split_at(3);
            for (a, b) in exact.iter().zip(finer) {
                assert_eq!(b.c, 2 * a.c);
                assert!(b.exact >= a.exact - 1e-12);
            }
        }
        assert_eq!(rows, ExcessRisk::run(&p, 1).unwrap());
    }

    #[test]
    fn rejects_degenerate_grids() {
        let bad = ExcessRiskParams {
            classes: vec![1],
            ..Default::default()
        };
        assert!(ExcessRisk::validate(&bad).is_err());
    }
}
