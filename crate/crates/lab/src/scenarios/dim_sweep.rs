//! Smallest dimension at which each probe family shatters `C` classes.

use serde::{Deserialize, Serialize};

use issl_core::probes::{empirical_min_dimension, ProbeFamily};
use issl_core::rng::derive;
use issl_core::world::EquivalenceRelation;

use super::{ensure, Scenario};
use crate::error::LabResult;
use crate::output::{Artifact, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimSweepParams {
    pub classes: usize,
    /// Families ordered from least to most expressive.
    pub families: Vec<ProbeFamily>,
    /// Largest dimension tried; defaults to `C - 1`.
    pub max_dim: Option<usize>,
    /// Random configurations tried per dimension below `C - 1`.
    pub trials: usize,
}

impl Default for DimSweepParams {
    fn default() -> Self {
        Self {
            classes: 10,
            families: vec![
                ProbeFamily::linear(),
                ProbeFamily::mlp(vec![10]).expect("valid widths"),
                ProbeFamily::mlp(vec![64, 64]).expect("valid widths"),
            ],
            max_dim: None,
            trials: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimRow {
    pub family: ProbeFamily,
    pub min_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimSweepOutput {
    pub classes: usize,
    pub rows: Vec<DimRow>,
    /// Whether `min_dim` never increases along `families`.
    pub monotone: bool,
}

pub struct DimSweep;

impl Scenario for DimSweep {
    type Params = DimSweepParams;
    type Output = DimSweepOutput;

    fn validate(p: &DimSweepParams) -> LabResult<()> {
        ensure(p.classes >= 2, || "classes must be >= 2".into())?;
        ensure(!p.families.is_empty(), || "at least one family is required".into())?;
        ensure(p.max_dim != Some(0), || "max_dim must be positive".into())?;
        let mlp = p.families.iter().any(|f| !f.is_linear());
        ensure(!mlp || p.classes <= 16, || "MLP shattering enumerates 2^C labelings; use C <= 16".into())
    }

    fn run(p: &DimSweepParams, seed: u64) -> LabResult<DimSweepOutput> {
        let eq = EquivalenceRelation::identity(p.classes)?;
        let dims: Vec<usize> = (1..=p.max_dim.unwrap_or(p.classes - 1)).collect();
        let rows = p
            .families
            .iter()
            .enumerate()
            .map(|(i, f)| {
                Ok(DimRow {
                    family: f.clone(),
                    min_dim: empirical_min_dimension(&eq, f, &dims, p.trials, derive(seed, i as u64))?,
                })
            })
            .collect::<LabResult<Vec<_>>>()?;
        // A family that never shatters counts as needing more than max_dim.
        let key = |r: &DimRow| r.min_dim.unwrap_or(usize::MAX);
        let monotone = rows.windows(2).all(|w| key(&w[1]) <= key(&w[0]));
        Ok(DimSweepOutput {
            classes: p.classes,
            rows,
            monotone,
        })
    }

    fn artifacts(out: &DimSweepOutput) -> Vec<Artifact> {
        let mut t = Table::new(&["family", "C", "min_dim"]);
        for r in &out.rows {
            t.push(vec![
                r.family.to_string(),
                out.classes.to_string(),
                r.min_dim.map(|d| d.to_string()).unwrap_or_default(),
            ]);
        }
        vec![Artifact::csv("", &t), Artifact::json("summary", out)]
    }
}
