//! End-to-end DISSL and CISSL runs on synthetic cluster worlds.

use serde::{Deserialize, Serialize};

use issl_core::objectives::{train_cissl, train_dissl, CisslSummary, DisslSummary, TraceRow, TrainConfig};
use issl_core::synthetic::{ClusterLayout, ClusterSpec, ClusterWorld};

use super::{ensure, Scenario};
use crate::error::{LabError, LabResult};
use crate::output::{g17, trace_table, Artifact};

fn check_train(cfg: &TrainConfig) -> LabResult<()> {
    cfg.validate().map_err(|e| LabError::validation(e.to_string()))
}

fn check_world(spec: &ClusterSpec) -> LabResult<()> {
    ensure(spec.classes >= 2, || "world needs at least two classes".into())?;
    ClusterWorld::new(spec, 0).map(|_| ()).map_err(|e| LabError::validation(e.to_string()))
}

/// World and training seeds both come from the run seed.
fn seeded(cfg: &TrainConfig, seed: u64, lambda: Option<f64>) -> TrainConfig {
    TrainConfig {
        seed,
        lambda: lambda.unwrap_or(cfg.lambda),
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisslParams {
    pub world: ClusterSpec,
    pub train: TrainConfig,
    /// Also train with `lambda = 0`, where nothing prevents collapse.
    pub negative_control: bool,
}

impl Default for DisslParams {
    fn default() -> Self {
        Self {
            world: ClusterSpec {
                layout: ClusterLayout::Orthogonal,
                ..ClusterSpec::default()
            },
            train: TrainConfig::dissl(),
            negative_control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisslRun {
    pub lambda: f64,
    pub summary: DisslSummary,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisslOutput {
    pub log_classes: f64,
    pub main: DisslRun,
    pub control: Option<DisslRun>,
}

pub struct Dissl;

impl Scenario for Dissl {
    type Params = DisslParams;
    type Output = DisslOutput;

    fn validate(p: &DisslParams) -> LabResult<()> {
        check_world(&p.world)?;
        check_train(&p.train)?;
        ensure(p.train.num_pseudo_classes >= 2, || "need at least two pseudo-classes".into())
    }

    fn run(p: &DisslParams, seed: u64) -> LabResult<DisslOutput> {
        let world = ClusterWorld::new(&p.world, seed)?;
        let run = |lambda: Option<f64>| -> LabResult<DisslRun> {
            let cfg = seeded(&p.train, seed, lambda);
            let (_, trace, summary) = train_dissl(&world, &cfg)?;
            Ok(DisslRun {
                lambda: cfg.lambda,
                summary,
                trace,
            })
        };
        let main = run(None)?;
        let control = if p.negative_control { Some(run(Some(0.0))?) } else { None };
        Ok(DisslOutput {
            log_classes: (p.train.num_pseudo_classes as f64).ln(),
            main,
            control,
        })
    }

    fn artifacts(out: &DisslOutput) -> Vec<Artifact> {
        let runs = std::iter::once(&out.main).chain(out.control.as_ref());
        let trace = trace_table(&["lambda"], runs.flat_map(|r| r.trace.iter().map(move |row| (vec![g17(r.lambda)], row))));
        vec![Artifact::json("", out), Artifact::csv("trace", &trace)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CisslParams {
    pub world: ClusterSpec,
    pub train: TrainConfig,
}

impl Default for CisslParams {
    fn default() -> Self {
        Self {
            world: ClusterSpec::default(),
            train: TrainConfig::cissl(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CisslOutput {
    pub summary: CisslSummary,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

pub struct Cissl;

impl Scenario for Cissl {
    type Params = CisslParams;
    type Output = CisslOutput;

    fn validate(p: &CisslParams) -> LabResult<()> {
        check_world(&p.world)?;
        check_train(&p.train)
    }

    fn run(p: &CisslParams, seed: u64) -> LabResult<CisslOutput> {
        let world = ClusterWorld::new(&p.world, seed)?;
        let (_, trace, summary) = train_cissl(&world, &seeded(&p.train, seed, None))?;
        Ok(CisslOutput { summary, trace })
    }

    fn artifacts(out: &CisslOutput) -> Vec<Artifact> {
        let trace = trace_table::<&str>(&[], out.trace.iter().map(|r| (Vec::new(), r)));
        vec![Artifact::json("", out), Artifact::csv("trace", &trace)]
    }
}
