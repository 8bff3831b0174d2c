//! Scenario runners. Each is a pure function of its parameters and seed.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::config::{resolve, ScenarioKind};
use crate::error::{LabError, LabResult};
use crate::output::Artifact;

pub mod aug_sweep;
pub mod collapse;
pub mod coupon;
pub mod dim_sweep;
pub mod excess_risk;
pub mod probe_sweep;
pub mod theorem1;
pub mod training;

macro_rules! dispatch {
    ($kind:expr, $f:ident, $($arg:expr),*) => {
        match $kind {
            ScenarioKind::Theorem1 => $f::<theorem1::Theorem1>($($arg),*),
            ScenarioKind::ExcessRisk => $f::<excess_risk::ExcessRisk>($($arg),*),
            ScenarioKind::Coupon => $f::<coupon::Coupon>($($arg),*),
            ScenarioKind::Collapse => $f::<collapse::Collapse>($($arg),*),
            ScenarioKind::Dissl => $f::<training::Dissl>($($arg),*),
            ScenarioKind::Cissl => $f::<training::Cissl>($($arg),*),
            ScenarioKind::DimSweep => $f::<dim_sweep::DimSweep>($($arg),*),
            ScenarioKind::AugSweep => $f::<aug_sweep::AugSweep>($($arg),*),
            ScenarioKind::ProbeSweep => $f::<probe_sweep::ProbeSweep>($($arg),*),
        }
    };
}

pub trait Scenario {
    type Params: Default + Serialize + DeserializeOwned;
    type Output;

    fn validate(p: &Self::Params) -> LabResult<()>;
    fn run(p: &Self::Params, seed: u64) -> LabResult<Self::Output>;
    fn artifacts(out: &Self::Output) -> Vec<Artifact>;
}

/// Parameters as resolved from a user config.
pub fn resolve_params<S: Scenario>(user: &Value) -> LabResult<S::Params> {
    let p: S::Params = resolve(user)?;
    S::validate(&p)?;
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    /// The full parameter object after defaults were applied.
    pub resolved: Value,
    pub artifacts: Vec<Artifact>,
}

/// Validates `user` against the scenario schema without running it.
pub fn resolve_only(kind: ScenarioKind, user: &Value) -> LabResult<Value> {
    fn go<S: Scenario>(user: &Value) -> LabResult<Value> {
        Ok(serde_json::to_value(resolve_params::<S>(user)?).expect("params serialize"))
    }
    dispatch!(kind, go, user)
}

pub fn run_scenario(kind: ScenarioKind, user: &Value, seed: u64) -> LabResult<ScenarioRun> {
    fn go<S: Scenario>(user: &Value, seed: u64) -> LabResult<ScenarioRun> {
        let p = resolve_params::<S>(user)?;
        let resolved = serde_json::to_value(&p).expect("params serialize");
        let out = S::run(&p, seed)?;
        Ok(ScenarioRun {
            resolved,
            artifacts: S::artifacts(&out),
        })
    }
    dispatch!(kind, go, user, seed)
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> LabResult<()> {
    if cond {
        Ok(())
    } else {
        Err(LabError::validation(msg()))
    }
}
