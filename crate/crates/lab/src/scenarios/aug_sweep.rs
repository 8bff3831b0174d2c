//! Augmentation coarseness against dimension and sample requirements.
//!
//! The same labeled inputs are paired with three augmentors: one resampling
//! within the true classes, one within halves (or smaller parts) of them,
//! and the identity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use issl_core::probes::{empirical_min_dimension, ProbeFamily};
use issl_core::risk::{coupon_expected_samples, expected_excess_risk_exact, harmonic, mc_coupon_samples, MAX_COUPON_CLASSES};
use issl_core::rng::derive;
use issl_core::tasks::Task;
use issl_core::world::{
    class_probabilities, equivalence_from_augmentor, is_refinement, Augmentor, EquivalenceRelation, InputDistribution,
};

use super::{ensure, Scenario};
use crate::error::LabResult;
use crate::output::{g17, opt, Artifact, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugSweepParams {
    pub classes: usize,
    pub per_class: usize,
    /// Parts each class is cut into by the finer augmentor.
    pub split: usize,
    pub labels: usize,
    pub family: ProbeFamily,
    pub sizes: Vec<usize>,
    pub coupon_trials: usize,
}

impl Default for AugSweepParams {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 4,
            split: 2,
            labels: 2,
            family: ProbeFamily::linear(),
            sizes: vec![0, 5, 10, 20, 40, 80, 160],
            coupon_trials: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    Exact,
    Finer,
    Identity,
}

impl Setting {
    fn name(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Finer => "finer",
            Self::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugRow {
    pub setting: Setting,
    pub classes: usize,
    pub refines_true: bool,
    pub min_dim: Option<usize>,
    /// Expected draws until every augmentation class is seen.
    pub samples_exact: Option<f64>,
    pub samples_mc_mean: f64,
    pub samples_mc_stderr: f64,
    /// Exact worst-ERM excess risk at each of the configured sizes.
    pub risk: Vec<(usize, f64)>,
}

pub struct AugSweep;

impl Scenario for AugSweep {
    type Params = AugSweepParams;
    type Output = Vec<AugRow>;

    fn validate(p: &AugSweepParams) -> LabResult<()> {
        ensure(p.classes >= 2 && p.labels >= 2, || "need classes >= 2 and labels >= 2".into())?;
        ensure(p.split >= 2 && p.per_class.is_multiple_of(p.split), || "split must be >= 2 and divide per_class".into())?;
        ensure(p.coupon_trials >= 2, || "coupon_trials must be >= 2".into())?;
        let inputs = p.classes * p.per_class;
        ensure(p.family.is_linear() || inputs <= 16, || {
            format!("MLP shattering of {inputs} identity classes enumerates too many labelings; use <= 16 inputs")
        })
    }

    fn run(p: &AugSweepParams, seed: u64) -> LabResult<Vec<AugRow>> {
        let truth = EquivalenceRelation::blocks(p.classes, p.per_class)?;
        let n = truth.size();
        let px = InputDistribution::uniform(n);
        let labels: Vec<usize> = truth.class_of().iter().map(|&c| c % p.labels).collect();
        let task = Task::deterministic(px.clone(), &labels, p.labels)?;
        let settings = [Setting::Exact, Setting::Finer, Setting::Identity];
        settings
            .par_iter()
            .enumerate()
            .map(|(i, &setting)| {
                let aug = match setting {
                    Setting::Exact => Augmentor::block_uniform(&truth),
                    Setting::Finer => {
                        Augmentor::block_uniform(&EquivalenceRelation::blocks(p.classes * p.split, p.per_class / p.split)?)
                    }
                    Setting::Identity => Augmentor::identity(n),
                };
                let eq = equivalence_from_augmentor(&aug, &px)?;
                let c = eq.num_classes();
                let probs = class_probabilities(&px, &eq)?;
                let dims: Vec<usize> = (1..c).collect();
                let samples_exact = if c <= MAX_COUPON_CLASSES {
                    Some(coupon_expected_samples(&probs)?)
                } else if probs.iter().all(|&q| q == probs[0]) {
                    Some(c as f64 * harmonic(c))
                } else {
                    None
                };
                let mc = mc_coupon_samples(&probs, p.coupon_trials, derive(seed, 2 * i as u64))?;
                let risk = p
                    .sizes
                    .iter()
                    .map(|&s| Ok((s, expected_excess_risk_exact(&task, &eq, s)?)))
                    .collect::<LabResult<Vec<_>>>()?;
                Ok(AugRow {
                    setting,
                    classes: c,
                    refines_true: is_refinement(&eq, &truth)?,
                    min_dim: empirical_min_dimension(&eq, &p.family, &dims, 1, derive(seed, 2 * i as u64 + 1))?,
                    samples_exact,
                    samples_mc_mean: mc.mean,
                    samples_mc_stderr: mc.stderr,
                    risk,
                })
            })
            .collect()
    }

    fn artifacts(out: &Vec<AugRow>) -> Vec<Artifact> {
        let mut t = Table::new(&[
            "setting",
            "classes",
            "refines_true",
            "min_dim",
            "samples_exact",
            "samples_mc_mean",
            "samples_mc_stderr",
        ]);
        let mut risk = Table::new(&["setting", "n", "excess_risk"]);
        for r in out {
            t.push(vec![
                r.setting.name().into(),
                r.classes.to_string(),
                r.refines_true.to_string(),
                r.min_dim.map(|d| d.to_string()).unwrap_or_default(),
                opt(r.samples_exact),
                g17(r.samples_mc_mean),
                g17(r.samples_mc_stderr),
            ]);
            for &(n, v) in &r.risk {
                risk.push(vec![r.setting.name().into(), n.to_string(), g17(v)]);
            }
        }
        vec![Artifact::csv("", &t), Artifact::csv("risk", &risk)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarser_augmentations_need_fewer_dimensions_and_samples() {
        let p = AugSweepParams {
            classes: 3,
            per_class: 2,
            sizes: vec![0, 4],
            coupon_trials: 500,
            ..Default::default()
        };
        let rows = AugSweep::run(&p, 0).unwrap();
        let classes: Vec<usize> = rows.iter().map(|r| r.classes).collect();
        assert_eq!(classes, [3, 6, 6]);
        assert!(rows.iter().all(|r| r.refines_true));
        assert_eq!(rows[0].min_dim, Some(2));
        assert_eq!(rows[2].min_dim, Some(5));
        assert!(rows[0].samples_exact < rows[2].samples_exact);
        assert!(rows[0].risk[1].1 <= rows[2].risk[1].1);
        assert_eq!(rows[0].risk[0], (0, 1.0));
    }

    #[test]
    fn split_must_divide_per_class() {
        let p = AugSweepParams {
            per_class: 3,
            ..Default::default()
        };
        assert!(AugSweep::validate(&p).is_err());
    }
}
