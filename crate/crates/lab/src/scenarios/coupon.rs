//! Samples needed until every class has been observed.

use serde::{Deserialize, Serialize};

use issl_core::risk::{coupon_expected_samples, coupon_weighted_asymptotic, mc_coupon_samples, MAX_COUPON_CLASSES};
use issl_core::rng::derive;

use super::{ensure, Scenario};
use crate::error::LabResult;
use crate::output::{g17, opt, Artifact, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClassDistribution {
    Uniform { classes: usize },
    /// `p_i ∝ i^-exponent` for `i = 1..=classes`.
    Zipf { classes: usize, exponent: f64 },
    Probs { name: String, probs: Vec<f64> },
}

impl ClassDistribution {
    pub fn name(&self) -> String {
        match self {
            Self::Uniform { classes } => format!("uniform-{classes}"),
            Self::Zipf { classes, exponent } => format!("zipf-{classes}-{exponent}"),
            Self::Probs { name, .. } => name.clone(),
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        let raw: Vec<f64> = match self {
            Self::Uniform { classes } => vec![1.0; *classes],
            Self::Zipf { classes, exponent } => (1..=*classes).map(|i| (i as f64).powf(-exponent)).collect(),
            Self::Probs { probs, .. } => probs.clone(),
        };
        let total: f64 = raw.iter().sum();
        raw.iter().map(|p| p / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouponParams {
    pub distributions: Vec<ClassDistribution>,
    pub trials: usize,
}

impl Default for CouponParams {
    fn default() -> Self {
        Self {
            distributions: vec![
                ClassDistribution::Uniform { classes: 10 },
                ClassDistribution::Zipf {
                    classes: 10,
                    exponent: 1.0,
                },
                ClassDistribution::Uniform { classes: 40 },
            ],
            trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouponRow {
    pub distribution: String,
    pub c: usize,
    /// Inclusion-exclusion value; absent above the enumeration guard.
    pub exact: Option<f64>,
    pub asymptotic: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub trials: usize,
}

pub struct Coupon;

impl Scenario for Coupon {
    type Params = CouponParams;
    type Output = Vec<CouponRow>;

    fn validate(p: &CouponParams) -> LabResult<()> {
        ensure(p.trials >= 2, || "trials must be >= 2".into())?;
        ensure(!p.distributions.is_empty(), || "at least one distribution is required".into())?;
        for d in &p.distributions {
            let ok = match d {
                ClassDistribution::Uniform { classes } => *classes >= 1,
                ClassDistribution::Zipf { classes, exponent } => *classes >= 1 && exponent.is_finite(),
                ClassDistribution::Probs { probs, .. } => {
                    !probs.is_empty() && probs.iter().all(|&p| p.is_finite() && p > 0.0)
                }
            };
            ensure(ok, || format!("distribution {} needs at least one class with positive mass", d.name()))?;
        }
        Ok(())
    }

    fn run(p: &CouponParams, seed: u64) -> LabResult<Vec<CouponRow>> {
        p.distributions
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let probs = d.probs();
                let exact = if probs.len() <= MAX_COUPON_CLASSES {
                    Some(coupon_expected_samples(&probs)?)
                } else {
                    None
                };
                let mc = mc_coupon_samples(&probs, p.trials, derive(seed, i as u64))?;
                Ok(CouponRow {
                    distribution: d.name(),
                    c: probs.len(),
                    exact,
                    asymptotic: coupon_weighted_asymptotic(&probs)?,
                    mc_mean: mc.mean,
                    mc_stderr: mc.stderr,
                    trials: mc.trials,
                })
            })
            .collect()
    }

    fn artifacts(out: &Vec<CouponRow>) -> Vec<Artifact> {
        let mut t = Table::new(&["distribution", "C", "exact", "asymptotic", "mc_mean", "mc_stderr", "trials"]);
        for r in out {
            t.push(vec![
                r.distribution.clone(),
                r.c.to_string(),
                opt(r.exact),
                g17(r.asymptotic),
                g17(r.mc_mean),
                g17(r.mc_stderr),
                r.trials.to_string(),
            ]);
        }
        vec![Artifact::csv("", &t)]
    }
}
