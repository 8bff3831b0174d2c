//! Audits a list of encoders against one partition.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use issl_core::encoders::{effective_dimension, one_hot_encoder, setf, setf_encoder, Encoder, RANK_TOL};
use issl_core::probes::{sample_optimality_report, OptimalityReport, ProbeFamily};
use issl_core::rng::{derive, rng};
use issl_core::world::{maximal_invariant, EquivalenceRelation};

use super::{ensure, Scenario};
use crate::error::{LabError, LabResult};
use crate::output::{Artifact, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum EncoderChoice {
    OneHot,
    /// `dim` defaults to `C - 1`.
    Setf { dim: Option<usize> },
    /// sETF(C, C-1) keeping only the first `dim` coordinates.
    Truncated { dim: usize },
    /// sETF rows plus per-input Gaussian noise.
    Perturbed { scale: f64 },
    Constant,
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem1Params {
    pub classes: usize,
    pub per_class: usize,
    /// Partition file; overrides `classes` and `per_class`.
    pub partition: Option<PathBuf>,
    pub family: ProbeFamily,
    pub encoders: Vec<EncoderChoice>,
    pub tol: f64,
    pub budget: Option<usize>,
}

impl Default for Theorem1Params {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 2,
            partition: None,
            family: ProbeFamily::linear(),
            encoders: vec![
                EncoderChoice::OneHot,
                EncoderChoice::Setf { dim: None },
                EncoderChoice::Truncated { dim: 2 },
                EncoderChoice::Perturbed { scale: 0.1 },
                EncoderChoice::Constant,
            ],
            tol: 1e-8,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncoderAudit {
    pub encoder: String,
    pub dim: usize,
    pub effective_dimension: usize,
    pub report: OptimalityReport,
}

pub struct Theorem1;

impl Theorem1Params {
    pub fn relation(&self) -> LabResult<EquivalenceRelation> {
        match &self.partition {
            Some(path) => EquivalenceRelation::load_json(path)
                .map_err(|e| LabError::validation(format!("partition {}: {e}", path.display()))),
            None => EquivalenceRelation::blocks(self.classes, self.per_class).map_err(|e| LabError::validation(e.to_string())),
        }
    }
}

fn label(choice: &EncoderChoice, c: usize) -> String {
    match choice {
        EncoderChoice::OneHot => "one-hot".into(),
        EncoderChoice::Setf { dim } => format!("setf-d{}", dim.unwrap_or(c - 1)),
        EncoderChoice::Truncated { dim } => format!("truncated-d{dim}"),
        EncoderChoice::Perturbed { scale } => format!("perturbed-{scale}"),
        EncoderChoice::Constant => "constant".into(),
        EncoderChoice::File { path } => format!("file:{}", path.display()),
    }
}

fn build(choice: &EncoderChoice, eq: &EquivalenceRelation, seed: u64) -> LabResult<Encoder> {
    let m = maximal_invariant(eq);
    let c = eq.num_classes();
    Ok(match choice {
        EncoderChoice::OneHot => one_hot_encoder(&m),
        EncoderChoice::Setf { dim } => setf_encoder(&m, dim.unwrap_or(c - 1))?,
        EncoderChoice::Truncated { dim } => {
            let v = setf(c, c - 1)?.vertices().columns(0, *dim).into_owned();
            Encoder::new(DMatrix::from_fn(eq.size(), *dim, |x, j| v[(m.get(x), j)]))?
        }
        EncoderChoice::Perturbed { scale } => {
            let mut reps = setf_encoder(&m, c - 1)?.into_reps();
            let mut r = rng(seed);
            reps.iter_mut().for_each(|v| {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += scale * z;
            });
            Encoder::new(reps)?
        }
        EncoderChoice::Constant => Encoder::new(DMatrix::from_element(eq.size(), 1, 1.0))?,
        EncoderChoice::File { path } => {
            Encoder::load(path).map_err(|e| LabError::validation(format!("encoder {}: {e}", path.display())))?
        }
    })
}

impl Scenario for Theorem1 {
    type Params = Theorem1Params;
    type Output = Vec<EncoderAudit>;

    fn validate(p: &Theorem1Params) -> LabResult<()> {
        let eq = p.relation()?;
        let c = eq.num_classes();
        ensure(p.tol >= 0.0, || "tol must be non-negative".into())?;
        ensure(!p.encoders.is_empty(), || "at least one encoder is required".into())?;
        for e in &p.encoders {
            match e {
                EncoderChoice::Setf { dim: Some(d) } => ensure(*d + 1 >= c, || format!("setf needs dim >= C - 1 = {}", c - 1))?,
                EncoderChoice::Truncated { dim } => {
                    ensure(*dim >= 1 && *dim < c, || format!("truncated dim must lie in 1..{c}"))?
                }
                EncoderChoice::Perturbed { scale } => ensure(scale.is_finite(), || "perturbation scale must be finite".into())?,
                _ => {}
            }
        }
        Ok(())
    }

    fn run(p: &Theorem1Params, seed: u64) -> LabResult<Vec<EncoderAudit>> {
        let eq = p.relation()?;
        let c = eq.num_classes();
        let budget = p.budget.unwrap_or_else(|| p.family.default_budget(c));
        let mut out = Vec::new();
        for (i, choice) in p.encoders.iter().enumerate() {
            let e = build(choice, &eq, derive(seed, 2 * i as u64))?;
            if e.size() != eq.size() {
                return Err(LabError::validation(format!(
                    "encoder {} has {} rows for {} inputs",
                    label(choice, c),
                    e.size(),
                    eq.size()
                )));
            }
            let report = sample_optimality_report(&e, &eq, &p.family, p.tol, budget, derive(seed, 2 * i as u64 + 1))?;
            out.push(EncoderAudit {
                encoder: label(choice, c),
                dim: e.dim(),
                effective_dimension: effective_dimension(&e, RANK_TOL),
                report,
            });
        }
        Ok(out)
    }

    fn artifacts(out: &Vec<EncoderAudit>) -> Vec<Artifact> {
        let mut t = Table::new(&["encoder", "dim", "effective_dimension", "invariant", "m_predictable", "shattered", "verdict"]);
        for a in out {
            t.push(vec![
                a.encoder.clone(),
                a.dim.to_string(),
                a.effective_dimension.to_string(),
                a.report.invariant.to_string(),
                a.report.m_predictable.to_string(),
                a.report.shattered.holds().to_string(),
                a.report.verdict.to_string(),
            ]);
        }
        vec![Artifact::csv("", &t), Artifact::json("reports", out)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_encoders_get_the_expected_verdicts() {
        let out = Theorem1::run(&Theorem1Params::default(), 0).unwrap();
        let verdicts: Vec<(&str, bool)> = out.iter().map(|a| (a.encoder.as_str(), a.report.verdict)).collect();
        assert_eq!(
            verdicts,
            [
                ("one-hot", true),
                ("setf-d3", true),
                ("truncated-d2", false),
                ("perturbed-0.1", false),
                ("constant", false)
            ]
        );
        assert!(!out[3].report.invariant);
        assert_eq!(out[2].effective_dimension, 2);
    }

    #[test]
    fn setf_below_c_minus_one_is_rejected() {
        let p = Theorem1Params {
            encoders: vec![EncoderChoice::Setf { dim: Some(2) }],
            ..Default::default()
        };
        assert_eq!(Theorem1::validate(&p).unwrap_err().exit_code(), 2);
    }
}
