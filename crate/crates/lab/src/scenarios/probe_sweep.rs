//! Probe family used to pick the representation against the family used
//! downstream. Each ISSL family gets its smallest shattered configuration;
//! every evaluation family is then trained on all binary class labelings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use issl_core::probes::{fit_accuracy, min_dimension_configuration, ProbeFamily};
use issl_core::rng::derive;
use issl_core::tasks::enumerate_binary_labelings;
use issl_core::world::EquivalenceRelation;

use super::{ensure, Scenario};
use crate::error::LabResult;
use crate::output::{opt, Artifact, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSweepParams {
    pub classes: usize,
    pub issl_families: Vec<ProbeFamily>,
    pub eval_families: Vec<ProbeFamily>,
    pub trials: usize,
}

impl Default for ProbeSweepParams {
    fn default() -> Self {
        let families = vec![ProbeFamily::linear(), ProbeFamily::mlp(vec![10]).expect("valid widths")];
        Self {
            classes: 6,
            issl_families: families.clone(),
            eval_families: families,
            trials: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeCell {
    pub issl_family: ProbeFamily,
    pub eval_family: ProbeFamily,
    /// Dimension of the ISSL configuration; absent when none was found.
    pub dim: Option<usize>,
    pub worst_accuracy: Option<f64>,
    pub mean_accuracy: Option<f64>,
}

pub struct ProbeSweep;

impl Scenario for ProbeSweep {
    type Params = ProbeSweepParams;
    type Output = Vec<ProbeCell>;

    fn validate(p: &ProbeSweepParams) -> LabResult<()> {
        ensure((2..=12).contains(&p.classes), || "classes must lie in 2..=12".into())?;
        ensure(!p.issl_families.is_empty() && !p.eval_families.is_empty(), || {
            "need at least one ISSL and one evaluation family".into()
        })
    }

    fn run(p: &ProbeSweepParams, seed: u64) -> LabResult<Vec<ProbeCell>> {
        let eq = EquivalenceRelation::identity(p.classes)?;
        let dims: Vec<usize> = (1..p.classes).collect();
        let labelings: Vec<Vec<usize>> = enumerate_binary_labelings(p.classes)?.map(|l| l.label_of_class).collect();
        let mut out = Vec::new();
        for (i, issl) in p.issl_families.iter().enumerate() {
            let config = min_dimension_configuration(&eq, issl, &dims, p.trials, derive(seed, i as u64))?;
            for (j, eval) in p.eval_families.iter().enumerate() {
                let cell_seed = derive(seed, ((i as u64) << 32) | (j as u64 + 1));
                let (worst, mean) = match &config {
                    None => (None, None),
                    Some((_, points)) => {
                        let acc: Vec<f64> = labelings
                            .par_iter()
                            .enumerate()
                            .map(|(l, target)| fit_accuracy(points, target, 2, eval, derive(cell_seed, l as u64)))
                            .collect();
                        let worst = acc.iter().copied().fold(f64::INFINITY, f64::min);
                        (Some(worst), Some(acc.iter().sum::<f64>() / acc.len() as f64))
                    }
                };
                out.push(ProbeCell {
                    issl_family: issl.clone(),
                    eval_family: eval.clone(),
                    dim: config.as_ref().map(|(d, _)| *d),
                    worst_accuracy: worst,
                    mean_accuracy: mean,
                });
            }
        }
        Ok(out)
    }

    fn artifacts(out: &Vec<ProbeCell>) -> Vec<Artifact> {
        let mut t = Table::new(&["issl_family", "eval_family", "dim", "worst_accuracy", "mean_accuracy"]);
        for c in out {
            t.push(vec![
                c.issl_family.to_string(),
                c.eval_family.to_string(),
                c.dim.map(|d| d.to_string()).unwrap_or_default(),
                opt(c.worst_accuracy),
                opt(c.mean_accuracy),
            ]);
        }
        vec![Artifact::csv("", &t)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_configuration_fits_every_labeling() {
        let p = ProbeSweepParams {
            classes: 4,
            issl_families: vec![ProbeFamily::linear()],
            eval_families: vec![ProbeFamily::linear()],
            trials: 1,
        };
        let cells = ProbeSweep::run(&p, 0).unwrap();
        assert_eq!(cells[0].dim, Some(3));
        assert_eq!(cells[0].worst_accuracy, Some(1.0));
    }
}
