//! Planar cluster worlds for the end-to-end trainers.
//!
//! Each cluster is one equivalence class. Augmenting an input resamples a
//! member of its class, optionally adding isotropic Gaussian jitter.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{rng, LabRng};
use crate::world::{Augmentor, EquivalenceRelation};

/// Where cluster centers sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterLayout {
    /// Evenly spaced on a circle of the given radius in `R^2`.
    Planar,
    /// `radius * e_c` in `R^C`: all centers pairwise equidistant.
    Orthogonal,
}

/// How an augmented view is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum AugmentMode {
    /// A uniformly drawn member of the same cluster, unchanged.
    ResampleExact,
    /// A uniformly drawn member plus `N(0, sigma^2)` noise per coordinate.
    Jitter { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSpec {
    pub layout: ClusterLayout,
    pub classes: usize,
    pub per_class: usize,
    pub radius: f64,
    pub spread: f64,
    pub augment: AugmentMode,
    /// Required lower bound on the distance between cluster centers.
    pub margin: f64,
}

impl ClusterSpec {
    /// Distance between the closest pair of centers.
    pub fn center_separation(&self) -> f64 {
        match self.layout {
            ClusterLayout::Planar => 2.0 * self.radius * (PI / self.classes as f64).sin(),
            ClusterLayout::Orthogonal => self.radius * 2f64.sqrt(),
        }
    }
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            layout: ClusterLayout::Planar,
            classes: 8,
            per_class: 16,
            radius: 1.0,
            spread: 0.05,
            augment: AugmentMode::Jitter { sigma: 0.02 },
            margin: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterWorld {
    points: DMatrix<f64>,
    eq: EquivalenceRelation,
    members: Vec<Vec<usize>>,
    augment: AugmentMode,
}

impl ClusterWorld {
    /// One Gaussian cluster per class; input `i` belongs to class
    /// `i / per_class`.
    pub fn new(spec: &ClusterSpec, seed: u64) -> Result<Self> {
        let sigma = match spec.augment {
            AugmentMode::ResampleExact => 0.0,
            AugmentMode::Jitter { sigma } => sigma,
        };
        if spec.per_class == 0 || !(spec.spread >= 0.0 && sigma >= 0.0 && spec.radius > 0.0) {
            return Err(invalid("cluster spec", "need per_class >= 1, radius > 0, spread and sigma >= 0"));
        }
        if spec.classes >= 2 && spec.center_separation() < spec.margin {
            return Err(invalid(
                "cluster spec",
                format!("centers {} apart, below the margin {}", spec.center_separation(), spec.margin),
            ));
        }
        let eq = EquivalenceRelation::blocks(spec.classes, spec.per_class)?;
        let mut r = rng(seed);
        let dim = match spec.layout {
            ClusterLayout::Planar => 2,
            ClusterLayout::Orthogonal => spec.classes,
        };
        let mut points = DMatrix::zeros(eq.size(), dim);
        for i in 0..eq.size() {
            let class = eq.class(i);
            let center: Vec<f64> = match spec.layout {
                ClusterLayout::Planar => {
                    let angle = TAU * class as f64 / spec.classes as f64;
                    vec![spec.radius * angle.cos(), spec.radius * angle.sin()]
                }
                ClusterLayout::Orthogonal => (0..dim).map(|j| if j == class { spec.radius } else { 0.0 }).collect(),
            };
            for (j, c) in center.iter().enumerate() {
                let noise: f64 = r.sample(StandardNormal);
                points[(i, j)] = c + spec.spread * noise;
            }
        }
        Ok(Self {
            members: eq.members(),
            points,
            eq,
            augment: spec.augment,
        })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn relation(&self) -> &EquivalenceRelation {
        &self.eq
    }

    pub fn size(&self) -> usize {
        self.points.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.eq.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// One augmented view of each input in `xs`.
    pub fn augment(&self, xs: &[usize], r: &mut LabRng) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(xs.len(), self.dim());
        for (row, &x) in xs.iter().enumerate() {
            let class = &self.members[self.eq.class(x)];
            let src = class[r.random_range(0..class.len())];
            for j in 0..self.dim() {
                out[(row, j)] = self.points[(src, j)];
                if let AugmentMode::Jitter { sigma } = self.augment {
                    let noise: f64 = r.sample(StandardNormal);
                    out[(row, j)] += sigma * noise;
                }
            }
        }
        out
    }

    /// The resampling step as a finite augmentor over the inputs. Exact for
    /// `ResampleExact`; jitter is not represented.
    pub fn resample_augmentor(&self) -> Augmentor {
        Augmentor::block_uniform(&self.eq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augmentations_stay_near_their_cluster() {
        let w = ClusterWorld::new(&ClusterSpec::default(), 3).unwrap();
        assert_eq!(w.size(), 128);
        let xs: Vec<usize> = (0..w.size()).collect();
        let views = w.augment(&xs, &mut rng(4));
        for x in xs {
            let angle = TAU * w.relation().class(x) as f64 / 8.0;
            let d = ((views[(x, 0)] - angle.cos()).powi(2) + (views[(x, 1)] - angle.sin()).powi(2)).sqrt();
            assert!(d < 0.4, "view of {x} drifted {d}");
        }
    }

    #[test]
    fn exact_resampling_is_markov() {
        let spec = ClusterSpec {
            augment: AugmentMode::ResampleExact,
            ..ClusterSpec::default()
        };
        let w = ClusterWorld::new(&spec, 1).unwrap();
        assert!(crate::world::check_markov_augmentor(&w.resample_augmentor(), w.relation(), 0.0).unwrap());
        let views = w.augment(&[0, 17], &mut rng(2));
        for (row, x) in [(0, 0), (1, 17)] {
            let src = (0..w.size()).find(|&y| (0..2).all(|j| w.points()[(y, j)] == views[(row, j)])).unwrap();
            assert!(w.relation().equivalent(src, x));
        }
    }

    #[test]
    fn margin_is_enforced() {
        let spec = ClusterSpec {
            classes: 64,
            ..ClusterSpec::default()
        };
        assert!(ClusterWorld::new(&spec, 0).is_err());
        let sep = ClusterSpec::default().center_separation();
        assert!((sep - 2.0 * (PI / 8.0).sin()).abs() < 1e-15);
    }
}
