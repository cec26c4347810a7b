//! Synthetic corpora drawn from the generative model.
//!
//! Sub-activity proportions come from a symmetric Dirichlet, each video's bag from a
//! multinomial over its foreground frames, its ordering from the Mallows model, and its
//! background flags from a Bernoulli. Label `c` emits features around `(s / sqrt 2) e_c`
//! (background uses the next axis), so any two class centres are exactly `s` apart. Each
//! class is itself a `q`-component mixture whose component centres are jittered around the
//! class centre.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::categorical::sample_index;
use crate::corpus::FeatureCorpus;
use crate::error::{Error, Result};
use crate::inference::construct_z;
use crate::mallows::{
    inversions_from_permutation, permutation_from_inversions, position_size,
    sample_inversion_count, InversionVector, Permutation,
};

/// Spread of sub-component centres around their class centre.
const COMPONENT_JITTER: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub k: usize,
    pub q: usize,
    pub videos: usize,
    /// Mean frames per video; actual lengths vary uniformly within 20% of it.
    pub frames: usize,
    pub dim: usize,
    /// One dispersion per inversion position (`K - 1` values).
    pub rho: Vec<f64>,
    pub lambda: f64,
    pub separation: f64,
    /// Dirichlet concentration of the sub-activity proportions.
    pub theta0: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.q == 0 || self.videos == 0 || self.frames == 0 || self.dim == 0 {
            return Err(Error::input("generator counts must all be at least 1"));
        }
        if self.rho.len() != self.k - 1 {
            return Err(Error::input(format!(
                "need {} dispersions for K = {}, got {}",
                self.k - 1,
                self.k,
                self.rho.len()
            )));
        }
        if self.rho.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::input("dispersions must be positive"));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::input("lambda must lie in [0, 1)"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::input("separation must be positive"));
        }
        if !(self.theta0 > 0.0) {
            return Err(Error::input("theta0 must be positive"));
        }
        let needed = self.k + usize::from(self.lambda > 0.0);
        if self.dim < needed {
            return Err(Error::input(format!(
                "feature dimension {} cannot hold {needed} separated class centres",
                self.dim
            )));
        }
        Ok(())
    }
}

/// The latent values behind a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub theta: Vec<f64>,
    pub rho: Vec<f64>,
    pub orderings: Vec<Permutation>,
    pub inversions: Vec<InversionVector>,
    pub bags: Vec<Vec<usize>>,
    /// Centres of the classes `1..=K`, then background when `lambda > 0`.
    pub class_means: Vec<Vec<f64>>,
    /// Sub-component centres per class, same order as `class_means`.
    pub component_means: Vec<Vec<Vec<f64>>>,
}

pub struct SyntheticCorpus {
    pub corpus: FeatureCorpus,
    pub labels: Vec<Vec<usize>>,
    pub truth: GroundTruth,
}

fn draw_proportions<R: Rng + ?Sized>(k: usize, theta0: f64, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(theta0, 1.0).map_err(|e| Error::input(e.to_string()))?;
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // Tiny shapes can underflow every draw to zero; redraw in that case.
        if total > 0.0 {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

pub fn generate_synthetic<R: Rng + ?Sized>(
    config: &GeneratorConfig,
    rng: &mut R,
) -> Result<SyntheticCorpus> {
    config.validate()?;
    let k = config.k;
    let classes = k + usize::from(config.lambda > 0.0);
    let scale = config.separation / std::f64::consts::SQRT_2;
    let class_means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            (0..config.dim)
                .map(|d| if d == c { scale } else { 0.0 })
                .collect()
        })
        .collect();
    let jitter = Normal::new(0.0, COMPONENT_JITTER).map_err(|e| Error::input(e.to_string()))?;
    let component_means: Vec<Vec<Vec<f64>>> = class_means
        .iter()
        .map(|centre| {
            (0..config.q)
                .map(|_| {
                    if config.q == 1 {
                        centre.clone()
                    } else {
                        centre.iter().map(|m| m + jitter.sample(rng)).collect()
                    }
                })
                .collect()
        })
        .collect();

    let theta = draw_proportions(k, config.theta0, rng)?;
    let low = ((config.frames as f64) * 0.8).round().max(1.0) as usize;
    let high = ((config.frames as f64) * 1.2).round().max(1.0) as usize;

    let mut ids = Vec::with_capacity(config.videos);
    let mut videos = Vec::with_capacity(config.videos);
    let mut labels = Vec::with_capacity(config.videos);
    let mut orderings = Vec::with_capacity(config.videos);
    let mut inversions = Vec::with_capacity(config.videos);
    let mut bags = Vec::with_capacity(config.videos);
    let width = config.videos.to_string().len().max(3);
    for i in 0..config.videos {
        let frames = rng.random_range(low..=high);
        let b: Vec<bool> = (0..frames)
            .map(|_| rng.random_bool(config.lambda))
            .collect();
        let mut a = vec![0; k];
        for _ in b.iter().filter(|bg| !**bg) {
            a[sample_index(&theta, rng)] += 1;
        }
        let counts: Vec<usize> = (0..k.saturating_sub(1))
            .map(|pos| sample_inversion_count(config.rho[pos], position_size(k, pos), rng))
            .collect();
        let v = InversionVector::new(counts)?;
        let pi = permutation_from_inversions(&v);
        let z = construct_z(&a, &pi, &b)?;

        let mut x = Array2::<f64>::zeros((frames, config.dim));
        for (j, &label) in z.iter().enumerate() {
            let class = if label == 0 { k } else { label - 1 };
            let comp = &component_means[class][rng.random_range(0..config.q)];
            for (d, m) in comp.iter().enumerate() {
                let noise: f64 = StandardNormal.sample(rng);
                x[[j, d]] = m + noise;
            }
        }
        debug_assert_eq!(inversions_from_permutation(&pi), v);
        ids.push(format!("video_{i:0width$}"));
        videos.push(x);
        labels.push(z);
        orderings.push(pi);
        inversions.push(v);
        bags.push(a);
    }

    Ok(SyntheticCorpus {
        corpus: FeatureCorpus::new(ids, videos)?,
        labels,
        truth: GroundTruth {
            theta,
            rho: config.rho.clone(),
            orderings,
            inversions,
            bags,
            class_means,
            component_means,
        },
    })
}
