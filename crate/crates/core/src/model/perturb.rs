use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelError;
use crate::diff::Tensor;
use crate::hash;

/// A pivot embedding and `M` Gaussian perturbations of it.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub pivot: Vec<f64>,
    pub perturbed: Vec<Vec<f64>>,
    pub sigma: f64,
}

fn check(count: usize, sigma: f64) -> Result<(), ModelError> {
    if count < 1 {
        return Err(ModelError::Perturbation("at least one perturbation is required".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ModelError::Perturbation(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    Ok(())
}

/// `count` offset matrices `sigma · g`, `g` standard normal.
///
/// Sample `i` is drawn from its own stream keyed by `(seed, i)`, so the
/// offsets do not depend on how many samples are requested or on any other
/// random draws made during training.
pub fn perturbation_offsets(rows: usize, cols: usize, count: usize, sigma: f64, seed: u64) -> Result<Vec<Tensor>, ModelError> {
    check(count, sigma)?;
    Ok((0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(hash::key(&[seed, i as u64]));
            let data = (0..rows * cols)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    sigma * g
                })
                .collect();
            Tensor::matrix(rows, cols, data)
        })
        .collect())
}

pub fn perturb(embedding: &[f64], count: usize, sigma: f64, seed: u64) -> Result<PerturbationSet, ModelError> {
    let offsets = perturbation_offsets(1, embedding.len(), count, sigma, seed)?;
    let perturbed = offsets
        .iter()
        .map(|o| embedding.iter().zip(o.data()).map(|(e, d)| e + d).collect())
        .collect();
    Ok(PerturbationSet { pivot: embedding.to_vec(), perturbed, sigma })
}
