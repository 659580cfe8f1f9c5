//! Seeded synthetic vector corpora for benchmarks and recall tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    for c in &mut v {
        *c /= norm;
    }
    v
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `n` points drawn uniformly from the unit sphere, ids `v00000`, `v00001`, ...
pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| (format!("v{i:05}"), normalize(gaussian(&mut rng, dim))))
        .collect()
}

/// Shape of an embedding-like corpus: points on a low-dimensional linear
/// subspace of the ambient space, plus a little isotropic noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingLike {
    pub dim: usize,
    pub latent_dim: usize,
    pub noise: f64,
}

impl Default for EmbeddingLike {
    fn default() -> Self {
        Self {
            dim: 768,
            latent_dim: 16,
            noise: 0.05,
        }
    }
}

/// A corpus generator whose points share one random projection, so corpus
/// and query draws come from the same distribution.
pub struct EmbeddingLikeGenerator {
    shape: EmbeddingLike,
    /// `latent_dim` rows of length `dim`.
    basis: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl EmbeddingLikeGenerator {
    pub fn new(shape: EmbeddingLike, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (shape.dim as f64).sqrt();
        let basis = (0..shape.latent_dim)
            .map(|_| gaussian(&mut rng, shape.dim).into_iter().map(|c| c * scale).collect())
            .collect();
        Self { shape, basis, rng }
    }

    pub fn next_vector(&mut self) -> Vec<f64> {
        let latent = gaussian(&mut self.rng, self.shape.latent_dim);
        let noise_scale = self.shape.noise / (self.shape.dim as f64).sqrt();
        let mut v: Vec<f64> = (0..self.shape.dim)
            .map(|_| self.rng.sample::<f64, _>(StandardNormal) * noise_scale)
            .collect();
        for (weight, row) in latent.iter().zip(&self.basis) {
            for (c, b) in v.iter_mut().zip(row) {
                *c += weight * b / (self.shape.latent_dim as f64).sqrt();
            }
        }
        normalize(v)
    }

    /// `n` labeled vectors with ids `v00000`, `v00001`, ...
    pub fn corpus(&mut self, n: usize) -> Vec<(String, Vec<f64>)> {
        (0..n).map(|i| (format!("v{i:05}"), self.next_vector())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_are_unit_and_seeded() {
        let a = unit_vectors(5, 12, 1);
        let b = unit_vectors(5, 12, 1);
        assert_eq!(a, b);
        assert_ne!(a, unit_vectors(5, 12, 2));
        for (_, v) in &a {
            let n: f64 = v.iter().map(|c| c * c).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_like_is_seeded_and_unit() {
        let shape = EmbeddingLike { dim: 64, latent_dim: 4, noise: 0.05 };
        let a = EmbeddingLikeGenerator::new(shape, 3).corpus(10);
        let b = EmbeddingLikeGenerator::new(shape, 3).corpus(10);
        assert_eq!(a, b);
        for (_, v) in &a {
            let n: f64 = v.iter().map(|c| c * c).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
