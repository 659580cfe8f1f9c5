//! Cosine similarity, Manhattan distance and Euclidean distance, plus the
//! pairwise matrix behind the similarity-calculation endpoints.
//!
//! All sums run left to right over the component index so results are
//! reproducible bit for bit.

use serde::Serialize;
use thiserror::Error;

use crate::model::{Embedding, SimilarityMetric};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("pairwise input lists must be non-empty")]
    EmptyInput,
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    // Rounding can push |cos| a hair past 1.
    // sqrt of the product keeps self-similarity at exactly 1.
    Ok((dot / (norm_a * norm_b).sqrt()).clamp(-1.0, 1.0))
}

pub fn l1_slices(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        sum += (x - y).abs();
    }
    Ok(sum)
}

pub fn l2_slices(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_dims(a, b)?;
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = y - x;
        sum += d * d;
    }
    Ok(sum.sqrt())
}

/// Cosine similarity in `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, MetricError> {
    cosine_slices(a.as_slice(), b.as_slice())
}

/// Manhattan distance.
pub fn l1(a: &Embedding, b: &Embedding) -> Result<f64, MetricError> {
    l1_slices(a.as_slice(), b.as_slice())
}

/// Euclidean distance.
pub fn l2(a: &Embedding, b: &Embedding) -> Result<f64, MetricError> {
    l2_slices(a.as_slice(), b.as_slice())
}

pub fn evaluate(metric: SimilarityMetric, a: &Embedding, b: &Embedding) -> Result<f64, MetricError> {
    match metric {
        SimilarityMetric::Cosine => cosine(a, b),
        SimilarityMetric::L1 => l1(a, b),
        SimilarityMetric::L2 => l2(a, b),
    }
}

/// Metric values between every source and every target, rows = sources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    /// Row-major, `source_ids.len() * target_ids.len()` entries.
    pub values: Vec<f64>,
    pub metric: SimilarityMetric,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.source_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.target_ids.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let cols = self.cols();
        &self.values[row * cols..(row + 1) * cols]
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|r| self.row(r).to_vec()).collect()
    }
}

/// Evaluates `metric` for every (source, target) pair, keeping input order.
pub fn pairwise(
    sources: &[(&str, &Embedding)],
    targets: &[(&str, &Embedding)],
    metric: SimilarityMetric,
) -> Result<SimilarityMatrix, MetricError> {
    if sources.is_empty() || targets.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut values = Vec::with_capacity(sources.len() * targets.len());
    for (_, s) in sources {
        for (_, t) in targets {
            values.push(evaluate(metric, s, t)?);
        }
    }
    Ok(SimilarityMatrix {
        source_ids: sources.iter().map(|(id, _)| id.to_string()).collect(),
        target_ids: targets.iter().map(|(id, _)| id.to_string()).collect(),
        values,
        metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77)), evaluated by hand: 0.974631846...
        let c = cosine(&e(&[1.0, 2.0, 3.0]), &e(&[4.0, 5.0, 6.0])).unwrap();
        assert!((c - 0.974_631_846_197_076_2).abs() < 1e-12, "{c}");
        assert_eq!(format!("{c:.4}"), "0.9746");
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])),
            Err(MetricError::ZeroVector)
        );
        assert_eq!(
            cosine(&e(&[1.0]), &e(&[1.0, 0.0])),
            Err(MetricError::DimensionMismatch { left: 1, right: 2 })
        );
    }

    #[test]
    fn l1_examples() {
        let a = e(&[0.3, -2.0, 7.5]);
        assert_eq!(l1(&a, &a).unwrap(), 0.0);
        assert_eq!(l1(&e(&[1.0, 2.0]), &e(&[0.0, 0.0])).unwrap(), 3.0);
        assert_eq!(l1(&e(&[-1.0, 1.0]), &e(&[1.0, -1.0])).unwrap(), 4.0);
        assert!(l1(&e(&[1.0]), &e(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn l2_examples() {
        let a = e(&[0.3, -2.0, 7.5]);
        assert_eq!(l2(&a, &a).unwrap(), 0.0);
        assert_eq!(l2(&e(&[0.0, 0.0]), &e(&[3.0, 4.0])).unwrap(), 5.0);
        assert!(l2(&e(&[1.0]), &e(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn pairwise_examples() {
        let a = e(&[1.0, 2.0]);
        let b = e(&[-3.0, 0.5]);
        let m = pairwise(&[("a", &a)], &[("a", &a)], SimilarityMetric::Cosine).unwrap();
        assert_eq!(m.to_nested(), vec![vec![1.0]]);

        let m = pairwise(&[("a", &a)], &[("a", &a), ("b", &b)], SimilarityMetric::L1).unwrap();
        assert_eq!(m.to_nested(), vec![vec![0.0, l1(&a, &b).unwrap()]]);
        assert_eq!(m.source_ids, vec!["a"]);
        assert_eq!(m.target_ids, vec!["a", "b"]);

        assert_eq!(
            pairwise(&[], &[("a", &a)], SimilarityMetric::L2),
            Err(MetricError::EmptyInput)
        );
        let z = e(&[0.0, 0.0]);
        assert_eq!(
            pairwise(&[("a", &a)], &[("z", &z)], SimilarityMetric::Cosine),
            Err(MetricError::ZeroVector)
        );
    }

    fn vec_pair(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            proptest::collection::vec(-10.0f64..10.0, dim),
            proptest::collection::vec(-10.0f64..10.0, dim),
        )
    }

    proptest! {
        #[test]
        fn symmetric((a, b) in (1usize..32).prop_flat_map(vec_pair)) {
            let (a, b) = (e(&a), e(&b));
            prop_assert_eq!(l1(&a, &b).unwrap(), l1(&b, &a).unwrap());
            prop_assert_eq!(l2(&a, &b).unwrap(), l2(&b, &a).unwrap());
            if a.norm() > 0.0 && b.norm() > 0.0 {
                prop_assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
            }
        }

        #[test]
        fn cosine_scale_invariant((a, b) in vec_pair(16), lambda in 0.01f64..100.0) {
            prop_assume!(e(&a).norm() > 1e-6 && e(&b).norm() > 1e-6);
            let scaled: Vec<f64> = a.iter().map(|x| x * lambda).collect();
            let c1 = cosine(&e(&a), &e(&b)).unwrap();
            let c2 = cosine(&e(&scaled), &e(&b)).unwrap();
            prop_assert!((c1 - c2).abs() <= 1e-12, "{} vs {}", c1, c2);
        }

        #[test]
        fn triangle_inequality(
            a in proptest::collection::vec(-5.0f64..5.0, 8),
            b in proptest::collection::vec(-5.0f64..5.0, 8),
            c in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let (a, b, c) = (e(&a), e(&b), e(&c));
            prop_assert!(l1(&a, &c).unwrap() <= l1(&a, &b).unwrap() + l1(&b, &c).unwrap() + 1e-9);
            prop_assert!(l2(&a, &c).unwrap() <= l2(&a, &b).unwrap() + l2(&b, &c).unwrap() + 1e-9);
        }

        #[test]
        fn l2_squared_matches_sum((a, b) in vec_pair(24)) {
            let d = l2(&e(&a), &e(&b)).unwrap();
            let sum: f64 = a.iter().zip(&b).map(|(x, y)| (y - x) * (y - x)).sum();
            prop_assert!((d * d - sum).abs() <= 1e-9 * sum.max(1.0));
        }
    }
}
