//! Recall and latency of the HNSW index against exact search on a seeded
//! synthetic corpus.

use std::fmt::Write as _;
use std::time::Instant;

use millstone_core::ann::{exact_search, recall, AnnError, HnswIndex, HnswParams, SearchHit};
use millstone_core::synthetic::{unit_vectors, EmbeddingLike, EmbeddingLikeGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// Unit vectors near a low-dimensional subspace, like text embeddings.
    EmbeddingLike,
    /// Unit vectors uniform on the sphere.
    Uniform,
}

/// Ids and vectors of a generated corpus.
pub type Corpus = Vec<(String, Vec<f64>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n: usize,
    pub queries: usize,
    pub k: usize,
    pub ef: Vec<usize>,
    pub dim: usize,
    pub seed: u64,
    pub distribution: Distribution,
    pub params: HnswParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 1_000,
            queries: 50,
            k: 10,
            ef: vec![10, 50, 100, 200],
            dim: 768,
            seed: 7,
            distribution: Distribution::EmbeddingLike,
            params: HnswParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub ef: usize,
    pub recall: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub build_secs: f64,
}

/// Corpus and query vectors for `cfg`; queries are fresh draws from the
/// corpus distribution.
pub fn generate(cfg: &BenchConfig) -> (Corpus, Vec<Vec<f64>>) {
    match cfg.distribution {
        Distribution::EmbeddingLike => {
            let shape = EmbeddingLike {
                dim: cfg.dim,
                ..EmbeddingLike::default()
            };
            let mut generator = EmbeddingLikeGenerator::new(shape, cfg.seed);
            let corpus = generator.corpus(cfg.n);
            let queries = (0..cfg.queries).map(|_| generator.next_vector()).collect();
            (corpus, queries)
        }
        Distribution::Uniform => {
            let corpus = unit_vectors(cfg.n, cfg.dim, cfg.seed);
            let queries = unit_vectors(cfg.queries, cfg.dim, cfg.seed ^ 0x9e37_79b9_7f4a_7c15)
                .into_iter()
                .map(|(_, v)| v)
                .collect();
            (corpus, queries)
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn build_index(corpus: &[(String, Vec<f64>)], dim: usize, params: &HnswParams) -> Result<HnswIndex, AnnError> {
    let mut index = HnswIndex::new(dim, params.clone())?;
    for (id, v) in corpus {
        index.insert(id, v)?;
    }
    Ok(index)
}

/// Measures every `ef` of `cfg` on one index built from the seeded corpus.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchResult, AnnError> {
    let (corpus, queries) = generate(cfg);
    let started = Instant::now();
    let index = build_index(&corpus, cfg.dim, &cfg.params)?;
    let build_secs = started.elapsed().as_secs_f64();
    let truth: Vec<Vec<SearchHit>> = queries
        .iter()
        .map(|q| exact_search(corpus.iter().map(|(id, v)| (id.as_str(), v.as_slice())), q, cfg.k))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(cfg.ef.len());
    for &ef in &cfg.ef {
        let mut total = 0.0;
        let mut times = Vec::with_capacity(queries.len());
        for (q, t) in queries.iter().zip(&truth) {
            let start = Instant::now();
            let found = index.search(q, cfg.k, Some(ef))?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            total += recall(&found, t);
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            ef,
            recall: if queries.is_empty() { 1.0 } else { total / queries.len() as f64 },
            p50_ms: percentile(&times, 50.0),
            p95_ms: percentile(&times, 95.0),
        });
    }
    Ok(BenchResult { rows, build_secs })
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("ef,recall,p50_ms,p95_ms\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.4},{:.3},{:.3}", r.ef, r.recall, r.p50_ms, r.p95_ms);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
        assert_eq!(percentile(&[], 95.0), 0.0);
    }

    #[test]
    fn single_point_corpus_has_full_recall() {
        let cfg = BenchConfig {
            n: 1,
            queries: 5,
            ef: vec![10],
            ..BenchConfig::default()
        };
        assert_eq!(run_bench(&cfg).unwrap().rows[0].recall, 1.0);
    }

    #[test]
    fn recall_is_seed_stable() {
        let cfg = BenchConfig {
            n: 300,
            queries: 20,
            dim: 32,
            ..BenchConfig::default()
        };
        let a: Vec<f64> = run_bench(&cfg).unwrap().rows.iter().map(|r| r.recall).collect();
        let b: Vec<f64> = run_bench(&cfg).unwrap().rows.iter().map(|r| r.recall).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let csv = to_csv(&[BenchRow {
            ef: 100,
            recall: 0.975,
            p50_ms: 0.5,
            p95_ms: 1.25,
        }]);
        assert_eq!(csv, "ef,recall,p50_ms,p95_ms\n100,0.9750,0.500,1.250\n");
    }
}
