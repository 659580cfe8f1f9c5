//! The search engine proper: the store as system of record, one HNSW index
//! per corpus and one keyword index over all corpora.
//!
//! A document enters both indexes exactly when it carries an embedding.
//! Metadata-only records live in the store alone.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use thiserror::Error;
use tracing::{debug, info, warn};

use crate::ann::{AnnError, HnswIndex, HnswParams};
use crate::encoder::{EncodeError, EncodeRequest, Encoder};
use crate::fulltext::{FulltextError, InvertedIndex};
use crate::metrics::{self, MetricError, SimilarityMatrix};
use crate::model::{validate_document, CorpusId, DocKey, Document, Embedding, SimilarityMetric, Violation};
use crate::store::{Store, StoreError};

pub const SNAPSHOT_FILE: &str = "ann.snapshot";
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ann(#[from] AnnError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Fulltext(#[from] FulltextError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("unknown index {0:?}")]
    UnknownIndex(String),
    #[error("document {0} not found")]
    NotFound(DocKey),
    #[error("document {0} has no embedding")]
    MissingEmbedding(DocKey),
    #[error("invalid document {key}: {violations:?}")]
    InvalidDocument { key: String, violations: Vec<Violation> },
    #[error("snapshot I/O failed: {0}")]
    Snapshot(io::Error),
}

/// A stored document with its rank score.
#[derive(Debug, Clone)]
pub struct ScoredDocument {
    pub doc: Arc<Document>,
    pub score: f64,
}

/// Outcome of an upsert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Stored and present in the ANN and keyword indexes.
    Indexed,
    /// Stored only, for lack of a usable embedding.
    StoreOnly,
}

pub struct Engine {
    store: Store,
    encoder: Encoder,
    params: HnswParams,
    ann: RwLock<BTreeMap<CorpusId, HnswIndex>>,
    fulltext: RwLock<InvertedIndex>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("store", &self.store)
            .field("encoder", &self.encoder)
            .finish()
    }
}

fn unit(e: &Embedding) -> Option<Embedding> {
    e.normalized()
}

impl Engine {
    /// Loads every corpus of `store`, restoring HNSW graphs from their
    /// snapshots when those still match the stored embeddings.
    pub fn open(store: Store, encoder: Encoder, params: HnswParams) -> Result<Self, EngineError> {
        params.validate()?;
        let engine = Self {
            store,
            encoder,
            params,
            ann: RwLock::new(BTreeMap::new()),
            fulltext: RwLock::new(InvertedIndex::new()),
        };
        for corpus in engine.store.corpora() {
            engine.load_corpus(&corpus)?;
        }
        Ok(engine)
    }

    fn load_corpus(&self, corpus: &CorpusId) -> Result<(), EngineError> {
        let docs: Vec<Arc<Document>> = self.store.scan(corpus)?.collect();
        let mut fulltext = self.fulltext.write().expect("fulltext lock poisoned");
        let mut vectors: Vec<(&str, Embedding)> = Vec::new();
        for doc in &docs {
            if let Some(v) = doc.embedding.as_ref().and_then(unit) {
                fulltext.index_document(doc)?;
                vectors.push((doc.id.as_str(), v));
            }
        }
        drop(fulltext);

        let index = match self.restore_snapshot(corpus, &vectors) {
            Some(index) => {
                debug!(corpus = %corpus, "restored HNSW snapshot");
                index
            }
            None => {
                let mut index = HnswIndex::new(self.encoder.dim(), self.params.clone())?;
                for (id, v) in &vectors {
                    index.insert(id, v.as_slice())?;
                }
                index
            }
        };
        info!(corpus = %corpus, stored = docs.len(), indexed = index.len(), "corpus loaded");
        self.ann.write().expect("ann lock poisoned").insert(corpus.clone(), index);
        Ok(())
    }

    fn snapshot_path(&self, corpus: &CorpusId) -> PathBuf {
        self.store.root().join(corpus.as_str()).join(SNAPSHOT_FILE)
    }

    fn restore_snapshot(&self, corpus: &CorpusId, vectors: &[(&str, Embedding)]) -> Option<HnswIndex> {
        let bytes = fs::read(self.snapshot_path(corpus)).ok()?;
        let index = match HnswIndex::restore(&bytes) {
            Ok(index) => index,
            Err(e) => {
                warn!(corpus = %corpus, error = %e, "ignoring unreadable HNSW snapshot");
                return None;
            }
        };
        let matches = index.dim() == self.encoder.dim()
            && index.params() == &self.params
            && index.len() == vectors.len()
            && vectors.iter().all(|(id, v)| index.vector(id) == Some(v.as_slice()));
        if !matches {
            warn!(corpus = %corpus, "HNSW snapshot is stale, rebuilding");
            return None;
        }
        Some(index)
    }

    /// Writes the HNSW graph of every corpus next to its journal.
    pub fn save_snapshots(&self) -> Result<(), EngineError> {
        let ann = self.ann.read().expect("ann lock poisoned");
        for (corpus, index) in ann.iter() {
            let path = self.snapshot_path(corpus);
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, index.snapshot()).map_err(EngineError::Snapshot)?;
            fs::rename(&tmp, &path).map_err(EngineError::Snapshot)?;
        }
        Ok(())
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn corpora(&self) -> Vec<CorpusId> {
        self.store.corpora()
    }

    pub fn has_corpus(&self, corpus: &CorpusId) -> bool {
        self.ann.read().expect("ann lock poisoned").contains_key(corpus)
    }

    /// Documents in the HNSW index of `corpus`.
    pub fn indexed_len(&self, corpus: &CorpusId) -> usize {
        self.ann
            .read()
            .expect("ann lock poisoned")
            .get(corpus)
            .map_or(0, HnswIndex::len)
    }

    pub fn keyword_len(&self) -> usize {
        self.fulltext.read().expect("fulltext lock poisoned").len()
    }

    /// Clone of the HNSW index of `corpus`, for inspection and snapshots.
    pub fn ann_index(&self, corpus: &CorpusId) -> Option<HnswIndex> {
        self.ann.read().expect("ann lock poisoned").get(corpus).cloned()
    }

    pub fn create_corpus(&self, corpus: &CorpusId) -> Result<(), EngineError> {
        self.store.create_corpus(corpus)?;
        let mut ann = self.ann.write().expect("ann lock poisoned");
        if !ann.contains_key(corpus) {
            ann.insert(corpus.clone(), HnswIndex::new(self.encoder.dim(), self.params.clone())?);
        }
        Ok(())
    }

    /// Stores `doc` and brings both indexes in line with it.
    pub fn upsert(&self, doc: Document) -> Result<Placement, EngineError> {
        let violations = validate_document(&doc, self.dim());
        if !violations.is_empty() {
            return Err(EngineError::InvalidDocument {
                key: doc.key().to_string(),
                violations,
            });
        }
        let key = doc.key();
        let vector = doc.embedding.as_ref().and_then(unit);
        let indexed_doc = vector.as_ref().map(|_| doc.clone());
        self.store.put(doc)?;

        let mut ann = self.ann.write().expect("ann lock poisoned");
        let index = match ann.get_mut(&key.corpus) {
            Some(index) => index,
            None => ann
                .entry(key.corpus.clone())
                .or_insert(HnswIndex::new(self.dim(), self.params.clone())?),
        };
        if index.contains(&key.id) {
            index.remove(&key.id)?;
        }
        let mut fulltext = self.fulltext.write().expect("fulltext lock poisoned");
        fulltext.remove_document(&key);
        match (vector, indexed_doc) {
            (Some(v), Some(doc)) => {
                index.insert(&key.id, v.as_slice())?;
                fulltext.index_document(&doc)?;
                Ok(Placement::Indexed)
            }
            _ => Ok(Placement::StoreOnly),
        }
    }

    fn require_corpus(&self, corpus: &CorpusId) -> Result<(), EngineError> {
        if self.has_corpus(corpus) {
            Ok(())
        } else {
            Err(EngineError::UnknownIndex(corpus.index_name()))
        }
    }

    pub fn get(&self, key: &DocKey) -> Result<Arc<Document>, EngineError> {
        self.require_corpus(&key.corpus)?;
        self.store
            .get(&key.corpus, &key.id)
            .ok_or_else(|| EngineError::NotFound(key.clone()))
    }

    /// Element-wise lookup in input order; `None` marks an absent document.
    pub fn get_many(&self, keys: &[DocKey]) -> Result<Vec<Option<Arc<Document>>>, EngineError> {
        for key in keys {
            self.require_corpus(&key.corpus)?;
        }
        Ok(self.store.get_many(keys).into_iter().map(|(_, d)| d).collect())
    }

    /// Keyword search; `corpus` restricts both ranking statistics and hits.
    pub fn search_keyword(
        &self,
        corpus: Option<&CorpusId>,
        query: &str,
        k: usize,
    ) -> Result<Vec<ScoredDocument>, EngineError> {
        if let Some(c) = corpus {
            self.require_corpus(c)?;
        }
        let hits = self
            .fulltext
            .read()
            .expect("fulltext lock poisoned")
            .search_keyword(query, corpus, k)?;
        Ok(hits
            .into_iter()
            .filter_map(|h| {
                let doc = self.store.get(&h.key.corpus, &h.key.id)?;
                Some(ScoredDocument { doc, score: h.score })
            })
            .collect())
    }

    /// Documents of one corpus for a keyword: an exact id match first, then
    /// keyword hits, at most `k` in total.
    pub fn lookup_documents(&self, corpus: &CorpusId, keyword: &str, k: usize) -> Result<Vec<Arc<Document>>, EngineError> {
        self.require_corpus(corpus)?;
        let mut out: Vec<Arc<Document>> = self.store.get(corpus, keyword.trim()).into_iter().collect();
        match self.search_keyword(Some(corpus), keyword, k) {
            Ok(hits) => {
                for hit in hits {
                    if !out.iter().any(|d| d.id == hit.doc.id) {
                        out.push(hit.doc);
                    }
                }
            }
            Err(EngineError::Fulltext(FulltextError::EmptyQuery)) if !out.is_empty() => {}
            Err(e) => return Err(e),
        }
        out.truncate(k);
        Ok(out)
    }

    pub fn encode(&self, req: &EncodeRequest) -> Result<Embedding, EngineError> {
        Ok(self.encoder.encode(req)?)
    }

    /// Encodes all requests; any single failure fails the call.
    pub fn encode_all(&self, reqs: &[EncodeRequest]) -> Result<Vec<(String, Embedding)>, EngineError> {
        self.encoder
            .encode_batch(reqs)?
            .into_iter()
            .map(|(id, r)| Ok((id, r?)))
            .collect()
    }

    fn stored_embedding(&self, key: &DocKey) -> Result<(Arc<Document>, Embedding), EngineError> {
        let doc = self.get(key)?;
        let e = doc
            .embedding
            .clone()
            .ok_or_else(|| EngineError::MissingEmbedding(key.clone()))?;
        Ok((doc, e))
    }

    /// Metric matrix between stored documents, rows = sources.
    pub fn similarity_calculation(
        &self,
        sources: &[DocKey],
        targets: &[DocKey],
        metric: SimilarityMetric,
    ) -> Result<SimilarityMatrix, EngineError> {
        let load = |keys: &[DocKey]| -> Result<Vec<(String, Embedding)>, EngineError> {
            keys.iter()
                .map(|k| self.stored_embedding(k).map(|(d, e)| (d.id.clone(), e)))
                .collect()
        };
        let s = load(sources)?;
        let t = load(targets)?;
        Ok(pairwise_owned(&s, &t, metric)?)
    }

    /// Encodes `docs`, then compares them with each other, or with the
    /// stored `targets` when any are given.
    pub fn encode_and_similarity(
        &self,
        docs: &[EncodeRequest],
        targets: &[DocKey],
        metric: SimilarityMetric,
    ) -> Result<SimilarityMatrix, EngineError> {
        let encoded = self.encode_all(docs)?;
        if targets.is_empty() {
            return Ok(pairwise_owned(&encoded, &encoded, metric)?);
        }
        let t: Vec<(String, Embedding)> = targets
            .iter()
            .map(|k| self.stored_embedding(k).map(|(d, e)| (d.id.clone(), e)))
            .collect::<Result<_, _>>()?;
        Ok(pairwise_owned(&encoded, &t, metric)?)
    }

    /// Nearest stored neighbors of a query vector in `target`, skipping ids
    /// in `exclude`.
    pub fn search_vector(
        &self,
        target: &CorpusId,
        query: &Embedding,
        k: usize,
        exclude: &HashSet<&str>,
    ) -> Result<Vec<ScoredDocument>, EngineError> {
        self.require_corpus(target)?;
        if k == 0 {
            return Err(AnnError::ZeroK.into());
        }
        let q = unit(query).ok_or(MetricError::ZeroVector)?;
        let ann = self.ann.read().expect("ann lock poisoned");
        let index = ann.get(target).expect("checked above");
        if index.is_empty() {
            return Ok(Vec::new());
        }
        let want = k + exclude.len();
        let ef = Some(index.params().ef_search.max(want));
        let hits = index.search(q.as_slice(), want, ef)?;
        drop(ann);
        Ok(hits
            .into_iter()
            .filter(|h| !exclude.contains(h.id.as_str()))
            .take(k)
            .filter_map(|h| {
                let doc = self.store.get(target, &h.id)?;
                Some(ScoredDocument { doc, score: h.score })
            })
            .collect())
    }

    /// Nearest neighbors of a stored document; the document itself is left
    /// out when it lives in the target index.
    pub fn similarity_search(
        &self,
        source: &DocKey,
        target: &CorpusId,
        k: usize,
    ) -> Result<Vec<ScoredDocument>, EngineError> {
        self.require_corpus(target)?;
        let (_, e) = self.stored_embedding(source)?;
        let mut exclude = HashSet::new();
        if &source.corpus == target {
            exclude.insert(source.id.as_str());
        }
        self.search_vector(target, &e, k, &exclude)
    }

    pub fn embed_and_search(
        &self,
        req: &EncodeRequest,
        target: &CorpusId,
        k: usize,
    ) -> Result<Vec<ScoredDocument>, EngineError> {
        self.require_corpus(target)?;
        let e = self.encode(req)?;
        self.search_vector(target, &e, k, &HashSet::new())
    }
}

fn pairwise_owned(
    sources: &[(String, Embedding)],
    targets: &[(String, Embedding)],
    metric: SimilarityMetric,
) -> Result<SimilarityMatrix, MetricError> {
    let s: Vec<(&str, &Embedding)> = sources.iter().map(|(id, e)| (id.as_str(), e)).collect();
    let t: Vec<(&str, &Embedding)> = targets.iter().map(|(id, e)| (id.as_str(), e)).collect();
    metrics::pairwise(&s, &t, metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::PartKey;
    use crate::store::StoreOptions;

    fn corpus(name: &str) -> CorpusId {
        CorpusId::new(name).unwrap()
    }

    fn engine(dir: &std::path::Path) -> Engine {
        let store = Store::open(dir, StoreOptions::default()).unwrap();
        let encoder = Encoder::new(EncoderConfig::default()).unwrap();
        Engine::open(store, encoder, HnswParams::default()).unwrap()
    }

    fn encoded(engine: &Engine, corpus_name: &str, id: &str, title: &str, abstract_text: &str) -> Document {
        let mut doc = Document::new(id, corpus(corpus_name))
            .with_part(PartKey::Title, title)
            .with_part(PartKey::Abstract, abstract_text);
        doc.embedding = Some(engine.encode(&EncodeRequest::new(id, title, abstract_text)).unwrap());
        doc
    }

    fn seed(engine: &Engine) {
        let docs = [
            ("epo", "EP1", "Airbags", "Inflatable cushions protect occupants in a crash."),
            ("epo", "EP2", "Seat belts", "Belts restrain occupants during a crash."),
            ("epo", "EP3", "Brake discs", "Ventilated discs dissipate heat."),
            ("semanticscholar", "S1", "Crash safety", "A study of occupant protection in crashes."),
        ];
        for (c, id, t, a) in docs {
            assert_eq!(engine.upsert(encoded(engine, c, id, t, a)).unwrap(), Placement::Indexed);
        }
        let bare = Document::new("EP9", corpus("epo")).with_part(PartKey::Claims, "1. A thing.");
        assert_eq!(engine.upsert(bare).unwrap(), Placement::StoreOnly);
    }

    #[test]
    fn only_embedded_documents_are_indexed() {
        let dir = tempfile::tempdir().unwrap();
        let engine = engine(dir.path());
        seed(&engine);
        assert_eq!(engine.store().len(&corpus("epo")), 4);
        assert_eq!(engine.indexed_len(&corpus("epo")), 3);
        assert_eq!(engine.keyword_len(), 4);
    }

    #[test]
    fn upsert_replaces_index_entries() {
        let dir = tempfile::tempdir().unwrap();
        let engine = engine(dir.path());
        seed(&engine);
        let changed = encoded(&engine, "epo", "EP3", "Windscreen wipers", "Wipers clear rain.");
        engine.upsert(changed).unwrap();
        assert_eq!(engine.indexed_len(&corpus("epo")), 3);
        assert!(engine.search_keyword(None, "brake", 5).unwrap().is_empty());
        let hits = engine.search_keyword(None, "wipers", 5).unwrap();
        assert_eq!(hits[0].doc.id, "EP3");
    }

    #[test]
    fn similarity_search_excludes_the_source() {
        let dir = tempfile::tempdir().unwrap();
        let engine = engine(dir.path());
        seed(&engine);
        let key = DocKey::new(corpus("epo"), "EP1");
        let hits = engine.similarity_search(&key, &corpus("epo"), 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_ne!(hits[0].doc.id, "EP1");
        let cross = engine.similarity_search(&key, &corpus("semanticscholar"), 5).unwrap();
        assert_eq!(cross.len(), 1);
        assert_eq!(cross[0].doc.id, "S1");
        let missing = DocKey::new(corpus("epo"), "EP9");
        assert!(matches!(
            engine.similarity_search(&missing, &corpus("epo"), 1),
            Err(EngineError::MissingEmbedding(_))
        ));
        assert!(matches!(
            engine.similarity_search(&key, &corpus("wipo"), 1),
            Err(EngineError::UnknownIndex(_))
        ));
    }

    #[test]
    fn own_text_finds_itself_first() {
        let dir = tempfile::tempdir().unwrap();
        let engine = engine(dir.path());
        seed(&engine);
        let req = EncodeRequest::new("q", "Seat belts", "Belts restrain occupants during a crash.");
        let hits = engine.embed_and_search(&req, &corpus("epo"), 5).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].doc.id, "EP2");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn similarity_matrix_uses_stored_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let engine = engine(dir.path());
        seed(&engine);
        let k1 = DocKey::new(corpus("epo"), "EP1");
        let k2 = DocKey::new(corpus("semanticscholar"), "S1");
        let m = engine
            .similarity_calculation(std::slice::from_ref(&k1), &[k1.clone(), k2.clone()], SimilarityMetric::Cosine)
            .unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        let a = engine.get(&k1).unwrap().embedding.clone().unwrap();
        let b = engine.get(&k2).unwrap().embedding.clone().unwrap();
        assert_eq!(m.get(0, 1), metrics::cosine(&a, &b).unwrap());
        assert!(matches!(
            engine.similarity_calculation(&[DocKey::new(corpus("epo"), "nope")], &[k1], SimilarityMetric::L1),
            Err(EngineError::NotFound(_))
        ));
    }

    #[test]
    fn documents_lookup_prefers_exact_id() {
        let dir = tempfile::tempdir().unwrap();
        let engine = engine(dir.path());
        seed(&engine);
        let hits = engine.lookup_documents(&corpus("epo"), "EP2", 10).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "EP2");
        let hits = engine.lookup_documents(&corpus("epo"), "crash", 10).unwrap();
        let ids: HashSet<&str> = hits.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, HashSet::from(["EP1", "EP2"]));
    }

    #[test]
    fn reopen_restores_the_same_graph() {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let engine = engine(dir.path());
            seed(&engine);
            engine.save_snapshots().unwrap();
            engine.ann_index(&corpus("epo")).unwrap().snapshot()
        };
        let engine = engine(dir.path());
        assert_eq!(engine.ann_index(&corpus("epo")).unwrap().snapshot(), before);
        assert_eq!(engine.keyword_len(), 4);
    }

    #[test]
    fn stale_snapshot_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        {
            let engine = engine(dir.path());
            seed(&engine);
            engine.save_snapshots().unwrap();
            engine
                .upsert(encoded(&engine, "epo", "EP4", "Horns", "Acoustic warning devices."))
                .unwrap();
        }
        let engine = engine(dir.path());
        assert_eq!(engine.indexed_len(&corpus("epo")), 4);
        engine.ann_index(&corpus("epo")).unwrap().check_invariants().unwrap();
    }
}
