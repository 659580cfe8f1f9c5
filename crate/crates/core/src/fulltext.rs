//! BM25 keyword index over document titles and abstracts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::encoder::word_tokenize;
use crate::model::{CorpusId, DocKey, Document, PartKey};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Words dropped by [`analyze`].
pub const STOPWORDS: [&str; 30] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "for", "from", "has", "in", "is", "it",
    "its", "of", "on", "or", "that", "the", "these", "this", "to", "was", "we", "were", "which",
    "will", "with",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FulltextError {
    #[error("document {0} is already indexed")]
    DuplicateId(DocKey),
    #[error("query has no searchable terms")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Tokenizes like the encoder, then drops stopwords.
pub fn analyze(text: &str) -> Vec<String> {
    word_tokenize(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordHit {
    pub key: DocKey,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
struct DocEntry {
    length: u32,
    terms: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, Default)]
struct CorpusStats {
    docs: u64,
    total_length: u64,
}

#[derive(Debug, Clone, Default)]
pub struct InvertedIndex {
    postings: HashMap<String, BTreeMap<DocKey, u32>>,
    docs: BTreeMap<DocKey, DocEntry>,
    stats: BTreeMap<CorpusId, CorpusStats>,
}

impl InvertedIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, key: &DocKey) -> bool {
        self.docs.contains_key(key)
    }

    pub fn doc_count(&self, corpus: Option<&CorpusId>) -> u64 {
        self.scope_stats(corpus).docs
    }

    pub fn average_length(&self, corpus: Option<&CorpusId>) -> f64 {
        let s = self.scope_stats(corpus);
        if s.docs == 0 {
            0.0
        } else {
            s.total_length as f64 / s.docs as f64
        }
    }

    /// Posting list for `term`, sorted by document key.
    pub fn postings(&self, term: &str) -> Vec<(&DocKey, u32)> {
        self.postings
            .get(term)
            .map(|p| p.iter().map(|(k, tf)| (k, *tf)).collect())
            .unwrap_or_default()
    }

    fn scope_stats(&self, corpus: Option<&CorpusId>) -> CorpusStats {
        match corpus {
            Some(c) => self.stats.get(c).copied().unwrap_or_default(),
            None => self.stats.values().fold(CorpusStats::default(), |acc, s| CorpusStats {
                docs: acc.docs + s.docs,
                total_length: acc.total_length + s.total_length,
            }),
        }
    }

    /// Indexes the title and abstract of `doc`.
    pub fn index_document(&mut self, doc: &Document) -> Result<(), FulltextError> {
        let key = doc.key();
        if self.docs.contains_key(&key) {
            return Err(FulltextError::DuplicateId(key));
        }
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        let mut length = 0u32;
        for part in doc
            .parts
            .iter()
            .filter(|p| matches!(p.key, PartKey::Title | PartKey::Abstract))
        {
            for term in analyze(&part.value) {
                length += 1;
                *tf.entry(term).or_default() += 1;
            }
        }
        for (term, count) in &tf {
            self.postings
                .entry(term.clone())
                .or_default()
                .insert(key.clone(), *count);
        }
        let stats = self.stats.entry(key.corpus.clone()).or_default();
        stats.docs += 1;
        stats.total_length += u64::from(length);
        self.docs.insert(
            key,
            DocEntry {
                length,
                terms: tf.into_keys().collect(),
            },
        );
        Ok(())
    }

    /// Drops a document; returns whether it was present.
    pub fn remove_document(&mut self, key: &DocKey) -> bool {
        let Some(entry) = self.docs.remove(key) else {
            return false;
        };
        for term in &entry.terms {
            if let Some(list) = self.postings.get_mut(term) {
                list.remove(key);
                if list.is_empty() {
                    self.postings.remove(term);
                }
            }
        }
        if let Some(stats) = self.stats.get_mut(&key.corpus) {
            stats.docs -= 1;
            stats.total_length -= u64::from(entry.length);
            if stats.docs == 0 {
                self.stats.remove(&key.corpus);
            }
        }
        true
    }

    /// BM25 over the OR of the distinct query terms. Collection statistics
    /// come from the filtered corpus when a filter is given.
    pub fn search_keyword(
        &self,
        query: &str,
        corpus: Option<&CorpusId>,
        k: usize,
    ) -> Result<Vec<KeywordHit>, FulltextError> {
        if k == 0 {
            return Err(FulltextError::ZeroK);
        }
        let terms: BTreeSet<String> = analyze(query).into_iter().collect();
        if terms.is_empty() {
            return Err(FulltextError::EmptyQuery);
        }
        let stats = self.scope_stats(corpus);
        if stats.docs == 0 {
            return Ok(Vec::new());
        }
        let n = stats.docs as f64;
        let avgdl = stats.total_length as f64 / n;

        let mut scores: BTreeMap<&DocKey, f64> = BTreeMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let in_scope: Vec<(&DocKey, u32)> = list
                .iter()
                .filter(|(key, _)| corpus.is_none_or(|c| &key.corpus == c))
                .map(|(key, tf)| (key, *tf))
                .collect();
            if in_scope.is_empty() {
                continue;
            }
            let df = in_scope.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for (key, tf) in in_scope {
                let tf = f64::from(tf);
                let dl = f64::from(self.docs[key].length);
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let s = idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * norm));
                *scores.entry(key).or_default() += s;
            }
        }
        let mut hits: Vec<KeywordHit> = scores
            .into_iter()
            .map(|(key, score)| KeywordHit {
                key: key.clone(),
                score,
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key)));
        hits.truncate(k);
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(name: &str) -> CorpusId {
        CorpusId::new(name).unwrap()
    }

    fn doc(id: &str, c: &str, title: &str, abstract_text: &str) -> Document {
        Document::new(id, corpus(c))
            .with_part(PartKey::Title, title)
            .with_part(PartKey::Abstract, abstract_text)
    }

    #[test]
    fn analyze_examples() {
        assert_eq!(analyze("The airbags"), vec!["airbags"]);
        assert!(analyze("").is_empty());
        let t = "The inflator of an Airbag, deployed at 30ms, is a gas-generator.";
        let once = analyze(t);
        assert_eq!(analyze(&once.join(" ")), once);
        assert_eq!(STOPWORDS.len(), 30);
    }

    #[test]
    fn unique_term_finds_its_document() {
        let mut ix = InvertedIndex::new();
        ix.index_document(&doc("a", "epo", "Airbag inflator", "gas generator")).unwrap();
        ix.index_document(&doc("b", "epo", "Battery cathode", "lithium")).unwrap();
        let hits = ix.search_keyword("inflator", None, 10).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].key.id, "a");
        assert!(hits[0].score > 0.0);
        assert!(ix.search_keyword("graphene", None, 10).unwrap().is_empty());
    }

    #[test]
    fn shared_term_postings_sorted() {
        let mut ix = InvertedIndex::new();
        ix.index_document(&doc("z9", "epo", "airbag", "")).unwrap();
        ix.index_document(&doc("a1", "epo", "airbag sensor", "")).unwrap();
        let ids: Vec<&str> = ix.postings("airbag").iter().map(|(k, _)| k.id.as_str()).collect();
        assert_eq!(ids, ["a1", "z9"]);
    }

    #[test]
    fn duplicate_index_is_rejected() {
        let mut ix = InvertedIndex::new();
        let d = doc("a", "epo", "airbag", "");
        ix.index_document(&d).unwrap();
        assert!(matches!(ix.index_document(&d), Err(FulltextError::DuplicateId(_))));
        assert!(ix.remove_document(&d.key()));
        ix.index_document(&d).unwrap();
    }

    #[test]
    fn stopword_only_query_is_empty() {
        let ix = InvertedIndex::new();
        assert_eq!(ix.search_keyword("the of and", None, 5), Err(FulltextError::EmptyQuery));
    }

    /// Five documents with controlled term frequencies. Expected scores were
    /// computed with a standalone script from the BM25 formula (k1=1.2, b=0.75,
    /// idf = ln(1 + (N - df + 0.5)/(df + 0.5))):
    ///   N=5, lengths 4,2,6,4,4 -> avgdl=4; "airbag" df=3, "sensor" df=2.
    fn bm25_fixture() -> InvertedIndex {
        let mut ix = InvertedIndex::new();
        ix.index_document(&doc("d1", "epo", "airbag airbag sensor crash", "")).unwrap();
        ix.index_document(&doc("d2", "epo", "airbag module", "")).unwrap();
        ix.index_document(&doc("d3", "epo", "airbag sensor sensor sensor fuse wire", "")).unwrap();
        ix.index_document(&doc("d4", "epo", "battery cell anode cathode", "")).unwrap();
        ix.index_document(&doc("d5", "epo", "solar cell panel film", "")).unwrap();
        ix
    }

    #[test]
    fn bm25_matches_hand_computed_oracle() {
        let ix = bm25_fixture();
        assert_eq!(ix.average_length(None), 4.0);
        let hits = ix.search_keyword("airbag sensor", None, 10).unwrap();
        let got: Vec<(&str, f64)> = hits.iter().map(|h| (h.key.id.as_str(), h.score)).collect();
        // idf(airbag) = ln(1 + 2.5/3.5), idf(sensor) = ln(1 + 3.5/2.5)
        // d1: tf(a)=2, tf(s)=1, dl=4  d2: tf(a)=1, dl=2  d3: tf(a)=1, tf(s)=3, dl=6
        let expected = [
            ("d3", 1.690_069_581_563_408_4),
            ("d1", 1.616_588_925_861_344_6),
            ("d2", 0.677_595_600_921_092_5),
        ];
        assert_eq!(got.len(), 3);
        for ((id, score), (eid, escore)) in got.iter().zip(expected) {
            assert_eq!(*id, eid);
            assert!((score - escore).abs() < 1e-12, "{id}: {score} vs {escore}");
        }
    }

    #[test]
    fn corpus_filter_applies_before_ranking() {
        let mut ix = bm25_fixture();
        ix.index_document(&doc("p1", "semanticscholar", "airbag deployment", "")).unwrap();
        let hits = ix.search_keyword("airbag", Some(&corpus("semanticscholar")), 10).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].key.id, "p1");
        let all = ix.search_keyword("airbag", None, 2).unwrap();
        assert_eq!(all.len(), 2);
        assert!(ix.search_keyword("airbag", Some(&corpus("wipo")), 10).unwrap().is_empty());
    }

    #[test]
    fn ties_broken_by_key() {
        let mut ix = InvertedIndex::new();
        ix.index_document(&doc("b", "epo", "laser", "")).unwrap();
        ix.index_document(&doc("a", "epo", "laser", "")).unwrap();
        let ids: Vec<String> = ix
            .search_keyword("laser", None, 5)
            .unwrap()
            .into_iter()
            .map(|h| h.key.id)
            .collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn results_contain_a_query_term() {
        let ix = bm25_fixture();
        for q in ["cell", "airbag film", "wire module", "solar anode sensor"] {
            let terms = analyze(q);
            for hit in ix.search_keyword(q, None, 10).unwrap() {
                let entry = &ix.docs[&hit.key];
                assert!(terms.iter().any(|t| entry.terms.contains(t)));
            }
        }
    }
}
