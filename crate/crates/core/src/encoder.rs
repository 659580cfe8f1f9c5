//! Text-to-vector encoding.
//!
//! Two interchangeable backends sit behind [`Encoder`]:
//!
//! * `Hashing`: signed feature hashing of lowercase words into a fixed number
//!   of buckets, then L2 normalization. There is no vocabulary, so encoding
//!   one document never depends on any other document.
//! * `Remote`: posts documents to a model server and validates what comes back.
//!
//! The hashing backend reads title words first, then abstract words, and cuts
//! them to the longest prefix whose estimated token count fits `token_limit`.

use std::collections::HashSet;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DocumentPart, Embedding, PartKey, DEFAULT_DIM};

pub const DEFAULT_TOKEN_LIMIT: usize = 512;
pub const DEFAULT_TOKENS_PER_WORD: f64 = 1.2;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const ENCODER_URL_ENV: &str = "MILLSTONE_ENCODER_URL";

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("document has no non-empty title or abstract")]
    EmptyDocument,
    #[error("tokenization produced no words")]
    AllWordsFiltered,
    #[error("duplicate request id {0:?}")]
    DuplicateId(String),
    #[error("remote encoder unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote encoder returned a bad response: {0}")]
    RemoteBadResponse(String),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Hashing,
    Remote { url: String, timeout_ms: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub token_limit: usize,
    pub tokens_per_word: f64,
    pub hash_seed: u64,
    pub backend: Backend,
    /// Upper bound on concurrent remote requests.
    pub max_in_flight: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            token_limit: DEFAULT_TOKEN_LIMIT,
            tokens_per_word: DEFAULT_TOKENS_PER_WORD,
            hash_seed: 0,
            backend: Backend::Hashing,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if self.dim == 0 {
            return Err(EncodeError::InvalidConfig("dim must be >= 1".into()));
        }
        if self.token_limit == 0 {
            return Err(EncodeError::InvalidConfig("token_limit must be >= 1".into()));
        }
        if !(self.tokens_per_word.is_finite() && self.tokens_per_word > 0.0) {
            return Err(EncodeError::InvalidConfig("tokens_per_word must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(EncodeError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }

    /// Points a remote backend at `MILLSTONE_ENCODER_URL` when that variable is set.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(ENCODER_URL_ENV) {
            if url.is_empty() {
                return;
            }
            match &mut self.backend {
                Backend::Remote { url: current, .. } => *current = url,
                Backend::Hashing => {
                    self.backend = Backend::Remote {
                        url,
                        timeout_ms: 5_000,
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub id: String,
    pub parts: Vec<DocumentPart>,
}

impl EncodeRequest {
    pub fn new(id: impl Into<String>, title: &str, abstract_text: &str) -> Self {
        let mut parts = Vec::new();
        if !title.is_empty() {
            parts.push(DocumentPart::new(PartKey::Title, title));
        }
        if !abstract_text.is_empty() {
            parts.push(DocumentPart::new(PartKey::Abstract, abstract_text));
        }
        Self {
            id: id.into(),
            parts,
        }
    }

    fn text_of(&self, key: PartKey) -> impl Iterator<Item = &str> {
        self.parts
            .iter()
            .filter(move |p| p.key == key)
            .map(|p| p.value.as_str())
    }

    fn has_text(&self) -> bool {
        self.parts
            .iter()
            .any(|p| matches!(p.key, PartKey::Title | PartKey::Abstract) && !p.value.trim().is_empty())
    }

    /// Title words followed by abstract words, before truncation.
    pub fn words(&self) -> Vec<String> {
        let mut words = Vec::new();
        for key in [PartKey::Title, PartKey::Abstract] {
            for text in self.text_of(key) {
                words.extend(word_tokenize(text));
            }
        }
        words
    }
}

/// Splits on every non-alphanumeric character and lowercases.
pub fn word_tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `ceil(words * tokens_per_word)`. Products within 1e-9 of an integer
/// count as that integer, so `10 * 1.2` is 12 and not 13.
pub fn estimate_tokens<S: AsRef<str>>(words: &[S], cfg: &EncoderConfig) -> usize {
    tokens_for(words.len(), cfg.tokens_per_word)
}

fn tokens_for(n: usize, tokens_per_word: f64) -> usize {
    let x = n as f64 * tokens_per_word;
    let rounded = x.round();
    if (x - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded as usize
    } else {
        x.ceil() as usize
    }
}

/// Longest prefix of `words` whose token estimate fits the budget.
pub fn truncate_to_budget(mut words: Vec<String>, cfg: &EncoderConfig) -> Vec<String> {
    let mut keep = ((cfg.token_limit as f64) / cfg.tokens_per_word).floor() as usize + 1;
    keep = keep.min(words.len());
    while keep > 0 && tokens_for(keep, cfg.tokens_per_word) > cfg.token_limit {
        keep -= 1;
    }
    words.truncate(keep);
    words
}

/// 64-bit FNV-1a with the seed xor-ed into the offset basis.
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut hash = FNV_OFFSET_BASIS ^ seed;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Signed feature hashing of already-truncated words, L2-normalized.
pub fn hash_words<S: AsRef<str>>(words: &[S], dim: usize, seed: u64) -> Result<Embedding, EncodeError> {
    if words.is_empty() {
        return Err(EncodeError::AllWordsFiltered);
    }
    let mut components = vec![0.0f64; dim];
    for word in words {
        let h = fnv1a64(word.as_ref().as_bytes(), seed);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        components[bucket] += sign;
    }
    let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Every word cancelled against another in the same bucket.
        return Err(EncodeError::AllWordsFiltered);
    }
    for c in &mut components {
        *c /= norm;
    }
    Ok(Embedding::new(components).expect("normalized hash vector is finite"))
}

/// Local hashing encoder; pure function of the request and config.
pub fn hashing_encode(req: &EncodeRequest, cfg: &EncoderConfig) -> Result<Embedding, EncodeError> {
    if !req.has_text() {
        return Err(EncodeError::EmptyDocument);
    }
    let words = truncate_to_budget(req.words(), cfg);
    hash_words(&words, cfg.dim, cfg.hash_seed)
}

pub type BatchItem = (String, Result<Embedding, EncodeError>);

struct InFlight {
    active: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight lock poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("in-flight lock poisoned");
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().expect("in-flight lock poisoned");
        *active -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    documents: Vec<RemoteDocument<'a>>,
}

#[derive(Serialize)]
struct RemoteDocument<'a> {
    id: &'a str,
    parts: Vec<DocumentPart>,
}

#[derive(Deserialize)]
struct RemoteResponse {
    embeddings: Vec<RemoteEmbedding>,
}

#[derive(Deserialize)]
struct RemoteEmbedding {
    id: String,
    vector: Vec<f64>,
}

/// Encoder front end shared by the ETL pipeline and the query API.
pub struct Encoder {
    cfg: EncoderConfig,
    in_flight: InFlight,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder").field("cfg", &self.cfg).finish()
    }
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self, EncodeError> {
        cfg.validate()?;
        let limit = cfg.max_in_flight;
        Ok(Self {
            cfg,
            in_flight: InFlight {
                active: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn encode(&self, req: &EncodeRequest) -> Result<Embedding, EncodeError> {
        match &self.cfg.backend {
            Backend::Hashing => hashing_encode(req, &self.cfg),
            Backend::Remote { .. } => {
                if !req.has_text() {
                    return Err(EncodeError::EmptyDocument);
                }
                let mut out = self.remote_encode(std::slice::from_ref(req))?;
                Ok(out.pop().expect("remote_encode returns one embedding per request").1)
            }
        }
    }

    /// Encodes each request independently. Only duplicate ids and remote
    /// transport failures fail the whole batch.
    pub fn encode_batch(&self, reqs: &[EncodeRequest]) -> Result<Vec<BatchItem>, EncodeError> {
        let mut seen = HashSet::new();
        for req in reqs {
            if !seen.insert(req.id.as_str()) {
                return Err(EncodeError::DuplicateId(req.id.clone()));
            }
        }
        match &self.cfg.backend {
            Backend::Hashing => Ok(reqs
                .iter()
                .map(|r| (r.id.clone(), hashing_encode(r, &self.cfg)))
                .collect()),
            Backend::Remote { .. } => {
                let sendable: Vec<EncodeRequest> =
                    reqs.iter().filter(|r| r.has_text()).cloned().collect();
                let mut encoded = if sendable.is_empty() {
                    Vec::new()
                } else {
                    self.remote_encode(&sendable)?
                }
                .into_iter();
                Ok(reqs
                    .iter()
                    .map(|r| {
                        if r.has_text() {
                            let (id, e) = encoded.next().expect("one embedding per sent request");
                            (id, Ok(e))
                        } else {
                            (r.id.clone(), Err(EncodeError::EmptyDocument))
                        }
                    })
                    .collect())
            }
        }
    }

    /// Sends title and abstract parts to the model server, which applies its
    /// own tokenizer and truncation. The response must contain one finite
    /// vector of the configured dimension for every request id.
    pub fn remote_encode(&self, reqs: &[EncodeRequest]) -> Result<Vec<(String, Embedding)>, EncodeError> {
        let Backend::Remote { url, timeout_ms } = &self.cfg.backend else {
            return Err(EncodeError::InvalidConfig("backend is not remote".into()));
        };
        let documents = reqs
            .iter()
            .map(|r| RemoteDocument {
                id: &r.id,
                parts: r
                    .parts
                    .iter()
                    .filter(|p| matches!(p.key, PartKey::Title | PartKey::Abstract))
                    .cloned()
                    .collect(),
            })
            .collect();
        let body = RemoteRequest { documents };

        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(*timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();

        let _slot = self.in_flight.acquire();
        let mut response = agent.post(url).send_json(&body).map_err(classify_transport)?;
        let status = response.status().as_u16();
        if status == 502 || status == 503 || status == 504 {
            return Err(EncodeError::RemoteUnavailable(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(EncodeError::RemoteBadResponse(format!("HTTP {status}")));
        }
        let parsed: RemoteResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EncodeError::RemoteBadResponse(format!("malformed body: {e}")))?;
        self.check_remote(reqs, parsed)
    }

    fn check_remote(
        &self,
        reqs: &[EncodeRequest],
        parsed: RemoteResponse,
    ) -> Result<Vec<(String, Embedding)>, EncodeError> {
        if parsed.embeddings.len() != reqs.len() {
            return Err(EncodeError::RemoteBadResponse(format!(
                "expected {} embeddings, got {}",
                reqs.len(),
                parsed.embeddings.len()
            )));
        }
        let mut by_id: std::collections::HashMap<String, Vec<f64>> = std::collections::HashMap::new();
        for item in parsed.embeddings {
            if item.vector.len() != self.cfg.dim {
                return Err(EncodeError::RemoteBadResponse(format!(
                    "embedding for {:?} has dimension {}, expected {}",
                    item.id,
                    item.vector.len(),
                    self.cfg.dim
                )));
            }
            if item.vector.iter().any(|c| !c.is_finite()) {
                return Err(EncodeError::RemoteBadResponse(format!(
                    "embedding for {:?} has non-finite components",
                    item.id
                )));
            }
            by_id.insert(item.id, item.vector);
        }
        reqs.iter()
            .map(|r| {
                let vector = by_id.remove(&r.id).ok_or_else(|| {
                    EncodeError::RemoteBadResponse(format!("no embedding returned for {:?}", r.id))
                })?;
                let e = Embedding::new(vector).map_err(|e| EncodeError::RemoteBadResponse(e.to_string()))?;
                Ok((r.id.clone(), e))
            })
            .collect()
    }
}

fn classify_transport(err: ureq::Error) -> EncodeError {
    match err {
        ureq::Error::Timeout(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::Io(_) => EncodeError::RemoteUnavailable(err.to_string()),
        ureq::Error::Json(_) | ureq::Error::Protocol(_) => EncodeError::RemoteBadResponse(err.to_string()),
        other => EncodeError::RemoteUnavailable(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EncoderConfig {
        EncoderConfig::default()
    }

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(word_tokenize("Airbags are, (crash)!"), vec!["airbags", "are", "crash"]);
        assert!(word_tokenize("").is_empty());
        assert_eq!(word_tokenize("BERT-based 512"), vec!["bert", "based", "512"]);
        assert_eq!(word_tokenize("Überprüfung der Zündung"), vec!["überprüfung", "der", "zündung"]);
    }

    #[test]
    fn token_estimates() {
        assert_eq!(estimate_tokens(&words(0), &cfg()), 0);
        assert_eq!(estimate_tokens(&words(10), &cfg()), 12);
        assert_eq!(estimate_tokens(&words(427), &cfg()), 513);
        assert_eq!(estimate_tokens(&words(426), &cfg()), 512);
        assert_eq!(estimate_tokens(&words(1), &cfg()), 2);
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_to_budget(words(100), &cfg()).len(), 100);
        let kept = truncate_to_budget(words(1000), &cfg());
        assert_eq!(kept.len(), 426);
        assert_eq!(kept[..], words(426)[..]);
    }

    #[test]
    fn truncation_never_exceeds_budget() {
        for tpw in [0.3, 1.0, 1.2, 1.33, 2.5, 7.0] {
            for limit in [1, 7, 100, 512] {
                let c = EncoderConfig {
                    tokens_per_word: tpw,
                    token_limit: limit,
                    ..cfg()
                };
                for n in [0, 1, 5, 50, 600, 3000] {
                    let kept = truncate_to_budget(words(n), &c);
                    assert!(estimate_tokens(&kept, &c) <= limit);
                    if kept.len() < n {
                        // Maximal: one more word would overflow.
                        assert!(tokens_for(kept.len() + 1, tpw) > limit);
                    }
                }
            }
        }
    }

    #[test]
    fn title_has_priority_over_abstract() {
        let long_title = words(500).join(" ");
        let req = EncodeRequest::new("x", &long_title, "abstract words never reached");
        let kept = truncate_to_budget(req.words(), &cfg());
        assert_eq!(kept.len(), 426);
        assert!(kept.iter().all(|w| w.starts_with('w')));
        assert_eq!(hashing_encode(&req, &cfg()).unwrap(), {
            let title_only = EncodeRequest::new("y", &long_title, "");
            hashing_encode(&title_only, &cfg()).unwrap()
        });
    }

    #[test]
    fn fnv_reference_value() {
        // FNV-1a of "a" with the standard offset basis.
        assert_eq!(fnv1a64(b"a", 0), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"", 0), FNV_OFFSET_BASIS);
        assert_ne!(fnv1a64(b"a", 1), fnv1a64(b"a", 0));
    }

    #[test]
    fn single_word_hashes_to_known_bucket() {
        // 0xaf63dc4c8601ec8c mod 4 == 0 and bit 63 is set, so component 0 is -1.
        let c = EncoderConfig { dim: 4, ..cfg() };
        let e = hashing_encode(&EncodeRequest::new("a", "a", ""), &c).unwrap();
        assert_eq!(e.as_slice(), &[-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_is_deterministic_and_unit_norm() {
        let req = EncodeRequest::new("1", "Airbags", "Airbags are (...) crash.");
        let a = hashing_encode(&req, &cfg()).unwrap();
        let b = hashing_encode(&req, &cfg()).unwrap();
        assert_eq!(a.dim(), 768);
        assert_eq!(
            a.as_slice().iter().map(|c| c.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|c| c.to_bits()).collect::<Vec<_>>()
        );
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_errors() {
        let empty = EncodeRequest::new("e", "", "  ");
        assert!(matches!(hashing_encode(&empty, &cfg()), Err(EncodeError::EmptyDocument)));
        let punct = EncodeRequest::new("p", "!!! ---", "");
        assert!(matches!(hashing_encode(&punct, &cfg()), Err(EncodeError::AllWordsFiltered)));
        let claims_only = EncodeRequest {
            id: "c".into(),
            parts: vec![DocumentPart::new(PartKey::Claims, "a claim")],
        };
        assert!(matches!(hashing_encode(&claims_only, &cfg()), Err(EncodeError::EmptyDocument)));
    }

    #[test]
    fn batch_behaviour() {
        let enc = Encoder::new(cfg()).unwrap();
        let a = EncodeRequest::new("a", "lithium battery", "cathode materials");
        let b = EncodeRequest::new("b", "", "");
        let c = EncodeRequest::new("c", "solar cells", "perovskite absorbers");

        let single = enc.encode_batch(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single[0].1.as_ref().unwrap(), &enc.encode(&a).unwrap());

        let out = enc.encode_batch(&[a.clone(), b.clone(), c.clone()]).unwrap();
        assert_eq!(out.iter().filter(|(_, r)| r.is_ok()).count(), 2);
        assert!(matches!(out[1].1, Err(EncodeError::EmptyDocument)));

        let permuted = enc.encode_batch(&[c.clone(), a.clone()]).unwrap();
        assert_eq!(permuted[0].0, "c");
        assert_eq!(permuted[0].1.as_ref().unwrap(), out[2].1.as_ref().unwrap());
        assert_eq!(permuted[1].1.as_ref().unwrap(), out[0].1.as_ref().unwrap());

        assert!(matches!(
            enc.encode_batch(&[a.clone(), a]),
            Err(EncodeError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn config_validation() {
        assert!(Encoder::new(EncoderConfig { dim: 0, ..cfg() }).is_err());
        assert!(Encoder::new(EncoderConfig { token_limit: 0, ..cfg() }).is_err());
        assert!(Encoder::new(EncoderConfig { tokens_per_word: 0.0, ..cfg() }).is_err());
        assert!(Encoder::new(EncoderConfig { tokens_per_word: f64::NAN, ..cfg() }).is_err());
    }
}
