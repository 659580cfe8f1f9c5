//! Request handling: authentication, parsing, binding, execution against the
//! engine and projection onto the requested selection set.

use std::sync::Arc;

use millstone_core::encoder::{EncodeError, EncodeRequest};
use millstone_core::engine::{Engine, EngineError, ScoredDocument};
use millstone_core::fulltext::FulltextError;
use millstone_core::metrics::SimilarityMatrix;
use millstone_core::model::{CorpusId, DocKey, Document, DocumentPart, PartKey, SimilarityMetric};
use millstone_core::ann::AnnError;
use serde_json::{json, Map, Value as Json};
use tracing::{debug, warn};

use crate::auth::{self, AuthError, SigningKey};
use crate::bind::{bind_variables, BoundRequest};
use crate::query::{parse_query, Field, Pos};

/// One entry of the `errors` list.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub code: &'static str,
    pub message: String,
    pub path: Vec<Json>,
    pub pos: Option<Pos>,
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            path: Vec::new(),
            pos: None,
        }
    }

    fn at(mut self, pos: Pos) -> Self {
        self.pos = Some(pos);
        self
    }

    fn under(mut self, operation: &str) -> Self {
        self.path.insert(0, Json::from(operation));
        self
    }

    pub fn to_json(&self) -> Json {
        let mut e = json!({"code": self.code, "message": self.message, "path": self.path});
        if let Some(p) = self.pos {
            e["locations"] = json!([{"line": p.line, "column": p.col}]);
        }
        e
    }

    fn envelope(&self) -> Json {
        json!({"errors": [self.to_json()]})
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::UnknownIndex(_) => "UNKNOWN_INDEX",
            EngineError::NotFound(_) => "NOT_FOUND",
            EngineError::MissingEmbedding(_) => "MISSING_EMBEDDING",
            EngineError::Encode(EncodeError::EmptyDocument | EncodeError::AllWordsFiltered) => "EMPTY_DOCUMENT",
            EngineError::Encode(EncodeError::DuplicateId(_)) => "DUPLICATE_ID",
            EngineError::Encode(EncodeError::RemoteUnavailable(_)) => "ENCODER_UNAVAILABLE",
            EngineError::Encode(EncodeError::RemoteBadResponse(_)) => "ENCODER_ERROR",
            EngineError::Fulltext(FulltextError::EmptyQuery) => "EMPTY_QUERY",
            EngineError::Fulltext(FulltextError::ZeroK) | EngineError::Ann(AnnError::ZeroK) | EngineError::Metric(_) => {
                "INVALID_ARGUMENT"
            }
            _ => "INTERNAL",
        };
        if code == "INTERNAL" {
            warn!(error = %e, "request failed");
            return Self::new(code, "internal error");
        }
        Self::new(code, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> ApiError {
    ApiError::new("INVALID_ARGUMENT", message)
}

/// Renders `doc` with every selectable field.
pub fn document_json(doc: &Document, score: Option<f64>) -> Json {
    let mut parts = Map::new();
    for key in PartKey::ALL {
        let values: Vec<&str> = doc
            .parts
            .iter()
            .filter(|p| p.key == key)
            .map(|p| p.value.as_str())
            .collect();
        let v = if values.is_empty() {
            Json::Null
        } else {
            Json::from(values.join("\n"))
        };
        parts.insert(key.as_str().into(), v);
    }
    let mut out = json!({
        "id": doc.id,
        "index": doc.corpus.index_name(),
        "documentParts": parts,
        "metadata": doc.metadata,
        "vector": doc.embedding.as_ref().map(|e| e.as_slice().to_vec()),
    });
    if let Some(s) = score {
        out["score"] = Json::from(s);
    }
    out
}

fn hits_json(hits: &[ScoredDocument]) -> Json {
    Json::Array(hits.iter().map(|h| document_json(&h.doc, Some(h.score))).collect())
}

fn matrix_json(m: &SimilarityMatrix) -> Json {
    json!({
        "sourceIds": m.source_ids,
        "targetIds": m.target_ids,
        "metric": m.metric.as_str(),
        "values": m.to_nested(),
    })
}

/// Keeps exactly the selected fields, in selection order; absent values are
/// rendered as null.
pub fn project(value: &Json, selection: &[Field]) -> Json {
    if selection.is_empty() {
        return value.clone();
    }
    match value {
        Json::Array(items) => Json::Array(items.iter().map(|i| project(i, selection)).collect()),
        Json::Object(obj) => {
            let mut out = Map::new();
            for f in selection {
                let v = obj.get(&f.name).unwrap_or(&Json::Null);
                out.insert(f.name.clone(), project(v, &f.selection));
            }
            Json::Object(out)
        }
        other => other.clone(),
    }
}

/// Parsed `POST /api` body.
struct Envelope {
    query: String,
    variables: Option<Json>,
}

fn parse_body(body: &[u8]) -> Result<Envelope, ApiError> {
    let v: Json = serde_json::from_slice(body).map_err(|e| ApiError::new("BAD_REQUEST", format!("invalid JSON body: {e}")))?;
    let Json::Object(mut obj) = v else {
        return Err(ApiError::new("BAD_REQUEST", "request body must be a JSON object"));
    };
    let query = match obj.remove("query") {
        Some(Json::String(q)) => q,
        _ => return Err(ApiError::new("BAD_REQUEST", "request body needs a \"query\" string")),
    };
    let variables = obj.remove("variables").filter(|v| !v.is_null());
    Ok(Envelope { query, variables })
}

/// The query API bound to one engine and signing key.
pub struct Api {
    engine: Arc<Engine>,
    key: SigningKey,
}

impl std::fmt::Debug for Api {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Api").field("key", &self.key).finish()
    }
}

impl Api {
    pub fn new(engine: Arc<Engine>, key: SigningKey) -> Self {
        Self { engine, key }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn handle(&self, authorization: Option<&str>, body: &[u8]) -> (u16, Json) {
        self.handle_at(authorization, body, auth::now_secs())
    }

    /// Full request cycle with an explicit clock. Authentication failures
    /// give 401, malformed or ill-typed requests 400, and everything else 200
    /// with either a data or an errors envelope. A list of variable objects
    /// runs the query once per entry and answers with a list of envelopes.
    pub fn handle_at(&self, authorization: Option<&str>, body: &[u8], now: u64) -> (u16, Json) {
        if let Err(e) = auth::authenticate(authorization, &self.key, now) {
            debug!(code = e.code(), "rejected request");
            return (401, ApiError::from(e).envelope());
        }
        let envelope = match parse_body(body) {
            Ok(e) => e,
            Err(e) => return (400, e.envelope()),
        };
        let ast = match parse_query(&envelope.query) {
            Ok(ast) => ast,
            Err(e) => return (400, ApiError::new(e.code(), e.to_string()).at(e.pos()).envelope()),
        };
        let run = |vars: &Map<String, Json>| -> Result<Json, (u16, ApiError)> {
            let bound = bind_variables(&ast, vars)
                .map_err(|e| (400, ApiError::new(e.code(), e.to_string()).at(e.pos()).under(&ast.operation.name)))?;
            let data = self.execute(&bound).map_err(|e| (200, e.under(&bound.operation)))?;
            let mut out = json!({"data": {bound.operation.clone(): data}});
            if !bound.warnings.is_empty() {
                out["extensions"] = json!({"warnings": bound.warnings});
            }
            Ok(out)
        };
        match envelope.variables {
            None => match run(&Map::new()) {
                Ok(v) => (200, v),
                Err((status, e)) => (status, e.envelope()),
            },
            Some(Json::Object(vars)) => match run(&vars) {
                Ok(v) => (200, v),
                Err((status, e)) => (status, e.envelope()),
            },
            Some(Json::Array(list)) => {
                let mut out = Vec::with_capacity(list.len());
                for item in &list {
                    let Json::Object(vars) = item else {
                        return (400, ApiError::new("BAD_REQUEST", "each variables entry must be an object").envelope());
                    };
                    out.push(match run(vars) {
                        Ok(v) => v,
                        Err((_, e)) => e.envelope(),
                    });
                }
                (200, Json::Array(out))
            }
            Some(_) => (
                400,
                ApiError::new("BAD_REQUEST", "\"variables\" must be an object or a list of objects").envelope(),
            ),
        }
    }

    fn corpus(&self, index: &str) -> Result<CorpusId, ApiError> {
        let unknown = || ApiError::new("UNKNOWN_INDEX", format!("unknown index {index:?}"));
        let corpus = CorpusId::from_index_name(index)
            .or_else(|_| CorpusId::new(index))
            .map_err(|_| unknown())?;
        if self.engine.has_corpus(&corpus) {
            Ok(corpus)
        } else {
            Err(unknown())
        }
    }

    fn doc_key(&self, v: &Json) -> Result<DocKey, ApiError> {
        let index = v["index"].as_str().unwrap_or_default();
        let id = v["id"].as_str().unwrap_or_default();
        Ok(DocKey::new(self.corpus(index)?, id))
    }

    fn doc_keys(&self, v: Option<&Json>) -> Result<Vec<DocKey>, ApiError> {
        v.and_then(Json::as_array)
            .map(|items| items.iter().map(|i| self.doc_key(i)).collect())
            .unwrap_or_else(|| Ok(Vec::new()))
    }

    /// Runs a bound request and returns the projected operation result.
    pub fn execute(&self, req: &BoundRequest) -> Result<Json, ApiError> {
        let s = |name: &str| req.arg(name).and_then(Json::as_str);
        let k = match req.arg("k").and_then(Json::as_i64) {
            Some(k) if k < 1 => return Err(invalid("k must be at least 1")),
            Some(k) => k as usize,
            None => millstone_core::engine::DEFAULT_K,
        };
        let metric = || -> Result<SimilarityMetric, ApiError> {
            let m = s("metric").unwrap_or("cosine");
            m.parse()
                .map_err(|_| ApiError::new("UNKNOWN_METRIC", format!("unknown metric {m:?}; expected cosine, l1 or l2")))
        };
        let e = &self.engine;
        let value = match req.operation.as_str() {
            "Document" => {
                let corpus = self.corpus(s("index").unwrap_or_default())?;
                let doc = e.get(&DocKey::new(corpus, s("id").unwrap_or_default()))?;
                document_json(&doc, None)
            }
            "Documents" => self.documents(req, k)?,
            "searchDocuments" => {
                let corpus = s("index").map(|i| self.corpus(i)).transpose()?;
                hits_json(&e.search_keyword(corpus.as_ref(), s("keyword").unwrap_or_default(), k)?)
            }
            "encodeDocument" => {
                let r = encode_request(req.arg("data").expect("required"));
                Json::from(e.encode(&r)?.as_slice().to_vec())
            }
            "encodeDocuments" => {
                let reqs = encode_requests(req.arg("data"));
                let encoded = e.encode_all(&reqs)?;
                Json::Array(
                    encoded
                        .iter()
                        .map(|(id, v)| json!({"id": id, "vector": v.as_slice()}))
                        .collect(),
                )
            }
            "similarityCalculation" => {
                let sources = self.doc_keys(req.arg("sources"))?;
                let targets = self.doc_keys(req.arg("targets"))?;
                matrix_json(&e.similarity_calculation(&sources, &targets, metric()?)?)
            }
            "encodeDocumentAndSimilarityCalculation" => {
                let reqs = encode_requests(req.arg("data"));
                let metric = metric()?;
                let targets = self.doc_keys(req.arg("targets"))?;
                matrix_json(&e.encode_and_similarity(&reqs, &targets, metric)?)
            }
            "SimilaritySearch" => {
                let source = self.corpus(s("index").unwrap_or_default())?;
                let target = match s("targetIndex") {
                    Some(t) => self.corpus(t)?,
                    None => source.clone(),
                };
                let key = DocKey::new(source, s("id").unwrap_or_default());
                hits_json(&e.similarity_search(&key, &target, k)?)
            }
            "embedDocumentAndSimilaritySearch" => {
                let target = self.corpus(s("index").unwrap_or_default())?;
                let r = encode_request(req.arg("data").expect("required"));
                hits_json(&e.embed_and_search(&r, &target, k)?)
            }
            other => return Err(ApiError::new("UNKNOWN_OPERATION", format!("unknown operation {other:?}"))),
        };
        Ok(project(&value, &req.selection))
    }

    fn documents(&self, req: &BoundRequest, k: usize) -> Result<Json, ApiError> {
        let given: Vec<&str> = ["keyword", "ids", "keys"]
            .into_iter()
            .filter(|n| req.arg(n).is_some())
            .collect();
        if given.len() != 1 {
            return Err(invalid("Documents takes exactly one of keyword, ids or keys"));
        }
        let index = req.arg("index").and_then(Json::as_str);
        let render = |docs: Vec<Option<Arc<Document>>>| {
            Json::Array(
                docs.iter()
                    .map(|d| d.as_ref().map_or(Json::Null, |d| document_json(d, None)))
                    .collect(),
            )
        };
        match given[0] {
            "keyword" => {
                let corpus = self.corpus(index.ok_or_else(|| invalid("keyword lookup needs an index"))?)?;
                let keyword = req.arg("keyword").and_then(Json::as_str).unwrap_or_default();
                let docs = self.engine.lookup_documents(&corpus, keyword, k)?;
                Ok(render(docs.into_iter().map(Some).collect()))
            }
            "ids" => {
                let corpus = self.corpus(index.ok_or_else(|| invalid("id lookup needs an index"))?)?;
                let keys: Vec<DocKey> = req.arg("ids").and_then(Json::as_array).into_iter().flatten()
                    .map(|id| DocKey::new(corpus.clone(), id.as_str().unwrap_or_default()))
                    .collect();
                Ok(render(self.engine.get_many(&keys)?))
            }
            _ => {
                let keys = self.doc_keys(req.arg("keys"))?;
                Ok(render(self.engine.get_many(&keys)?))
            }
        }
    }
}

fn encode_request(v: &Json) -> EncodeRequest {
    let parts = v["parts"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|p| {
            let key: PartKey = p["key"].as_str()?.parse().ok()?;
            Some(DocumentPart::new(key, p["value"].as_str()?))
        })
        .collect();
    EncodeRequest {
        id: v["id"].as_str().unwrap_or_default().to_owned(),
        parts,
    }
}

fn encode_requests(v: Option<&Json>) -> Vec<EncodeRequest> {
    let list = v.and_then(Json::as_array).cloned().unwrap_or_default();
    list.iter()
        .enumerate()
        .map(|(i, item)| {
            let mut r = encode_request(item);
            if r.id.is_empty() {
                r.id = format!("#{i}");
            }
            r
        })
        .collect()
}
