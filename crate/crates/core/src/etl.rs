//! Extract-transform-load from drop directories into the engine.
//!
//! Publications arrive as JSON Lines, one record per line. Patents arrive as
//! one XML file per document in a simplified schema:
//!
//! ```xml
//! <patent-document>
//!   <publication-number>EP19164094B1</publication-number>
//!   <country>EP</country> <kind>B1</kind> <publication-date>2021-10-24</publication-date>
//!   <classifications><classification>B60R 21/231</classification></classifications>
//!   <applicants><applicant>...</applicant></applicants>
//!   <title lang="en">...</title> <abstract>...</abstract>
//!   <claims><claim num="1">...</claim></claims>
//!   <description><p>...</p></description>
//! </patent-document>
//! ```
//!
//! Parsing and encoding run on a worker pool; loading is serial. Bad records
//! are counted and skipped, never fatal.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use quick_xml::events::Event;
use quick_xml::Reader;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use tracing::{info, warn};

use crate::encoder::{EncodeError, EncodeRequest};
use crate::engine::{Engine, EngineError, Placement};
use crate::model::{CorpusId, Document, Embedding, PartKey};

/// Corpora fed by patent offices.
pub const PATENT_CORPORA: [&str; 3] = ["epo", "uspto", "wipo"];
/// Records parsed and encoded per parallel batch.
const BATCH: usize = 512;

#[derive(Debug, Error)]
pub enum EtlError {
    #[error("source {path} is unreadable: {source}")]
    SourceUnreadable { path: PathBuf, source: io::Error },
    #[error("invalid source: {0}")]
    InvalidSpec(String),
    #[error("watermark {path}: {source}")]
    Watermark { path: PathBuf, source: io::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    PublicationJsonl,
    PatentXml,
}

impl SourceFormat {
    fn extension(self) -> &'static str {
        match self {
            Self::PublicationJsonl => "jsonl",
            Self::PatentXml => "xml",
        }
    }
}

impl std::str::FromStr for SourceFormat {
    type Err = EtlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "publication_jsonl" | "jsonl" => Ok(Self::PublicationJsonl),
            "patent_xml" | "xml" => Ok(Self::PatentXml),
            other => Err(EtlError::InvalidSpec(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub corpus: CorpusId,
    pub format: SourceFormat,
    /// A single input file, or a directory of them.
    pub location: PathBuf,
    /// Refresh period for scheduled runs.
    pub schedule: Option<Duration>,
}

impl SourceSpec {
    pub fn new(corpus: CorpusId, format: SourceFormat, location: impl Into<PathBuf>) -> Self {
        Self {
            corpus,
            format,
            location: location.into(),
            schedule: None,
        }
    }

    pub fn validate(&self) -> Result<(), EtlError> {
        let patent_corpus = PATENT_CORPORA.contains(&self.corpus.as_str());
        match (self.format, patent_corpus) {
            (SourceFormat::PatentXml, false) => Err(EtlError::InvalidSpec(format!(
                "patent XML needs one of {PATENT_CORPORA:?}, not {:?}",
                self.corpus.as_str()
            ))),
            (SourceFormat::PublicationJsonl, true) => Err(EtlError::InvalidSpec(format!(
                "{:?} is a patent corpus; publications need another name",
                self.corpus.as_str()
            ))),
            _ => Ok(()),
        }
    }

    /// Whether a scheduled run is due given the previous run's start.
    pub fn is_due(&self, last_run: Option<SystemTime>, now: SystemTime) -> bool {
        match (self.schedule, last_run) {
            (_, None) | (None, _) => true,
            (Some(period), Some(last)) => now.duration_since(last).is_ok_and(|d| d >= period),
        }
    }
}

/// Why a record was not turned into a document.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("record has neither title nor abstract")]
    NoText,
    #[error("record has no id")]
    MissingId,
    #[error("unreadable input: {0}")]
    Unreadable(String),
}

impl Rejection {
    /// Stable reason label used in reports.
    pub fn reason(&self) -> &'static str {
        match self {
            Self::MalformedJson(_) => "malformed_json",
            Self::MalformedXml(_) => "malformed_xml",
            Self::NoText => "no_text",
            Self::MissingId => "missing_id",
            Self::Unreadable(_) => "unreadable",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineReport {
    pub seen: u64,
    pub parsed: u64,
    pub rejected: u64,
    pub encoded: u64,
    /// Encoded documents written to the store and both indexes.
    pub loaded: u64,
    /// Parsed documents with no title or abstract to encode, stored without
    /// an embedding.
    pub store_only: u64,
    pub rejection_reasons: BTreeMap<String, u64>,
    /// Encode or load failures by kind; the affected documents are skipped.
    pub failures: BTreeMap<String, u64>,
    #[serde(serialize_with = "as_secs")]
    pub wall_time: Duration,
}

fn as_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl PipelineReport {
    fn reject(&mut self, r: &Rejection) {
        self.rejected += 1;
        *self.rejection_reasons.entry(r.reason().to_owned()).or_default() += 1;
    }

    fn fail(&mut self, kind: &str) {
        *self.failures.entry(kind.to_owned()).or_default() += 1;
    }

    /// Adds the counts of `other`; wall time is left alone.
    pub fn absorb(&mut self, other: PipelineReport) {
        self.seen += other.seen;
        self.parsed += other.parsed;
        self.rejected += other.rejected;
        self.encoded += other.encoded;
        self.loaded += other.loaded;
        self.store_only += other.store_only;
        for (k, v) in other.rejection_reasons {
            *self.rejection_reasons.entry(k).or_default() += v;
        }
        for (k, v) in other.failures {
            *self.failures.entry(k).or_default() += v;
        }
    }
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seen\t{}", self.seen)?;
        writeln!(f, "parsed\t{}", self.parsed)?;
        writeln!(f, "rejected\t{}", self.rejected)?;
        writeln!(f, "encoded\t{}", self.encoded)?;
        writeln!(f, "loaded\t{}", self.loaded)?;
        writeln!(f, "store_only\t{}", self.store_only)?;
        for (reason, n) in &self.rejection_reasons {
            writeln!(f, "rejected.{reason}\t{n}")?;
        }
        for (kind, n) in &self.failures {
            writeln!(f, "failed.{kind}\t{n}")?;
        }
        write!(f, "wall_time_s\t{:.3}", self.wall_time.as_secs_f64())
    }
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().filter_map(scalar_text).collect();
            Some(parts.join("; "))
        }
        Value::Object(_) => Some(v.to_string()),
    }
}

/// Maps one JSON Lines record onto a document of `corpus`.
pub fn parse_publication_record(line: &str, corpus: &CorpusId) -> Result<Document, Rejection> {
    let value: Value = serde_json::from_str(line).map_err(|e| Rejection::MalformedJson(e.to_string()))?;
    let Value::Object(fields) = value else {
        return Err(Rejection::MalformedJson("record is not an object".into()));
    };
    let id = match fields.get("id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_owned(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(Rejection::MissingId),
    };
    let mut doc = Document::new(id, corpus.clone());
    for key in PartKey::ALL {
        if let Some(Value::String(text)) = fields.get(key.as_str()) {
            if !text.trim().is_empty() {
                doc = doc.with_part(key, text.trim());
            }
        }
    }
    if doc.part(PartKey::Title).is_none() && doc.part(PartKey::Abstract).is_none() {
        return Err(Rejection::NoText);
    }
    for (name, v) in &fields {
        if name == "id" || PartKey::ALL.iter().any(|k| k.as_str() == name) {
            continue;
        }
        if let Some(text) = scalar_text(v) {
            doc = doc.with_meta(name.clone(), text);
        }
    }
    Ok(doc)
}

fn metadata_name(element: &str) -> String {
    element.replace('-', "_")
}

/// Maps one patent XML document onto a document of `corpus`.
pub fn parse_patent_document(xml: &str, corpus: &CorpusId) -> Result<Document, Rejection> {
    let mut reader = Reader::from_str(xml);
    let malformed = |reader: &Reader<&[u8]>, msg: String| {
        Rejection::MalformedXml(format!("{msg} at byte {}", reader.buffer_position()))
    };

    let mut stack: Vec<String> = Vec::new();
    let mut text = String::new();
    let mut id = None;
    let mut parts: BTreeMap<PartKey, Vec<String>> = BTreeMap::new();
    let mut lists: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    let mut saw_root = false;

    loop {
        let event = reader.read_event().map_err(|e| malformed(&reader, e.to_string()))?;
        match event {
            Event::Start(start) => {
                let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
                if stack.is_empty() {
                    if name != "patent-document" {
                        return Err(malformed(&reader, format!("unexpected root <{name}>")));
                    }
                    saw_root = true;
                }
                stack.push(name);
                text.clear();
            }
            Event::Empty(_) => {}
            Event::Text(t) => {
                let decoded = t.xml_content().map_err(|e| malformed(&reader, e.to_string()))?;
                text.push_str(&decoded);
            }
            Event::CData(c) => {
                let decoded = c.decode().map_err(|e| malformed(&reader, e.to_string()))?;
                text.push_str(&decoded);
            }
            Event::GeneralRef(r) => {
                let name = r.decode().map_err(|e| malformed(&reader, e.to_string()))?;
                match r.resolve_char_ref().map_err(|e| malformed(&reader, e.to_string()))? {
                    Some(c) => text.push(c),
                    None => match quick_xml::escape::resolve_predefined_entity(&name) {
                        Some(s) => text.push_str(s),
                        None => return Err(malformed(&reader, format!("unknown entity &{name};"))),
                    },
                }
            }
            Event::End(_) => {
                let name = stack.pop().expect("reader checks end tags");
                let parent = stack.last().map(String::as_str);
                let value = text.split_whitespace().collect::<Vec<_>>().join(" ");
                text.clear();
                match (parent, name.as_str()) {
                    (Some("patent-document"), "publication-number") => id = Some(value),
                    (Some("patent-document"), "title") => parts.entry(PartKey::Title).or_default().push(value),
                    (Some("patent-document"), "abstract") => {
                        parts.entry(PartKey::Abstract).or_default().push(value)
                    }
                    (Some("claims"), "claim") => parts.entry(PartKey::Claims).or_default().push(value),
                    (Some("description"), "p") => parts.entry(PartKey::Description).or_default().push(value),
                    (Some("patent-document"), "description" | "claims") => {
                        if !value.is_empty() {
                            let key = if name == "claims" { PartKey::Claims } else { PartKey::Description };
                            parts.entry(key).or_default().push(value);
                        }
                    }
                    (Some("patent-document"), _) => {
                        if !value.is_empty() {
                            meta.insert(metadata_name(&name), value);
                        }
                    }
                    (Some(list), _) if stack.len() == 2 && !value.is_empty() => {
                        lists.entry(metadata_name(list)).or_default().push(value);
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(Rejection::MalformedXml(format!("unclosed <{}>", stack.last().expect("non-empty"))));
    }
    if !saw_root {
        return Err(Rejection::MalformedXml("no <patent-document> element".into()));
    }
    let id = id.filter(|s| !s.is_empty()).ok_or(Rejection::MissingId)?;
    let mut doc = Document::new(id, corpus.clone());
    for key in PartKey::ALL {
        if let Some(values) = parts.remove(&key) {
            let joined = values.into_iter().filter(|v| !v.is_empty()).collect::<Vec<_>>().join("\n");
            if !joined.is_empty() {
                doc = doc.with_part(key, joined);
            }
        }
    }
    if doc.parts.is_empty() {
        return Err(Rejection::NoText);
    }
    for (k, v) in lists {
        doc = doc.with_meta(k, v.join("; "));
    }
    for (k, v) in meta {
        doc = doc.with_meta(k, v);
    }
    Ok(doc)
}

/// Position of the newest processed input: modification time, then name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Watermark {
    pub mtime_ns: u128,
    pub name: String,
}

impl fmt::Display for Watermark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.mtime_ns, self.name)
    }
}

impl std::str::FromStr for Watermark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (t, name) = s.trim_end_matches('\n').split_once(' ').ok_or("expected \"<mtime_ns> <name>\"")?;
        Ok(Self {
            mtime_ns: t.parse().map_err(|e| format!("bad mtime: {e}"))?,
            name: name.to_owned(),
        })
    }
}

pub fn watermark_path(store_root: &Path, corpus: &CorpusId) -> PathBuf {
    store_root.join("etl").join(format!("{corpus}.watermark"))
}

pub fn read_watermark(store_root: &Path, corpus: &CorpusId) -> Result<Option<Watermark>, EtlError> {
    let path = watermark_path(store_root, corpus);
    match fs::read_to_string(&path) {
        Ok(text) => text.parse().map(Some).map_err(|e| EtlError::Watermark {
            path,
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(EtlError::Watermark { path, source }),
    }
}

pub fn write_watermark(store_root: &Path, corpus: &CorpusId, mark: &Watermark) -> Result<(), EtlError> {
    let path = watermark_path(store_root, corpus);
    let wrap = |source| EtlError::Watermark { path: path.clone(), source };
    fs::create_dir_all(path.parent().expect("watermark has a parent")).map_err(wrap)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, format!("{mark}\n")).map_err(wrap)?;
    fs::rename(&tmp, &path).map_err(wrap)
}

struct Input {
    path: PathBuf,
    mark: Watermark,
}

fn list_inputs(spec: &SourceSpec) -> Result<Vec<Input>, EtlError> {
    let unreadable = |source| EtlError::SourceUnreadable {
        path: spec.location.clone(),
        source,
    };
    let meta = fs::metadata(&spec.location).map_err(unreadable)?;
    let paths = if meta.is_file() {
        vec![spec.location.clone()]
    } else {
        let mut paths = Vec::new();
        for entry in fs::read_dir(&spec.location).map_err(unreadable)? {
            let path = entry.map_err(unreadable)?.path();
            if path.is_file() && path.extension().is_some_and(|e| e == spec.format.extension()) {
                paths.push(path);
            }
        }
        paths
    };
    let mut inputs = Vec::new();
    for path in paths {
        let modified = fs::metadata(&path)
            .and_then(|m| m.modified())
            .map_err(|source| EtlError::SourceUnreadable {
                path: path.clone(),
                source,
            })?;
        let mtime_ns = modified.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        inputs.push(Input {
            path,
            mark: Watermark { mtime_ns, name },
        });
    }
    inputs.sort_by(|a, b| a.mark.cmp(&b.mark));
    Ok(inputs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Parse/encode worker threads; 0 means one per CPU.
    pub workers: usize,
}

type Prepared = Result<(Document, Option<Result<Embedding, EncodeError>>), Rejection>;

fn prepare(record: &str, spec: &SourceSpec, engine: &Engine) -> Prepared {
    let mut doc = match spec.format {
        SourceFormat::PublicationJsonl => parse_publication_record(record, &spec.corpus)?,
        SourceFormat::PatentXml => parse_patent_document(record, &spec.corpus)?,
    };
    let req = EncodeRequest::new(
        doc.id.clone(),
        doc.part(PartKey::Title).unwrap_or(""),
        doc.part(PartKey::Abstract).unwrap_or(""),
    );
    let encoded = match engine.encode(&req) {
        Ok(e) => Some(Ok(e)),
        Err(EngineError::Encode(EncodeError::EmptyDocument | EncodeError::AllWordsFiltered)) => None,
        Err(EngineError::Encode(e)) => Some(Err(e)),
        Err(e) => Some(Err(EncodeError::InvalidConfig(e.to_string()))),
    };
    if let Some(Ok(e)) = &encoded {
        doc.embedding = Some(e.clone());
    }
    Ok((doc, encoded))
}

fn encode_failure_kind(e: &EncodeError) -> &'static str {
    match e {
        EncodeError::RemoteUnavailable(_) => "encode_unavailable",
        EncodeError::RemoteBadResponse(_) => "encode_bad_response",
        _ => "encode_other",
    }
}

fn process_batch(records: &[String], spec: &SourceSpec, engine: &Engine, report: &mut PipelineReport) {
    let prepared: Vec<Prepared> = records.par_iter().map(|r| prepare(r, spec, engine)).collect();
    for item in prepared {
        report.seen += 1;
        let (doc, encoded) = match item {
            Ok(x) => x,
            Err(r) => {
                report.reject(&r);
                continue;
            }
        };
        report.parsed += 1;
        match encoded {
            Some(Err(e)) => {
                warn!(id = %doc.id, error = %e, "encoding failed");
                report.fail(encode_failure_kind(&e));
                continue;
            }
            Some(Ok(_)) => report.encoded += 1,
            None => {}
        }
        match engine.upsert(doc) {
            Ok(Placement::Indexed) => report.loaded += 1,
            Ok(Placement::StoreOnly) => report.store_only += 1,
            Err(e) => {
                warn!(error = %e, "load failed");
                report.fail("load");
            }
        }
    }
}

fn process_file(input: &Input, spec: &SourceSpec, engine: &Engine, report: &mut PipelineReport) {
    let text = match fs::read_to_string(&input.path) {
        Ok(text) => text,
        Err(e) => {
            report.seen += 1;
            report.reject(&Rejection::Unreadable(format!("{}: {e}", input.path.display())));
            return;
        }
    };
    match spec.format {
        SourceFormat::PatentXml => process_batch(&[text], spec, engine, report),
        SourceFormat::PublicationJsonl => {
            let lines: Vec<String> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_owned)
                .collect();
            for chunk in lines.chunks(BATCH) {
                process_batch(chunk, spec, engine, report);
            }
        }
    }
}

fn run_inputs(
    spec: &SourceSpec,
    inputs: &[Input],
    engine: &Engine,
    opts: PipelineOptions,
) -> Result<PipelineReport, EtlError> {
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| EtlError::Pool(e.to_string()))?;
    let mut report = PipelineReport::default();
    if !engine.has_corpus(&spec.corpus) && !engine.store().is_read_only() {
        if let Err(e) = engine.create_corpus(&spec.corpus) {
            warn!(error = %e, "could not create corpus");
        }
    }
    for input in inputs {
        let mut file_report = PipelineReport::default();
        pool.install(|| process_file(input, spec, engine, &mut file_report));
        report.absorb(file_report);
    }
    report.wall_time = started.elapsed();
    info!(corpus = %spec.corpus, seen = report.seen, loaded = report.loaded, "pipeline finished");
    Ok(report)
}

/// Processes every input of `spec`. Re-running on the same input upserts.
pub fn run_pipeline(spec: &SourceSpec, engine: &Engine, opts: PipelineOptions) -> Result<PipelineReport, EtlError> {
    spec.validate()?;
    let inputs = list_inputs(spec)?;
    run_inputs(spec, &inputs, engine, opts)
}

/// Processes only inputs past `watermark` and returns the advanced mark.
pub fn incremental_update(
    spec: &SourceSpec,
    engine: &Engine,
    watermark: Option<&Watermark>,
    opts: PipelineOptions,
) -> Result<(PipelineReport, Option<Watermark>), EtlError> {
    spec.validate()?;
    let inputs: Vec<Input> = list_inputs(spec)?
        .into_iter()
        .filter(|i| watermark.is_none_or(|w| &i.mark > w))
        .collect();
    let report = run_inputs(spec, &inputs, engine, opts)?;
    let next = inputs.last().map(|i| i.mark.clone()).or_else(|| watermark.cloned());
    Ok((report, next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(name: &str) -> CorpusId {
        CorpusId::new(name).unwrap()
    }

    #[test]
    fn publication_full_record() {
        let line = r#"{"id": "S2-1", "title": "Airbags", "abstract": "Cushions.", "year": 2021,
            "journal": "Safety", "doi": "10.1/x", "authors": ["A. One", "B. Two"], "venue": null}"#;
        let doc = parse_publication_record(line, &corpus("semanticscholar")).unwrap();
        assert_eq!(doc.id, "S2-1");
        assert_eq!(doc.title(), Some("Airbags"));
        assert_eq!(doc.part(PartKey::Abstract), Some("Cushions."));
        assert_eq!(doc.metadata["doi"], "10.1/x");
        assert_eq!(doc.metadata["year"], "2021");
        assert_eq!(doc.metadata["authors"], "A. One; B. Two");
        assert!(!doc.metadata.contains_key("venue"));
    }

    #[test]
    fn publication_variants_and_rejections() {
        let c = corpus("semanticscholar");
        let doc = parse_publication_record(r#"{"id": 7, "abstract": "Only this."}"#, &c).unwrap();
        assert_eq!(doc.id, "7");
        assert_eq!(doc.parts.len(), 1);
        assert!(matches!(
            parse_publication_record(r#"{"id": "x", "title": "Unterminated"#, &c),
            Err(Rejection::MalformedJson(_))
        ));
        assert_eq!(
            parse_publication_record(r#"{"id": "x", "year": 2019}"#, &c),
            Err(Rejection::NoText)
        );
        assert_eq!(parse_publication_record(r#"{"title": "t"}"#, &c), Err(Rejection::MissingId));
        assert!(matches!(parse_publication_record("[1]", &c), Err(Rejection::MalformedJson(_))));
    }

    const PATENT: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<patent-document>
  <publication-number>EP19164094B1</publication-number>
  <country>EP</country>
  <publication-date>2021-10-24</publication-date>
  <classifications>
    <classification>B60R 21/231</classification>
    <classification>B60R 21/16</classification>
  </classifications>
  <title lang="en">Airbags &amp; cushions</title>
  <abstract>Airbags are
     inflatable &#x41;.</abstract>
  <claims><claim num="1">First.</claim><claim num="2">Second.</claim></claims>
  <description><p>One.</p><p><![CDATA[Two <raw>]]></p></description>
</patent-document>"#;

    #[test]
    fn patent_fields_map_to_parts_and_metadata() {
        let doc = parse_patent_document(PATENT, &corpus("epo")).unwrap();
        assert_eq!(doc.id, "EP19164094B1");
        assert_eq!(doc.corpus, corpus("epo"));
        assert_eq!(doc.title(), Some("Airbags & cushions"));
        assert_eq!(doc.part(PartKey::Abstract), Some("Airbags are inflatable A."));
        assert_eq!(doc.part(PartKey::Claims), Some("First.\nSecond."));
        assert_eq!(doc.part(PartKey::Description), Some("One.\nTwo <raw>"));
        assert_eq!(doc.metadata["classifications"], "B60R 21/231; B60R 21/16");
        assert_eq!(doc.metadata["country"], "EP");
        assert_eq!(doc.metadata["publication_date"], "2021-10-24");
        assert!(crate::model::validate_document(&doc, 768).is_empty());
    }

    #[test]
    fn patent_without_abstract_keeps_claims() {
        let xml = "<patent-document><publication-number>EP2</publication-number>\
                   <claims><claim num=\"1\">A claim.</claim></claims></patent-document>";
        let doc = parse_patent_document(xml, &corpus("epo")).unwrap();
        assert_eq!(doc.part(PartKey::Abstract), None);
        assert_eq!(doc.part(PartKey::Claims), Some("A claim."));
    }

    #[test]
    fn patent_rejections() {
        let c = corpus("epo");
        for xml in [
            "<?xml version=\"1.0\"?>\n<patent-document>\n<publication-number>EP3</publication-number>\n<title>Unclosed\n",
            "<patent-document><title>x</abstract></patent-document>",
            "<other/>",
            "",
            "<patent-document><title>&bogus;</title></patent-document>",
        ] {
            assert!(
                matches!(parse_patent_document(xml, &c), Err(Rejection::MalformedXml(_))),
                "{xml:?}"
            );
        }
        assert_eq!(
            parse_patent_document("<patent-document><title>t</title></patent-document>", &c),
            Err(Rejection::MissingId)
        );
    }

    #[test]
    fn spec_checks_corpus_family() {
        let ok = SourceSpec::new(corpus("epo"), SourceFormat::PatentXml, "x");
        assert!(ok.validate().is_ok());
        assert!(SourceSpec::new(corpus("semanticscholar"), SourceFormat::PatentXml, "x")
            .validate()
            .is_err());
        assert!(SourceSpec::new(corpus("wipo"), SourceFormat::PublicationJsonl, "x")
            .validate()
            .is_err());
    }

    #[test]
    fn schedule_due() {
        let mut spec = SourceSpec::new(corpus("epo"), SourceFormat::PatentXml, "x");
        let now = SystemTime::now();
        assert!(spec.is_due(Some(now), now));
        spec.schedule = Some(Duration::from_secs(7 * 24 * 3600));
        assert!(spec.is_due(None, now));
        assert!(!spec.is_due(Some(now - Duration::from_secs(3600)), now));
        assert!(spec.is_due(Some(now - Duration::from_secs(8 * 24 * 3600)), now));
    }

    #[test]
    fn watermark_text_round_trip() {
        let w = Watermark {
            mtime_ns: 1_700_000_000_123_456_789,
            name: "part 0001.jsonl".into(),
        };
        assert_eq!(w.to_string().parse::<Watermark>().unwrap(), w);
        assert!("garbage".parse::<Watermark>().is_err());
    }
}
