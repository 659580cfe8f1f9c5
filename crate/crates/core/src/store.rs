//! Durable document store: one append-only journal plus compacted segment
//! files per corpus, all under a root directory guarded by a lock file.
//!
//! Layout:
//!
//! ```text
//! <root>/LOCK
//! <root>/<corpus>/journal.log
//! <root>/<corpus>/segments/<seq>.seg
//! ```
//!
//! Journal and segments share one record framing:
//! `[u32 payload_len][u32 crc32(payload)][payload]`, where the payload is
//! `u8 op | u32 json_len | document JSON without vector | u32 dim | dim x f64`.
//! All integers and reals are little-endian. A put is acknowledged only after
//! its record has been synced. A torn record at the end of a journal is
//! dropped on reopen; damage inside a segment is reported as corruption.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::model::{validate_document, CorpusId, DocKey, Document, Embedding, Violation, DEFAULT_DIM};

const LOCK_FILE: &str = "LOCK";
const JOURNAL_FILE: &str = "journal.log";
const SEGMENT_DIR: &str = "segments";
const OP_PUT: u8 = 1;
const HEADER_LEN: usize = 8;
/// Records larger than this are treated as damage rather than allocated.
const MAX_RECORD_LEN: u32 = 256 * 1024 * 1024;
const ENOSPC: i32 = 28;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store at {0} is locked by another writer")]
    LockHeld(PathBuf),
    #[error("store is open read-only")]
    ReadOnly,
    #[error("storage is full")]
    StorageFull,
    #[error("unknown corpus {0:?}")]
    UnknownCorpus(String),
    #[error("corrupt record in {path} at byte {offset}: {reason}")]
    CorruptRecord {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("invalid document {key}: {violations:?}")]
    InvalidDocument { key: String, violations: Vec<Violation> },
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        if e.raw_os_error() == Some(ENOSPC) || e.kind() == io::ErrorKind::StorageFull {
            StoreError::StorageFull
        } else {
            StoreError::Io(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreOptions {
    pub read_only: bool,
    /// Journal records per corpus before the corpus is compacted; 0 disables.
    pub compact_threshold: usize,
    /// Optional cap on bytes written under the root.
    pub capacity_bytes: Option<u64>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            read_only: false,
            compact_threshold: 10_000,
            capacity_bytes: None,
        }
    }
}

impl StoreOptions {
    pub fn read_only() -> Self {
        Self {
            read_only: true,
            ..Self::default()
        }
    }
}

type Docs = BTreeMap<String, Arc<Document>>;

struct CorpusFiles {
    dir: PathBuf,
    journal: File,
    journal_len: u64,
    journal_records: usize,
    next_segment: u64,
}

struct Writer {
    corpora: BTreeMap<CorpusId, CorpusFiles>,
    disk_bytes: u64,
}

/// Handle to an open store. Reads never block on disk I/O.
pub struct Store {
    root: PathBuf,
    opts: StoreOptions,
    _lock: Option<File>,
    docs: RwLock<BTreeMap<CorpusId, Docs>>,
    writer: Mutex<Writer>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("root", &self.root)
            .field("opts", &self.opts)
            .finish()
    }
}

impl Store {
    pub fn open(root: impl AsRef<Path>, opts: StoreOptions) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        let lock = if opts.read_only {
            None
        } else {
            fs::create_dir_all(&root)?;
            let file = OpenOptions::new()
                .create(true)
                .truncate(false)
                .write(true)
                .open(root.join(LOCK_FILE))?;
            match file.try_lock() {
                Ok(()) => Some(file),
                Err(fs::TryLockError::WouldBlock) => return Err(StoreError::LockHeld(root)),
                Err(fs::TryLockError::Error(e)) => return Err(e.into()),
            }
        };

        let mut docs = BTreeMap::new();
        let mut writer = Writer {
            corpora: BTreeMap::new(),
            disk_bytes: 0,
        };
        if root.is_dir() {
            for entry in fs::read_dir(&root)? {
                let entry = entry?;
                if !entry.file_type()?.is_dir() {
                    continue;
                }
                let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
                    continue;
                };
                let Ok(corpus) = CorpusId::new(name) else { continue };
                let dir = entry.path();
                if !dir.join(JOURNAL_FILE).exists() && !dir.join(SEGMENT_DIR).exists() {
                    continue;
                }
                let (corpus_docs, files) = load_corpus(&dir, &opts)?;
                if let Some(files) = files {
                    writer.disk_bytes += files.journal_len + segment_bytes(&dir)?;
                    writer.corpora.insert(corpus.clone(), files);
                }
                docs.insert(corpus, corpus_docs);
            }
        }
        Ok(Self {
            root,
            opts,
            _lock: lock,
            docs: RwLock::new(docs),
            writer: Mutex::new(writer),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_read_only(&self) -> bool {
        self.opts.read_only
    }

    /// Makes an empty corpus visible to `scan`.
    pub fn create_corpus(&self, corpus: &CorpusId) -> Result<(), StoreError> {
        if self.opts.read_only {
            return Err(StoreError::ReadOnly);
        }
        let mut writer = self.writer.lock().expect("store writer poisoned");
        self.files_for(&mut writer, corpus)?;
        self.docs
            .write()
            .expect("store map poisoned")
            .entry(corpus.clone())
            .or_default();
        Ok(())
    }

    pub fn corpora(&self) -> Vec<CorpusId> {
        self.docs.read().expect("store map poisoned").keys().cloned().collect()
    }

    /// Upserts `doc`; returns once the record is on stable storage.
    pub fn put(&self, doc: Document) -> Result<(), StoreError> {
        if self.opts.read_only {
            return Err(StoreError::ReadOnly);
        }
        let dim = doc.embedding.as_ref().map_or(DEFAULT_DIM, Embedding::dim);
        let violations = validate_document(&doc, dim);
        if !violations.is_empty() {
            return Err(StoreError::InvalidDocument {
                key: doc.key().to_string(),
                violations,
            });
        }
        let record = frame(&encode_payload(&doc));

        let mut writer = self.writer.lock().expect("store writer poisoned");
        if let Some(cap) = self.opts.capacity_bytes {
            if writer.disk_bytes + record.len() as u64 > cap {
                return Err(StoreError::StorageFull);
            }
        }
        let files = self.files_for(&mut writer, &doc.corpus)?;
        if let Err(e) = append(files, &record) {
            // Drop whatever part of the record made it out.
            let _ = files.journal.set_len(files.journal_len);
            return Err(e.into());
        }
        files.journal_len += record.len() as u64;
        files.journal_records += 1;
        let compact = self.opts.compact_threshold > 0 && files.journal_records >= self.opts.compact_threshold;
        writer.disk_bytes += record.len() as u64;

        let corpus = doc.corpus.clone();
        self.docs
            .write()
            .expect("store map poisoned")
            .entry(corpus.clone())
            .or_default()
            .insert(doc.id.clone(), Arc::new(doc));

        if compact {
            self.compact_locked(&mut writer, &corpus)?;
        }
        Ok(())
    }

    pub fn get(&self, corpus: &CorpusId, id: &str) -> Option<Arc<Document>> {
        self.docs
            .read()
            .expect("store map poisoned")
            .get(corpus)
            .and_then(|docs| docs.get(id).cloned())
    }

    /// Element-wise `get`, in input order.
    pub fn get_many(&self, keys: &[DocKey]) -> Vec<(DocKey, Option<Arc<Document>>)> {
        let docs = self.docs.read().expect("store map poisoned");
        keys.iter()
            .map(|k| {
                let doc = docs.get(&k.corpus).and_then(|d| d.get(&k.id).cloned());
                (k.clone(), doc)
            })
            .collect()
    }

    /// Every committed document of `corpus` as of the call, id-ascending.
    pub fn scan(&self, corpus: &CorpusId) -> Result<std::vec::IntoIter<Arc<Document>>, StoreError> {
        let docs = self.docs.read().expect("store map poisoned");
        let corpus_docs = docs
            .get(corpus)
            .ok_or_else(|| StoreError::UnknownCorpus(corpus.to_string()))?;
        Ok(corpus_docs.values().cloned().collect::<Vec<_>>().into_iter())
    }

    pub fn len(&self, corpus: &CorpusId) -> usize {
        self.docs
            .read()
            .expect("store map poisoned")
            .get(corpus)
            .map_or(0, BTreeMap::len)
    }

    pub fn total_len(&self) -> usize {
        self.docs
            .read()
            .expect("store map poisoned")
            .values()
            .map(BTreeMap::len)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    /// Journal records not yet folded into a segment.
    pub fn pending_records(&self, corpus: &CorpusId) -> usize {
        let writer = self.writer.lock().expect("store writer poisoned");
        writer.corpora.get(corpus).map_or(0, |f| f.journal_records)
    }

    /// Rewrites `corpus` into one fresh segment and empties its journal.
    pub fn compact(&self, corpus: &CorpusId) -> Result<(), StoreError> {
        if self.opts.read_only {
            return Err(StoreError::ReadOnly);
        }
        let mut writer = self.writer.lock().expect("store writer poisoned");
        if !writer.corpora.contains_key(corpus) {
            return Err(StoreError::UnknownCorpus(corpus.to_string()));
        }
        self.compact_locked(&mut writer, corpus)
    }

    fn compact_locked(&self, writer: &mut Writer, corpus: &CorpusId) -> Result<(), StoreError> {
        let snapshot: Vec<Arc<Document>> = self.scan(corpus)?.collect();
        let files = writer.corpora.get_mut(corpus).expect("checked by caller");
        let seg_dir = files.dir.join(SEGMENT_DIR);
        fs::create_dir_all(&seg_dir)?;
        let seq = files.next_segment;
        let tmp = seg_dir.join(format!("{seq:08}.seg.tmp"));
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            for doc in &snapshot {
                out.write_all(&frame(&encode_payload(doc)))?;
            }
            out.into_inner().map_err(io::IntoInnerError::into_error)?.sync_all()?;
        }
        fs::rename(&tmp, seg_dir.join(segment_name(seq)))?;
        sync_dir(&seg_dir)?;
        for old in list_segments(&seg_dir)? {
            if old.0 < seq {
                fs::remove_file(&old.1)?;
            }
        }
        sync_dir(&seg_dir)?;
        files.journal.set_len(0)?;
        files.journal.seek(SeekFrom::Start(0))?;
        files.journal.sync_all()?;
        files.journal_len = 0;
        files.journal_records = 0;
        files.next_segment = seq + 1;

        let mut total = 0;
        for files in writer.corpora.values() {
            total += files.journal_len + segment_bytes(&files.dir)?;
        }
        writer.disk_bytes = total;
        Ok(())
    }

    fn files_for<'w>(&self, writer: &'w mut Writer, corpus: &CorpusId) -> Result<&'w mut CorpusFiles, StoreError> {
        if !writer.corpora.contains_key(corpus) {
            let dir = self.root.join(corpus.as_str());
            fs::create_dir_all(dir.join(SEGMENT_DIR))?;
            let journal = OpenOptions::new()
                .create(true)
                .truncate(false)
                .read(true)
                .write(true)
                .open(dir.join(JOURNAL_FILE))?;
            sync_dir(&self.root)?;
            let journal_len = journal.metadata()?.len();
            writer.corpora.insert(
                corpus.clone(),
                CorpusFiles {
                    dir,
                    journal,
                    journal_len,
                    journal_records: 0,
                    next_segment: 0,
                },
            );
        }
        Ok(writer.corpora.get_mut(corpus).expect("just inserted"))
    }
}

fn append(files: &mut CorpusFiles, record: &[u8]) -> io::Result<()> {
    files.journal.seek(SeekFrom::Start(files.journal_len))?;
    files.journal.write_all(record)?;
    files.journal.sync_data()
}

fn segment_name(seq: u64) -> String {
    format!("{seq:08}.seg")
}

fn list_segments(dir: &Path) -> io::Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(seq) = name.strip_suffix(".seg").and_then(|s| s.parse().ok()) {
            out.push((seq, path));
        }
    }
    out.sort();
    Ok(out)
}

fn segment_bytes(dir: &Path) -> io::Result<u64> {
    let mut total = 0;
    for (_, path) in list_segments(&dir.join(SEGMENT_DIR))? {
        total += fs::metadata(path)?.len();
    }
    Ok(total)
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

fn load_corpus(dir: &Path, opts: &StoreOptions) -> Result<(Docs, Option<CorpusFiles>), StoreError> {
    let mut docs = Docs::new();
    let seg_dir = dir.join(SEGMENT_DIR);
    let segments = list_segments(&seg_dir)?;
    if !opts.read_only {
        // Leftovers from a compaction that never reached its rename.
        if seg_dir.is_dir() {
            for entry in fs::read_dir(&seg_dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "tmp") {
                    fs::remove_file(path)?;
                }
            }
        }
    }
    for (_, path) in &segments {
        let bytes = fs::read(path)?;
        let mut offset = 0;
        while offset < bytes.len() {
            match read_record(&bytes[offset..]) {
                Ok((doc, used)) => {
                    docs.insert(doc.id.clone(), Arc::new(doc));
                    offset += used;
                }
                Err(reason) => {
                    return Err(StoreError::CorruptRecord {
                        path: path.clone(),
                        offset: offset as u64,
                        reason,
                    })
                }
            }
        }
    }
    let next_segment = segments.last().map_or(0, |(seq, _)| seq + 1);

    let journal_path = dir.join(JOURNAL_FILE);
    let bytes = match File::open(&journal_path) {
        Ok(f) => {
            let mut buf = Vec::new();
            BufReader::new(f).read_to_end(&mut buf)?;
            buf
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut offset = 0;
    let mut records = 0;
    while offset < bytes.len() {
        match read_record(&bytes[offset..]) {
            Ok((doc, used)) => {
                docs.insert(doc.id.clone(), Arc::new(doc));
                offset += used;
                records += 1;
            }
            // A torn tail from an interrupted append.
            Err(_) => break,
        }
    }
    if opts.read_only {
        return Ok((docs, None));
    }

    let journal = OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(&journal_path)?;
    if (offset as u64) < journal.metadata()?.len() {
        journal.set_len(offset as u64)?;
        journal.sync_all()?;
    }
    Ok((
        docs,
        Some(CorpusFiles {
            dir: dir.to_path_buf(),
            journal,
            journal_len: offset as u64,
            journal_records: records,
            next_segment,
        }),
    ))
}

fn encode_payload(doc: &Document) -> Vec<u8> {
    let mut bare = doc.clone();
    let embedding = bare.embedding.take();
    let json = bare.to_json();
    let dim = embedding.as_ref().map_or(0, Embedding::dim);
    let mut out = Vec::with_capacity(1 + 8 + json.len() + dim * 8);
    out.push(OP_PUT);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    if let Some(e) = embedding {
        for c in e.as_slice() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

fn u32_at(bytes: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(bytes.get(at..at + 4)?.try_into().ok()?))
}

/// Decodes one framed record, returning the document and bytes consumed.
fn read_record(bytes: &[u8]) -> Result<(Document, usize), String> {
    let len = u32_at(bytes, 0).ok_or("truncated header")?;
    let crc = u32_at(bytes, 4).ok_or("truncated header")?;
    if len > MAX_RECORD_LEN {
        return Err(format!("record length {len} is implausible"));
    }
    let end = HEADER_LEN + len as usize;
    let payload = bytes.get(HEADER_LEN..end).ok_or("truncated payload")?;
    if crc32fast::hash(payload) != crc {
        return Err("checksum mismatch".into());
    }
    if payload.first() != Some(&OP_PUT) {
        return Err("unknown record type".into());
    }
    let json_len = u32_at(payload, 1).ok_or("truncated payload")? as usize;
    let json = payload.get(5..5 + json_len).ok_or("truncated document")?;
    let json = std::str::from_utf8(json).map_err(|e| e.to_string())?;
    let mut doc = Document::from_json(json).map_err(|e| e.to_string())?;
    let dim_at = 5 + json_len;
    let dim = u32_at(payload, dim_at).ok_or("truncated vector header")? as usize;
    let comps = payload.get(dim_at + 4..).ok_or("truncated vector")?;
    if comps.len() != dim * 8 {
        return Err("vector length does not match its dimension".into());
    }
    if dim > 0 {
        let v = comps
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        doc.embedding = Some(Embedding::new(v).map_err(|e| e.to_string())?);
    }
    Ok((doc, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PartKey;

    fn corpus(name: &str) -> CorpusId {
        CorpusId::new(name).unwrap()
    }

    fn doc(id: &str, title: &str) -> Document {
        Document::new(id, corpus("epo"))
            .with_part(PartKey::Title, title)
            .with_part(PartKey::Abstract, "An abstract.")
            .with_meta("country", "EP")
    }

    #[test]
    fn put_then_get_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        let d = doc("EP1", "Airbags").with_meta("x", "y");
        let mut with_vec = doc("EP2", "Brakes");
        with_vec.embedding = Some(Embedding::new(vec![0.1, -0.2, 1e-300, 3.0]).unwrap());
        store.put(d.clone()).unwrap();
        store.put(with_vec.clone()).unwrap();
        assert_eq!(*store.get(&corpus("epo"), "EP1").unwrap(), d);
        assert_eq!(*store.get(&corpus("epo"), "EP2").unwrap(), with_vec);
        assert!(store.get(&corpus("epo"), "nope").is_none());
        assert!(store.get(&corpus("wipo"), "EP1").is_none());
    }

    #[test]
    fn later_put_replaces_earlier() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        store.put(doc("EP1", "First")).unwrap();
        store.put(doc("EP1", "Second")).unwrap();
        assert_eq!(store.get(&corpus("epo"), "EP1").unwrap().title(), Some("Second"));
        assert_eq!(store.len(&corpus("epo")), 1);
        drop(store);
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert_eq!(store.get(&corpus("epo"), "EP1").unwrap().title(), Some("Second"));
    }

    #[test]
    fn torn_journal_tail_is_dropped_on_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        store.put(doc("EP1", "Kept")).unwrap();
        store.put(doc("EP2", "Kept too")).unwrap();
        drop(store);

        let journal = dir.path().join("epo").join(JOURNAL_FILE);
        let good_len = fs::metadata(&journal).unwrap().len();
        let partial = frame(&encode_payload(&doc("EP3", "Never acknowledged")));
        let mut f = OpenOptions::new().append(true).open(&journal).unwrap();
        f.write_all(&partial[..partial.len() / 2]).unwrap();
        drop(f);

        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert_eq!(store.len(&corpus("epo")), 2);
        assert!(store.get(&corpus("epo"), "EP3").is_none());
        assert_eq!(fs::metadata(&journal).unwrap().len(), good_len);
        store.put(doc("EP4", "After repair")).unwrap();
        drop(store);
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert_eq!(store.len(&corpus("epo")), 3);
    }

    #[test]
    fn second_writer_is_locked_out() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert!(matches!(
            Store::open(dir.path(), StoreOptions::default()),
            Err(StoreError::LockHeld(_))
        ));
        let reader = Store::open(dir.path(), StoreOptions::read_only()).unwrap();
        assert!(matches!(reader.put(doc("EP1", "x")), Err(StoreError::ReadOnly)));
        drop(store);
        Store::open(dir.path(), StoreOptions::default()).unwrap();
    }

    #[test]
    fn capacity_limit_reports_storage_full() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(
            dir.path(),
            StoreOptions {
                capacity_bytes: Some(400),
                ..StoreOptions::default()
            },
        )
        .unwrap();
        let mut outcome = Ok(());
        for i in 0..20 {
            outcome = store.put(doc(&format!("EP{i}"), "Some title"));
            if outcome.is_err() {
                break;
            }
        }
        assert!(matches!(outcome, Err(StoreError::StorageFull)));
        let kept = store.len(&corpus("epo"));
        assert!(kept > 0 && kept < 20);
        drop(store);
        assert_eq!(Store::open(dir.path(), StoreOptions::default()).unwrap().len(&corpus("epo")), kept);
    }

    #[test]
    fn invalid_documents_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        let err = store.put(Document::new("EP1", corpus("epo"))).unwrap_err();
        assert!(matches!(err, StoreError::InvalidDocument { .. }), "{err:?}");
    }

    #[test]
    fn get_many_keeps_order_and_marks_absent() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert!(store.get_many(&[]).is_empty());
        store.put(doc("EP1", "a")).unwrap();
        store.put(doc("EP2", "b")).unwrap();
        let keys = vec![
            DocKey::new(corpus("epo"), "EP2"),
            DocKey::new(corpus("epo"), "missing"),
            DocKey::new(corpus("epo"), "EP1"),
        ];
        let got = store.get_many(&keys);
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].1.as_ref().unwrap().id, "EP2");
        assert!(got[1].1.is_none());
        assert_eq!(got[2].1.as_ref().unwrap().id, "EP1");
        assert_eq!(got[1].0, keys[1]);
    }

    #[test]
    fn scan_is_id_ascending_and_knows_its_corpora() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert!(matches!(store.scan(&corpus("epo")), Err(StoreError::UnknownCorpus(_))));
        store.create_corpus(&corpus("epo")).unwrap();
        assert_eq!(store.scan(&corpus("epo")).unwrap().count(), 0);
        for id in ["c", "a", "b"] {
            store.put(doc(id, id)).unwrap();
        }
        let ids: Vec<String> = store.scan(&corpus("epo")).unwrap().map(|d| d.id.clone()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn scan_is_a_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        store.put(doc("a", "a")).unwrap();
        let scan = store.scan(&corpus("epo")).unwrap();
        store.put(doc("b", "b")).unwrap();
        assert_eq!(scan.count(), 1);
    }

    #[test]
    fn compaction_preserves_contents() {
        let dir = tempfile::tempdir().unwrap();
        let opts = StoreOptions {
            compact_threshold: 5,
            ..StoreOptions::default()
        };
        let store = Store::open(dir.path(), opts.clone()).unwrap();
        for i in 0..12 {
            store.put(doc(&format!("EP{:02}", i % 8), &format!("v{i}"))).unwrap();
        }
        assert_eq!(store.pending_records(&corpus("epo")), 2);
        let before: Vec<Document> = store.scan(&corpus("epo")).unwrap().map(|d| (*d).clone()).collect();
        drop(store);

        let segments = list_segments(&dir.path().join("epo").join(SEGMENT_DIR)).unwrap();
        assert_eq!(segments.len(), 1);
        let store = Store::open(dir.path(), opts).unwrap();
        let after: Vec<Document> = store.scan(&corpus("epo")).unwrap().map(|d| (*d).clone()).collect();
        assert_eq!(before, after);
        assert_eq!(after.len(), 8);
        assert_eq!(after[3].title(), Some("v11"));
        store.compact(&corpus("epo")).unwrap();
        assert_eq!(store.pending_records(&corpus("epo")), 0);
    }

    #[test]
    fn damaged_segment_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreOptions::default()).unwrap();
        store.put(doc("EP1", "x")).unwrap();
        store.compact(&corpus("epo")).unwrap();
        drop(store);
        let (_, seg) = list_segments(&dir.path().join("epo").join(SEGMENT_DIR)).unwrap().remove(0);
        let mut bytes = fs::read(&seg).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0xff;
        fs::write(&seg, bytes).unwrap();
        assert!(matches!(
            Store::open(dir.path(), StoreOptions::default()),
            Err(StoreError::CorruptRecord { .. })
        ));
    }
}
