//! HNSW approximate nearest-neighbor index over unit vectors.
//!
//! Vectors are stored unit-normalized, so cosine similarity is a plain dot
//! product. Neighbor selection keeps the top `cap(layer)` candidates by
//! similarity; when a reverse edge overflows a neighbor's list, that list is
//! pruned back to its cap the same way.
//!
//! Nodes live in slots. A removed node's slot goes on a free list and is
//! reused by the next insert, so the graph never needs compaction. All
//! randomness (level draws) comes from one seeded ChaCha generator owned by
//! the index, which makes the graph a pure function of the seed and the
//! operation sequence.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{self, Read};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics;

const MAGIC_PREFIX: &[u8; 6] = b"MLHNSW";
const FORMAT_VERSION: &[u8; 2] = b"01";
const NORM_TOLERANCE: f64 = 1e-9;
const NO_ENTRY: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("id {0:?} is already indexed")]
    DuplicateId(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("vector norm {0} is not 1")]
    NotNormalized(f64),
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid HNSW parameters: {0}")]
    InvalidParams(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("snapshot format version {found:?} is not supported")]
    VersionMismatch { found: String },
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswParams {
    /// Max neighbors per node on layers above 0.
    pub m: usize,
    /// Max neighbors per node on layer 0.
    pub m0: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Level normalization; levels are `floor(-ln(u) * ml)`.
    pub ml: f64,
    pub rng_seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self::with_m(16)
    }
}

impl HnswParams {
    /// Defaults for a given `m`: `m0 = 2m`, `ml = 1/ln m`.
    pub fn with_m(m: usize) -> Self {
        Self {
            m,
            m0: 2 * m,
            ef_construction: 200,
            ef_search: 100,
            ml: 1.0 / (m as f64).ln(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AnnError> {
        let fail = |msg: &str| Err(AnnError::InvalidParams(msg.to_owned()));
        if self.m < 2 {
            return fail("m must be >= 2");
        }
        if self.m0 < self.m {
            return fail("m0 must be >= m");
        }
        if self.ef_construction < self.m {
            return fail("ef_construction must be >= m");
        }
        if self.ef_search < 1 {
            return fail("ef_search must be >= 1");
        }
        if !(self.ml.is_finite() && self.ml > 0.0) {
            return fail("ml must be > 0");
        }
        if self.m > u32::MAX as usize || self.m0 > u32::MAX as usize {
            return fail("neighbor caps must fit in 32 bits");
        }
        Ok(())
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            self.m0
        } else {
            self.m
        }
    }
}

/// Level for a uniform draw `u` in `(0, 1]`.
pub fn level_for(u: f64, ml: f64) -> usize {
    (-u.ln() * ml).floor() as usize
}

/// Draws a level from `rng`; consumes exactly one `f64`.
pub fn assign_level<R: Rng + ?Sized>(rng: &mut R, ml: f64) -> usize {
    // random() is in [0, 1); flip it to (0, 1] so ln never sees 0.
    let u = 1.0 - rng.random::<f64>();
    level_for(u, ml)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
}

/// Scores descending, ties by id ascending.
pub fn sort_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Link {
    slot: u32,
    score: f64,
}

#[derive(Debug, Clone)]
struct Node {
    id: String,
    level: usize,
    /// `links[layer]`, each sorted by score descending.
    links: Vec<Vec<Link>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f64,
    slot: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Visited(Vec<u64>);

impl Visited {
    fn new(slots: usize) -> Self {
        Self(vec![0; slots.div_ceil(64)])
    }

    /// Marks `slot`; returns false if it was already marked.
    fn insert(&mut self, slot: u32) -> bool {
        let (word, bit) = ((slot / 64) as usize, slot % 64);
        let mask = 1u64 << bit;
        let fresh = self.0[word] & mask == 0;
        self.0[word] |= mask;
        fresh
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn check_norm(v: &[f64]) -> Result<(), AnnError> {
    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(AnnError::NotNormalized(norm));
    }
    Ok(())
}

/// Layered proximity graph over unit vectors.
#[derive(Clone)]
pub struct HnswIndex {
    dim: usize,
    params: HnswParams,
    vectors: Vec<f64>,
    nodes: Vec<Option<Node>>,
    free: Vec<u32>,
    ids: HashMap<String, u32>,
    entry: Option<u32>,
    max_layer: usize,
    rng: ChaCha8Rng,
}

impl std::fmt::Debug for HnswIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HnswIndex")
            .field("dim", &self.dim)
            .field("len", &self.len())
            .field("max_layer", &self.max_layer)
            .field("params", &self.params)
            .finish()
    }
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self, AnnError> {
        params.validate()?;
        if dim == 0 {
            return Err(AnnError::InvalidParams("dim must be >= 1".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        Ok(Self {
            dim,
            params,
            vectors: Vec::new(),
            nodes: Vec::new(),
            free: Vec::new(),
            ids: HashMap::new(),
            entry: None,
            max_layer: 0,
            rng,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains_key(id)
    }

    pub fn max_layer(&self) -> usize {
        self.max_layer
    }

    pub fn entry_point(&self) -> Option<&str> {
        self.entry.map(|s| self.node(s).id.as_str())
    }

    /// Ids in slot order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().flatten().map(|n| n.id.as_str())
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.ids.get(id).map(|&s| self.vec_of(s))
    }

    pub fn level_of(&self, id: &str) -> Option<usize> {
        self.ids.get(id).map(|&s| self.node(s).level)
    }

    /// Neighbor ids of `id` on `layer`, best first.
    pub fn neighbors(&self, id: &str, layer: usize) -> Option<Vec<&str>> {
        let node = self.node(*self.ids.get(id)?);
        let links = node.links.get(layer)?;
        Some(links.iter().map(|l| self.node(l.slot).id.as_str()).collect())
    }

    fn node(&self, slot: u32) -> &Node {
        self.nodes[slot as usize].as_ref().expect("live slot")
    }

    fn node_mut(&mut self, slot: u32) -> &mut Node {
        self.nodes[slot as usize].as_mut().expect("live slot")
    }

    fn vec_of(&self, slot: u32) -> &[f64] {
        let start = slot as usize * self.dim;
        &self.vectors[start..start + self.dim]
    }

    fn sim(&self, a: u32, b: u32) -> f64 {
        dot(self.vec_of(a), self.vec_of(b))
    }

    fn greedy_closest(&self, query: &[f64], mut best: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for link in &self.node(best.slot).links[layer] {
                let score = dot(query, self.vec_of(link.slot));
                let cand = Scored { score, slot: link.slot };
                if cand > best {
                    best = cand;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search on one layer. Returns up to `ef` nodes, best first.
    fn search_layer(&self, query: &[f64], entries: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = Visited::new(self.nodes.len());
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.slot) {
                candidates.push(e);
                results.push(std::cmp::Reverse(e));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(current) = candidates.pop() {
            let worst = results.peek().map(|r| r.0).expect("results non-empty");
            if current < worst && results.len() >= ef {
                break;
            }
            for link in &self.node(current.slot).links[layer] {
                if !visited.insert(link.slot) {
                    continue;
                }
                let cand = Scored {
                    score: dot(query, self.vec_of(link.slot)),
                    slot: link.slot,
                };
                if results.len() < ef || cand > results.peek().expect("non-empty").0 {
                    candidates.push(cand);
                    results.push(std::cmp::Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    fn alloc_slot(&mut self, vector: &[f64]) -> u32 {
        if let Some(slot) = self.free.pop() {
            let start = slot as usize * self.dim;
            self.vectors[start..start + self.dim].copy_from_slice(vector);
            slot
        } else {
            let slot = self.nodes.len() as u32;
            self.vectors.extend_from_slice(vector);
            self.nodes.push(None);
            slot
        }
    }

    /// Adds `slot` to `target`'s list on `layer`, pruning to the cap.
    fn add_link(&mut self, target: u32, slot: u32, score: f64, layer: usize) {
        let cap = self.params.cap(layer);
        let links = &mut self.node_mut(target).links[layer];
        if links.iter().any(|l| l.slot == slot) {
            return;
        }
        let pos = links
            .iter()
            .position(|l| Scored { score, slot } > Scored { score: l.score, slot: l.slot })
            .unwrap_or(links.len());
        links.insert(pos, Link { slot, score });
        links.truncate(cap);
    }

    /// Inserts a unit vector under `id`. The node becomes visible only
    /// once all of its edges are in place.
    pub fn insert(&mut self, id: &str, vector: &[f64]) -> Result<(), AnnError> {
        if vector.len() != self.dim {
            return Err(AnnError::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        check_norm(vector)?;
        if self.ids.contains_key(id) {
            return Err(AnnError::DuplicateId(id.to_owned()));
        }

        let level = assign_level(&mut self.rng, self.params.ml);
        let slot = self.alloc_slot(vector);
        self.nodes[slot as usize] = Some(Node {
            id: id.to_owned(),
            level,
            links: vec![Vec::new(); level + 1],
        });

        let Some(entry) = self.entry else {
            self.entry = Some(slot);
            self.max_layer = level;
            self.ids.insert(id.to_owned(), slot);
            return Ok(());
        };

        let query = self.vec_of(slot).to_vec();
        let mut best = Scored {
            score: dot(&query, self.vec_of(entry)),
            slot: entry,
        };
        for layer in (level + 1..=self.max_layer).rev() {
            best = self.greedy_closest(&query, best, layer);
        }
        let mut entries = vec![best];
        for layer in (0..=level.min(self.max_layer)).rev() {
            let found = self.search_layer(&query, &entries, self.params.ef_construction, layer);
            let cap = self.params.cap(layer);
            let selected: Vec<Link> = found
                .iter()
                .take(cap)
                .map(|s| Link { slot: s.slot, score: s.score })
                .collect();
            for link in &selected {
                self.add_link(link.slot, slot, link.score, layer);
            }
            self.node_mut(slot).links[layer] = selected;
            entries = found;
        }

        if level > self.max_layer {
            self.max_layer = level;
            self.entry = Some(slot);
        }
        self.ids.insert(id.to_owned(), slot);
        Ok(())
    }

    /// Top-`k` neighbors of a unit query, using beam width `max(ef, k)`.
    pub fn search(&self, query: &[f64], k: usize, ef: Option<usize>) -> Result<Vec<SearchHit>, AnnError> {
        if k == 0 {
            return Err(AnnError::ZeroK);
        }
        let Some(entry) = self.entry else {
            return Err(AnnError::EmptyIndex);
        };
        if query.len() != self.dim {
            return Err(AnnError::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        check_norm(query)?;
        let ef = ef.unwrap_or(self.params.ef_search).max(k);
        let mut best = Scored {
            score: dot(query, self.vec_of(entry)),
            slot: entry,
        };
        for layer in (1..=self.max_layer).rev() {
            best = self.greedy_closest(query, best, layer);
        }
        let found = self.search_layer(query, &[best], ef, 0);
        let mut hits: Vec<SearchHit> = found
            .into_iter()
            .map(|s| SearchHit {
                id: self.node(s.slot).id.clone(),
                score: s.score,
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    /// Removes `id` and reconnects the nodes that pointed at it.
    pub fn remove(&mut self, id: &str) -> Result<(), AnnError> {
        let slot = self
            .ids
            .remove(id)
            .ok_or_else(|| AnnError::UnknownId(id.to_owned()))?;
        let removed = self.nodes[slot as usize].take().expect("live slot");

        for layer in 0..=removed.level {
            let cap = self.params.cap(layer);
            let orphaned: Vec<u32> = self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(s, n)| {
                    let n = n.as_ref()?;
                    let links = n.links.get(layer)?;
                    links.iter().any(|l| l.slot == slot).then_some(s as u32)
                })
                .collect();
            for target in orphaned {
                let mut pool: Vec<Link> = self.node(target).links[layer]
                    .iter()
                    .copied()
                    .filter(|l| l.slot != slot)
                    .collect();
                for l in &removed.links[layer] {
                    if l.slot != target && l.slot != slot && !pool.iter().any(|p| p.slot == l.slot) {
                        pool.push(Link {
                            slot: l.slot,
                            score: self.sim(target, l.slot),
                        });
                    }
                }
                pool.sort_by(|a, b| {
                    Scored { score: b.score, slot: b.slot }.cmp(&Scored { score: a.score, slot: a.slot })
                });
                pool.truncate(cap);
                self.node_mut(target).links[layer] = pool;
            }
        }
        self.free.push(slot);

        if self.entry == Some(slot) {
            let next = self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(s, n)| n.as_ref().map(|n| (n.level, s as u32)))
                .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(&a.1)));
            self.entry = next.map(|(_, s)| s);
            self.max_layer = next.map_or(0, |(level, _)| level);
        }
        if self.ids.is_empty() {
            self.nodes.clear();
            self.vectors.clear();
            self.free.clear();
        }
        Ok(())
    }

    /// Checks degree caps, edge validity and entry-point placement.
    pub fn check_invariants(&self) -> Result<(), String> {
        let live = self.nodes.iter().flatten().count();
        if live != self.ids.len() {
            return Err(format!("{live} live nodes but {} ids", self.ids.len()));
        }
        match self.entry {
            None if live > 0 => return Err("non-empty index without entry point".into()),
            Some(e) => {
                let node = self.nodes.get(e as usize).and_then(|n| n.as_ref());
                match node {
                    Some(n) if n.level == self.max_layer => {}
                    _ => return Err("entry point is not on the top layer".into()),
                }
            }
            None => {}
        }
        for (slot, node) in self.nodes.iter().enumerate() {
            let Some(node) = node else { continue };
            if self.ids.get(&node.id) != Some(&(slot as u32)) {
                return Err(format!("id map out of sync for {:?}", node.id));
            }
            if node.level > self.max_layer {
                return Err(format!("{:?} is above max_layer", node.id));
            }
            if node.links.len() != node.level + 1 {
                return Err(format!("{:?} has {} layers for level {}", node.id, node.links.len(), node.level));
            }
            for (layer, links) in node.links.iter().enumerate() {
                if links.len() > self.params.cap(layer) {
                    return Err(format!("{:?} exceeds cap on layer {layer}", node.id));
                }
                for l in links {
                    if l.slot as usize == slot {
                        return Err(format!("{:?} links to itself", node.id));
                    }
                    match self.nodes.get(l.slot as usize).and_then(|n| n.as_ref()) {
                        Some(t) if t.level >= layer => {}
                        _ => return Err(format!("{:?} has a dangling edge on layer {layer}", node.id)),
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes the graph, parameters and generator position.
    pub fn snapshot(&self) -> Vec<u8> {
        // Live nodes are written densely in slot order.
        let mut remap = vec![NO_ENTRY; self.nodes.len()];
        let mut next = 0u32;
        for (slot, node) in self.nodes.iter().enumerate() {
            if node.is_some() {
                remap[slot] = next;
                next += 1;
            }
        }

        let mut params = Vec::new();
        put_u32(&mut params, self.dim as u32);
        put_u32(&mut params, self.params.m as u32);
        put_u32(&mut params, self.params.m0 as u32);
        put_u32(&mut params, self.params.ef_construction as u32);
        put_u32(&mut params, self.params.ef_search as u32);
        params.extend_from_slice(&self.params.ml.to_le_bytes());
        params.extend_from_slice(&self.params.rng_seed.to_le_bytes());
        params.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());

        let mut table = Vec::new();
        put_u32(&mut table, next);
        put_u32(&mut table, self.entry.map_or(NO_ENTRY, |e| remap[e as usize]));
        put_u32(&mut table, self.max_layer as u32);
        for (slot, node) in self.nodes.iter().enumerate() {
            let Some(node) = node else { continue };
            put_u32(&mut table, node.id.len() as u32);
            table.extend_from_slice(node.id.as_bytes());
            put_u32(&mut table, node.level as u32);
            for c in self.vec_of(slot as u32) {
                table.extend_from_slice(&c.to_le_bytes());
            }
        }

        let mut adjacency = Vec::new();
        for node in self.nodes.iter().flatten() {
            for links in &node.links {
                put_u32(&mut adjacency, links.len() as u32);
                for l in links {
                    put_u32(&mut adjacency, remap[l.slot as usize]);
                    adjacency.extend_from_slice(&l.score.to_le_bytes());
                }
            }
        }

        let mut out = Vec::with_capacity(8 + 24 + params.len() + table.len() + adjacency.len() + 4);
        out.extend_from_slice(MAGIC_PREFIX);
        out.extend_from_slice(FORMAT_VERSION);
        for section in [&params, &table, &adjacency] {
            out.extend_from_slice(&(section.len() as u64).to_le_bytes());
            out.extend_from_slice(section);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, AnnError> {
        if bytes.len() < 8 || &bytes[..6] != MAGIC_PREFIX {
            return Err(AnnError::CorruptSnapshot("bad magic".into()));
        }
        if &bytes[6..8] != FORMAT_VERSION {
            return Err(AnnError::VersionMismatch {
                found: String::from_utf8_lossy(&bytes[6..8]).into_owned(),
            });
        }
        if bytes.len() < 12 {
            return Err(AnnError::CorruptSnapshot("truncated".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let crc = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != crc {
            return Err(AnnError::CorruptSnapshot("checksum mismatch".into()));
        }
        Self::decode(&body[8..]).map_err(|e| AnnError::CorruptSnapshot(e.to_string()))?
    }

    fn decode(mut body: &[u8]) -> io::Result<Result<Self, AnnError>> {
        let params_bytes = read_section(&mut body)?;
        let table_bytes = read_section(&mut body)?;
        let adjacency_bytes = read_section(&mut body)?;
        if !body.is_empty() {
            return Err(invalid("trailing bytes"));
        }

        let mut p = params_bytes.as_slice();
        let dim = get_u32(&mut p)? as usize;
        let params = HnswParams {
            m: get_u32(&mut p)? as usize,
            m0: get_u32(&mut p)? as usize,
            ef_construction: get_u32(&mut p)? as usize,
            ef_search: get_u32(&mut p)? as usize,
            ml: get_f64(&mut p)?,
            rng_seed: get_u64(&mut p)?,
        };
        let mut word_pos = [0u8; 16];
        p.read_exact(&mut word_pos)?;
        let mut index = match Self::new(dim, params) {
            Ok(index) => index,
            Err(e) => return Ok(Err(e)),
        };
        index.rng.set_word_pos(u128::from_le_bytes(word_pos));

        let mut t = table_bytes.as_slice();
        let count = get_u32(&mut t)?;
        let entry = get_u32(&mut t)?;
        index.max_layer = get_u32(&mut t)? as usize;
        index.vectors.reserve(count as usize * dim);
        for slot in 0..count {
            let len = get_u32(&mut t)? as usize;
            let mut id = vec![0u8; len.min(t.len())];
            t.read_exact(&mut id)?;
            if id.len() != len {
                return Err(invalid("truncated id"));
            }
            let id = String::from_utf8(id).map_err(|_| invalid("id is not UTF-8"))?;
            let level = get_u32(&mut t)? as usize;
            if level > index.max_layer {
                return Err(invalid("node level above max layer"));
            }
            for _ in 0..dim {
                index.vectors.push(get_f64(&mut t)?);
            }
            if index.ids.insert(id.clone(), slot).is_some() {
                return Err(invalid("duplicate id"));
            }
            index.nodes.push(Some(Node {
                id,
                level,
                links: Vec::with_capacity(level + 1),
            }));
        }
        if !t.is_empty() {
            return Err(invalid("trailing node table bytes"));
        }

        let mut a = adjacency_bytes.as_slice();
        for slot in 0..count as usize {
            let level = index.nodes[slot].as_ref().expect("just pushed").level;
            for _ in 0..=level {
                let n = get_u32(&mut a)? as usize;
                let mut links = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    let target = get_u32(&mut a)?;
                    if target >= count {
                        return Err(invalid("edge to unknown node"));
                    }
                    links.push(Link {
                        slot: target,
                        score: get_f64(&mut a)?,
                    });
                }
                index.nodes[slot].as_mut().expect("just pushed").links.push(links);
            }
        }
        if !a.is_empty() {
            return Err(invalid("trailing adjacency bytes"));
        }
        index.entry = match entry {
            NO_ENTRY if count == 0 => None,
            e if e < count => Some(e),
            _ => return Err(invalid("entry point out of range")),
        };
        index.check_invariants().map_err(|e| invalid(&e))?;
        Ok(Ok(index))
    }
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_owned())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn get_u32(r: &mut &[u8]) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut &[u8]) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut &[u8]) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_section(r: &mut &[u8]) -> io::Result<Vec<u8>> {
    let len = get_u64(r)?;
    if len > r.len() as u64 {
        return Err(invalid("section length exceeds stream"));
    }
    let (section, rest) = r.split_at(len as usize);
    *r = rest;
    Ok(section.to_vec())
}

/// Exhaustive top-`k` by cosine similarity. Used as the recall oracle.
pub fn exact_search<'a, I>(store: I, query: &[f64], k: usize) -> Result<Vec<SearchHit>, AnnError>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    if k == 0 {
        return Err(AnnError::ZeroK);
    }
    let mut hits = Vec::new();
    for (id, v) in store {
        hits.push(SearchHit {
            id: id.to_owned(),
            score: metrics::cosine_slices(query, v)?,
        });
    }
    if hits.is_empty() {
        return Err(AnnError::EmptyIndex);
    }
    sort_hits(&mut hits);
    hits.truncate(k);
    Ok(hits)
}

/// Fraction of `truth` ids present in `found`.
pub fn recall(found: &[SearchHit], truth: &[SearchHit]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let hit = truth
        .iter()
        .filter(|t| found.iter().any(|f| f.id == t.id))
        .count();
    hit as f64 / truth.len() as f64
}
