use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use millstone_core::model::{CorpusId, Document, Embedding, PartKey};
use millstone_core::store::{Store, StoreOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_doc(rng: &mut ChaCha8Rng, corpus: &CorpusId, i: usize) -> Document {
    let mut doc = Document::new(format!("D{i:05}"), corpus.clone())
        .with_part(PartKey::Title, format!("title {}", rng.random::<u32>()))
        .with_meta("year", rng.random_range(1990..2024).to_string());
    if rng.random_bool(0.5) {
        doc = doc.with_part(PartKey::Abstract, "ünïcode abstract \"quoted\"\nline two");
    }
    if rng.random_bool(0.7) {
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        doc.embedding = Some(Embedding::new(v).unwrap());
    }
    doc
}

fn fingerprint<'a>(docs: impl Iterator<Item = &'a Document>) -> u64 {
    let mut lines: Vec<String> = docs
        .map(|d| {
            let bits: Vec<u64> = d
                .embedding
                .iter()
                .flat_map(|e| e.as_slice().iter().map(|c| c.to_bits()))
                .collect();
            let mut bare = d.clone();
            bare.embedding = None;
            format!("{}|{:?}", bare.to_json(), bits)
        })
        .collect();
    lines.sort();
    let mut h = DefaultHasher::new();
    lines.hash(&mut h);
    h.finish()
}

#[test]
fn thousand_documents_read_back_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = CorpusId::new("semanticscholar").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let docs: Vec<Document> = (0..1000).map(|i| random_doc(&mut rng, &corpus, i)).collect();
    let opts = StoreOptions {
        compact_threshold: 300,
        ..StoreOptions::default()
    };
    {
        let store = Store::open(dir.path(), opts.clone()).unwrap();
        for d in &docs {
            store.put(d.clone()).unwrap();
        }
    }
    let store = Store::open(dir.path(), opts).unwrap();
    assert_eq!(store.len(&corpus), 1000);

    let mut order: Vec<&Document> = docs.iter().collect();
    order.shuffle(&mut rng);
    for d in &order {
        assert_eq!(*store.get(&corpus, &d.id).unwrap(), **d);
    }
    let read: Vec<Document> = store.scan(&corpus).unwrap().map(|d| (*d).clone()).collect();
    assert_eq!(fingerprint(read.iter()), fingerprint(docs.iter()));
}
