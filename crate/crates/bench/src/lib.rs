//! Inputs shared by the criterion benches.

use std::path::PathBuf;

use benchforge_core::retrieval::{EmbeddingVector, EntryKind, Payload, VectorIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// SQL text of every query in the fixture corpus.
pub fn corpus_sql() -> Vec<String> {
    let raw = std::fs::read_to_string(fixtures_dir().join("corpus.json")).expect("fixture corpus");
    let rows: Vec<serde_json::Value> = serde_json::from_str(&raw).expect("corpus is JSON");
    rows.iter()
        .filter_map(|r| r["sql"].as_str().map(str::to_string))
        .collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::normalized((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Index of `n` random unit vectors, reproducible for a given seed.
pub fn random_index(n: usize, dim: usize, seed: u64) -> VectorIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = VectorIndex::new();
    for i in 0..n {
        let payload = Payload::Example {
            item_id: format!("i{i}"),
            sql: String::new(),
            nl: String::new(),
        };
        idx.add(format!("e{i}"), EntryKind::Example, "", payload, random_vector(&mut rng, dim))
            .expect("fresh ids");
    }
    idx
}
