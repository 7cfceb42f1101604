use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::EmbeddingVector;
use crate::sql::TableDef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Example,
    TableSignature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Example { item_id: String, sql: String, nl: String },
    Table { schema_id: String, table: TableDef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEntry {
    pub entry_id: String,
    pub kind: EntryKind,
    pub text: String,
    pub payload: Payload,
    pub vector: EmbeddingVector,
    pub insertion_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Scoring switches to rayon above this many candidates.
const PARALLEL_THRESHOLD: usize = 4096;

/// Exact in-memory index: every query is a full linear scan.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    entries: Vec<RetrievalEntry>,
    ids: HashSet<String>,
    next_seq: u64,
    dim: Option<usize>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn entries(&self) -> &[RetrievalEntry] {
        &self.entries
    }

    pub fn contains(&self, entry_id: &str) -> bool {
        self.ids.contains(entry_id)
    }

    pub fn add(
        &mut self,
        entry_id: impl Into<String>,
        kind: EntryKind,
        text: impl Into<String>,
        payload: Payload,
        vector: EmbeddingVector,
    ) -> Result<u64, IndexError> {
        let entry_id = entry_id.into();
        if self.ids.contains(&entry_id) {
            return Err(IndexError::DuplicateId(entry_id));
        }
        match self.dim {
            Some(d) if d != vector.dim() => {
                return Err(IndexError::DimensionMismatch {
                    expected: d,
                    got: vector.dim(),
                })
            }
            None => self.dim = Some(vector.dim()),
            _ => {}
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.ids.insert(entry_id.clone());
        self.entries.push(RetrievalEntry {
            entry_id,
            kind,
            text: text.into(),
            payload,
            vector,
            insertion_seq: seq,
        });
        Ok(seq)
    }

    /// Removes an entry; sequence numbers of the others are kept.
    pub fn remove(&mut self, entry_id: &str) -> Option<RetrievalEntry> {
        if !self.ids.remove(entry_id) {
            return None;
        }
        let pos = self.entries.iter().position(|e| e.entry_id == entry_id)?;
        Some(self.entries.remove(pos))
    }

    pub fn top_k(&self, query: &EmbeddingVector, k: usize, kind: Option<EntryKind>) -> Vec<(&RetrievalEntry, f64)> {
        self.top_k_where(query, k, |e| kind.is_none_or(|want| e.kind == want))
    }

    /// Highest cosine first; ties by ascending insertion sequence. A zero
    /// query scores everything 0, which yields the oldest `k` entries.
    pub fn top_k_where(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: impl Fn(&RetrievalEntry) -> bool + Sync,
    ) -> Vec<(&RetrievalEntry, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let zero = query.is_zero();
        let score = |e: &RetrievalEntry| if zero { 0.0 } else { query.dot(&e.vector) };
        let mut scored: Vec<(&RetrievalEntry, f64)> = if self.entries.len() > PARALLEL_THRESHOLD {
            self.entries.par_iter().filter(|e| filter(e)).map(|e| (e, score(e))).collect()
        } else {
            self.entries.iter().filter(|e| filter(e)).map(|e| (e, score(e))).collect()
        };
        let order = |a: &(&RetrievalEntry, f64), b: &(&RetrievalEntry, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then(a.0.insertion_seq.cmp(&b.0.insertion_seq))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        scored
    }
}

#[cfg(test)]
mod tests {
    use super::super::embed::TrigramEmbedder;
    use super::*;

    fn example(i: usize) -> Payload {
        Payload::Example {
            item_id: format!("i{i}"),
            sql: String::new(),
            nl: String::new(),
        }
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = VectorIndex::new();
        let q = TrigramEmbedder::default().embed_text("x");
        assert!(idx.top_k(&q, 3, None).is_empty());
    }

    #[test]
    fn self_similarity_ranks_first() {
        let e = TrigramEmbedder::default();
        let mut idx = VectorIndex::new();
        for (i, t) in ["SELECT a FROM t", "SELECT name FROM students", "DELETE FROM x"].iter().enumerate() {
            idx.add(format!("e{i}"), EntryKind::Example, *t, example(i), e.embed_text(t)).unwrap();
        }
        let hits = idx.top_k(&e.embed_text("SELECT name FROM students"), 2, None);
        assert_eq!(hits[0].0.entry_id, "e1");
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_query_returns_oldest() {
        let e = TrigramEmbedder::default();
        let mut idx = VectorIndex::new();
        for i in 0..5 {
            idx.add(format!("e{i}"), EntryKind::Example, format!("text {i}"), example(i), e.embed_text(&format!("text {i}")))
                .unwrap();
        }
        let hits = idx.top_k(&EmbeddingVector::zeros(256), 3, None);
        let ids: Vec<_> = hits.iter().map(|h| h.0.entry_id.as_str()).collect();
        assert_eq!(ids, vec!["e0", "e1", "e2"]);
        assert!(hits.iter().all(|h| h.1 == 0.0));
    }

    #[test]
    fn ties_break_by_insertion_order() {
        let e = TrigramEmbedder::default();
        let mut idx = VectorIndex::new();
        for i in 0..4 {
            idx.add(format!("e{i}"), EntryKind::Example, "same", example(i), e.embed_text("same")).unwrap();
        }
        let ids: Vec<_> = idx.top_k(&e.embed_text("same"), 4, None).iter().map(|h| h.0.insertion_seq).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn kind_filter_and_duplicates() {
        let e = TrigramEmbedder::default();
        let mut idx = VectorIndex::new();
        idx.add("a", EntryKind::Example, "x", example(0), e.embed_text("x")).unwrap();
        assert_eq!(
            idx.add("a", EntryKind::Example, "x", example(0), e.embed_text("x")),
            Err(IndexError::DuplicateId("a".into()))
        );
        assert!(idx.top_k(&e.embed_text("x"), 5, Some(EntryKind::TableSignature)).is_empty());
        assert!(matches!(
            idx.add("b", EntryKind::Example, "x", example(0), EmbeddingVector::zeros(3)),
            Err(IndexError::DimensionMismatch { .. })
        ));
        assert!(idx.remove("a").is_some());
        assert!(idx.is_empty());
    }
}
