//! Dense retrieval over accepted annotations and table signatures.

pub mod embed;
pub mod index;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use embed::{embed, EmbedError, Embedder, EmbeddingVector, RemoteEmbedder, TrigramEmbedder, DEFAULT_DIM};
pub use index::{EntryKind, IndexError, Payload, RetrievalEntry, VectorIndex};

use crate::sql::{extract_tables_excluding, parse_sql, Dialect, SchemaCatalog, TableDef};

/// Which text of an accepted example is embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleText {
    #[default]
    SqlAndNl,
    Sql,
    Nl,
}

impl ExampleText {
    pub fn compose(&self, sql: &str, nl: &str) -> String {
        match self {
            ExampleText::SqlAndNl => format!("{sql}\n{nl}"),
            ExampleText::Sql => sql.to_string(),
            ExampleText::Nl => nl.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub sql: String,
    pub nl: String,
}

/// Search results plus a note when the configured embedder failed and the
/// default embedder answered instead.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved<T> {
    pub items: Vec<T>,
    pub fallback: Option<String>,
}

/// An index bound to the embedder that produced its vectors.
pub struct Retriever {
    embedder: Arc<dyn Embedder>,
    index: VectorIndex,
    example_text: ExampleText,
    degraded: Option<String>,
}

impl Default for Retriever {
    fn default() -> Self {
        Retriever::new(Arc::new(TrigramEmbedder::default()))
    }
}

impl Retriever {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Retriever {
            embedder,
            index: VectorIndex::new(),
            example_text: ExampleText::default(),
            degraded: None,
        }
    }

    pub fn with_example_text(mut self, mode: ExampleText) -> Self {
        self.example_text = mode;
        self
    }

    pub fn embedder_id(&self) -> String {
        self.embedder.id()
    }

    /// Why the index switched to the default embedder, if it did.
    pub fn degraded(&self) -> Option<&str> {
        self.degraded.as_deref()
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    /// Embeds for insertion. On embedder failure the whole index is
    /// re-embedded with the default embedder so dimensions stay uniform.
    fn embed_for_insert(&mut self, text: &str) -> EmbeddingVector {
        match self.embedder.embed(text) {
            Ok(v) if self.index.dim().is_none_or(|d| d == v.dim()) => v,
            Ok(v) => {
                let reason = format!("embedder returned dimension {}, index has {:?}", v.dim(), self.index.dim());
                self.degrade(reason);
                self.embedder.embed(text).expect("default embedder is infallible")
            }
            Err(e) => {
                self.degrade(e.to_string());
                self.embedder.embed(text).expect("default embedder is infallible")
            }
        }
    }

    fn degrade(&mut self, reason: String) {
        log::warn!("retrieval falling back to default embedder: {reason}");
        let fallback = TrigramEmbedder::default();
        let mut rebuilt = VectorIndex::new();
        for e in self.index.entries() {
            rebuilt
                .add(e.entry_id.clone(), e.kind, e.text.clone(), e.payload.clone(), fallback.embed_text(&e.text))
                .expect("ids were unique in the source index");
        }
        self.index = rebuilt;
        self.embedder = Arc::new(fallback);
        self.degraded = Some(reason);
    }

    pub fn add_example(&mut self, entry_id: &str, item_id: &str, sql: &str, nl: &str) -> Result<u64, IndexError> {
        let text = self.example_text.compose(sql, nl);
        let vector = self.embed_for_insert(&text);
        self.index.add(
            entry_id,
            EntryKind::Example,
            text,
            Payload::Example {
                item_id: item_id.to_string(),
                sql: sql.to_string(),
                nl: nl.to_string(),
            },
            vector,
        )
    }

    pub fn add_table(&mut self, schema_id: &str, table: &TableDef) -> Result<u64, IndexError> {
        let text = table.signature();
        let vector = self.embed_for_insert(&text);
        self.index.add(
            table_entry_id(schema_id, &table.name),
            EntryKind::TableSignature,
            text,
            Payload::Table {
                schema_id: schema_id.to_string(),
                table: table.clone(),
            },
            vector,
        )
    }

    pub fn remove(&mut self, entry_id: &str) -> bool {
        self.index.remove(entry_id).is_some()
    }

    /// Top-k entries matching `filter` for `text`. If the embedder fails on
    /// the query, the current entries are re-embedded with the default
    /// embedder for this call only.
    pub fn search(
        &self,
        text: &str,
        k: usize,
        filter: impl Fn(&RetrievalEntry) -> bool + Sync,
    ) -> Retrieved<(RetrievalEntry, f64)> {
        let query = self
            .embedder
            .embed(text)
            .map_err(|e| e.to_string())
            .and_then(|v| match self.index.dim() {
                Some(d) if d != v.dim() => Err(format!("query dimension {} does not match index {d}", v.dim())),
                _ => Ok(v),
            });
        match query {
            Ok(q) => Retrieved {
                items: self
                    .index
                    .top_k_where(&q, k, filter)
                    .into_iter()
                    .map(|(e, s)| (e.clone(), s))
                    .collect(),
                fallback: None,
            },
            Err(reason) => {
                log::warn!("query embedding failed, using default embedder: {reason}");
                let fallback = TrigramEmbedder::default();
                let mut temp = VectorIndex::new();
                for e in self.index.entries().iter().filter(|e| filter(e)) {
                    temp.add(e.entry_id.clone(), e.kind, e.text.clone(), e.payload.clone(), fallback.embed_text(&e.text))
                        .expect("ids were unique in the source index");
                }
                let q = fallback.embed_text(text);
                Retrieved {
                    items: temp.top_k(&q, k, None).into_iter().map(|(e, s)| (e.clone(), s)).collect(),
                    fallback: Some(reason),
                }
            }
        }
    }

    /// Accepted (sql, nl) pairs most similar to `sql`.
    pub fn retrieve_examples(&self, sql: &str, k: usize) -> Retrieved<ExamplePair> {
        let found = self.search(sql, k, |e| e.kind == EntryKind::Example);
        Retrieved {
            items: found
                .items
                .into_iter()
                .filter_map(|(e, _)| match e.payload {
                    Payload::Example { sql, nl, .. } => Some(ExamplePair { sql, nl }),
                    Payload::Table { .. } => None,
                })
                .collect(),
            fallback: found.fallback,
        }
    }
}

pub fn table_entry_id(schema_id: &str, table: &str) -> String {
    format!("table:{schema_id}:{}", table.to_lowercase())
}

pub fn example_entry_id(item_id: &str) -> String {
    format!("example:{item_id}")
}

/// See [`Retriever::retrieve_examples`].
pub fn retrieve_examples(retriever: &Retriever, sql: &str, k: usize) -> Vec<ExamplePair> {
    retriever.retrieve_examples(sql, k).items
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum ContextPath {
    Parsed,
    Fallback { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaContext {
    pub tables: Vec<TableDef>,
    #[serde(flatten)]
    pub path: ContextPath,
}

/// Tables for a prompt: the ones the SQL names, or, when that cannot be
/// determined, the `k_tables` signatures most similar to the raw text.
/// `exclude` lists names that are not tables (decomposition steps).
pub fn retrieve_schema_context(
    sql: &str,
    dialect: Dialect,
    catalog: &SchemaCatalog,
    retriever: &Retriever,
    k_tables: usize,
    exclude: &[&str],
) -> SchemaContext {
    let reason = match parse_sql(sql, dialect) {
        Ok(ast) => match extract_tables_excluding(&ast, catalog, exclude) {
            Ok(tables) if !tables.is_empty() => {
                return SchemaContext {
                    tables,
                    path: ContextPath::Parsed,
                }
            }
            Ok(_) => "query references no tables".to_string(),
            Err(e) => e.to_string(),
        },
        Err(e) => e.to_string(),
    };
    let k = k_tables.max(1);
    let in_index = retriever
        .index()
        .entries()
        .iter()
        .any(|e| matches!(&e.payload, Payload::Table { schema_id, .. } if *schema_id == catalog.schema_id));
    let found = if in_index {
        retriever.search(sql, k, |e| {
            matches!(&e.payload, Payload::Table { schema_id, .. } if *schema_id == catalog.schema_id)
        })
    } else {
        let mut temp = Retriever::new(retriever.embedder.clone());
        for t in &catalog.tables {
            // Catalog tables are unique by name, so ids cannot collide.
            let _ = temp.add_table(&catalog.schema_id, t);
        }
        let mut r = temp.search(sql, k, |_| true);
        if r.fallback.is_none() {
            r.fallback = temp.degraded.clone();
        }
        r
    };
    let tables = found
        .items
        .into_iter()
        .filter_map(|(e, _)| match e.payload {
            Payload::Table { table, .. } => Some(table),
            Payload::Example { .. } => None,
        })
        .collect();
    let reason = match found.fallback {
        Some(f) => format!("{reason}; embedder fallback: {f}"),
        None => reason,
    };
    SchemaContext {
        tables,
        path: ContextPath::Fallback { reason },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{load_schema, SchemaFormat};

    struct Broken;

    impl Embedder for Broken {
        fn id(&self) -> String {
            "broken".into()
        }
        fn embed(&self, _: &str) -> Result<EmbeddingVector, EmbedError> {
            Err(EmbedError::Unavailable("connection refused".into()))
        }
    }

    fn catalog() -> SchemaCatalog {
        load_schema(
            b"CREATE TABLE t (id INT); CREATE TABLE u (id INT, name TEXT); CREATE TABLE v (x INT);",
            SchemaFormat::DdlText,
            Some("s"),
        )
        .unwrap()
    }

    #[test]
    fn cold_start_has_no_examples() {
        assert!(retrieve_examples(&Retriever::default(), "SELECT 1", 3).is_empty());
    }

    #[test]
    fn accepted_example_retrieved_first() {
        let mut r = Retriever::default();
        r.add_example("example:a", "a", "SELECT name FROM u", "List the names.").unwrap();
        r.add_example("example:b", "b", "SELECT x FROM v", "Show x.").unwrap();
        let got = retrieve_examples(&r, "SELECT name FROM u", 1);
        assert_eq!(got[0].nl, "List the names.");
    }

    #[test]
    fn schema_context_parse_path() {
        let ctx = retrieve_schema_context("SELECT a FROM t JOIN u ON t.id = u.id", Dialect::Generic, &catalog(), &Retriever::default(), 2, &[]);
        assert_eq!(ctx.path, ContextPath::Parsed);
        let names: Vec<_> = ctx.tables.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, vec!["t", "u"]);
    }

    #[test]
    fn schema_context_fallback_on_unknown_table() {
        let ctx = retrieve_schema_context("SELECT name FROM nowhere", Dialect::Generic, &catalog(), &Retriever::default(), 2, &[]);
        assert!(matches!(ctx.path, ContextPath::Fallback { ref reason } if reason.contains("nowhere")));
        assert_eq!(ctx.tables.len(), 2);
    }

    #[test]
    fn broken_embedder_degrades_and_records_reason() {
        let mut r = Retriever::new(Arc::new(Broken));
        r.add_example("example:a", "a", "SELECT 1", "One.").unwrap();
        assert!(r.degraded().unwrap().contains("connection refused"));
        assert_eq!(retrieve_examples(&r, "SELECT 1", 1).len(), 1);

        let ctx = retrieve_schema_context("garbage ((", Dialect::Generic, &catalog(), &Retriever::new(Arc::new(Broken)), 1, &[]);
        assert!(matches!(ctx.path, ContextPath::Fallback { ref reason } if reason.contains("embedder fallback")));
        assert_eq!(ctx.tables.len(), 1);
    }
}
