//! Deterministic offline backend used by tests and smoke pipelines.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::backend::{BackendError, CompletionBackend, GenerationParams};
use super::prompt::{fenced_after, section, QUESTION_HEADING, SUBS_HEADING, TABLES_HEADING, TARGET_HEADING};
use crate::sql::{parse_sql, render_sql, Dialect};

pub const MOCK_MODEL_ID: &str = "mock-template-v1";

/// Known (SQL, question) pairs. The mock answers describe and merge prompts
/// for a known SQL with its question, and backtranslation prompts for a
/// known question with its SQL.
#[derive(Debug, Clone, Default)]
pub struct Phrasebook {
    by_sql: HashMap<String, String>,
    by_nl: HashMap<String, String>,
}

pub fn canonical_sql(sql: &str) -> String {
    for d in [Dialect::Generic, Dialect::Sqlite, Dialect::MitWarehouse] {
        if let Ok(ast) = parse_sql(sql, d) {
            return render_sql(&ast);
        }
    }
    sql.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn normalize_nl(nl: &str) -> String {
    nl.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .trim_end_matches(['.', '?', '!'])
        .to_string()
}

impl Phrasebook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sql: &str, question: &str) {
        self.by_sql.insert(canonical_sql(sql), question.trim().to_string());
        self.by_nl.insert(normalize_nl(question), sql.trim().to_string());
    }

    pub fn len(&self) -> usize {
        self.by_sql.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_sql.is_empty()
    }

    pub fn question_for(&self, sql: &str) -> Option<&str> {
        self.by_sql.get(&canonical_sql(sql)).map(String::as_str)
    }

    pub fn sql_for(&self, question: &str) -> Option<&str> {
        self.by_nl.get(&normalize_nl(question)).map(String::as_str)
    }

    /// Reads a benchmark-style JSON array of `{question, query|SQL|sql}`;
    /// entries without a question are skipped.
    pub fn from_benchmark_json(input: &[u8]) -> Result<Self, serde_json::Error> {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_slice(input)?;
        let mut book = Phrasebook::new();
        for row in rows {
            let question = row.get("question").and_then(|v| v.as_str());
            let sql = ["query", "SQL", "sql"]
                .iter()
                .find_map(|k| row.get(*k).and_then(|v| v.as_str()));
            if let (Some(q), Some(s)) = (question, sql) {
                if !q.trim().is_empty() {
                    book.insert(s, q);
                }
            }
        }
        Ok(book)
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_benchmark_json(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Seeded template filler. The RNG seed mixes `params.seed` with the prompt
/// digest, so equal (prompt, seed) pairs give byte-identical output.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    phrasebook: Phrasebook,
}

struct PromptTable {
    name: String,
    columns: Vec<String>,
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if !s[start..].trim().is_empty() {
        out.push(s[start..].trim());
    }
    out
}

fn prompt_tables(prompt: &str) -> Vec<PromptTable> {
    section(prompt, TABLES_HEADING)
        .into_iter()
        .filter_map(|line| {
            let open = line.find('(')?;
            let inner = line[open + 1..].strip_suffix(')')?;
            Some(PromptTable {
                name: line[..open].to_string(),
                columns: split_top_level(inner)
                    .into_iter()
                    .filter_map(|c| c.split_whitespace().next().map(str::to_string))
                    .collect(),
            })
        })
        .collect()
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn humanize(ident: &str) -> String {
    ident.replace('_', " ")
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

fn strip_end(s: &str) -> &str {
    s.trim().trim_end_matches(['.', '?', '!'])
}

fn lower_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn upper_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_phrasebook(phrasebook: Phrasebook) -> Self {
        MockBackend { phrasebook }
    }

    pub fn phrasebook(&self) -> &Phrasebook {
        &self.phrasebook
    }

    fn rng(prompt: &str, params: &GenerationParams) -> ChaCha8Rng {
        let digest = Sha256::digest(prompt.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(head) ^ params.seed.unwrap_or(0))
    }

    fn describe(&self, prompt: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
        let sql = fenced_after(prompt, TARGET_HEADING).unwrap_or("");
        let tables = prompt_tables(prompt);
        let sql_words = words(sql);
        let used: Vec<&PromptTable> = tables
            .iter()
            .filter(|t| sql_words.contains(&t.name.to_lowercase()))
            .collect();
        let mut cols: Vec<String> = Vec::new();
        for w in &sql_words {
            let is_col = used.iter().any(|t| t.columns.iter().any(|c| c.eq_ignore_ascii_case(w)));
            if is_col && !cols.iter().any(|c| c == w) {
                cols.push(w.clone());
            }
        }
        cols.truncate(3);
        let table_phrase = if used.is_empty() {
            "the data".to_string()
        } else {
            join_list(&used.iter().map(|t| humanize(&t.name)).collect::<Vec<_>>())
        };
        let col_phrase = if cols.is_empty() {
            "the requested values".to_string()
        } else {
            join_list(&cols.iter().map(|c| humanize(c)).collect::<Vec<_>>())
        };
        let has = |kw: &str| sql_words.iter().any(|w| w == kw);
        let mut qualifiers = vec![String::new()];
        if has("where") {
            qualifiers = vec![
                " that satisfy the filter conditions".to_string(),
                " matching the given criteria".to_string(),
            ];
        }
        if has("group") {
            for q in qualifiers.iter_mut() {
                q.push_str(", computed per group");
            }
        }
        if has("order") {
            for q in qualifiers.iter_mut() {
                q.push_str(", in sorted order");
            }
        }
        let templates: [fn(&str, &str, &str) -> String; 8] = [
            |c, t, q| format!("Show the {c} of {t}{q}."),
            |c, t, q| format!("What are the {c} for each entry in {t}{q}?"),
            |c, t, q| format!("List {c} from {t}{q}."),
            |c, t, q| format!("Retrieve {c} drawn from {t}{q}."),
            |c, t, q| format!("Give me the {c} found in {t}{q}."),
            |c, t, q| format!("For {t}, report {c}{q}."),
            |c, t, q| format!("I need the {c} of {t}{q}."),
            |c, t, q| format!("Which {c} appear in {t}{q}?"),
        ];
        let mut pool: Vec<String> = Vec::new();
        for q in &qualifiers {
            for t in templates {
                pool.push(t(&col_phrase, &table_phrase, q));
            }
        }
        pool.shuffle(rng);
        if let Some(question) = self.phrasebook.question_for(sql) {
            pool.insert(0, question.to_string());
        }
        pool
    }

    fn merge(&self, prompt: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
        let sql = fenced_after(prompt, TARGET_HEADING).unwrap_or("");
        let mut steps = Vec::new();
        let mut final_nl = String::new();
        for line in section(prompt, SUBS_HEADING) {
            if let Some((name, nl)) = line.split_once(": ") {
                if name == "final" {
                    final_nl = strip_end(nl).to_string();
                } else {
                    steps.push(lower_first(strip_end(nl)));
                }
            }
        }
        let step_list = join_list(&steps);
        let fin = strip_end(&final_nl);
        let fin_lc = lower_first(fin);
        let mut pool = vec![
            format!("{}, where the steps {}.", upper_first(fin), step_list),
            format!("First {step_list}, then {fin_lc}."),
            format!("{} (based on: {}).", upper_first(fin), steps.join("; ")),
            format!("Using the result of the steps that {step_list}, {fin_lc}."),
            format!("{}. Based on that, {}.", upper_first(&step_list), fin_lc),
            format!("{} after the preliminary steps {}.", upper_first(fin), step_list),
        ];
        pool.shuffle(rng);
        if let Some(question) = self.phrasebook.question_for(sql) {
            pool.insert(0, question.to_string());
        }
        pool
    }

    fn backtranslate(&self, prompt: &str) -> String {
        let question = section(prompt, QUESTION_HEADING).join(" ");
        if let Some(sql) = self.phrasebook.sql_for(&question) {
            return format!("```sql\n{sql}\n```");
        }
        let q_words = words(&question);
        let tables = prompt_tables(prompt);
        let mentions = |name: &str| {
            let n = name.to_lowercase();
            let singular = n.strip_suffix('s').unwrap_or(&n).to_string();
            q_words.iter().position(|w| *w == n || *w == singular)
        };
        let chosen = tables
            .iter()
            .filter_map(|t| mentions(&t.name).map(|p| (p, t)))
            .min_by_key(|(p, _)| *p)
            .map(|(_, t)| t)
            .or(tables.first());
        let sql = match chosen {
            None => "SELECT 1".to_string(),
            Some(t) => {
                let text = q_words.join(" ");
                let cols: Vec<&str> = t
                    .columns
                    .iter()
                    .filter(|c| {
                        let c = c.to_lowercase();
                        q_words.contains(&c) || (c.contains('_') && text.contains(&humanize(&c)))
                    })
                    .map(String::as_str)
                    .collect();
                let list = if cols.is_empty() { "*".to_string() } else { cols.join(", ") };
                format!("SELECT {list} FROM {}", t.name)
            }
        };
        format!("```sql\n{sql}\n```")
    }
}

impl CompletionBackend for MockBackend {
    fn model_id(&self, _params: &GenerationParams) -> String {
        MOCK_MODEL_ID.to_string()
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<String>, BackendError> {
        let mut rng = Self::rng(prompt, params);
        let n = params.n_candidates;
        if prompt.lines().any(|l| l == QUESTION_HEADING) {
            return Ok(vec![self.backtranslate(prompt); n]);
        }
        let pool = if prompt.lines().any(|l| l == SUBS_HEADING) {
            self.merge(prompt, &mut rng)
        } else {
            self.describe(prompt, &mut rng)
        };
        Ok(pool.into_iter().take(n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::prompt::{build_backtranslation_prompt, build_prompt, PromptContext, DESCRIBE_TEMPLATE};
    use crate::sql::{ColumnDef, TableDef};

    fn t() -> TableDef {
        TableDef {
            name: "t".into(),
            columns: ["a", "b"]
                .iter()
                .map(|c| ColumnDef {
                    name: c.to_string(),
                    data_type: "DECIMAL(10,2)".into(),
                    nullable: true,
                })
                .collect(),
            primary_key: vec![],
        }
    }

    #[test]
    fn table_lines_survive_commas_in_types() {
        let p = build_backtranslation_prompt("x", &[t()]);
        let tables = prompt_tables(&p);
        assert_eq!(tables[0].columns, vec!["a", "b"]);
    }

    #[test]
    fn describe_is_seeded_and_distinct() {
        let ctx = PromptContext {
            target_sql: "SELECT a FROM t".into(),
            tables: vec![t()],
            ..Default::default()
        };
        let p = build_prompt(&ctx, DESCRIBE_TEMPLATE).unwrap();
        let params = GenerationParams::default();
        let m = MockBackend::new();
        let a = m.complete(&p, &params).unwrap();
        assert_eq!(a, m.complete(&p, &params).unwrap());
        assert_eq!(a.len(), 4);
        let mut d = a.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn phrasebook_round_trip() {
        let mut book = Phrasebook::new();
        book.insert("select a from t", "What is a?");
        assert_eq!(book.question_for("SELECT a  FROM t"), Some("What is a?"));
        assert_eq!(book.sql_for("what is a"), Some("select a from t"));
    }

    #[test]
    fn backtranslate_heuristic_uses_mentioned_table() {
        let p = build_backtranslation_prompt("Show column a of every t row", &[t()]);
        let out = MockBackend::new().complete(&p, &GenerationParams::default()).unwrap();
        assert_eq!(out[0], "```sql\nSELECT a FROM t\n```");
    }
}
