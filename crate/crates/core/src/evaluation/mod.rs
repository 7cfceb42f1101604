//! Backtranslation, execution-based comparison, the fidelity rubric and
//! surface metrics.

pub mod compare;
pub mod exec;
pub mod metrics;
pub mod rubric;

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{exec_accuracy_match, results_match};
pub use exec::{ExecBackend, ExecError, ExecErrorKind, ResultTable, SqliteDb, Value};
pub use metrics::{bleu, exact_match, rouge_l, tokenize};
pub use rubric::{classify_rubric, RubricJudgment, RubricReason};

use crate::generation::{build_backtranslation_prompt, CompletionBackend, GenerationError, GenerationParams};
use crate::sql::SchemaCatalog;
use crate::workflow::{WorkflowError, Workspace};

pub const REPORT_JSON: &str = "eval_report.json";
pub const REPORT_TEXT: &str = "eval_report.txt";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("project has no accepted items to evaluate")]
    NoAcceptedItems,
    #[error("project has no schema catalog")]
    MissingSchema,
    #[error("no evaluation report for project `{0}`")]
    NoReport(String),
    #[error("item `{0}` is not in the report")]
    UnknownItem(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fixture database: {0}")]
    Fixture(String),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::NoAcceptedItems => "NoAcceptedItems",
            EvalError::MissingSchema => "MissingSchema",
            EvalError::NoReport(_) => "NoReport",
            EvalError::UnknownItem(_) => "ItemNotFound",
            EvalError::InvalidInput(_) => "InvalidInput",
            EvalError::Fixture(_) => "FixtureError",
            EvalError::Generation(e) => WorkflowError::Generation(e.clone()).code(),
            EvalError::Workflow(e) => e.code(),
            EvalError::Io(_) => "IoError",
        }
    }
}

/// Body of the first ``` fence, or the trimmed text when there is none.
pub fn strip_fence(text: &str) -> String {
    let t = text.trim();
    let Some(start) = t.find("```") else {
        return t.to_string();
    };
    let after = &t[start + 3..];
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => after,
    };
    let body = match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    };
    body.trim().to_string()
}

/// Regenerates SQL from `nl` given only the catalog tables; no examples.
pub fn backtranslate(
    nl: &str,
    catalog: &SchemaCatalog,
    backend: &dyn CompletionBackend,
    params: &GenerationParams,
) -> Result<String, EvalError> {
    if nl.trim().is_empty() {
        return Err(EvalError::InvalidInput("description to backtranslate is empty".into()));
    }
    let prompt = build_backtranslation_prompt(nl, &catalog.tables);
    let params = GenerationParams {
        n_candidates: 1,
        ..params.clone()
    };
    let texts = backend.complete(&prompt, &params).map_err(GenerationError::from)?;
    texts
        .iter()
        .map(|t| strip_fence(t))
        .find(|t| !t.is_empty())
        .ok_or(EvalError::Generation(GenerationError::EmptyCompletion))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEvaluation {
    pub item_id: String,
    pub question: String,
    pub original_sql: String,
    pub regenerated_sql: String,
    pub judgment: RubricJudgment,
    /// The automated judgment, kept when a human overrides `judgment`.
    pub auto_judgment: RubricJudgment,
    pub exec_match: bool,
    pub exact_match: bool,
    /// Against the reference question ingested with the item, if any.
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregates {
    pub item_count: usize,
    /// Counts for levels 1 through 5.
    pub level_histogram: [usize; 5],
    pub execution_accuracy: f64,
    pub exact_match_rate: f64,
    pub mean_bleu: Option<f64>,
    pub mean_rouge_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub project_id: String,
    pub model_id: String,
    pub generated_at: DateTime<Utc>,
    pub items: Vec<ItemEvaluation>,
    pub aggregates: EvalAggregates,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalAggregates {
    pub fn compute(items: &[ItemEvaluation]) -> Self {
        let n = items.len();
        let mut level_histogram = [0; 5];
        for it in items {
            level_histogram[usize::from(it.judgment.level.clamp(1, 5)) - 1] += 1;
        }
        let rate = |f: fn(&ItemEvaluation) -> bool| {
            if n == 0 {
                0.0
            } else {
                items.iter().filter(|i| f(i)).count() as f64 / n as f64
            }
        };
        EvalAggregates {
            item_count: n,
            level_histogram,
            execution_accuracy: rate(|i| i.exec_match),
            exact_match_rate: rate(|i| i.exact_match),
            mean_bleu: mean(items.iter().filter_map(|i| i.bleu)),
            mean_rouge_l: mean(items.iter().filter_map(|i| i.rouge_l)),
        }
    }
}

impl EvalReport {
    /// Replaces an item's judgment with a human one and refreshes aggregates.
    pub fn override_level(&mut self, item_id: &str, judgment: RubricJudgment) -> Result<(), EvalError> {
        let item = self
            .items
            .iter_mut()
            .find(|i| i.item_id == item_id)
            .ok_or_else(|| EvalError::UnknownItem(item_id.to_string()))?;
        item.judgment = judgment;
        self.aggregates = EvalAggregates::compute(&self.items);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text level histogram with the headline aggregates.
    pub fn histogram_text(&self) -> String {
        let a = &self.aggregates;
        let mut out = String::new();
        let _ = writeln!(out, "project: {}", self.project_id);
        let _ = writeln!(out, "items: {}", a.item_count);
        for (i, count) in a.level_histogram.iter().enumerate() {
            let share = if a.item_count == 0 {
                0.0
            } else {
                100.0 * *count as f64 / a.item_count as f64
            };
            let _ = writeln!(out, "level {} | {:<40} {:>4} ({:5.1}%)", i + 1, "#".repeat(*count.min(&40)), count, share);
        }
        let _ = writeln!(out, "execution accuracy: {:.4}", a.execution_accuracy);
        let _ = writeln!(out, "exact match: {:.4}", a.exact_match_rate);
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "mean bleu: {}", fmt(a.mean_bleu));
        let _ = writeln!(out, "mean rouge-l: {}", fmt(a.mean_rouge_l));
        out
    }

    /// Writes the JSON report to `path` and the histogram next to it with a
    /// `.txt` extension.
    pub fn write_to(&self, path: &Path) -> Result<(), EvalError> {
        let io = |p: &Path, e: std::io::Error| EvalError::Io(format!("{}: {e}", p.display()));
        std::fs::write(path, self.to_json()).map_err(|e| io(path, e))?;
        let txt = path.with_extension("txt");
        std::fs::write(&txt, self.histogram_text()).map_err(|e| io(&txt, e))
    }
}

fn save_report(ws: &Workspace, report: &EvalReport) -> Result<(), EvalError> {
    ws.save_artifact(&report.project_id, REPORT_JSON, report.to_json().as_bytes())?;
    ws.save_artifact(&report.project_id, REPORT_TEXT, report.histogram_text().as_bytes())?;
    Ok(())
}

/// Backtranslates every accepted item, grades it and stores the report
/// with the project.
pub fn evaluate_project(ws: &Workspace, project_id: &str, db: &dyn ExecBackend) -> Result<EvalReport, EvalError> {
    let project = ws.project(project_id)?;
    let accepted = ws.accepted_items(project_id)?;
    if accepted.is_empty() {
        return Err(EvalError::NoAcceptedItems);
    }
    let catalog = ws.catalog(project_id)?.ok_or(EvalError::MissingSchema)?;
    let backend = ws.backend();
    let params = &project.config.generation;
    let items = accepted
        .par_iter()
        .map(|a| {
            let regen = backtranslate(&a.question, &catalog, backend.as_ref(), params)?;
            let judgment = classify_rubric(&a.sql, &regen, db, &catalog);
            let reference = a.reference_question.as_deref();
            Ok(ItemEvaluation {
                item_id: a.item_id.clone(),
                question: a.question.clone(),
                original_sql: a.sql.clone(),
                exec_match: exec_accuracy_match(&regen, &a.sql, db),
                exact_match: exact_match(&regen, &a.sql),
                bleu: reference.map(|r| bleu(&a.question, &[r])),
                rouge_l: reference.map(|r| rouge_l(&a.question, r)),
                reference_question: a.reference_question.clone(),
                regenerated_sql: regen,
                auto_judgment: judgment.clone(),
                judgment,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let report = EvalReport {
        project_id: project_id.to_string(),
        model_id: backend.model_id(params),
        generated_at: ws.now(),
        aggregates: EvalAggregates::compute(&items),
        items,
    };
    save_report(ws, &report)?;
    Ok(report)
}

pub fn load_report(ws: &Workspace, project_id: &str) -> Result<EvalReport, EvalError> {
    let bytes = ws
        .load_artifact(project_id, REPORT_JSON)?
        .ok_or_else(|| EvalError::NoReport(project_id.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| EvalError::Io(format!("{REPORT_JSON}: {e}")))
}

/// Records a human rubric level for one item of the stored report.
pub fn override_rubric(
    ws: &Workspace,
    project_id: &str,
    item_id: &str,
    level: u8,
    annotator_id: &str,
    note: &str,
) -> Result<EvalReport, EvalError> {
    let judgment = RubricJudgment::human(level, annotator_id, note).map_err(EvalError::InvalidInput)?;
    let mut report = load_report(ws, project_id)?;
    report.override_level(item_id, judgment)?;
    save_report(ws, &report)?;
    Ok(report)
}
