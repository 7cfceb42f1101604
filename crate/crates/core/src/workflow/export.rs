use serde::{Deserialize, Serialize};

use super::model::{AnnotationItem, ItemState, QueryRecord};
use super::WorkflowError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub annotator_id: String,
    pub feedback_event_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: String,
    pub question: String,
    pub sql: String,
    pub db_id: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<String>,
}

impl ExportRecord {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("id", &self.id), ("question", &self.question), ("sql", &self.sql), ("db_id", &self.db_id)] {
            if v.trim().is_empty() {
                return Err(format!("export record field `{name}` is empty"));
            }
        }
        Ok(())
    }
}

/// One record per accepted item, in item creation order.
pub fn export_records<'a>(
    items: impl IntoIterator<Item = (&'a AnnotationItem, &'a QueryRecord)>,
    default_db: Option<&str>,
) -> Result<Vec<ExportRecord>, WorkflowError> {
    let mut rows: Vec<(&AnnotationItem, &QueryRecord)> = items
        .into_iter()
        .filter(|(item, _)| item.state() == ItemState::Accepted)
        .collect();
    rows.sort_by_key(|(item, _)| item.seq);
    if rows.is_empty() {
        return Err(WorkflowError::NothingAccepted);
    }
    let mut out = Vec::with_capacity(rows.len());
    for (item, query) in rows {
        let db_id = query
            .db_id
            .clone()
            .or_else(|| default_db.map(str::to_string))
            .ok_or_else(|| WorkflowError::InvalidInput(format!("item {} has no schema to name as db_id", item.item_id)))?;
        let provenance = match &query.provenance {
            Some(p) => p.clone(),
            None => Provenance {
                model_id: item
                    .annotation
                    .accepted_candidate()
                    .map(|c| c.model_id.clone())
                    .unwrap_or_default(),
                annotator_id: item.accepted_by.clone().unwrap_or_default(),
                feedback_event_count: item.feedback_log.len(),
            },
        };
        let record = ExportRecord {
            id: query.external_id.clone().unwrap_or_else(|| item.item_id.clone()),
            question: item.accepted_text().unwrap_or_default().to_string(),
            sql: query.normalized_sql.clone(),
            db_id,
            provenance,
        };
        record.validate().map_err(WorkflowError::InvalidInput)?;
        out.push(record);
    }
    Ok(out)
}

/// Pretty JSON array with a trailing newline.
pub fn export_json(records: &[ExportRecord]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("export records serialize");
    s.push('\n');
    s
}
