use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::generation::{Candidate, CandidateStatus, GenerationParams, DESCRIBE_TEMPLATE};
use crate::sql::{DecompositionPlan, Dialect};

pub const DEFAULT_LEASE_TTL_SECS: i64 = 30 * 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    SqlToNl,
    /// Reserved; rejected when a project is configured.
    TextToSql,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub generation: GenerationParams,
    pub template_id: String,
    pub k_examples: usize,
    pub k_tables: usize,
    pub lease_ttl_secs: i64,
    pub direction: Direction,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            generation: GenerationParams::default(),
            template_id: DESCRIBE_TEMPLATE.to_string(),
            k_examples: 3,
            k_tables: 5,
            lease_ttl_secs: DEFAULT_LEASE_TTL_SECS,
            direction: Direction::SqlToNl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: String,
    pub name: String,
    pub dialect: Dialect,
    #[serde(default)]
    pub schema_id: Option<String>,
    pub config: ProjectConfig,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub raw_sql: String,
    pub normalized_sql: String,
    pub source_tag: String,
    pub is_nested: bool,
    #[serde(default)]
    pub decomposition: Option<DecompositionPlan>,
    /// Why a nested query is annotated whole.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition_note: Option<String>,
    /// Question shipped with a benchmark-format input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_id: Option<String>,
    /// Record id carried over from an imported export.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<super::export::Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemState {
    Pending,
    Drafted,
    InReview,
    Accepted,
    Discarded,
}

impl ItemState {
    pub fn as_str(&self) -> &'static str {
        match self {
            ItemState::Pending => "pending",
            ItemState::Drafted => "drafted",
            ItemState::InReview => "in_review",
            ItemState::Accepted => "accepted",
            ItemState::Discarded => "discarded",
        }
    }
}

impl std::str::FromStr for ItemState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(ItemState::Pending),
            "drafted" => Ok(ItemState::Drafted),
            "in_review" => Ok(ItemState::InReview),
            "accepted" => Ok(ItemState::Accepted),
            "discarded" => Ok(ItemState::Discarded),
            other => Err(format!("unknown item state `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub annotator_id: String,
    pub expires_at: DateTime<Utc>,
}

impl Lease {
    pub fn live_at(&self, now: DateTime<Utc>) -> bool {
        now < self.expires_at
    }
}

/// The annotatable part shared by items and decomposition sub-items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub state: ItemState,
    pub candidates: Vec<Candidate>,
    pub refinement_notes: Vec<String>,
    #[serde(default)]
    pub accepted_text: Option<String>,
    #[serde(default)]
    pub last_prompt_hash: Option<String>,
    #[serde(default)]
    pub flag_reason: Option<String>,
}

impl Annotation {
    pub fn new() -> Self {
        Annotation {
            state: ItemState::Pending,
            candidates: Vec::new(),
            refinement_notes: Vec::new(),
            accepted_text: None,
            last_prompt_hash: None,
            flag_reason: None,
        }
    }

    pub fn candidate(&self, id: &str) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.candidate_id == id)
    }

    pub fn accepted_candidate(&self) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.status == CandidateStatus::Accepted)
    }

    /// Candidates the annotator can still act on.
    pub fn live_candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.status != CandidateStatus::Discarded)
    }
}

impl Default for Annotation {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubItem {
    /// `step_k` or `final`.
    pub name: String,
    pub sql: String,
    #[serde(flatten)]
    pub annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub item_id: String,
    pub query_id: String,
    pub seq: u64,
    pub sql: String,
    #[serde(flatten)]
    pub annotation: Annotation,
    #[serde(default)]
    pub sub_items: Vec<SubItem>,
    pub feedback_log: Vec<super::events::FeedbackEvent>,
    #[serde(default)]
    pub lease: Option<Lease>,
    /// Source of the next candidate id (`c{n}`), shared with sub-items.
    pub next_candidate: u64,
    pub created_at: DateTime<Utc>,
    /// Annotator who accepted the item.
    #[serde(default)]
    pub accepted_by: Option<String>,
}

/// Which annotation an event applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Item,
    Sub(String),
}

impl AnnotationItem {
    pub fn state(&self) -> ItemState {
        self.annotation.state
    }

    pub fn accepted_text(&self) -> Option<&str> {
        self.annotation.accepted_text.as_deref()
    }

    /// Sub-items must all be accepted before the item itself is described.
    pub fn active_target(&self) -> Target {
        match self.sub_items.iter().find(|s| s.annotation.state != ItemState::Accepted) {
            Some(s) if self.annotation.state == ItemState::Pending => Target::Sub(s.name.clone()),
            _ => Target::Item,
        }
    }

    pub fn annotation(&self, target: &Target) -> Option<&Annotation> {
        match target {
            Target::Item => Some(&self.annotation),
            Target::Sub(name) => self.sub_items.iter().find(|s| s.name == *name).map(|s| &s.annotation),
        }
    }

    pub fn annotation_mut(&mut self, target: &Target) -> Option<&mut Annotation> {
        match target {
            Target::Item => Some(&mut self.annotation),
            Target::Sub(name) => self
                .sub_items
                .iter_mut()
                .find(|s| s.name == *name)
                .map(|s| &mut s.annotation),
        }
    }

    pub fn target_sql(&self, target: &Target) -> Option<&str> {
        match target {
            Target::Item => Some(&self.sql),
            Target::Sub(name) => self.sub_items.iter().find(|s| s.name == *name).map(|s| s.sql.as_str()),
        }
    }

    pub fn lease_holder(&self, now: DateTime<Utc>) -> Option<&str> {
        self.lease
            .as_ref()
            .filter(|l| l.live_at(now))
            .map(|l| l.annotator_id.as_str())
    }
}
