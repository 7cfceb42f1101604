//! Projects, ingestion, the annotation state machine and export.

pub mod events;
pub mod export;
pub mod ingest;
pub mod model;
pub mod service;
pub mod store;

use thiserror::Error;

pub use events::{transition_allowed, EventBody, Feedback, FeedbackEvent, FeedbackKind, ItemEvent};
pub use export::{export_json, export_records, ExportRecord, ExportSummary, Provenance};
pub use ingest::{read_log, split_sql_statements, IngestFailure, IngestReport, LogFormat};
pub use model::{
    Annotation, AnnotationItem, Direction, ItemState, Lease, Project, ProjectConfig, QueryRecord, SubItem, Target,
    DEFAULT_LEASE_TTL_SECS,
};
pub use service::{AcceptedItem, Clock, IngestOptions, ItemView, ManualClock, SystemClock, Workspace};
pub use store::{FileStore, MemoryStore, Store};

use crate::generation::GenerationError;
use crate::sql::SchemaError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorkflowError {
    #[error("a project named `{0}` already exists")]
    DuplicateName(String),
    #[error("no project `{0}`")]
    ProjectNotFound(String),
    #[error("no item `{0}`")]
    ItemNotFound(String),
    #[error("no pending item is available")]
    QueueEmpty,
    #[error("lease mismatch: {0}")]
    LeaseMismatch(String),
    #[error("invalid transition: cannot {event} while {state}")]
    InvalidTransition { state: String, event: String },
    #[error("unknown or discarded candidate `{0}`")]
    UnknownCandidate(String),
    #[error("not implemented: {0}")]
    NotImplemented(String),
    #[error("no accepted items to export")]
    NothingAccepted,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("storage error: {0}")]
    Storage(String),
}

impl WorkflowError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            WorkflowError::DuplicateName(_) => "DuplicateName",
            WorkflowError::ProjectNotFound(_) => "ProjectNotFound",
            WorkflowError::ItemNotFound(_) => "ItemNotFound",
            WorkflowError::QueueEmpty => "QueueEmpty",
            WorkflowError::LeaseMismatch(_) => "LeaseMismatch",
            WorkflowError::InvalidTransition { .. } => "InvalidTransition",
            WorkflowError::UnknownCandidate(_) => "UnknownCandidate",
            WorkflowError::NotImplemented(_) => "NotImplemented",
            WorkflowError::NothingAccepted => "NothingAccepted",
            WorkflowError::InvalidInput(_) => "InvalidInput",
            WorkflowError::Schema(_) => "SchemaError",
            WorkflowError::Generation(GenerationError::Backend(_)) => "BackendError",
            WorkflowError::Generation(GenerationError::EmptyCompletion) => "EmptyCompletion",
            WorkflowError::Generation(GenerationError::UnknownTemplate(_)) => "UnknownTemplate",
            WorkflowError::Generation(GenerationError::MissingSubDescription(_)) => "MissingSubDescription",
            WorkflowError::Generation(GenerationError::InvalidParams(_)) => "InvalidInput",
            WorkflowError::Storage(_) => "StorageError",
        }
    }
}
