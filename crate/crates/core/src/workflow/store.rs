//! Project persistence. `FileStore` lays a project out as
//!
//! ```text
//! <root>/projects/<project_id>/project.json
//! <root>/projects/<project_id>/schema.json
//! <root>/projects/<project_id>/queries.jsonl
//! <root>/projects/<project_id>/events.jsonl
//! ```
//!
//! The two `.jsonl` files are append-only.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::events::ItemEvent;
use super::model::{Project, QueryRecord};
use super::WorkflowError;
use crate::sql::SchemaCatalog;

pub trait Store: Send + Sync {
    fn list_projects(&self) -> Result<Vec<Project>, WorkflowError>;
    /// Creates or overwrites the project record.
    fn save_project(&self, project: &Project) -> Result<(), WorkflowError>;
    fn save_schema(&self, project_id: &str, catalog: &SchemaCatalog) -> Result<(), WorkflowError>;
    fn load_schema(&self, project_id: &str) -> Result<Option<SchemaCatalog>, WorkflowError>;
    fn append_queries(&self, project_id: &str, records: &[QueryRecord]) -> Result<(), WorkflowError>;
    fn load_queries(&self, project_id: &str) -> Result<Vec<QueryRecord>, WorkflowError>;
    fn append_events(&self, project_id: &str, events: &[ItemEvent]) -> Result<(), WorkflowError>;
    fn load_events(&self, project_id: &str) -> Result<Vec<ItemEvent>, WorkflowError>;
    /// Named side files such as evaluation reports; overwritten whole.
    fn save_artifact(&self, project_id: &str, name: &str, bytes: &[u8]) -> Result<(), WorkflowError>;
    fn load_artifact(&self, project_id: &str, name: &str) -> Result<Option<Vec<u8>>, WorkflowError>;
}

fn check_artifact_name(name: &str) -> Result<(), WorkflowError> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(WorkflowError::InvalidInput(format!("bad artifact name `{name}`")))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> WorkflowError {
    WorkflowError::Storage(format!("{}: {e}", path.display()))
}

pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, WorkflowError> {
        let root = root.into();
        let projects = root.join("projects");
        fs::create_dir_all(&projects).map_err(|e| io_err(&projects, e))?;
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn project_dir(&self, project_id: &str) -> PathBuf {
        self.root.join("projects").join(project_id)
    }

    fn write_json(&self, path: &Path, value: &impl Serialize) -> Result<(), WorkflowError> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
        self.write_atomic(path, &bytes)
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), WorkflowError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }

    fn append_lines<T: Serialize>(&self, path: &Path, rows: &[T]) -> Result<(), WorkflowError> {
        if rows.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r).map_err(|e| io_err(path, e))?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        f.write_all(&buf).map_err(|e| io_err(path, e))?;
        f.sync_data().map_err(|e| io_err(path, e))
    }

    fn read_lines<T: DeserializeOwned>(&self, path: &Path) -> Result<Vec<T>, WorkflowError> {
        let f = match fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(path, e)),
        };
        let mut out = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))?);
        }
        Ok(out)
    }
}

impl Store for FileStore {
    fn list_projects(&self) -> Result<Vec<Project>, WorkflowError> {
        let dir = self.root.join("projects");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let path = entry.map_err(|e| io_err(&dir, e))?.path().join("project.json");
            if path.exists() {
                let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
                out.push(serde_json::from_slice(&bytes).map_err(|e| io_err(&path, e))?);
            }
        }
        out.sort_by(|a: &Project, b: &Project| a.created_at.cmp(&b.created_at).then(a.project_id.cmp(&b.project_id)));
        Ok(out)
    }

    fn save_project(&self, project: &Project) -> Result<(), WorkflowError> {
        self.write_json(&self.project_dir(&project.project_id).join("project.json"), project)
    }

    fn save_schema(&self, project_id: &str, catalog: &SchemaCatalog) -> Result<(), WorkflowError> {
        self.write_json(&self.project_dir(project_id).join("schema.json"), catalog)
    }

    fn load_schema(&self, project_id: &str) -> Result<Option<SchemaCatalog>, WorkflowError> {
        let path = self.project_dir(project_id).join("schema.json");
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(|e| io_err(&path, e))?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    fn append_queries(&self, project_id: &str, records: &[QueryRecord]) -> Result<(), WorkflowError> {
        self.append_lines(&self.project_dir(project_id).join("queries.jsonl"), records)
    }

    fn load_queries(&self, project_id: &str) -> Result<Vec<QueryRecord>, WorkflowError> {
        self.read_lines(&self.project_dir(project_id).join("queries.jsonl"))
    }

    fn append_events(&self, project_id: &str, events: &[ItemEvent]) -> Result<(), WorkflowError> {
        self.append_lines(&self.project_dir(project_id).join("events.jsonl"), events)
    }

    fn load_events(&self, project_id: &str) -> Result<Vec<ItemEvent>, WorkflowError> {
        self.read_lines(&self.project_dir(project_id).join("events.jsonl"))
    }

    fn save_artifact(&self, project_id: &str, name: &str, bytes: &[u8]) -> Result<(), WorkflowError> {
        check_artifact_name(name)?;
        self.write_atomic(&self.project_dir(project_id).join(name), bytes)
    }

    fn load_artifact(&self, project_id: &str, name: &str) -> Result<Option<Vec<u8>>, WorkflowError> {
        check_artifact_name(name)?;
        let path = self.project_dir(project_id).join(name);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

#[derive(Default)]
struct MemoryProject {
    project: Option<Project>,
    schema: Option<SchemaCatalog>,
    queries: Vec<QueryRecord>,
    events: Vec<ItemEvent>,
    artifacts: HashMap<String, Vec<u8>>,
}

/// Volatile store for tests and throwaway sessions.
#[derive(Default)]
pub struct MemoryStore {
    projects: Mutex<HashMap<String, MemoryProject>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn list_projects(&self) -> Result<Vec<Project>, WorkflowError> {
        let map = self.projects.lock().expect("store lock");
        let mut out: Vec<Project> = map.values().filter_map(|p| p.project.clone()).collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.project_id.cmp(&b.project_id)));
        Ok(out)
    }

    fn save_project(&self, project: &Project) -> Result<(), WorkflowError> {
        let mut map = self.projects.lock().expect("store lock");
        map.entry(project.project_id.clone()).or_default().project = Some(project.clone());
        Ok(())
    }

    fn save_schema(&self, project_id: &str, catalog: &SchemaCatalog) -> Result<(), WorkflowError> {
        let mut map = self.projects.lock().expect("store lock");
        map.entry(project_id.to_string()).or_default().schema = Some(catalog.clone());
        Ok(())
    }

    fn load_schema(&self, project_id: &str) -> Result<Option<SchemaCatalog>, WorkflowError> {
        let map = self.projects.lock().expect("store lock");
        Ok(map.get(project_id).and_then(|p| p.schema.clone()))
    }

    fn append_queries(&self, project_id: &str, records: &[QueryRecord]) -> Result<(), WorkflowError> {
        let mut map = self.projects.lock().expect("store lock");
        map.entry(project_id.to_string()).or_default().queries.extend_from_slice(records);
        Ok(())
    }

    fn load_queries(&self, project_id: &str) -> Result<Vec<QueryRecord>, WorkflowError> {
        let map = self.projects.lock().expect("store lock");
        Ok(map.get(project_id).map(|p| p.queries.clone()).unwrap_or_default())
    }

    fn append_events(&self, project_id: &str, events: &[ItemEvent]) -> Result<(), WorkflowError> {
        let mut map = self.projects.lock().expect("store lock");
        map.entry(project_id.to_string()).or_default().events.extend_from_slice(events);
        Ok(())
    }

    fn load_events(&self, project_id: &str) -> Result<Vec<ItemEvent>, WorkflowError> {
        let map = self.projects.lock().expect("store lock");
        Ok(map.get(project_id).map(|p| p.events.clone()).unwrap_or_default())
    }

    fn save_artifact(&self, project_id: &str, name: &str, bytes: &[u8]) -> Result<(), WorkflowError> {
        check_artifact_name(name)?;
        let mut map = self.projects.lock().expect("store lock");
        map.entry(project_id.to_string())
            .or_default()
            .artifacts
            .insert(name.to_string(), bytes.to_vec());
        Ok(())
    }

    fn load_artifact(&self, project_id: &str, name: &str) -> Result<Option<Vec<u8>>, WorkflowError> {
        check_artifact_name(name)?;
        let map = self.projects.lock().expect("store lock");
        Ok(map.get(project_id).and_then(|p| p.artifacts.get(name).cloned()))
    }
}
