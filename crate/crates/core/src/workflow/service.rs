//! The command layer shared by the CLI and the HTTP server.
//!
//! Each project lives behind one mutex. Commands validate and commit events
//! while holding it; backend calls run with the lock released and commit
//! their result afterwards, re-checking the lease.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::events::{EventBody, Feedback, FeedbackEvent, ItemEvent};
use super::export::{export_json, export_records, ExportRecord, ExportSummary};
use super::ingest::{read_log, IngestFailure, IngestReport};
use super::model::{AnnotationItem, Direction, ItemState, Project, ProjectConfig, QueryRecord, Target};
use super::store::{FileStore, Store};
use super::WorkflowError;
use crate::generation::{
    canonical_sql, generate_candidates_with_template, merge_context, template_ids, CompletionBackend,
    GenerationError, PromptContext, PromptMode, MERGE_TEMPLATE,
};
use crate::retrieval::{example_entry_id, retrieve_schema_context, table_entry_id, Embedder, Retriever, TrigramEmbedder};
use crate::sql::{
    decompose_with_catalog, load_schema, nesting_depth, parse_sql, render_sql, DecomposeError, Dialect, ParseError,
    SchemaCatalog, SchemaFormat,
};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Test clock that only moves when told to.
pub struct ManualClock {
    now: Mutex<DateTime<Utc>>,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock { now: Mutex::new(start) }
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.now.lock().expect("clock lock");
        *now += by;
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.now.lock().expect("clock lock") = to;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().expect("clock lock")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Provenance label stored on each query record.
    pub source_tag: String,
    /// Benchmark rows that carry a question become accepted items directly.
    pub import_accepted: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            source_tag: "upload".to_string(),
            import_accepted: false,
        }
    }
}

/// An accepted item as consumed by evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedItem {
    pub item_id: String,
    pub sql: String,
    pub question: String,
    #[serde(default)]
    pub reference_question: Option<String>,
}

/// An item together with the prompt context its active target would get.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub item: AnnotationItem,
    pub active_target: Target,
    pub context: Option<PromptContext>,
}

struct ProjectState {
    project: Project,
    catalog: Option<SchemaCatalog>,
    queries: Vec<QueryRecord>,
    by_normalized: HashMap<String, usize>,
    by_query_id: HashMap<String, usize>,
    items: Vec<AnnotationItem>,
    by_item_id: HashMap<String, usize>,
    next_event: u64,
    retriever: Retriever,
}

struct Job {
    item_idx: usize,
    target: Target,
    ctx: PromptContext,
    template_id: String,
}

pub struct Workspace {
    store: Arc<dyn Store>,
    backend: Arc<dyn CompletionBackend>,
    embedder: Arc<dyn Embedder>,
    clock: Arc<dyn Clock>,
    handles: Mutex<HashMap<String, Arc<Mutex<ProjectState>>>>,
}

/// `"Sales DW 2024"` becomes `"sales-dw-2024"`.
pub fn slugify(name: &str) -> String {
    let mut out = String::new();
    for ch in name.trim().chars().flat_map(char::to_lowercase) {
        if ch.is_ascii_alphanumeric() || ch == '_' {
            out.push(ch);
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

fn project_of(item_id: &str) -> Result<&str, WorkflowError> {
    item_id
        .rsplit_once('.')
        .map(|(p, _)| p)
        .ok_or_else(|| WorkflowError::ItemNotFound(item_id.to_string()))
}

fn lock(handle: &Mutex<ProjectState>) -> MutexGuard<'_, ProjectState> {
    handle.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn is_non_select(e: &ParseError) -> bool {
    matches!(e, ParseError::UnsupportedConstruct { construct, .. } if construct.ends_with(" statement"))
}

impl Workspace {
    pub fn new(store: Arc<dyn Store>, backend: Arc<dyn CompletionBackend>) -> Self {
        Workspace {
            store,
            backend,
            embedder: Arc::new(TrigramEmbedder::default()),
            clock: Arc::new(SystemClock),
            handles: Mutex::new(HashMap::new()),
        }
    }

    /// File-backed workspace rooted at `root`.
    pub fn open(root: &Path, backend: Arc<dyn CompletionBackend>) -> Result<Self, WorkflowError> {
        Ok(Workspace::new(Arc::new(FileStore::open(root)?), backend))
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn backend(&self) -> Arc<dyn CompletionBackend> {
        self.backend.clone()
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn load(&self, project: Project) -> Result<ProjectState, WorkflowError> {
        let pid = project.project_id.clone();
        let catalog = self.store.load_schema(&pid)?;
        let queries = self.store.load_queries(&pid)?;
        let events = self.store.load_events(&pid)?;
        let mut next_event = 0;
        let mut order: Vec<String> = Vec::new();
        let mut grouped: HashMap<String, Vec<ItemEvent>> = HashMap::new();
        for ev in events {
            next_event = next_event.max(ev.seq + 1);
            if !grouped.contains_key(&ev.item_id) {
                order.push(ev.item_id.clone());
            }
            grouped.entry(ev.item_id.clone()).or_default().push(ev);
        }
        let mut items = Vec::new();
        for id in order {
            items.push(AnnotationItem::replay(&grouped[&id])?);
        }
        items.sort_by_key(|i| i.seq);
        let mut st = ProjectState {
            project,
            catalog: None,
            by_normalized: queries
                .iter()
                .enumerate()
                .map(|(i, q)| (q.normalized_sql.clone(), i))
                .collect(),
            by_query_id: queries.iter().enumerate().map(|(i, q)| (q.query_id.clone(), i)).collect(),
            queries,
            by_item_id: items.iter().enumerate().map(|(i, it)| (it.item_id.clone(), i)).collect(),
            items,
            next_event,
            retriever: Retriever::new(self.embedder.clone()),
        };
        if let Some(cat) = catalog {
            index_tables(&mut st.retriever, &cat);
            st.catalog = Some(cat);
        }
        let accepted: Vec<(String, String, String)> = st
            .items
            .iter()
            .filter(|i| i.state() == ItemState::Accepted)
            .map(|i| (i.item_id.clone(), i.sql.clone(), i.accepted_text().unwrap_or_default().to_string()))
            .collect();
        for (id, sql, nl) in accepted {
            add_example(&mut st.retriever, &id, &sql, &nl);
        }
        Ok(st)
    }

    fn handle(&self, project_id: &str) -> Result<Arc<Mutex<ProjectState>>, WorkflowError> {
        let mut handles = self.handles.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(h) = handles.get(project_id) {
            return Ok(h.clone());
        }
        let project = self
            .store
            .list_projects()?
            .into_iter()
            .find(|p| p.project_id == project_id)
            .ok_or_else(|| WorkflowError::ProjectNotFound(project_id.to_string()))?;
        let h = Arc::new(Mutex::new(self.load(project)?));
        handles.insert(project_id.to_string(), h.clone());
        Ok(h)
    }

    fn commit(&self, st: &mut ProjectState, idx: usize, body: EventBody) -> Result<(), WorkflowError> {
        let ev = ItemEvent {
            item_id: st.items[idx].item_id.clone(),
            seq: st.next_event,
            at: self.clock.now(),
            body,
        };
        let mut item = st.items[idx].clone();
        item.apply(&ev)?;
        self.store.append_events(&st.project.project_id, std::slice::from_ref(&ev))?;
        st.items[idx] = item;
        st.next_event += 1;
        Ok(())
    }

    fn feedback_body(&self, st: &ProjectState, annotator: &str, target: Target, feedback: Feedback) -> EventBody {
        EventBody::Feedback(FeedbackEvent {
            event_id: format!("e{}", st.next_event),
            annotator_id: annotator.to_string(),
            timestamp: self.clock.now(),
            target,
            feedback,
        })
    }

    fn validate_config(config: &ProjectConfig) -> Result<(), WorkflowError> {
        if config.direction == Direction::TextToSql {
            return Err(WorkflowError::NotImplemented(
                "text_to_sql annotation direction is reserved".into(),
            ));
        }
        if !template_ids().any(|t| t == config.template_id) {
            return Err(WorkflowError::Generation(GenerationError::UnknownTemplate(
                config.template_id.clone(),
            )));
        }
        if config.lease_ttl_secs <= 0 {
            return Err(WorkflowError::InvalidInput("lease_ttl_secs must be positive".into()));
        }
        config.generation.validate().map_err(WorkflowError::InvalidInput)
    }

    pub fn create_project(&self, name: &str, dialect: Dialect, config: ProjectConfig) -> Result<Project, WorkflowError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(WorkflowError::InvalidInput("project name must be non-empty".into()));
        }
        let project_id = slugify(name);
        if project_id.is_empty() {
            return Err(WorkflowError::InvalidInput(format!(
                "project name `{name}` has no usable characters"
            )));
        }
        Self::validate_config(&config)?;
        let mut handles = self.handles.lock().unwrap_or_else(|p| p.into_inner());
        if self
            .store
            .list_projects()?
            .iter()
            .any(|p| p.name == name || p.project_id == project_id)
        {
            return Err(WorkflowError::DuplicateName(name.to_string()));
        }
        let project = Project {
            project_id: project_id.clone(),
            name: name.to_string(),
            dialect,
            schema_id: None,
            config,
            created_at: self.clock.now(),
        };
        self.store.save_project(&project)?;
        let st = self.load(project.clone())?;
        handles.insert(project_id, Arc::new(Mutex::new(st)));
        Ok(project)
    }

    pub fn list_projects(&self) -> Result<Vec<Project>, WorkflowError> {
        self.store.list_projects()
    }

    pub fn project(&self, project_id: &str) -> Result<Project, WorkflowError> {
        let h = self.handle(project_id)?;
        let st = lock(&h);
        Ok(st.project.clone())
    }

    /// Replaces the task configuration; applies to later generations.
    pub fn configure(&self, project_id: &str, config: ProjectConfig) -> Result<Project, WorkflowError> {
        Self::validate_config(&config)?;
        let h = self.handle(project_id)?;
        let mut st = lock(&h);
        let mut project = st.project.clone();
        project.config = config;
        self.store.save_project(&project)?;
        st.project = project.clone();
        Ok(project)
    }

    pub fn catalog(&self, project_id: &str) -> Result<Option<SchemaCatalog>, WorkflowError> {
        let h = self.handle(project_id)?;
        let st = lock(&h);
        Ok(st.catalog.clone())
    }

    pub fn ingest_schema(
        &self,
        project_id: &str,
        input: &[u8],
        format: Option<SchemaFormat>,
        schema_id: Option<&str>,
    ) -> Result<SchemaCatalog, WorkflowError> {
        let format = format.unwrap_or_else(|| SchemaFormat::detect(input));
        let catalog = load_schema(input, format, schema_id)?;
        let h = self.handle(project_id)?;
        let mut st = lock(&h);
        self.store.save_schema(project_id, &catalog)?;
        let mut project = st.project.clone();
        project.schema_id = Some(catalog.schema_id.clone());
        self.store.save_project(&project)?;
        st.project = project;
        if let Some(old) = st.catalog.take() {
            for t in &old.tables {
                st.retriever.remove(&table_entry_id(&old.schema_id, &t.name));
            }
        }
        index_tables(&mut st.retriever, &catalog);
        st.catalog = Some(catalog.clone());
        Ok(catalog)
    }

    /// Ingests a query log. Per-statement problems are counted in the report;
    /// the counts always sum to the number of input statements.
    pub fn ingest_queries(
        &self,
        project_id: &str,
        input: &str,
        options: &IngestOptions,
    ) -> Result<IngestReport, WorkflowError> {
        let (_, statements) = read_log(input)?;
        let h = self.handle(project_id)?;
        let mut st = lock(&h);
        let dialect = st.project.dialect;
        let mut report = IngestReport::default();
        let mut seen: HashSet<String> = HashSet::new();
        let mut new_queries: Vec<QueryRecord> = Vec::new();
        let mut new_items: Vec<AnnotationItem> = Vec::new();
        let mut new_events: Vec<ItemEvent> = Vec::new();
        let mut next_event = st.next_event;
        let now = self.clock.now();
        for (index, raw) in statements.into_iter().enumerate() {
            let Some(sql) = raw.sql.as_deref() else {
                report.parse_failures += 1;
                report.failures.push(IngestFailure {
                    index,
                    message: "record has no query field".into(),
                });
                continue;
            };
            let ast = match parse_sql(sql, dialect) {
                Ok(ast) => ast,
                Err(e) if is_non_select(&e) => {
                    report.skipped_non_select += 1;
                    continue;
                }
                Err(e) => {
                    report.parse_failures += 1;
                    report.failures.push(IngestFailure {
                        index,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let normalized = render_sql(&ast);
            if st.by_normalized.contains_key(&normalized) || !seen.insert(normalized.clone()) {
                report.skipped_duplicate += 1;
                continue;
            }
            let n = st.queries.len() + new_queries.len() + 1;
            let query_id = format!("q{n:04}");
            let item_id = format!("{project_id}.{:04}", st.items.len() + new_items.len() + 1);
            let is_nested = nesting_depth(&ast) >= 1;
            let importing = options.import_accepted && raw.question.is_some();
            let mut decomposition = None;
            let mut note = None;
            if is_nested && !importing {
                match decompose_with_catalog(&ast, st.catalog.as_ref()) {
                    Ok(plan) => {
                        report.decomposed += 1;
                        decomposition = Some(plan);
                    }
                    Err(DecomposeError::NotNested) => {}
                    Err(e) => {
                        report.annotated_whole += 1;
                        note = Some(e.to_string());
                    }
                }
            }
            let sub_items: Vec<(String, String)> = decomposition
                .as_ref()
                .map(|plan| {
                    plan.steps
                        .iter()
                        .map(|s| (s.cte_name.clone(), render_sql(&s.subquery)))
                        .chain(std::iter::once(("final".to_string(), render_sql(&plan.final_query))))
                        .collect()
                })
                .unwrap_or_default();
            let record = QueryRecord {
                query_id: query_id.clone(),
                raw_sql: sql.to_string(),
                normalized_sql: normalized.clone(),
                source_tag: options.source_tag.clone(),
                is_nested,
                decomposition,
                decomposition_note: note,
                reference_question: raw.question.clone(),
                db_id: raw.db_id.clone(),
                external_id: if importing { raw.id.clone() } else { None },
                provenance: if importing { raw.provenance.clone() } else { None },
            };
            let created = ItemEvent {
                item_id: item_id.clone(),
                seq: next_event,
                at: now,
                body: EventBody::Created {
                    query_id,
                    item_seq: (st.items.len() + new_items.len() + 1) as u64,
                    sql: normalized,
                    sub_items,
                },
            };
            next_event += 1;
            let mut item = AnnotationItem::from_created(&created)?;
            new_events.push(created);
            if importing {
                let prov = raw.provenance.as_ref();
                let ev = ItemEvent {
                    item_id: item_id.clone(),
                    seq: next_event,
                    at: now,
                    body: EventBody::Imported {
                        text: raw.question.clone().unwrap_or_default(),
                        model_id: prov.map(|p| p.model_id.clone()).unwrap_or_else(|| "import".into()),
                        annotator_id: prov.map(|p| p.annotator_id.clone()).unwrap_or_else(|| "import".into()),
                    },
                };
                next_event += 1;
                item.apply(&ev)?;
                new_events.push(ev);
            }
            report.accepted += 1;
            report.item_ids.push(item_id);
            new_queries.push(record);
            new_items.push(item);
        }
        self.store.append_queries(project_id, &new_queries)?;
        self.store.append_events(project_id, &new_events)?;
        st.next_event = next_event;
        for q in new_queries {
            let i = st.queries.len();
            st.by_normalized.insert(q.normalized_sql.clone(), i);
            st.by_query_id.insert(q.query_id.clone(), i);
            st.queries.push(q);
        }
        for item in new_items {
            if item.state() == ItemState::Accepted {
                let nl = item.accepted_text().unwrap_or_default().to_string();
                add_example(&mut st.retriever, &item.item_id, &item.sql, &nl);
            }
            let pos = st.items.len();
            st.by_item_id.insert(item.item_id.clone(), pos);
            st.items.push(item);
        }
        Ok(report)
    }

    fn item_index(st: &ProjectState, item_id: &str) -> Result<usize, WorkflowError> {
        st.by_item_id
            .get(item_id)
            .copied()
            .ok_or_else(|| WorkflowError::ItemNotFound(item_id.to_string()))
    }

    /// Prompt context for `target` of the item at `idx`.
    fn context(&self, st: &ProjectState, idx: usize, target: &Target) -> Result<(PromptContext, String), WorkflowError> {
        let item = &st.items[idx];
        let cfg = &st.project.config;
        let ann = item
            .annotation(target)
            .ok_or_else(|| WorkflowError::InvalidInput(format!("no target {target:?}")))?;
        let sql = item.target_sql(target).unwrap_or_default().to_string();
        let steps: Vec<&str> = item
            .sub_items
            .iter()
            .map(|s| s.name.as_str())
            .filter(|n| *n != "final")
            .collect();
        let tables = match &st.catalog {
            Some(cat) => {
                retrieve_schema_context(&sql, st.project.dialect, cat, &st.retriever, cfg.k_tables, &steps).tables
            }
            None => Vec::new(),
        };
        if *target == Target::Item && !item.sub_items.is_empty() {
            let plan = st.queries[st.by_query_id[&item.query_id]]
                .decomposition
                .as_ref()
                .ok_or_else(|| WorkflowError::InvalidInput(format!("item {} lost its plan", item.item_id)))?;
            let sub_nl: Vec<(String, String)> = item
                .sub_items
                .iter()
                .map(|s| (s.name.clone(), s.annotation.accepted_text.clone().unwrap_or_default()))
                .collect();
            let mut ctx = merge_context(&sql, plan, &sub_nl, &tables)?;
            ctx.refinement_notes = ann.refinement_notes.clone();
            return Ok((ctx, MERGE_TEMPLATE.to_string()));
        }
        let canon = canonical_sql(&sql);
        let examples = st
            .retriever
            .retrieve_examples(&sql, cfg.k_examples + 1)
            .items
            .into_iter()
            .filter(|e| canonical_sql(&e.sql) != canon)
            .take(cfg.k_examples)
            .collect();
        Ok((
            PromptContext {
                target_sql: sql,
                tables,
                examples,
                refinement_notes: ann.refinement_notes.clone(),
                mode: PromptMode::Describe,
                sub_descriptions: Vec::new(),
            },
            cfg.template_id.clone(),
        ))
    }

    fn run_job(&self, h: &Mutex<ProjectState>, job: Job, annotator: &str) -> Result<AnnotationItem, WorkflowError> {
        let params = lock(h).project.config.generation.clone();
        let result = generate_candidates_with_template(&job.ctx, &job.template_id, &params, self.backend.as_ref());
        let mut st = lock(h);
        match result {
            Ok(generation) => {
                let now = self.clock.now();
                let candidates = generation
                    .candidates
                    .into_iter()
                    .map(|mut c| {
                        c.created_at = now;
                        c
                    })
                    .collect();
                self.commit(
                    &mut st,
                    job.item_idx,
                    EventBody::Generated {
                        target: job.target,
                        annotator_id: annotator.to_string(),
                        prompt_hash: generation.prompt_hash,
                        candidates,
                    },
                )?;
                Ok(st.items[job.item_idx].clone())
            }
            Err(e) => Err(WorkflowError::Generation(e)),
        }
    }

    /// Leases the oldest schedulable item (or the one `annotator` already
    /// holds) and drafts candidates for its active target if it has none.
    pub fn annotate_next(&self, project_id: &str, annotator: &str) -> Result<AnnotationItem, WorkflowError> {
        if annotator.trim().is_empty() {
            return Err(WorkflowError::InvalidInput("annotator_id must be non-empty".into()));
        }
        let h = self.handle(project_id)?;
        let job = {
            let mut st = lock(&h);
            let now = self.clock.now();
            let open = |i: &AnnotationItem| matches!(i.state(), ItemState::Pending | ItemState::Drafted | ItemState::InReview);
            let idx = st
                .items
                .iter()
                .position(|i| open(i) && i.lease_holder(now) == Some(annotator))
                .or_else(|| st.items.iter().position(|i| open(i) && i.lease_holder(now).is_none()))
                .ok_or(WorkflowError::QueueEmpty)?;
            let ttl = Duration::seconds(st.project.config.lease_ttl_secs);
            self.commit(
                &mut st,
                idx,
                EventBody::Leased {
                    annotator_id: annotator.to_string(),
                    expires_at: now + ttl,
                },
            )?;
            let target = st.items[idx].active_target();
            if st.items[idx].annotation(&target).map(|a| a.state) != Some(ItemState::Pending) {
                return Ok(st.items[idx].clone());
            }
            let (ctx, template_id) = match self.context(&st, idx, &target) {
                Ok(c) => c,
                Err(e) => {
                    let reason = e.to_string();
                    let _ = self.commit(&mut st, idx, EventBody::Released { reason });
                    return Err(e);
                }
            };
            Job {
                item_idx: idx,
                target,
                ctx,
                template_id,
            }
        };
        let idx = job.item_idx;
        match self.run_job(&h, job, annotator) {
            Ok(item) => Ok(item),
            Err(e @ WorkflowError::Generation(_)) => {
                let mut st = lock(&h);
                let _ = self.commit(&mut st, idx, EventBody::Released { reason: e.to_string() });
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    /// Applies annotator feedback to the item's active target. `refine`
    /// regenerates candidates; `accept` and `reopen` delegate to their
    /// dedicated commands.
    pub fn submit_feedback(
        &self,
        item_id: &str,
        annotator: &str,
        feedback: Feedback,
    ) -> Result<AnnotationItem, WorkflowError> {
        match feedback {
            Feedback::Accept {
                candidate_id,
                final_text,
            } => return self.accept(item_id, annotator, &candidate_id, Some(&final_text)),
            Feedback::Reopen { reason } => return self.reopen(item_id, annotator, reason),
            _ => {}
        }
        let h = self.handle(project_of(item_id)?)?;
        let refine = matches!(feedback, Feedback::Refine { .. });
        let job = {
            let mut st = lock(&h);
            let idx = Self::item_index(&st, item_id)?;
            let target = st.items[idx].active_target();
            let body = self.feedback_body(&st, annotator, target.clone(), feedback);
            self.commit(&mut st, idx, body)?;
            if !refine {
                return Ok(st.items[idx].clone());
            }
            let (ctx, template_id) = self.context(&st, idx, &target)?;
            Job {
                item_idx: idx,
                target,
                ctx,
                template_id,
            }
        };
        self.run_job(&h, job, annotator)
    }

    /// Accepts `candidate_id` on the active target. A `final_text` that
    /// differs from the candidate is first logged as an edit.
    pub fn accept(
        &self,
        item_id: &str,
        annotator: &str,
        candidate_id: &str,
        final_text: Option<&str>,
    ) -> Result<AnnotationItem, WorkflowError> {
        let h = self.handle(project_of(item_id)?)?;
        let mut st = lock(&h);
        let idx = Self::item_index(&st, item_id)?;
        let now = self.clock.now();
        let item = &st.items[idx];
        if item.lease_holder(now) != Some(annotator) {
            return Err(WorkflowError::LeaseMismatch(format!(
                "`{annotator}` holds no live lease on item {item_id}"
            )));
        }
        let target = item.active_target();
        let candidate = item
            .annotation(&target)
            .and_then(|a| a.live_candidates().find(|c| c.candidate_id == candidate_id))
            .ok_or_else(|| WorkflowError::UnknownCandidate(candidate_id.to_string()))?;
        let text = final_text.map(str::trim).unwrap_or(&candidate.text).to_string();
        if text.is_empty() {
            return Err(WorkflowError::InvalidInput("accepted text is empty".into()));
        }
        let mut accept_id = candidate_id.to_string();
        if text != candidate.text {
            let body = self.feedback_body(
                &st,
                annotator,
                target.clone(),
                Feedback::Edit {
                    candidate_id: candidate_id.to_string(),
                    text: text.clone(),
                },
            );
            self.commit(&mut st, idx, body)?;
            accept_id = format!("c{}", st.items[idx].next_candidate - 1);
        }
        let body = self.feedback_body(
            &st,
            annotator,
            target.clone(),
            Feedback::Accept {
                candidate_id: accept_id,
                final_text: text.clone(),
            },
        );
        self.commit(&mut st, idx, body)?;
        if target == Target::Item {
            let sql = st.items[idx].sql.clone();
            add_example(&mut st.retriever, item_id, &sql, &text);
        }
        Ok(st.items[idx].clone())
    }

    /// Takes an accepted item back into review under a fresh lease.
    pub fn reopen(&self, item_id: &str, annotator: &str, reason: Option<String>) -> Result<AnnotationItem, WorkflowError> {
        let h = self.handle(project_of(item_id)?)?;
        let mut st = lock(&h);
        let idx = Self::item_index(&st, item_id)?;
        if st.items[idx].state() != ItemState::Accepted {
            return Err(WorkflowError::InvalidTransition {
                state: st.items[idx].state().as_str().to_string(),
                event: "reopen".into(),
            });
        }
        let ttl = Duration::seconds(st.project.config.lease_ttl_secs);
        let expires_at = self.clock.now() + ttl;
        self.commit(
            &mut st,
            idx,
            EventBody::Leased {
                annotator_id: annotator.to_string(),
                expires_at,
            },
        )?;
        let body = self.feedback_body(&st, annotator, Target::Item, Feedback::Reopen { reason });
        self.commit(&mut st, idx, body)?;
        st.retriever.remove(&example_entry_id(item_id));
        Ok(st.items[idx].clone())
    }

    /// Gives up a held lease without further changes.
    pub fn release(&self, item_id: &str, annotator: &str) -> Result<AnnotationItem, WorkflowError> {
        let h = self.handle(project_of(item_id)?)?;
        let mut st = lock(&h);
        let idx = Self::item_index(&st, item_id)?;
        if st.items[idx].lease_holder(self.clock.now()) != Some(annotator) {
            return Err(WorkflowError::LeaseMismatch(format!(
                "`{annotator}` holds no live lease on item {item_id}"
            )));
        }
        self.commit(
            &mut st,
            idx,
            EventBody::Released {
                reason: format!("released by {annotator}"),
            },
        )?;
        Ok(st.items[idx].clone())
    }

    pub fn item(&self, item_id: &str) -> Result<AnnotationItem, WorkflowError> {
        let h = self.handle(project_of(item_id)?)?;
        let st = lock(&h);
        Ok(st.items[Self::item_index(&st, item_id)?].clone())
    }

    pub fn item_view(&self, item_id: &str) -> Result<ItemView, WorkflowError> {
        let h = self.handle(project_of(item_id)?)?;
        let st = lock(&h);
        let idx = Self::item_index(&st, item_id)?;
        let item = st.items[idx].clone();
        let target = item.active_target();
        let context = self.context(&st, idx, &target).ok().map(|(c, _)| c);
        Ok(ItemView {
            item,
            active_target: target,
            context,
        })
    }

    pub fn items(&self, project_id: &str, state: Option<ItemState>) -> Result<Vec<AnnotationItem>, WorkflowError> {
        let h = self.handle(project_id)?;
        let st = lock(&h);
        Ok(st
            .items
            .iter()
            .filter(|i| state.is_none_or(|s| i.state() == s))
            .cloned()
            .collect())
    }

    pub fn queries(&self, project_id: &str) -> Result<Vec<QueryRecord>, WorkflowError> {
        let h = self.handle(project_id)?;
        let st = lock(&h);
        Ok(st.queries.clone())
    }

    /// The persisted log of one item, oldest first.
    pub fn item_events(&self, item_id: &str) -> Result<Vec<ItemEvent>, WorkflowError> {
        let pid = project_of(item_id)?;
        let h = self.handle(pid)?;
        let _st = lock(&h);
        Ok(self
            .store
            .load_events(pid)?
            .into_iter()
            .filter(|e| e.item_id == item_id)
            .collect())
    }

    pub fn accepted_items(&self, project_id: &str) -> Result<Vec<AcceptedItem>, WorkflowError> {
        let h = self.handle(project_id)?;
        let st = lock(&h);
        Ok(st
            .items
            .iter()
            .filter(|i| i.state() == ItemState::Accepted)
            .map(|i| {
                let q = &st.queries[st.by_query_id[&i.query_id]];
                AcceptedItem {
                    item_id: i.item_id.clone(),
                    sql: q.normalized_sql.clone(),
                    question: i.accepted_text().unwrap_or_default().to_string(),
                    reference_question: q.reference_question.clone(),
                }
            })
            .collect())
    }

    pub fn save_artifact(&self, project_id: &str, name: &str, bytes: &[u8]) -> Result<(), WorkflowError> {
        let h = self.handle(project_id)?;
        let _st = lock(&h);
        self.store.save_artifact(project_id, name, bytes)
    }

    pub fn load_artifact(&self, project_id: &str, name: &str) -> Result<Option<Vec<u8>>, WorkflowError> {
        self.handle(project_id)?;
        self.store.load_artifact(project_id, name)
    }

    pub fn export(&self, project_id: &str) -> Result<Vec<ExportRecord>, WorkflowError> {
        let h = self.handle(project_id)?;
        let st = lock(&h);
        let pairs = st.items.iter().map(|i| (i, &st.queries[st.by_query_id[&i.query_id]]));
        export_records(pairs, st.project.schema_id.as_deref())
    }

    pub fn export_to(&self, project_id: &str, destination: &Path) -> Result<ExportSummary, WorkflowError> {
        let records = self.export(project_id)?;
        std::fs::write(destination, export_json(&records))
            .map_err(|e| WorkflowError::Storage(format!("{}: {e}", destination.display())))?;
        Ok(ExportSummary {
            count: records.len(),
            destination: Some(destination.display().to_string()),
        })
    }
}

fn index_tables(retriever: &mut Retriever, catalog: &SchemaCatalog) {
    for t in &catalog.tables {
        if let Err(e) = retriever.add_table(&catalog.schema_id, t) {
            log::warn!("table {} not indexed: {e}", t.name);
        }
    }
}

fn add_example(retriever: &mut Retriever, item_id: &str, sql: &str, nl: &str) {
    let entry = example_entry_id(item_id);
    retriever.remove(&entry);
    if let Err(e) = retriever.add_example(&entry, item_id, sql, nl) {
        log::warn!("example for {item_id} not indexed: {e}");
    }
}
