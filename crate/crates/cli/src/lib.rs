//! `benchforge` command line. Every subcommand is a thin wrapper over the
//! same [`Workspace`] calls the HTTP API makes.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use benchforge_core::evaluation::{self, EvalError, EvalReport, SqliteDb};
use benchforge_core::generation::{CandidateStatus, CompletionBackend, HttpBackend, MockBackend, Phrasebook};
use benchforge_core::sql::SchemaFormat;
use benchforge_core::workflow::{
    AnnotationItem, ExportSummary, Feedback, IngestOptions, IngestReport, ItemView, ProjectConfig, WorkflowError,
    Workspace,
};
use benchforge_core::Dialect;
use benchforge_server::{ServerConfig, ServerError, TOKEN_ENV};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const ROOT_ENV: &str = "BENCHFORGE_ROOT";
pub const PHRASEBOOK_ENV: &str = "BENCHFORGE_PHRASEBOOK";
pub const DEFAULT_ROOT: &str = ".benchforge";
pub const DEFAULT_PORT: u16 = 8080;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "benchforge", version, about = "Curate SQL-to-text benchmarks from query logs")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Workspace directory [env: BENCHFORGE_ROOT] [default: .benchforge]
    #[arg(long, global = true, value_name = "DIR")]
    pub root: Option<PathBuf>,
    /// JSON settings file; values here override environment variables.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Completion backend; `auto` uses the remote endpoint when BENCHFORGE_LLM_URL is set.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Question phrasebook (benchmark JSON) for the mock backend [env: BENCHFORGE_PHRASEBOOK]
    #[arg(long, global = true, value_name = "FILE")]
    pub phrasebook: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Auto,
    Mock,
    Http,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a project.
    Init {
        name: String,
        #[arg(long, default_value = "generic", value_parser = parse_kebab::<Dialect>)]
        dialect: Dialect,
        /// Schema file to load right away.
        #[arg(long, value_name = "FILE")]
        schema: Option<PathBuf>,
        #[arg(long, value_parser = parse_kebab::<SchemaFormat>)]
        schema_format: Option<SchemaFormat>,
        #[arg(long)]
        schema_id: Option<String>,
    },
    /// Load a schema and/or a query log into a project.
    Ingest {
        #[arg(long)]
        project: Option<String>,
        /// SQL log (`;`-separated) or JSON list of queries / benchmark records.
        #[arg(long, value_name = "FILE")]
        queries: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        schema: Option<PathBuf>,
        #[arg(long, value_parser = parse_kebab::<SchemaFormat>)]
        schema_format: Option<SchemaFormat>,
        #[arg(long)]
        schema_id: Option<String>,
        #[arg(long)]
        source_tag: Option<String>,
        /// Treat question/query records as already accepted annotations.
        #[arg(long)]
        import_accepted: bool,
    },
    /// Lease the next item and generate candidates for it.
    Annotate {
        #[arg(long)]
        project: Option<String>,
        #[arg(long)]
        annotator: Option<String>,
        /// NOT HUMAN REVIEWED: accept the rank-1 candidate for every item in
        /// the queue. Meant for CI smoke runs only.
        #[arg(long)]
        auto_accept_rank1: bool,
    },
    /// Submit one feedback event, given as JSON (or `@file`).
    Feedback {
        #[arg(long)]
        item: String,
        #[arg(long)]
        annotator: Option<String>,
        /// e.g. '{"kind":"refine","note":"mention the cutoff"}'
        event: String,
    },
    /// Write the accepted pairs as a benchmark JSON file.
    Export {
        #[arg(long)]
        project: Option<String>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Backtranslate accepted items and grade them against a fixture database.
    Eval {
        #[arg(long)]
        project: Option<String>,
        /// Fixture directory with schema.sql and one CSV per table.
        #[arg(long, value_name = "DIR")]
        db: Option<PathBuf>,
        /// Report path; a `.txt` histogram is written next to it.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// Bearer token for mutating requests [env: BENCHFORGE_TOKEN]
        #[arg(long)]
        token: Option<String>,
        #[arg(long = "cors-origin", value_name = "ORIGIN")]
        cors_origins: Vec<String>,
        /// Default fixture directory for evaluate requests.
        #[arg(long, value_name = "DIR")]
        db: Option<PathBuf>,
    },
}

/// Contents of `--config FILE`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub root: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub phrasebook: Option<PathBuf>,
    pub annotator: Option<String>,
    /// Settings applied to projects created by `init`.
    pub project: Option<ProjectConfig>,
    pub db: Option<PathBuf>,
    pub port: Option<u16>,
    pub token: Option<String>,
    pub cors_origins: Vec<String>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain { code: String, message: String },
}

impl CliError {
    fn domain(code: &str, message: impl Into<String>) -> Self {
        CliError::Domain {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl From<WorkflowError> for CliError {
    fn from(e: WorkflowError) -> Self {
        CliError::domain(e.code(), e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::domain(e.code(), e.to_string())
    }
}

impl From<ServerError> for CliError {
    fn from(e: ServerError) -> Self {
        let code = match e {
            ServerError::Bind { .. } => "PortInUse",
            ServerError::MissingToken => "MissingToken",
            ServerError::Io(_) => "ServerError",
        };
        CliError::domain(code, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorOut<'a> {
    code: &'a str,
    message: &'a str,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SchemaSummary {
    pub schema_id: String,
    pub tables: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestOutput {
    pub project_id: String,
    pub schema: Option<SchemaSummary>,
    pub queries: Option<IngestReport>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AutoAcceptOutput {
    pub project_id: String,
    pub annotator_id: String,
    /// Always false: nothing here was looked at by a person.
    pub human_reviewed: bool,
    pub accepted_items: Vec<String>,
    pub accepted_targets: usize,
}

fn parse_kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::domain("IoError", format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read_file(path)?)
        .map_err(|_| CliError::domain("InvalidInput", format!("{}: not UTF-8", path.display())))
}

struct Ctx<'a> {
    cli: &'a Cli,
    file: FileConfig,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn root(&self) -> PathBuf {
        self.cli
            .root
            .clone()
            .or_else(|| self.file.root.clone())
            .or_else(|| std::env::var_os(ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
    }

    fn backend(&self) -> Result<Arc<dyn CompletionBackend>, CliError> {
        let kind = self.cli.backend.or(self.file.backend).unwrap_or(BackendKind::Auto);
        let remote = || HttpBackend::from_env().map(|b| Arc::new(b) as Arc<dyn CompletionBackend>);
        match kind {
            BackendKind::Http => {
                remote().ok_or_else(|| CliError::domain("InvalidInput", "BENCHFORGE_LLM_URL is not set"))
            }
            BackendKind::Auto if self.phrasebook_path().is_none() => match remote() {
                Some(b) => Ok(b),
                None => self.mock(),
            },
            _ => self.mock(),
        }
    }

    fn phrasebook_path(&self) -> Option<PathBuf> {
        self.cli
            .phrasebook
            .clone()
            .or_else(|| self.file.phrasebook.clone())
            .or_else(|| std::env::var_os(PHRASEBOOK_ENV).map(PathBuf::from))
    }

    fn mock(&self) -> Result<Arc<dyn CompletionBackend>, CliError> {
        Ok(match self.phrasebook_path() {
            Some(p) => {
                let book = Phrasebook::from_file(&p)
                    .map_err(|e| CliError::domain("InvalidInput", format!("{}: {e}", p.display())))?;
                Arc::new(MockBackend::with_phrasebook(book))
            }
            None => Arc::new(MockBackend::new()),
        })
    }

    fn workspace(&self) -> Result<Workspace, CliError> {
        Ok(Workspace::open(&self.root(), self.backend()?)?)
    }

    fn annotator(&self, flag: &Option<String>) -> String {
        flag.clone()
            .or_else(|| self.file.annotator.clone())
            .unwrap_or_else(|| "cli".to_string())
    }

    fn emit<T: Serialize>(&mut self, value: &T, text: impl FnOnce(&T) -> String) -> Result<(), CliError> {
        let rendered = if self.cli.json {
            serde_json::to_string_pretty(value).expect("output serializes")
        } else {
            text(value)
        };
        writeln!(self.out, "{}", rendered.trim_end())
            .map_err(|e| CliError::domain("IoError", format!("stdout: {e}")))
    }
}

fn resolve_project(ws: &Workspace, flag: &Option<String>) -> Result<String, CliError> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    let projects = ws.list_projects()?;
    match projects.as_slice() {
        [only] => Ok(only.project_id.clone()),
        [] => Err(CliError::domain("ProjectNotFound", "no projects yet; run `benchforge init NAME`")),
        _ => Err(CliError::Usage("several projects exist; pass --project".into())),
    }
}

fn pick_rank1(item: &AnnotationItem) -> Option<String> {
    let ann = item.annotation(&item.active_target())?;
    let proposed: Vec<_> = ann
        .candidates
        .iter()
        .filter(|c| c.status == CandidateStatus::Proposed)
        .collect();
    proposed
        .iter()
        .find(|c| c.rank == Some(1))
        .or(proposed.first())
        .map(|c| c.candidate_id.clone())
}

fn auto_accept(ws: &Workspace, project_id: &str, annotator: &str) -> Result<AutoAcceptOutput, CliError> {
    let mut out = AutoAcceptOutput {
        project_id: project_id.to_string(),
        annotator_id: annotator.to_string(),
        human_reviewed: false,
        accepted_items: Vec::new(),
        accepted_targets: 0,
    };
    loop {
        let item = match ws.annotate_next(project_id, annotator) {
            Ok(item) => item,
            Err(WorkflowError::QueueEmpty) => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        let pick = pick_rank1(&item).ok_or_else(|| {
            CliError::domain("EmptyCompletion", format!("item {} has no proposed candidate", item.item_id))
        })?;
        let after = ws.accept(&item.item_id, annotator, &pick, None)?;
        out.accepted_targets += 1;
        if after.state() == benchforge_core::workflow::ItemState::Accepted {
            out.accepted_items.push(after.item_id);
        }
    }
}

fn view_text(v: &ItemView) -> String {
    let mut s = format!("item {} [{:?}] target {:?}\n{}\n", v.item.item_id, v.item.state(), v.active_target, v.item.sql);
    if let Some(ann) = v.item.annotation(&v.active_target) {
        for c in ann.live_candidates() {
            s.push_str(&format!("  {}  {}\n", c.candidate_id, c.text));
        }
    }
    s
}

fn execute(ctx: &mut Ctx<'_>) -> Result<(), CliError> {
    match &ctx.cli.command {
        Command::Init {
            name,
            dialect,
            schema,
            schema_format,
            schema_id,
        } => {
            let ws = ctx.workspace()?;
            let config = ctx.file.project.clone().unwrap_or_default();
            let mut project = ws.create_project(name, *dialect, config)?;
            if let Some(path) = schema {
                ws.ingest_schema(&project.project_id, &read_file(path)?, *schema_format, schema_id.as_deref())?;
                project = ws.project(&project.project_id)?;
            }
            ctx.emit(&project, |p| format!("created project {} ({})", p.project_id, p.name))
        }
        Command::Ingest {
            project,
            queries,
            schema,
            schema_format,
            schema_id,
            source_tag,
            import_accepted,
        } => {
            if queries.is_none() && schema.is_none() {
                return Err(CliError::Usage("ingest needs --queries and/or --schema".into()));
            }
            let ws = ctx.workspace()?;
            let pid = resolve_project(&ws, project)?;
            let mut out = IngestOutput {
                project_id: pid.clone(),
                schema: None,
                queries: None,
            };
            if let Some(path) = schema {
                let cat = ws.ingest_schema(&pid, &read_file(path)?, *schema_format, schema_id.as_deref())?;
                out.schema = Some(SchemaSummary {
                    schema_id: cat.schema_id,
                    tables: cat.tables.len(),
                });
            }
            if let Some(path) = queries {
                let mut opts = IngestOptions::default();
                if let Some(tag) = source_tag {
                    opts.source_tag = tag.clone();
                }
                opts.import_accepted = *import_accepted;
                out.queries = Some(ws.ingest_queries(&pid, &read_text(path)?, &opts)?);
            }
            ctx.emit(&out, |o| {
                let mut s = format!("project {}\n", o.project_id);
                if let Some(sc) = &o.schema {
                    s.push_str(&format!("schema {}: {} tables\n", sc.schema_id, sc.tables));
                }
                if let Some(r) = &o.queries {
                    s.push_str(&format!(
                        "queries: {} accepted, {} duplicate, {} non-select, {} parse failures, {} decomposed\n",
                        r.accepted, r.skipped_duplicate, r.skipped_non_select, r.parse_failures, r.decomposed
                    ));
                    for f in &r.failures {
                        s.push_str(&format!("  #{}: {}\n", f.index, f.message));
                    }
                }
                s
            })
        }
        Command::Annotate {
            project,
            annotator,
            auto_accept_rank1,
        } => {
            let ws = ctx.workspace()?;
            let pid = resolve_project(&ws, project)?;
            let who = ctx.annotator(annotator);
            if *auto_accept_rank1 {
                let _ = writeln!(
                    ctx.err,
                    "warning: --auto-accept-rank1 accepts model output without human review; use it for smoke tests only"
                );
                let out = auto_accept(&ws, &pid, &who)?;
                ctx.emit(&out, |o| {
                    format!(
                        "auto-accepted {} items ({} targets) in {} [not human reviewed]",
                        o.accepted_items.len(),
                        o.accepted_targets,
                        o.project_id
                    )
                })
            } else {
                let item = ws.annotate_next(&pid, &who)?;
                let view = ws.item_view(&item.item_id)?;
                ctx.emit(&view, view_text)
            }
        }
        Command::Feedback { item, annotator, event } => {
            let raw = match event.strip_prefix('@') {
                Some(path) => read_text(Path::new(path))?,
                None => event.clone(),
            };
            let feedback: Feedback = serde_json::from_str(&raw)
                .map_err(|e| CliError::Usage(format!("feedback event is not valid JSON: {e}")))?;
            let ws = ctx.workspace()?;
            let who = ctx.annotator(annotator);
            let after = ws.submit_feedback(item, &who, feedback)?;
            ctx.emit(&after, |i| format!("item {} is {:?}", i.item_id, i.state()))
        }
        Command::Export { project, out } => {
            let ws = ctx.workspace()?;
            let pid = resolve_project(&ws, project)?;
            let summary = ws.export_to(&pid, out)?;
            ctx.emit(&summary, |s: &ExportSummary| {
                format!("exported {} pairs to {}", s.count, out.display())
            })
        }
        Command::Eval { project, db, out } => {
            let dir = db
                .clone()
                .or_else(|| ctx.file.db.clone())
                .ok_or_else(|| CliError::Usage("eval needs --db DIR".into()))?;
            let ws = ctx.workspace()?;
            let pid = resolve_project(&ws, project)?;
            let fixture = SqliteDb::load_fixture(&dir)?;
            let report = evaluation::evaluate_project(&ws, &pid, &fixture)?;
            if let Some(path) = out {
                report.write_to(path)?;
            }
            ctx.emit(&report, EvalReport::histogram_text)
        }
        Command::Serve {
            port,
            token,
            cors_origins,
            db,
        } => {
            let token = token
                .clone()
                .or_else(|| ctx.file.token.clone())
                .or_else(|| std::env::var(TOKEN_ENV).ok())
                .unwrap_or_default();
            let mut config = ServerConfig::new(port.or(ctx.file.port).unwrap_or(DEFAULT_PORT), token);
            config.cors_origins = if cors_origins.is_empty() {
                ctx.file.cors_origins.clone()
            } else {
                cors_origins.clone()
            };
            config.eval_db = db.clone().or_else(|| ctx.file.db.clone());
            let ws = Arc::new(ctx.workspace()?);
            let rt = tokio::runtime::Runtime::new()
                .map_err(|e| CliError::domain("ServerError", format!("runtime: {e}")))?;
            rt.block_on(benchforge_server::serve(config, ws))?;
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<FileConfig, CliError> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| CliError::domain("InvalidInput", format!("{}: {e}", path.display())))
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let rendered = e.render().to_string();
                    let _ = write!(err, "{rendered}");
                    if !rendered.contains("Usage:") {
                        let _ = writeln!(err, "\n{}", Cli::command().render_usage());
                    }
                    EXIT_USAGE
                }
            };
        }
    };
    let file = match cli.config.as_deref().map(load_config).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => return report(&cli, e, out, err),
    };
    let mut ctx = Ctx { cli: &cli, file, out, err };
    match execute(&mut ctx) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&cli, e, ctx.out, ctx.err),
    }
}

fn report(cli: &Cli, e: CliError, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match e {
        CliError::Usage(message) => {
            let usage = Cli::command().render_usage();
            let _ = writeln!(err, "error: {message}\n\n{usage}");
            EXIT_USAGE
        }
        CliError::Domain { code, message } => {
            if cli.json {
                let body = ErrorOut {
                    code: &code,
                    message: &message,
                };
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&body).expect("error serializes"));
            }
            let _ = writeln!(err, "error[{code}]: {message}");
            EXIT_DOMAIN
        }
    }
}
