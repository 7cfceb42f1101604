use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use benchforge_cli::{run, AutoAcceptOutput, IngestOutput, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};
use benchforge_core::evaluation::EvalReport;
use benchforge_core::generation::{MockBackend, Phrasebook};
use benchforge_core::workflow::{AnnotationItem, ExportSummary, ItemState, ItemView, MemoryStore, Project, Workspace};
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

struct Run {
    code: i32,
    out: String,
    err: String,
}

impl Run {
    fn json<T: serde::de::DeserializeOwned>(&self) -> T {
        serde_json::from_str(&self.out).unwrap_or_else(|e| panic!("{e}\nstdout: {}\nstderr: {}", self.out, self.err))
    }
}

fn cli(root: &Path, args: &[&str]) -> Run {
    let mut argv = vec!["benchforge".to_string(), "--json".into(), "--root".into(), root.display().to_string()];
    argv.push("--phrasebook".into());
    argv.push(fixtures().join("invertible.json").display().to_string());
    argv.push("--backend".into());
    argv.push("mock".into());
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    Run {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn ok(root: &Path, args: &[&str]) -> Run {
    let r = cli(root, args);
    assert_eq!(r.code, EXIT_OK, "{args:?}\nstdout: {}\nstderr: {}", r.out, r.err);
    r
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn init_then_ingest_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let project: Project = ok(dir.path(), &["init", "demo"]).json();
    assert_eq!(project.project_id, "demo");
    let log = dir.path().join("log.sql");
    std::fs::write(
        &log,
        "SELECT name FROM students;\nselect  name\n from students;\nSELECT title FROM courses WHERE credits > 3;\n",
    )
    .unwrap();
    let out: IngestOutput = ok(dir.path(), &["ingest", "--queries", &path(&log)]).json();
    let r = out.queries.unwrap();
    assert_eq!((r.accepted, r.skipped_duplicate, r.parse_failures), (2, 1, 0));
    assert!(out.schema.is_none());
}

#[test]
fn export_on_empty_project_is_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["init", "empty"]);
    let r = cli(dir.path(), &["export", "--out", &path(&dir.path().join("x.json"))]);
    assert_eq!(r.code, EXIT_DOMAIN);
    let v: Value = r.json();
    assert_eq!(v["code"], "NothingAccepted");
    assert!(r.err.contains("NothingAccepted"));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn usage_errors_exit_two_with_synopsis() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["export"], &["ingest"], &["init", "x", "--dialect", "cobol"]] {
        let r = cli(dir.path(), args);
        assert_eq!(r.code, EXIT_USAGE, "{args:?}: {}", r.err);
        assert!(r.err.contains("Usage"), "{args:?}: {}", r.err);
        assert!(r.out.is_empty());
    }
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(run(["benchforge"], &mut out, &mut err), EXIT_USAGE);
    assert_eq!(run(["benchforge", "annotate", "--help"], &mut out, &mut err), EXIT_OK);
    let help = String::from_utf8(out).unwrap();
    assert!(help.contains("--auto-accept-rank1") && help.contains("NOT HUMAN REVIEWED"), "{help}");
}

#[test]
fn project_must_be_named_when_ambiguous() {
    let dir = tempfile::tempdir().unwrap();
    let r = cli(dir.path(), &["annotate"]);
    assert_eq!(r.code, EXIT_DOMAIN);
    assert_eq!(r.json::<Value>()["code"], "ProjectNotFound");
    ok(dir.path(), &["init", "a"]);
    ok(dir.path(), &["init", "b"]);
    assert_eq!(cli(dir.path(), &["annotate"]).code, EXIT_USAGE);
    let r = cli(dir.path(), &["annotate", "--project", "a"]);
    assert_eq!(r.json::<Value>()["code"], "QueueEmpty");
}

#[test]
fn config_file_overrides_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        json!({"annotator": "from-config", "project": {"generation": {"n_candidates": 2}}}).to_string(),
    )
    .unwrap();
    let c = path(&cfg);
    ok(dir.path(), &["--config", &c, "init", "cfg"]);
    let log = dir.path().join("q.sql");
    std::fs::write(&log, "SELECT name FROM students WHERE gpa > 3.5;").unwrap();
    ok(dir.path(), &["ingest", "--queries", &path(&log)]);
    let view: ItemView = ok(dir.path(), &["--config", &c, "annotate"]).json();
    assert_eq!(view.item.annotation.candidates.len(), 2);
    assert_eq!(view.item.lease.unwrap().annotator_id, "from-config");

    std::fs::write(&cfg, json!({"colour": "blue"}).to_string()).unwrap();
    let r = cli(dir.path(), &["--config", &c, "annotate"]);
    assert_eq!(r.code, EXIT_DOMAIN);
}

#[test]
fn manual_feedback_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let schema = fixtures().join("warehouse/schema.sql");
    ok(dir.path(), &["init", "manual", "--schema", &path(&schema), "--schema-id", "warehouse"]);
    let log = dir.path().join("q.sql");
    std::fs::write(&log, "SELECT name FROM students WHERE gpa > 3.5;").unwrap();
    ok(dir.path(), &["ingest", "--queries", &path(&log)]);
    let view: ItemView = ok(dir.path(), &["annotate", "--annotator", "ann"]).json();
    assert_eq!(view.item.annotation.candidates.len(), 4);
    let id = view.item.item_id.clone();

    let note = r#"{"kind":"refine","note":"mention the cutoff"}"#;
    let r = cli(dir.path(), &["feedback", "--item", &id, "--annotator", "bob", note]);
    assert_eq!(r.code, EXIT_DOMAIN);
    assert_eq!(r.json::<Value>()["code"], "LeaseMismatch");

    let item: AnnotationItem = ok(dir.path(), &["feedback", "--item", &id, "--annotator", "ann", note]).json();
    assert_eq!(item.annotation.refinement_notes, ["mention the cutoff"]);

    let event_file = dir.path().join("accept.json");
    let cid = item
        .annotation
        .candidates
        .iter()
        .rev()
        .find(|c| c.status == benchforge_core::generation::CandidateStatus::Proposed)
        .unwrap()
        .candidate_id
        .clone();
    std::fs::write(&event_file, json!({"kind": "accept", "candidate_id": cid, "final_text": "Who has a GPA over 3.5?"}).to_string())
        .unwrap();
    let at = format!("@{}", path(&event_file));
    let item: AnnotationItem = ok(dir.path(), &["feedback", "--item", &id, "--annotator", "ann", &at]).json();
    assert_eq!(item.state(), ItemState::Accepted);
    assert_eq!(item.accepted_text(), Some("Who has a GPA over 3.5?"));

    assert_eq!(cli(dir.path(), &["feedback", "--item", &id, "not json"]).code, EXIT_USAGE);
}

/// The whole hermetic pipeline, driven through the compiled binary.
#[test]
fn smoke_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ws");
    let bin = env!("CARGO_BIN_EXE_benchforge");
    let book = fixtures().join("invertible.json");
    let sh = |args: &[&str]| {
        let o = Command::new(bin)
            .arg("--json")
            .arg("--root")
            .arg(&root)
            .arg("--backend")
            .arg("mock")
            .arg("--phrasebook")
            .arg(&book)
            .args(args)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        (String::from_utf8(o.stdout).unwrap(), String::from_utf8(o.stderr).unwrap())
    };
    let schema = path(&fixtures().join("warehouse/schema.sql"));
    sh(&["init", "smoke", "--dialect", "sqlite", "--schema", &schema, "--schema-id", "warehouse"]);
    let (out, _) = sh(&["ingest", "--project", "smoke", "--queries", &path(&book)]);
    let ingest: IngestOutput = serde_json::from_str(&out).unwrap();
    assert_eq!(ingest.queries.unwrap().accepted, 6);
    let (out, err) = sh(&["annotate", "--project", "smoke", "--auto-accept-rank1"]);
    assert!(err.contains("without human review"));
    let auto: AutoAcceptOutput = serde_json::from_str(&out).unwrap();
    assert_eq!(auto.accepted_items.len(), 6);
    assert!(!auto.human_reviewed);

    let export = dir.path().join("bench.json");
    let (out, _) = sh(&["export", "--project", "smoke", "--out", &path(&export)]);
    assert_eq!(serde_json::from_str::<ExportSummary>(&out).unwrap().count, 6);

    let report_path = dir.path().join("report.json");
    let db = path(&fixtures().join("warehouse"));
    let (out, _) = sh(&["eval", "--project", "smoke", "--db", &db, "--out", &path(&report_path)]);
    let report: EvalReport = serde_json::from_str(&out).unwrap();
    assert_eq!(report.aggregates.execution_accuracy, 1.0);
    assert_eq!(report.aggregates.level_histogram, [0, 0, 0, 0, 6]);
    let on_disk: EvalReport = serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(on_disk, report);
    assert!(report_path.with_extension("txt").exists());

    sh(&["init", "again", "--schema", &schema, "--schema-id", "warehouse"]);
    sh(&["ingest", "--project", "again", "--queries", &path(&export), "--import-accepted"]);
    let second = dir.path().join("bench2.json");
    sh(&["export", "--project", "again", "--out", &path(&second)]);
    assert_eq!(std::fs::read(&export).unwrap(), std::fs::read(&second).unwrap());
}

async fn api(app: &axum::Router, method: Method, uri: &str, body: Value) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::AUTHORIZATION, "Bearer tok")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

#[tokio::test]
async fn api_and_cli_runs_export_the_same_file() {
    let dir = tempfile::tempdir().unwrap();
    let schema = path(&fixtures().join("warehouse/schema.sql"));
    let book = fixtures().join("invertible.json");
    ok(dir.path(), &["init", "Parity", "--dialect", "sqlite", "--schema", &schema, "--schema-id", "warehouse"]);
    ok(dir.path(), &["ingest", "--queries", &path(&book)]);
    ok(dir.path(), &["annotate", "--annotator", "ann", "--auto-accept-rank1"]);
    let cli_export = dir.path().join("cli.json");
    ok(dir.path(), &["export", "--out", &path(&cli_export)]);

    let ws = Workspace::new(
        Arc::new(MemoryStore::new()),
        Arc::new(MockBackend::with_phrasebook(Phrasebook::from_file(&book).unwrap())),
    );
    let app = benchforge_server::router(benchforge_server::AppState::new(Arc::new(ws), "tok", None), &[]);
    let (s, _) = api(&app, Method::POST, "/api/projects", json!({"name": "Parity", "dialect": "sqlite"})).await;
    assert_eq!(s, StatusCode::CREATED);
    let ddl = std::fs::read_to_string(fixtures().join("warehouse/schema.sql")).unwrap();
    api(&app, Method::POST, "/api/projects/parity/schema", json!({"content": ddl, "schema_id": "warehouse"})).await;
    let log = std::fs::read_to_string(&book).unwrap();
    api(&app, Method::POST, "/api/projects/parity/queries", json!({"content": log})).await;
    loop {
        let (s, body) = api(&app, Method::POST, "/api/projects/parity/next", json!({"annotator_id": "ann"})).await;
        if s == StatusCode::NOT_FOUND {
            break;
        }
        assert_eq!(s, StatusCode::OK, "{body}");
        let view: ItemView = serde_json::from_str(&body).unwrap();
        let cands = &view.item.annotation(&view.active_target).unwrap().candidates;
        let first = cands.iter().find(|c| c.status == benchforge_core::generation::CandidateStatus::Proposed).unwrap();
        let (s, body) = api(
            &app,
            Method::POST,
            &format!("/api/items/{}/accept", view.item.item_id),
            json!({"annotator_id": "ann", "candidate_id": first.candidate_id}),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{body}");
    }
    let (s, api_export) = api(&app, Method::POST, "/api/projects/parity/export", json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(api_export.as_bytes(), std::fs::read(&cli_export).unwrap().as_slice());
}
