use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use benchforge_core::generation::{
    build_prompt, generate_candidates, merge_descriptions, BackendError, CandidateOrigin, CompletionBackend,
    GenerationError, GenerationParams, HttpBackend, MockBackend, PromptContext, PromptMode, RetryPolicy,
    DESCRIBE_TEMPLATE,
};
use benchforge_core::retrieval::ExamplePair;
use benchforge_core::sql::{decompose, load_schema, parse_sql, Dialect, SchemaFormat, TableDef};
use benchforge_core::workflow::{Feedback, IngestOptions, MemoryStore, ProjectConfig, Workspace};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn tables() -> Vec<TableDef> {
    let ddl = std::fs::read(fixtures().join("warehouse/schema.sql")).unwrap();
    load_schema(&ddl, SchemaFormat::DdlText, Some("warehouse")).unwrap().tables
}

fn corpus_sql() -> Vec<String> {
    let v: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("corpus.json")).unwrap()).unwrap();
    v.iter().map(|e| e["sql"].as_str().unwrap().to_string()).collect()
}

fn random_context(rng: &mut ChaCha8Rng, sqls: &[String], tables: &[TableDef]) -> PromptContext {
    let n_tables = rng.gen_range(0..4);
    PromptContext {
        target_sql: sqls.choose(rng).unwrap().clone(),
        tables: tables.choose_multiple(rng, n_tables).cloned().collect(),
        examples: (0..rng.gen_range(0..4))
            .map(|i| ExamplePair {
                sql: sqls.choose(rng).unwrap().clone(),
                nl: format!("example question {i}"),
            })
            .collect(),
        refinement_notes: (0..rng.gen_range(0..3)).map(|i| format!("note {i}")).collect(),
        mode: PromptMode::Describe,
        sub_descriptions: Vec::new(),
    }
}

#[test]
fn default_generation_yields_exactly_four_reproducibly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sqls = corpus_sql();
    let tabs = tables();
    let mock = MockBackend::new();
    for run in 0..300 {
        let ctx = random_context(&mut rng, &sqls, &tabs);
        let params = GenerationParams::default();
        let a = generate_candidates(&ctx, &params, &mock).unwrap();
        assert_eq!(a.candidates.len(), 4, "run {run}");
        let keys: HashSet<String> = a.candidates.iter().map(|c| c.text.to_lowercase()).collect();
        assert_eq!(keys.len(), 4, "run {run}: duplicates");
        let b = generate_candidates(&ctx, &params, &mock).unwrap();
        let texts = |g: &benchforge_core::generation::Generation| {
            g.candidates.iter().map(|c| c.text.clone()).collect::<Vec<_>>()
        };
        assert_eq!(texts(&a), texts(&b), "run {run}: not reproducible");
        assert!(a.candidates.iter().all(|c| c.model_id == a.model_id && c.prompt_hash == a.prompt_hash));

        let n = rng.gen_range(1..=9);
        let p = GenerationParams {
            n_candidates: n,
            ..GenerationParams::default()
        };
        assert_eq!(generate_candidates(&ctx, &p, &mock).unwrap().candidates.len(), n);
    }
}

#[test]
fn refinement_note_appears_verbatim() {
    let ctx = PromptContext {
        target_sql: "SELECT name FROM students WHERE gpa > 3.5".into(),
        tables: tables()[..1].to_vec(),
        refinement_notes: vec!["emphasize the filtering logic".into()],
        ..Default::default()
    };
    let p = build_prompt(&ctx, DESCRIBE_TEMPLATE).unwrap();
    assert!(p.contains("Annotator guidance: emphasize the filtering logic"));
    assert_eq!(p, build_prompt(&ctx, DESCRIBE_TEMPLATE).unwrap());
}

const STOPWORDS: &[&str] = &["a", "all", "the", "of", "in", "those", "list", "and", "for", "each", "to"];

fn content_words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

#[test]
fn merged_candidates_cover_every_step() {
    let sql = "SELECT COUNT(*) FROM enrollments WHERE section_id IN (SELECT section_id FROM sections WHERE term_code IN ('2024FA'))";
    let ast = parse_sql(sql, Dialect::Generic).unwrap();
    let plan = decompose(&ast).unwrap();
    assert_eq!(plan.steps.len(), 1);
    let sub_nl = vec![
        ("step_1".to_string(), "list all term codes".to_string()),
        ("final".to_string(), "count students enrolled in those terms".to_string()),
    ];
    let mock = MockBackend::new();
    let params = GenerationParams::default();
    let g = merge_descriptions(sql, &plan, &sub_nl, &tables(), &params, &mock).unwrap();
    assert_eq!(g.candidates.len(), 4);
    for c in &g.candidates {
        assert_eq!(c.origin, CandidateOrigin::Merged);
        let words: HashSet<String> = content_words(&c.text).into_iter().collect();
        for (_, nl) in &sub_nl {
            assert!(
                content_words(nl).iter().any(|w| words.contains(w)),
                "`{}` shares nothing with `{nl}`",
                c.text
            );
        }
    }
    let again = merge_descriptions(sql, &plan, &sub_nl, &tables(), &params, &mock).unwrap();
    assert_eq!(
        g.candidates.iter().map(|c| &c.text).collect::<Vec<_>>(),
        again.candidates.iter().map(|c| &c.text).collect::<Vec<_>>()
    );
    let missing = merge_descriptions(sql, &plan, &sub_nl[..1], &tables(), &params, &mock).unwrap_err();
    assert_eq!(missing, GenerationError::MissingSubDescription("final".into()));
}

struct Recorder {
    inner: MockBackend,
    prompts: Mutex<Vec<String>>,
}

impl CompletionBackend for Recorder {
    fn model_id(&self, params: &GenerationParams) -> String {
        self.inner.model_id(params)
    }
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<Vec<String>, BackendError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        self.inner.complete(prompt, params)
    }
}

#[test]
fn regeneration_prompts_keep_every_note_in_order() {
    let rec = Arc::new(Recorder {
        inner: MockBackend::new(),
        prompts: Mutex::new(Vec::new()),
    });
    let ws = Workspace::new(Arc::new(MemoryStore::new()), rec.clone());
    let pid = ws.create_project("Notes", Dialect::Sqlite, ProjectConfig::default()).unwrap().project_id;
    ws.ingest_queries(&pid, "SELECT name FROM students WHERE gpa > 3.5", &IngestOptions::default())
        .unwrap();
    let item = ws.annotate_next(&pid, "a").unwrap();
    let notes = ["mention the GPA cutoff", "say students, not pupils", "keep it short"];
    for n in notes {
        ws.submit_feedback(&item.item_id, "a", Feedback::Refine { note: n.into() })
            .unwrap();
    }
    let prompts = rec.prompts.lock().unwrap();
    let last_per_round: Vec<&String> = {
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for p in prompts.iter() {
            if !seen.contains(p) {
                seen.push(p.clone());
                out.push(p);
            }
        }
        out
    };
    assert_eq!(last_per_round.len(), 4);
    for (round, p) in last_per_round.iter().enumerate() {
        let mut pos = 0;
        for n in &notes[..round] {
            let at = p[pos..].find(n).unwrap_or_else(|| panic!("round {round} lacks `{n}`"));
            pos += at + n.len();
        }
    }
}

/// (authorization header, body) per request.
type Seen = Arc<Mutex<Vec<(String, String)>>>;

/// Minimal HTTP/1.1 responder that answers each connection with the next
/// canned (status, body) and records request bodies.
fn stub_server(responses: Vec<(u16, String)>) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let lower = l.to_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = l["authorization:".len()..].trim().to_string();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((auth, String::from_utf8(buf).unwrap()));
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        base_delay: Duration::from_millis(5),
    }
}

#[test]
fn remote_500_three_times_is_backend_error() {
    let (url, seen) = stub_server(vec![(500, "{}".into()); 3]);
    let backend = HttpBackend::new(url, Some("k".into()), None).with_retry(fast_retry());
    let err = backend.complete("hi", &GenerationParams::default()).unwrap_err();
    assert_eq!(err.attempts(), 3);
    assert!(matches!(err, BackendError::Status { status: 500, .. }));
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn remote_choices_keep_order_and_wire_format() {
    let body = serde_json::json!({
        "choices": [
            {"index": 0, "message": {"role": "assistant", "content": "first"}},
            {"index": 1, "message": {"role": "assistant", "content": "second"}},
            {"index": 2, "message": {"role": "assistant", "content": "third"}}
        ]
    })
    .to_string();
    let (url, seen) = stub_server(vec![(503, "{}".into()), (200, body)]);
    let backend = HttpBackend::new(url, Some("secret".into()), Some("gpt-4o".into())).with_retry(fast_retry());
    let params = GenerationParams {
        n_candidates: 3,
        ..GenerationParams::default()
    };
    let texts = backend.complete("describe this", &params).unwrap();
    assert_eq!(texts, ["first", "second", "third"]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].0, "Bearer secret");
    let req: serde_json::Value = serde_json::from_str(&seen[1].1).unwrap();
    assert_eq!(req["model"], "gpt-4o");
    assert_eq!(req["n"], 3);
    assert_eq!(req["messages"][0]["role"], "user");
    assert_eq!(req["messages"][0]["content"], "describe this");
    assert_eq!(req["max_tokens"], 256);
    assert!(req["temperature"].is_number());
}
