//! Acceptance summary: one PASS/FAIL line per criterion, tolerances and
//! time limits pinned below. Exits non-zero if any criterion fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use benchforge_cli::{run, AutoAcceptOutput, IngestOutput};
use benchforge_core::evaluation::{
    bleu, classify_rubric, exec::row_cmp, exec_accuracy_match, rouge_l, EvalReport, ExecBackend, SqliteDb,
};
use benchforge_core::generation::{generate_candidates, GenerationParams, MockBackend, PromptContext};
use benchforge_core::retrieval::ExamplePair;
use benchforge_core::sql::{decompose, load_schema, parse_sql, plan_to_sql, render_sql, SchemaCatalog, SchemaFormat};
use benchforge_core::Dialect;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[path = "../../core/tests/support/fuzz.rs"]
mod fuzz;
#[path = "../../core/tests/support/knn.rs"]
mod knn;

const DECOMPOSITION_LIMIT: Duration = Duration::from_secs(10);
const DECOMPOSITION_MIN_QUERIES: usize = 20;
const ROUND_TRIP_LIMIT: Duration = Duration::from_secs(5);
const ROUND_TRIP_MIN_QUERIES: usize = 50;
const RETRIEVAL_LIMIT: Duration = Duration::from_secs(30);
const FUZZ_SEQUENCES: usize = 10_000;
const SMOKE_LIMIT: Duration = Duration::from_secs(60);
const ROUGE_TOLERANCE: f64 = 1e-9;
const BLEU_TOLERANCE: f64 = 1e-9;
/// BLEU-4 of "the cat sat" against "the cat sat down": every n-gram order
/// matches fully (orders 3 and 4 via add-one smoothing of 0/0), brevity
/// penalty exp(1 - 4/3).
const BLEU_GOLDEN: f64 = 0.716_531_310_573_789_3;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn read_json<T: serde::de::DeserializeOwned>(name: &str) -> T {
    serde_json::from_str(&std::fs::read_to_string(fixtures().join(name)).unwrap()).unwrap()
}

fn warehouse() -> SqliteDb {
    SqliteDb::load_fixture(&fixtures().join("warehouse")).unwrap()
}

fn catalog() -> SchemaCatalog {
    let ddl = std::fs::read(fixtures().join("warehouse/schema.sql")).unwrap();
    load_schema(&ddl, SchemaFormat::DdlText, Some("warehouse")).unwrap()
}

#[derive(Deserialize)]
struct CorpusEntry {
    id: String,
    sql: String,
    depth: usize,
    #[serde(default)]
    correlated: bool,
    #[serde(default)]
    has_with: bool,
}

#[derive(Deserialize)]
struct ExecPair {
    pred: String,
    gold: String,
    expected: bool,
}

#[derive(Deserialize)]
struct RubricCase {
    original: String,
    regenerated: String,
    level: u8,
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    if took < limit {
        Ok(())
    } else {
        Err(format!("took {:.2}s, limit {}s", took.as_secs_f64(), limit.as_secs()))
    }
}

fn decomposition_soundness() -> Result<String, String> {
    let start = Instant::now();
    let db = warehouse();
    let corpus: Vec<CorpusEntry> = read_json("corpus.json");
    let nested: Vec<&CorpusEntry> = corpus
        .iter()
        .filter(|e| e.depth >= 1 && !e.correlated && !e.has_with)
        .collect();
    if nested.len() < DECOMPOSITION_MIN_QUERIES {
        return Err(format!("only {} uncorrelated nested queries", nested.len()));
    }
    let mut equal = 0;
    let mut failures = Vec::new();
    for e in &nested {
        let outcome = (|| {
            let ast = parse_sql(&e.sql, Dialect::Generic).map_err(|x| x.to_string())?;
            let plan = decompose(&ast).map_err(|x| x.to_string())?;
            let mut want = db.execute(&e.sql).map_err(|x| x.to_string())?.rows;
            let mut got = db.execute(&plan_to_sql(&plan)).map_err(|x| x.to_string())?.rows;
            want.sort_by(|a, b| row_cmp(a, b));
            got.sort_by(|a, b| row_cmp(a, b));
            Ok::<bool, String>(want == got)
        })();
        match outcome {
            Ok(true) => equal += 1,
            Ok(false) => failures.push(format!("{}: multiset differs", e.id)),
            Err(msg) => failures.push(format!("{}: {msg}", e.id)),
        }
    }
    within(start, DECOMPOSITION_LIMIT)?;
    if failures.is_empty() {
        Ok(format!("{equal}/{} nested queries return equal multisets", nested.len()))
    } else {
        Err(format!("{equal}/{}; {}", nested.len(), failures.join("; ")))
    }
}

fn parser_round_trip() -> Result<String, String> {
    let start = Instant::now();
    let corpus: Vec<CorpusEntry> = read_json("corpus.json");
    if corpus.len() < ROUND_TRIP_MIN_QUERIES {
        return Err(format!("corpus has {} queries", corpus.len()));
    }
    let upper: Vec<String> = corpus.iter().map(|e| e.sql.to_uppercase()).collect();
    for needle in ["JOIN", "UNION", "ORDER BY", "LIMIT"] {
        if !upper.iter().any(|s| s.contains(needle)) {
            return Err(format!("corpus lacks {needle}"));
        }
    }
    if !corpus.iter().any(|e| e.depth >= 1) {
        return Err("corpus lacks subqueries".into());
    }
    let mut same = 0;
    for e in &corpus {
        let ast = parse_sql(&e.sql, Dialect::Generic).map_err(|x| format!("{}: {x}", e.id))?;
        let again = parse_sql(&render_sql(&ast), Dialect::Generic).map_err(|x| format!("{}: {x}", e.id))?;
        if ast != again {
            return Err(format!("{}: structure changed", e.id));
        }
        same += 1;
    }
    within(start, ROUND_TRIP_LIMIT)?;
    Ok(format!("{same}/{} queries structurally equal after render", corpus.len()))
}

fn retrieval_exactness() -> Result<String, String> {
    let start = Instant::now();
    let checked = knn::check_top_k(42, 1000, 100, &[1, 3, 10]);
    within(start, RETRIEVAL_LIMIT)?;
    Ok(format!("{checked} rankings (1000 entries x 100 queries x k in {{1,3,10}}) equal the exact scan"))
}

fn candidate_contract() -> Result<String, String> {
    let corpus: Vec<CorpusEntry> = read_json("corpus.json");
    let tables = catalog().tables;
    let mock = MockBackend::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut runs = 0;
    for (i, e) in corpus.iter().enumerate() {
        for seeded in [None, Some(i as u64)] {
            let n_tables = rng.gen_range(0..4);
            let ctx = PromptContext {
                target_sql: e.sql.clone(),
                tables: tables.choose_multiple(&mut rng, n_tables).cloned().collect(),
                examples: (0..rng.gen_range(0..3))
                    .map(|k| ExamplePair {
                        sql: corpus.choose(&mut rng).unwrap().sql.clone(),
                        nl: format!("example {k}"),
                    })
                    .collect(),
                ..Default::default()
            };
            let params = GenerationParams {
                seed: seeded,
                ..GenerationParams::default()
            };
            let a = generate_candidates(&ctx, &params, &mock).map_err(|x| format!("{}: {x}", e.id))?;
            let b = generate_candidates(&ctx, &params, &mock).map_err(|x| format!("{}: {x}", e.id))?;
            if a.candidates.len() != 4 {
                return Err(format!("{}: {} candidates", e.id, a.candidates.len()));
            }
            let distinct: HashSet<String> = a.candidates.iter().map(|c| c.text.to_lowercase()).collect();
            if distinct.len() != 4 {
                return Err(format!("{}: duplicate candidates", e.id));
            }
            let bytes = |g: &benchforge_core::generation::Generation| {
                g.candidates.iter().map(|c| c.text.clone().into_bytes()).collect::<Vec<_>>()
            };
            if bytes(&a) != bytes(&b) {
                return Err(format!("{}: second run differs", e.id));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs}/{runs} runs returned exactly 4 distinct candidates, byte-identical on rerun"))
}

fn state_machine_fuzz() -> Result<String, String> {
    let stats = fuzz::run(0x5eed, FUZZ_SEQUENCES);
    if stats.applied <= FUZZ_SEQUENCES * 3 || stats.accepts <= FUZZ_SEQUENCES / 10 {
        return Err(format!("fuzzer too weak: {stats:?}"));
    }
    Ok(format!(
        "{FUZZ_SEQUENCES} sequences, {} events applied, {} rejected, {} accepts; 0 violations, replay exact",
        stats.applied, stats.rejected, stats.accepts
    ))
}

fn rubric_decision_procedure() -> Result<String, String> {
    let db = warehouse();
    let cat = catalog();
    let cases: Vec<RubricCase> = read_json("rubric_cases.json");
    let mut per_level = [0usize; 5];
    for c in &cases {
        let j = classify_rubric(&c.original, &c.regenerated, &db, &cat);
        if j.level != c.level {
            return Err(format!("`{}` graded {} ({:?}), intended {}", c.regenerated, j.level, j.reason, c.level));
        }
        per_level[usize::from(c.level) - 1] += 1;
        let exec = exec_accuracy_match(&c.regenerated, &c.original, &db);
        if j.level == 5 && !exec {
            return Err(format!("level 5 without execution match: {}", c.regenerated));
        }
        if j.level <= 3 && exec {
            return Err(format!("level {} with execution match: {}", j.level, c.regenerated));
        }
        let fails = db.execute(&c.regenerated).is_err();
        if fails != (j.level == 1) {
            return Err(format!("level-1 trigger disagrees with execution failure: {}", c.regenerated));
        }
    }
    if per_level != [3; 5] {
        return Err(format!("case counts per level {per_level:?}"));
    }
    Ok(format!("{}/{} cases at intended level (3 per level); consistency holds", cases.len(), cases.len()))
}

fn execution_accuracy_semantics() -> Result<String, String> {
    let db = warehouse();
    let pairs: Vec<ExecPair> = read_json("exec_pairs.json");
    if pairs.len() != 10 {
        return Err(format!("{} pairs", pairs.len()));
    }
    for p in &pairs {
        let got = exec_accuracy_match(&p.pred, &p.gold, &db);
        if got != p.expected {
            return Err(format!("`{}` vs `{}`: got {got}, expected {}", p.pred, p.gold, p.expected));
        }
    }
    Ok("10/10 crafted pairs match their frozen expectations".into())
}

fn metric_golden_values() -> Result<String, String> {
    let s = "show the names of all students";
    let identity = bleu(s, &[s]);
    if identity != 1.0 {
        return Err(format!("bleu identity {identity}"));
    }
    let r = rouge_l("a b c d", "a c d e");
    if (r - 0.75).abs() > ROUGE_TOLERANCE {
        return Err(format!("rouge_l {r}"));
    }
    let hand = (1.0f64 - 4.0 / 3.0).exp();
    if (hand - BLEU_GOLDEN).abs() > BLEU_TOLERANCE {
        return Err("golden constant disagrees with its derivation".into());
    }
    let b = bleu("the cat sat", &["the cat sat down"]);
    if (b - BLEU_GOLDEN).abs() > BLEU_TOLERANCE {
        return Err(format!("bleu golden {b}, expected {BLEU_GOLDEN}"));
    }
    Ok(format!("bleu identity 1.0, rouge_l {r}, bleu golden {b:.12} (tol 1e-9)"))
}

fn cli(root: &Path, args: &[&str]) -> Result<String, String> {
    let book = fixtures().join("invertible.json");
    let mut argv: Vec<String> = vec!["benchforge".into(), "--json".into(), "--backend".into(), "mock".into()];
    argv.extend(["--root".to_string(), root.display().to_string()]);
    argv.extend(["--phrasebook".to_string(), book.display().to_string()]);
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    if code != 0 {
        return Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err)));
    }
    Ok(String::from_utf8(out).unwrap())
}

fn end_to_end_smoke() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ws");
    let p = |x: &Path| x.display().to_string();
    let schema = p(&fixtures().join("warehouse/schema.sql"));
    let book = p(&fixtures().join("invertible.json"));
    cli(&root, &["init", "smoke", "--dialect", "sqlite", "--schema", &schema, "--schema-id", "warehouse"])?;
    let ingest: IngestOutput =
        serde_json::from_str(&cli(&root, &["ingest", "--project", "smoke", "--queries", &book])?).unwrap();
    let n = ingest.queries.map_or(0, |r| r.accepted);
    let auto: AutoAcceptOutput =
        serde_json::from_str(&cli(&root, &["annotate", "--project", "smoke", "--auto-accept-rank1"])?).unwrap();
    if auto.accepted_items.len() != n {
        return Err(format!("accepted {} of {n} items", auto.accepted_items.len()));
    }
    let first = dir.path().join("bench.json");
    cli(&root, &["export", "--project", "smoke", "--out", &p(&first)])?;
    let db = p(&fixtures().join("warehouse"));
    let report: EvalReport =
        serde_json::from_str(&cli(&root, &["eval", "--project", "smoke", "--db", &db])?).unwrap();
    let a = &report.aggregates;
    if a.execution_accuracy != 1.0 || a.level_histogram != [0, 0, 0, 0, n] {
        return Err(format!("accuracy {}, histogram {:?}", a.execution_accuracy, a.level_histogram));
    }
    cli(&root, &["init", "reimport", "--schema", &schema, "--schema-id", "warehouse"])?;
    cli(&root, &["ingest", "--project", "reimport", "--queries", &p(&first), "--import-accepted"])?;
    let second = dir.path().join("bench2.json");
    cli(&root, &["export", "--project", "reimport", "--out", &p(&second)])?;
    if std::fs::read(&first).unwrap() != std::fs::read(&second).unwrap() {
        return Err("export -> ingest -> export changed bytes".into());
    }
    within(start, SMOKE_LIMIT)?;
    Ok(format!("{n} items, execution accuracy 1.0, all level 5, round trip byte-identical"))
}

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("decomposition_soundness", decomposition_soundness),
        ("parser_round_trip", parser_round_trip),
        ("retrieval_exactness", retrieval_exactness),
        ("candidate_contract", candidate_contract),
        ("state_machine_fuzz", state_machine_fuzz),
        ("rubric_decision_procedure", rubric_decision_procedure),
        ("execution_accuracy_semantics", execution_accuracy_semantics),
        ("metric_golden_values", metric_golden_values),
        ("end_to_end_smoke", end_to_end_smoke),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.2}s]");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
