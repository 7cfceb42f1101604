use benchforge_bench::{corpus_sql, random_index, random_vector};
use benchforge_core::evaluation::{bleu, rouge_l};
use benchforge_core::retrieval::TrigramEmbedder;
use benchforge_core::sql::{parse_sql, render_sql, Dialect};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn parsing(c: &mut Criterion) {
    let corpus = corpus_sql();
    c.bench_function("parse_render_corpus", |b| {
        b.iter(|| {
            for sql in &corpus {
                let ast = parse_sql(black_box(sql), Dialect::Generic).unwrap();
                black_box(render_sql(&ast));
            }
        })
    });
}

fn retrieval(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_k");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in [1_000, 10_000] {
        let idx = random_index(n, 256, 7);
        let q = random_vector(&mut rng, 256);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(idx.top_k(&q, 10, None).len()))
        });
    }
    group.finish();
    let emb = TrigramEmbedder::default();
    let sql = "SELECT s.name, d.dept_name FROM students AS s JOIN departments AS d ON s.dept_id = d.dept_id";
    c.bench_function("trigram_embed", |b| b.iter(|| black_box(emb.embed_text(black_box(sql)))));
}

fn metrics(c: &mut Criterion) {
    let cand = "List the names of students whose grade point average is above three and a half";
    let reference = "What are the names of students whose GPA is above 3.5?";
    c.bench_function("bleu", |b| b.iter(|| black_box(bleu(black_box(cand), &[reference]))));
    c.bench_function("rouge_l", |b| b.iter(|| black_box(rouge_l(black_box(cand), reference))));
}

criterion_group!(benches, parsing, retrieval, metrics);
criterion_main!(benches);
