use std::collections::HashMap;

use benchforge_core::retrieval::TrigramEmbedder;

#[path = "support/knn.rs"]
mod knn;

#[test]
fn top_k_equals_brute_force_scan() {
    assert_eq!(knn::check_top_k(42, 1000, 100, &[1, 3, 10]), 300);
}

fn trigram_cosine(a: &str, b: &str) -> f64 {
    let grams = |s: &str| {
        let chars: Vec<char> = s.to_lowercase().chars().collect();
        let mut m: HashMap<String, f64> = HashMap::new();
        for w in chars.windows(3) {
            *m.entry(w.iter().collect()).or_default() += 1.0;
        }
        m
    };
    let (ga, gb) = (grams(a), grams(b));
    let dot: f64 = ga.iter().map(|(g, c)| c * gb.get(g).copied().unwrap_or(0.0)).sum();
    let norm = |m: &HashMap<String, f64>| m.values().map(|c| c * c).sum::<f64>().sqrt();
    dot / (norm(&ga) * norm(&gb))
}

#[test]
fn trigram_embedding_cosine_matches_unhashed_counts() {
    // A wide space keeps these short strings collision free, so the hashed
    // embedding must agree with exact trigram counting.
    let emb = TrigramEmbedder::new(1 << 20);
    let pairs = [
        ("SELECT name FROM students", "SELECT name FROM instructors"),
        ("SELECT title FROM courses WHERE credits > 3", "select title from courses"),
        ("students(name TEXT, gpa REAL)", "SELECT gpa FROM students"),
        ("abcabc", "abc"),
    ];
    for (a, b) in pairs {
        let got = emb.embed_text(a).dot(&emb.embed_text(b));
        let want = trigram_cosine(a, b);
        assert!((got - want).abs() < 1e-9, "{a} / {b}: {got} vs {want}");
    }
}
