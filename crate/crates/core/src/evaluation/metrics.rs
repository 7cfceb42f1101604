//! Surface-form metrics over descriptions and SQL text.

use std::collections::HashMap;

use crate::generation::canonical_sql;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Canonical renderings equal; unparsable input compares whitespace-normalized.
pub fn exact_match(a: &str, b: &str) -> bool {
    canonical_sql(a) == canonical_sql(b)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-4 with uniform weights. Unigram precision is unsmoothed; higher
/// orders use add-one smoothing. The brevity penalty uses the reference
/// length closest to the candidate's (shorter wins ties).
pub fn bleu(candidate: &str, references: &[&str]) -> f64 {
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand_counts = ngram_counts(&cand, n);
        let total: usize = cand_counts.values().sum();
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let matched: usize = cand_counts
            .iter()
            .map(|(g, c)| {
                let max_ref = ref_counts.iter().map(|rc| rc.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                (*c).min(max_ref)
            })
            .sum();
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln() / 4.0;
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1 of the token-level longest common subsequence.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let l = lcs_len(&c, &r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / c.len() as f64;
    let rec = l as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_disjoint() {
        assert_eq!(bleu("a b c", &["a b c"]), 1.0);
        assert_eq!(bleu("x y z", &["a b c"]), 0.0);
        assert_eq!(bleu("", &["a"]), 0.0);
        assert_eq!(rouge_l("q r", "q r"), 1.0);
        assert_eq!(rouge_l("q r", "s t"), 0.0);
    }

    #[test]
    fn exact_match_is_syntactic() {
        assert!(exact_match("select a from t", "SELECT a FROM t"));
        assert!(!exact_match("SELECT a FROM t", "SELECT b FROM t"));
        assert!(!exact_match("SELECT a AS x FROM t", "SELECT a AS y FROM t"));
        assert!(exact_match("not  sql at all", "not sql at all"));
    }

    #[test]
    fn tokenization_splits_punctuation() {
        assert_eq!(tokenize("GPA>3.5, Alice's"), ["gpa", "3", "5", "alice", "s"]);
    }
}
