use std::cmp::Ordering;

use benchforge_core::retrieval::{EmbeddingVector, EntryKind, Payload, VectorIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 16;

fn payload(i: usize) -> Payload {
    Payload::Example {
        item_id: format!("i{i}"),
        sql: String::new(),
        nl: String::new(),
    }
}

/// Exact cosine ordering on integer vectors: compares dot/|v| via squared
/// cross-multiplication in i128, so equal cosines are recognised exactly.
fn cosine_cmp(q: &[i64], a: &[i64], b: &[i64]) -> Ordering {
    let dot = |x: &[i64], y: &[i64]| x.iter().zip(y).map(|(p, r)| (*p as i128) * (*r as i128)).sum::<i128>();
    let (da, db) = (dot(q, a), dot(q, b));
    let (na, nb) = (dot(a, a), dot(b, b));
    // sign(da)*da^2*nb vs sign(db)*db^2*na
    let sa = da.signum() * da * da * nb;
    let sb = db.signum() * db * db * na;
    sa.cmp(&sb)
}

/// Compares `VectorIndex::top_k` against a brute-force exact scan for every
/// query and k; panics on the first difference and returns the number of
/// (query, k) rankings checked.
pub fn check_top_k(seed: u64, entries: usize, queries: usize, ks: &[usize]) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw: Vec<Vec<i64>> = Vec::with_capacity(entries);
    for i in 0..entries {
        // A third of the entries repeat an earlier vector to force ties.
        if i > 0 && rng.gen_bool(0.33) {
            let j = rng.gen_range(0..i);
            raw.push(raw[j].clone());
        } else {
            raw.push((0..DIM).map(|_| rng.gen_range(-1000..=1000)).collect());
        }
    }
    let mut idx = VectorIndex::new();
    for (i, v) in raw.iter().enumerate() {
        let f: Vec<f64> = v.iter().map(|x| *x as f64).collect();
        idx.add(format!("e{i}"), EntryKind::Example, "", payload(i), EmbeddingVector::normalized(f))
            .unwrap();
    }
    let mut checked = 0;
    for qn in 0..queries {
        let q: Vec<i64> = if qn % 4 == 0 {
            raw[rng.gen_range(0..entries)].clone()
        } else {
            (0..DIM).map(|_| rng.gen_range(-1000..=1000)).collect()
        };
        let qv = EmbeddingVector::normalized(q.iter().map(|x| *x as f64).collect());
        let mut order: Vec<usize> = (0..entries).collect();
        order.sort_by(|&a, &b| cosine_cmp(&q, &raw[b], &raw[a]).then(a.cmp(&b)));
        for &k in ks {
            let got: Vec<String> = idx.top_k(&qv, k, None).into_iter().map(|(e, _)| e.entry_id.clone()).collect();
            let want: Vec<String> = order[..k].iter().map(|i| format!("e{i}")).collect();
            assert_eq!(got, want, "query {qn}, k = {k}");
            checked += 1;
        }
    }
    checked
}
