//! Execution-accuracy comparison of two result tables.

use std::cmp::Ordering;

use super::exec::{row_cmp, ExecBackend, ResultTable, Value};

/// Column permutations tried before giving up on alignment.
const MAX_PERMUTATIONS: usize = 50_000;

fn column(t: &ResultTable, i: usize) -> Vec<Value> {
    t.rows.iter().map(|r| r[i].clone()).collect()
}

fn values_eq(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.total_cmp(y) == Ordering::Equal)
}

fn sorted(mut v: Vec<Value>) -> Vec<Value> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

fn sorted_rows(mut rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    rows.sort_by(|a, b| row_cmp(a, b));
    rows
}

struct Aligner<'a> {
    gold_rows: Vec<Vec<Value>>,
    pred: &'a ResultTable,
    options: Vec<Vec<usize>>,
    ordered: bool,
    tried: usize,
}

impl Aligner<'_> {
    fn check(&mut self, perm: &[usize]) -> bool {
        self.tried += 1;
        let rows: Vec<Vec<Value>> = self
            .pred
            .rows
            .iter()
            .map(|r| perm.iter().map(|&i| r[i].clone()).collect())
            .collect();
        let rows = if self.ordered { rows } else { sorted_rows(rows) };
        rows.iter()
            .zip(&self.gold_rows)
            .all(|(a, b)| row_cmp(a, b) == Ordering::Equal)
    }

    fn search(&mut self, perm: &mut Vec<usize>, used: &mut [bool]) -> bool {
        if self.tried >= MAX_PERMUTATIONS {
            return false;
        }
        let j = perm.len();
        if j == self.options.len() {
            return self.check(perm);
        }
        for k in 0..self.options[j].len() {
            let i = self.options[j][k];
            if used[i] {
                continue;
            }
            used[i] = true;
            perm.push(i);
            if self.search(perm, used) {
                return true;
            }
            perm.pop();
            used[i] = false;
        }
        false
    }
}

/// Equal results up to a reordering of `pred`'s columns. With `ordered`,
/// row sequences must match; otherwise row multisets.
pub fn results_match(gold: &ResultTable, pred: &ResultTable, ordered: bool) -> bool {
    let width = gold.arity();
    if width != pred.arity() || gold.rows.len() != pred.rows.len() {
        return false;
    }
    if width == 0 {
        return true;
    }
    let key = |t: &ResultTable, i: usize| {
        let c = column(t, i);
        if ordered {
            c
        } else {
            sorted(c)
        }
    };
    let pred_keys: Vec<Vec<Value>> = (0..width).map(|i| key(pred, i)).collect();
    let mut options = Vec::with_capacity(width);
    for j in 0..width {
        let g = key(gold, j);
        let mut opts: Vec<usize> = (0..width).filter(|&i| values_eq(&g, &pred_keys[i])).collect();
        if opts.is_empty() {
            return false;
        }
        // Prefer the same position so the identity alignment is tried first.
        opts.sort_by_key(|&i| i != j);
        options.push(opts);
    }
    let gold_rows = if ordered {
        gold.rows.clone()
    } else {
        sorted_rows(gold.rows.clone())
    };
    let mut aligner = Aligner {
        gold_rows,
        pred,
        options,
        ordered,
        tried: 0,
    };
    aligner.search(&mut Vec::with_capacity(width), &mut vec![false; width])
}

/// True iff both statements execute and their results agree, as row
/// sequences when the gold query is ordered and as multisets otherwise.
pub fn exec_accuracy_match(pred_sql: &str, gold_sql: &str, db: &dyn ExecBackend) -> bool {
    if pred_sql.trim().is_empty() || gold_sql.trim().is_empty() {
        return false;
    }
    let (Ok(gold), Ok(pred)) = (db.execute(gold_sql), db.execute(pred_sql)) else {
        return false;
    };
    results_match(&gold, &pred, gold.ordered)
}
