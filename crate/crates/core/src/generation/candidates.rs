use std::collections::HashSet;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::backend::{CompletionBackend, GenerationParams};
use super::prompt::{build_prompt, prompt_hash, PromptContext, PromptMode, DESCRIBE_TEMPLATE, MERGE_TEMPLATE};
use super::{Candidate, CandidateOrigin, CandidateStatus, GenerationError};
use crate::sql::{DecompositionPlan, TableDef};

/// Backend calls allowed to top up a short completion list.
const MAX_FILL_CALLS: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prompt: String,
    pub prompt_hash: String,
    pub model_id: String,
    pub candidates: Vec<Candidate>,
}

fn dedup_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn request(
    prompt: &str,
    params: &GenerationParams,
    backend: &dyn CompletionBackend,
    seed_offset: u64,
) -> Result<Vec<String>, GenerationError> {
    let mut out = Vec::new();
    for call in 0..MAX_FILL_CALLS {
        let p = if seed_offset == 0 && call == 0 {
            params.clone()
        } else {
            params.with_seed_offset(seed_offset + call * 1000)
        };
        let texts = backend.complete(prompt, &p)?;
        let empty = texts.is_empty();
        out.extend(texts);
        if out.len() >= params.n_candidates || empty {
            break;
        }
    }
    out.truncate(params.n_candidates);
    Ok(out)
}

fn absorb(texts: Vec<String>, kept: &mut Vec<String>, seen: &mut HashSet<String>, collided: &mut Vec<String>) {
    for t in texts {
        let t = t.trim().to_string();
        if t.is_empty() {
            continue;
        }
        if seen.insert(dedup_key(&t)) {
            kept.push(t);
        } else {
            collided.push(t);
        }
    }
}

fn run(
    prompt: String,
    params: &GenerationParams,
    backend: &dyn CompletionBackend,
    origin: CandidateOrigin,
) -> Result<Generation, GenerationError> {
    params.validate().map_err(GenerationError::InvalidParams)?;
    let n = params.n_candidates;
    let hash = prompt_hash(&prompt);
    let mut kept = Vec::new();
    let mut seen = HashSet::new();
    let mut collided = Vec::new();
    absorb(request(&prompt, params, backend, 0)?, &mut kept, &mut seen, &mut collided);
    if kept.len() < n {
        absorb(request(&prompt, params, backend, 1)?, &mut kept, &mut seen, &mut collided);
    }
    if kept.is_empty() {
        return Err(GenerationError::EmptyCompletion);
    }
    let mut k = 1;
    while kept.len() < n {
        let base = collided.get(k - 1).cloned().unwrap_or_else(|| kept[(k - 1) % kept.len()].clone());
        let text = format!("{base} (alternate phrasing {k})");
        if seen.insert(dedup_key(&text)) {
            kept.push(text);
        }
        k += 1;
    }
    kept.truncate(n);
    let model_id = backend.model_id(params);
    let now = Utc::now();
    let candidates = kept
        .into_iter()
        .enumerate()
        .map(|(i, text)| Candidate {
            candidate_id: format!("c{}", i + 1),
            text,
            origin,
            model_id: model_id.clone(),
            rank: None,
            status: CandidateStatus::Proposed,
            created_at: now,
            prompt_hash: hash.clone(),
        })
        .collect();
    Ok(Generation {
        prompt,
        prompt_hash: hash,
        model_id,
        candidates,
    })
}

/// Exactly `params.n_candidates` distinct proposed candidates. Candidate ids
/// are positional (`c1`, `c2`, ...); callers owning an item renumber them.
pub fn generate_candidates(
    ctx: &PromptContext,
    params: &GenerationParams,
    backend: &dyn CompletionBackend,
) -> Result<Generation, GenerationError> {
    let template = match ctx.mode {
        PromptMode::Describe => DESCRIBE_TEMPLATE,
        PromptMode::Merge => MERGE_TEMPLATE,
    };
    generate_candidates_with_template(ctx, template, params, backend)
}

pub fn generate_candidates_with_template(
    ctx: &PromptContext,
    template_id: &str,
    params: &GenerationParams,
    backend: &dyn CompletionBackend,
) -> Result<Generation, GenerationError> {
    let prompt = build_prompt(ctx, template_id)?;
    let origin = match ctx.mode {
        PromptMode::Describe => CandidateOrigin::Generated,
        PromptMode::Merge => CandidateOrigin::Merged,
    };
    run(prompt, params, backend, origin)
}

/// Merge-mode prompt context for `original_sql`. `sub_nl` must cover every
/// plan step and `final`; descriptions are listed in plan order.
pub fn merge_context(
    original_sql: &str,
    plan: &DecompositionPlan,
    sub_nl: &[(String, String)],
    tables: &[TableDef],
) -> Result<PromptContext, GenerationError> {
    let mut ordered = Vec::new();
    for name in plan.step_names().into_iter().chain(std::iter::once("final")) {
        let nl = sub_nl
            .iter()
            .find(|(n, t)| n == name && !t.trim().is_empty())
            .map(|(_, t)| t.trim().to_string())
            .ok_or_else(|| GenerationError::MissingSubDescription(name.to_string()))?;
        ordered.push((name.to_string(), nl));
    }
    Ok(PromptContext {
        target_sql: original_sql.to_string(),
        tables: tables.to_vec(),
        examples: Vec::new(),
        refinement_notes: Vec::new(),
        mode: PromptMode::Merge,
        sub_descriptions: ordered,
    })
}

/// Recomposes accepted step descriptions into candidates for `original_sql`.
pub fn merge_descriptions(
    original_sql: &str,
    plan: &DecompositionPlan,
    sub_nl: &[(String, String)],
    tables: &[TableDef],
    params: &GenerationParams,
    backend: &dyn CompletionBackend,
) -> Result<Generation, GenerationError> {
    let ctx = merge_context(original_sql, plan, sub_nl, tables)?;
    generate_candidates_with_template(&ctx, MERGE_TEMPLATE, params, backend)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::generation::BackendError;

    struct Fixed(Vec<&'static str>);

    impl CompletionBackend for Fixed {
        fn model_id(&self, _: &GenerationParams) -> String {
            "fixed".into()
        }
        fn complete(&self, _: &str, _: &GenerationParams) -> Result<Vec<String>, BackendError> {
            Ok(self.0.iter().map(|s| s.to_string()).collect())
        }
    }

    struct Counting(AtomicUsize);

    impl CompletionBackend for Counting {
        fn model_id(&self, _: &GenerationParams) -> String {
            "count".into()
        }
        fn complete(&self, _: &str, _: &GenerationParams) -> Result<Vec<String>, BackendError> {
            let i = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(vec![format!("answer {i}")])
        }
    }

    fn ctx() -> PromptContext {
        PromptContext {
            target_sql: "SELECT a FROM t".into(),
            ..Default::default()
        }
    }

    #[test]
    fn blank_backend_is_empty_completion() {
        let r = generate_candidates(&ctx(), &GenerationParams::default(), &Fixed(vec!["", "  "]));
        assert_eq!(r.unwrap_err(), GenerationError::EmptyCompletion);
    }

    #[test]
    fn duplicates_get_suffix_after_one_retry() {
        let g = generate_candidates(&ctx(), &GenerationParams::default(), &Fixed(vec!["Same.", "same.", " SAME. "]))
            .unwrap();
        let texts: Vec<_> = g.candidates.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts.len(), 4);
        assert_eq!(texts[0], "Same.");
        assert!(texts[1..].iter().all(|t| t.contains("(alternate phrasing")));
        let keys: HashSet<_> = texts.iter().map(|t| dedup_key(t)).collect();
        assert_eq!(keys.len(), 4);
    }

    #[test]
    fn short_lists_are_topped_up() {
        let g = generate_candidates(&ctx(), &GenerationParams::default(), &Counting(AtomicUsize::new(0))).unwrap();
        assert_eq!(g.candidates.len(), 4);
        assert!(g.candidates.iter().all(|c| c.model_id == "count" && c.prompt_hash == g.prompt_hash));
    }

    #[test]
    fn zero_candidates_rejected() {
        let p = GenerationParams {
            n_candidates: 0,
            ..Default::default()
        };
        assert!(matches!(
            generate_candidates(&ctx(), &p, &Fixed(vec!["x"])),
            Err(GenerationError::InvalidParams(_))
        ));
    }
}
