//! Item event log and the pure state transition function over it.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::model::{Annotation, AnnotationItem, ItemState, Lease, SubItem, Target};
use super::WorkflowError;
use crate::generation::{Candidate, CandidateOrigin, CandidateStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Rank,
    Edit,
    Discard,
    Refine,
    Accept,
    Reopen,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feedback {
    /// Candidate ids best first; they receive ranks 1, 2, ...
    Rank { ordering: Vec<String> },
    Edit { candidate_id: String, text: String },
    /// Discards one candidate, or the whole item when `candidate_id` is absent.
    Discard {
        #[serde(default)]
        candidate_id: Option<String>,
    },
    Refine { note: String },
    Accept { candidate_id: String, final_text: String },
    Reopen {
        #[serde(default)]
        reason: Option<String>,
    },
    Flag { reason: String },
}

impl Feedback {
    pub fn kind(&self) -> FeedbackKind {
        match self {
            Feedback::Rank { .. } => FeedbackKind::Rank,
            Feedback::Edit { .. } => FeedbackKind::Edit,
            Feedback::Discard { .. } => FeedbackKind::Discard,
            Feedback::Refine { .. } => FeedbackKind::Refine,
            Feedback::Accept { .. } => FeedbackKind::Accept,
            Feedback::Reopen { .. } => FeedbackKind::Reopen,
            Feedback::Flag { .. } => FeedbackKind::Flag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub event_id: String,
    pub annotator_id: String,
    pub timestamp: DateTime<Utc>,
    pub target: Target,
    #[serde(flatten)]
    pub feedback: Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventBody {
    Created {
        query_id: String,
        item_seq: u64,
        sql: String,
        /// (step name, SQL) in plan order, `final` last; empty for flat items.
        #[serde(default)]
        sub_items: Vec<(String, String)>,
    },
    Leased {
        annotator_id: String,
        expires_at: DateTime<Utc>,
    },
    Released {
        reason: String,
    },
    /// Fresh candidates for `target`; ids are assigned on application.
    Generated {
        target: Target,
        annotator_id: String,
        prompt_hash: String,
        candidates: Vec<Candidate>,
    },
    Feedback(FeedbackEvent),
    /// An already-reviewed pair loaded from a benchmark file.
    Imported {
        text: String,
        model_id: String,
        annotator_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEvent {
    pub item_id: String,
    /// Position in the project log.
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

fn invalid(state: ItemState, what: &str) -> WorkflowError {
    WorkflowError::InvalidTransition {
        state: state.as_str().to_string(),
        event: what.to_string(),
    }
}

fn require_lease(item: &AnnotationItem, annotator: &str, at: DateTime<Utc>) -> Result<(), WorkflowError> {
    match item.lease_holder(at) {
        Some(holder) if holder == annotator => Ok(()),
        Some(holder) => Err(WorkflowError::LeaseMismatch(format!(
            "item {} is leased by `{holder}`, not `{annotator}`",
            item.item_id
        ))),
        None => Err(WorkflowError::LeaseMismatch(format!(
            "`{annotator}` holds no live lease on item {}",
            item.item_id
        ))),
    }
}

fn reviewable(ann: &Annotation, what: &str) -> Result<(), WorkflowError> {
    match ann.state {
        ItemState::Drafted | ItemState::InReview => Ok(()),
        s => Err(invalid(s, what)),
    }
}

fn live_candidate_index(ann: &Annotation, id: &str) -> Result<usize, WorkflowError> {
    ann.candidates
        .iter()
        .position(|c| c.candidate_id == id && c.status != CandidateStatus::Discarded)
        .ok_or_else(|| WorkflowError::UnknownCandidate(id.to_string()))
}

impl AnnotationItem {
    pub fn from_created(ev: &ItemEvent) -> Result<AnnotationItem, WorkflowError> {
        match &ev.body {
            EventBody::Created {
                query_id,
                item_seq,
                sql,
                sub_items,
            } => Ok(AnnotationItem {
                item_id: ev.item_id.clone(),
                query_id: query_id.clone(),
                seq: *item_seq,
                sql: sql.clone(),
                annotation: Annotation::new(),
                sub_items: sub_items
                    .iter()
                    .map(|(name, sql)| SubItem {
                        name: name.clone(),
                        sql: sql.clone(),
                        annotation: Annotation::new(),
                    })
                    .collect(),
                feedback_log: Vec::new(),
                lease: None,
                next_candidate: 1,
                created_at: ev.at,
                accepted_by: None,
            }),
            _ => Err(WorkflowError::InvalidInput(format!(
                "log for item {} does not start with a creation event",
                ev.item_id
            ))),
        }
    }

    /// Applies one event. On error the item is left unchanged.
    pub fn apply(&mut self, ev: &ItemEvent) -> Result<(), WorkflowError> {
        let mut next = self.clone();
        next.apply_in_place(ev)?;
        *self = next;
        Ok(())
    }

    fn apply_in_place(&mut self, ev: &ItemEvent) -> Result<(), WorkflowError> {
        if ev.item_id != self.item_id {
            return Err(WorkflowError::InvalidInput(format!(
                "event for {} applied to {}",
                ev.item_id, self.item_id
            )));
        }
        let at = ev.at;
        match &ev.body {
            EventBody::Created { .. } => Err(WorkflowError::InvalidInput(format!(
                "item {} already exists",
                self.item_id
            ))),
            EventBody::Leased {
                annotator_id,
                expires_at,
            } => {
                if self.state() == ItemState::Discarded {
                    return Err(invalid(ItemState::Discarded, "lease"));
                }
                if annotator_id.trim().is_empty() {
                    return Err(WorkflowError::InvalidInput("annotator_id must be non-empty".into()));
                }
                if let Some(holder) = self.lease_holder(at) {
                    if holder != annotator_id {
                        return Err(WorkflowError::LeaseMismatch(format!(
                            "item {} is leased by `{holder}`",
                            self.item_id
                        )));
                    }
                }
                self.lease = Some(Lease {
                    annotator_id: annotator_id.clone(),
                    expires_at: *expires_at,
                });
                Ok(())
            }
            EventBody::Released { .. } => {
                self.lease = None;
                Ok(())
            }
            EventBody::Generated {
                target,
                annotator_id,
                prompt_hash,
                candidates,
            } => {
                require_lease(self, annotator_id, at)?;
                if *target != self.active_target() {
                    return Err(invalid(self.state(), "generate for an inactive target"));
                }
                if candidates.is_empty() {
                    return Err(WorkflowError::InvalidInput("generation produced no candidates".into()));
                }
                let mut counter = self.next_candidate;
                let ann = self.annotation_mut(target).expect("active target exists");
                let next_state = match ann.state {
                    ItemState::Pending | ItemState::Drafted => ItemState::Drafted,
                    ItemState::InReview => ItemState::InReview,
                    s => return Err(invalid(s, "generate")),
                };
                for c in ann.candidates.iter_mut() {
                    if c.status == CandidateStatus::Proposed {
                        c.status = CandidateStatus::Discarded;
                        c.rank = None;
                    }
                }
                for c in candidates {
                    let mut c = c.clone();
                    c.candidate_id = format!("c{counter}");
                    counter += 1;
                    c.status = CandidateStatus::Proposed;
                    c.rank = None;
                    ann.candidates.push(c);
                }
                ann.state = next_state;
                ann.last_prompt_hash = Some(prompt_hash.clone());
                self.next_candidate = counter;
                Ok(())
            }
            EventBody::Feedback(fe) => self.apply_feedback(fe, at),
            EventBody::Imported {
                text,
                model_id,
                annotator_id,
            } => {
                if self.state() != ItemState::Pending || !self.sub_items.is_empty() {
                    return Err(invalid(self.state(), "import"));
                }
                if text.trim().is_empty() {
                    return Err(WorkflowError::InvalidInput("imported question is empty".into()));
                }
                self.annotation.candidates.push(Candidate {
                    candidate_id: format!("c{}", self.next_candidate),
                    text: text.trim().to_string(),
                    origin: CandidateOrigin::AnnotatorEdited,
                    model_id: model_id.clone(),
                    rank: None,
                    status: CandidateStatus::Accepted,
                    created_at: at,
                    prompt_hash: String::new(),
                });
                self.next_candidate += 1;
                self.annotation.accepted_text = Some(text.trim().to_string());
                self.annotation.state = ItemState::Accepted;
                self.accepted_by = Some(annotator_id.clone());
                Ok(())
            }
        }
    }

    fn apply_feedback(&mut self, fe: &FeedbackEvent, at: DateTime<Utc>) -> Result<(), WorkflowError> {
        require_lease(self, &fe.annotator_id, at)?;
        if fe.target != self.active_target() {
            return Err(invalid(self.state(), "feedback for an inactive target"));
        }
        let target = fe.target.clone();
        let mut counter = self.next_candidate;
        let mut release = false;
        let mut accepted_by = None;
        let mut reopened = false;
        {
            let ann = self.annotation_mut(&target).expect("active target exists");
            match &fe.feedback {
                Feedback::Rank { ordering } => {
                    reviewable(ann, "rank")?;
                    if ordering.is_empty() {
                        return Err(WorkflowError::InvalidInput("rank ordering is empty".into()));
                    }
                    let mut idx = Vec::new();
                    for id in ordering {
                        let i = live_candidate_index(ann, id)?;
                        if idx.contains(&i) {
                            return Err(WorkflowError::InvalidInput(format!("candidate {id} ranked twice")));
                        }
                        idx.push(i);
                    }
                    for c in ann.candidates.iter_mut() {
                        c.rank = None;
                    }
                    for (r, i) in idx.into_iter().enumerate() {
                        ann.candidates[i].rank = Some(u8::try_from(r + 1).unwrap_or(u8::MAX));
                    }
                    ann.state = ItemState::InReview;
                }
                Feedback::Edit { candidate_id, text } => {
                    reviewable(ann, "edit")?;
                    let i = live_candidate_index(ann, candidate_id)?;
                    if text.trim().is_empty() {
                        return Err(WorkflowError::InvalidInput("edited text is empty".into()));
                    }
                    let source = &ann.candidates[i];
                    let edited = Candidate {
                        candidate_id: format!("c{counter}"),
                        text: text.trim().to_string(),
                        origin: CandidateOrigin::AnnotatorEdited,
                        model_id: source.model_id.clone(),
                        rank: None,
                        status: CandidateStatus::Edited,
                        created_at: at,
                        prompt_hash: source.prompt_hash.clone(),
                    };
                    counter += 1;
                    ann.candidates.push(edited);
                    ann.state = ItemState::InReview;
                }
                Feedback::Discard { candidate_id: Some(id) } => {
                    reviewable(ann, "discard candidate")?;
                    let i = live_candidate_index(ann, id)?;
                    ann.candidates[i].status = CandidateStatus::Discarded;
                    ann.candidates[i].rank = None;
                    ann.state = ItemState::InReview;
                }
                Feedback::Discard { candidate_id: None } => {
                    if target != Target::Item {
                        return Err(invalid(ann.state, "discard a decomposition step"));
                    }
                    reviewable(ann, "discard item")?;
                    ann.state = ItemState::Discarded;
                    release = true;
                }
                Feedback::Refine { note } => {
                    reviewable(ann, "refine")?;
                    if note.trim().is_empty() {
                        return Err(WorkflowError::InvalidInput("refinement note is empty".into()));
                    }
                    ann.refinement_notes.push(note.trim().to_string());
                    ann.state = ItemState::InReview;
                }
                Feedback::Accept {
                    candidate_id,
                    final_text,
                } => {
                    reviewable(ann, "accept")?;
                    let i = live_candidate_index(ann, candidate_id)?;
                    if final_text.trim().is_empty() {
                        return Err(WorkflowError::InvalidInput("accepted text is empty".into()));
                    }
                    ann.candidates[i].status = CandidateStatus::Accepted;
                    ann.accepted_text = Some(final_text.trim().to_string());
                    ann.state = ItemState::Accepted;
                    ann.flag_reason = None;
                    release = true;
                    if target == Target::Item {
                        accepted_by = Some(fe.annotator_id.clone());
                    }
                }
                Feedback::Reopen { .. } => {
                    if ann.state != ItemState::Accepted {
                        return Err(invalid(ann.state, "reopen"));
                    }
                    for c in ann.candidates.iter_mut() {
                        if c.status == CandidateStatus::Accepted {
                            c.status = match c.origin {
                                CandidateOrigin::AnnotatorEdited => CandidateStatus::Edited,
                                _ => CandidateStatus::Proposed,
                            };
                        }
                    }
                    ann.accepted_text = None;
                    ann.state = ItemState::InReview;
                    reopened = true;
                }
                Feedback::Flag { reason } => {
                    reviewable(ann, "flag")?;
                    ann.flag_reason = Some(reason.clone());
                    ann.state = ItemState::InReview;
                }
            }
        }
        self.next_candidate = counter;
        if release {
            self.lease = None;
        }
        if accepted_by.is_some() {
            self.accepted_by = accepted_by;
        }
        if reopened {
            self.accepted_by = None;
        }
        self.feedback_log.push(fe.clone());
        Ok(())
    }

    /// Rebuilds an item from its complete event log.
    pub fn replay(events: &[ItemEvent]) -> Result<AnnotationItem, WorkflowError> {
        let (first, rest) = events
            .split_first()
            .ok_or_else(|| WorkflowError::InvalidInput("empty event log".into()))?;
        let mut item = AnnotationItem::from_created(first)?;
        for ev in rest {
            item.apply(ev)?;
        }
        Ok(item)
    }

    /// Structural invariants that must hold after every event.
    pub fn check_invariants(&self) -> Result<(), String> {
        let parts = std::iter::once(("item", &self.annotation))
            .chain(self.sub_items.iter().map(|s| (s.name.as_str(), &s.annotation)));
        for (name, ann) in parts {
            let accepted = ann
                .candidates
                .iter()
                .filter(|c| c.status == CandidateStatus::Accepted)
                .count();
            match ann.state {
                ItemState::Accepted => {
                    if accepted != 1 {
                        return Err(format!("{name}: accepted with {accepted} accepted candidates"));
                    }
                    if ann.accepted_text.as_deref().is_none_or(|t| t.trim().is_empty()) {
                        return Err(format!("{name}: accepted without text"));
                    }
                }
                _ if accepted != 0 => return Err(format!("{name}: {accepted} accepted candidates while not accepted")),
                _ => {}
            }
            let mut ranks: Vec<u8> = ann.candidates.iter().filter_map(|c| c.rank).collect();
            let n = ranks.len();
            ranks.sort_unstable();
            ranks.dedup();
            if ranks.len() != n {
                return Err(format!("{name}: duplicate ranks"));
            }
        }
        if self.state() != ItemState::Pending && self.sub_items.iter().any(|s| s.annotation.state != ItemState::Accepted) {
            return Err("item described before all steps were accepted".into());
        }
        Ok(())
    }
}

/// Whether an observed state change is permitted. Accepting or discarding a
/// drafted item passes through review within one event.
pub fn transition_allowed(from: ItemState, to: ItemState) -> bool {
    use ItemState::*;
    from == to
        || matches!(
            (from, to),
            (Pending, Drafted)
                | (Drafted, InReview)
                | (Drafted, Accepted)
                | (Drafted, Discarded)
                | (InReview, Accepted)
                | (InReview, Discarded)
                | (Accepted, InReview)
        )
}
