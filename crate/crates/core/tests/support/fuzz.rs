use benchforge_core::generation::{Candidate, CandidateOrigin, CandidateStatus};
use benchforge_core::workflow::{
    AnnotationItem, EventBody, Feedback, FeedbackEvent, ItemEvent, ItemState, Target,
};
use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_EVENTS: usize = 14;
const ANNOTATORS: [&str; 3] = ["ann", "bob", "cy"];

/// Edges of the documented lifecycle.
fn edge(from: ItemState, to: ItemState) -> bool {
    use ItemState::*;
    matches!(
        (from, to),
        (Pending, Drafted) | (Drafted, InReview) | (InReview, Accepted) | (InReview, Discarded) | (Accepted, InReview)
    )
}

/// A single event may take at most one implicit review step before its own
/// edge; leaving `accepted` needs an explicit reopen.
fn legal(from: ItemState, to: ItemState, reopen: bool) -> bool {
    if from == to {
        return true;
    }
    if from == ItemState::Accepted {
        return reopen && edge(from, to);
    }
    edge(from, to) || (from == ItemState::Drafted && edge(ItemState::InReview, to))
}

fn candidate(text: String, at: DateTime<Utc>) -> Candidate {
    Candidate {
        candidate_id: "c1".into(),
        text,
        origin: CandidateOrigin::Generated,
        model_id: "fuzz".into(),
        rank: None,
        status: CandidateStatus::Proposed,
        created_at: at,
        prompt_hash: "h".into(),
    }
}

fn targets(item: &AnnotationItem) -> Vec<Target> {
    std::iter::once(Target::Item)
        .chain(item.sub_items.iter().map(|s| Target::Sub(s.name.clone())))
        .collect()
}

fn states(item: &AnnotationItem) -> Vec<ItemState> {
    targets(item)
        .iter()
        .map(|t| item.annotation(t).unwrap().state)
        .collect()
}

fn random_body(rng: &mut ChaCha8Rng, item: &AnnotationItem, at: DateTime<Utc>, n: usize) -> EventBody {
    let who = match item.lease_holder(at) {
        Some(h) if rng.gen_bool(0.85) => h.to_string(),
        _ => ANNOTATORS.choose(rng).unwrap().to_string(),
    };
    let all = targets(item);
    let target = if rng.gen_bool(0.85) {
        item.active_target()
    } else {
        all.choose(rng).unwrap().clone()
    };
    let pick = format!("c{}", rng.gen_range(1..item.next_candidate + 2));
    match rng.gen_range(0..100) {
        0..=14 => EventBody::Leased {
            annotator_id: who,
            expires_at: at + Duration::minutes(30),
        },
        15..=19 => EventBody::Released { reason: "fuzz".into() },
        20..=34 => EventBody::Generated {
            target,
            annotator_id: who,
            prompt_hash: format!("p{n}"),
            candidates: (0..rng.gen_range(1..=4)).map(|i| candidate(format!("text {n} {i}"), at)).collect(),
        },
        r => {
            let feedback = match r {
                35..=44 => {
                    let mut ordering: Vec<String> = (0..rng.gen_range(1..4))
                        .map(|_| format!("c{}", rng.gen_range(1..item.next_candidate + 1)))
                        .collect();
                    if rng.gen_bool(0.7) {
                        ordering.dedup();
                    }
                    Feedback::Rank { ordering }
                }
                45..=52 => Feedback::Edit {
                    candidate_id: pick,
                    text: format!("edited {n}"),
                },
                53..=58 => Feedback::Discard { candidate_id: Some(pick) },
                59..=61 => Feedback::Discard { candidate_id: None },
                62..=68 => Feedback::Refine { note: format!("note {n}") },
                69..=86 => Feedback::Accept {
                    candidate_id: pick,
                    final_text: format!("final {n}"),
                },
                87..=93 => Feedback::Reopen { reason: None },
                _ => Feedback::Flag { reason: "unclear".into() },
            };
            EventBody::Feedback(FeedbackEvent {
                event_id: format!("e{n}"),
                annotator_id: who,
                timestamp: at,
                target,
                feedback,
            })
        }
    }
}

/// Independent model of who holds the lease.
#[derive(Clone, Default)]
struct Shadow {
    lease: Option<(String, DateTime<Utc>)>,
}

impl Shadow {
    fn holder(&self, at: DateTime<Utc>) -> Option<&str> {
        self.lease.as_ref().filter(|(_, exp)| at < *exp).map(|(who, _)| who.as_str())
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzStats {
    pub applied: usize,
    pub rejected: usize,
    pub accepts: usize,
}

/// Drives `sequences` random event sequences through `AnnotationItem::apply`
/// and panics on the first illegal transition, double accept, lease
/// violation or replay mismatch.
pub fn run(seed: u64, sequences: usize) -> FuzzStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Utc.with_ymd_and_hms(2024, 3, 1, 8, 0, 0).unwrap();
    let (mut applied, mut rejected, mut accepts) = (0usize, 0usize, 0usize);
    for s in 0..sequences {
        let subs: Vec<(String, String)> = match rng.gen_range(0..3) {
            0 => vec![],
            k => (1..=k)
                .map(|i| (format!("step_{i}"), format!("SELECT {i}")))
                .chain(std::iter::once(("final".to_string(), "SELECT 0".to_string())))
                .collect(),
        };
        let created = ItemEvent {
            item_id: format!("p.{s:05}"),
            seq: 0,
            at: t0,
            body: EventBody::Created {
                query_id: "q0001".into(),
                item_seq: 1,
                sql: "SELECT 1".into(),
                sub_items: subs,
            },
        };
        let mut item = AnnotationItem::from_created(&created).unwrap();
        let mut log = vec![created];
        let mut shadow = Shadow::default();
        let mut at = t0;
        for n in 1..=MAX_EVENTS {
            at += Duration::minutes(rng.gen_range(0..12));
            let body = random_body(&mut rng, &item, at, n);
            let ev = ItemEvent {
                item_id: item.item_id.clone(),
                seq: n as u64,
                at,
                body,
            };
            let before = item.clone();
            let before_states = states(&item);
            match item.apply(&ev) {
                Err(_) => {
                    rejected += 1;
                    assert_eq!(item, before, "rejected event mutated the item");
                }
                Ok(()) => {
                    applied += 1;
                    item.check_invariants().unwrap_or_else(|e| panic!("seq {s} event {n}: {e}"));
                    let reopen = matches!(&ev.body, EventBody::Feedback(f) if matches!(f.feedback, Feedback::Reopen { .. }));
                    for (a, b) in before_states.iter().zip(states(&item)) {
                        assert!(legal(*a, b, reopen), "seq {s} event {n}: {a:?} -> {b:?} via {:?}", ev.body);
                    }
                    match &ev.body {
                        EventBody::Leased { annotator_id, expires_at } => {
                            if let Some(h) = shadow.holder(at) {
                                assert_eq!(h, annotator_id, "lease stolen from a live holder");
                            }
                            shadow.lease = Some((annotator_id.clone(), *expires_at));
                        }
                        EventBody::Released { .. } => shadow.lease = None,
                        EventBody::Generated { annotator_id, .. } => {
                            assert_eq!(shadow.holder(at), Some(annotator_id.as_str()), "generation without lease");
                        }
                        EventBody::Feedback(f) => {
                            assert_eq!(shadow.holder(at), Some(f.annotator_id.as_str()), "feedback without lease");
                            let ann_before = before.annotation(&f.target).unwrap();
                            match &f.feedback {
                                Feedback::Accept { .. } => {
                                    assert_ne!(ann_before.state, ItemState::Accepted, "double accept");
                                    accepts += 1;
                                    shadow.lease = None;
                                }
                                Feedback::Discard { candidate_id: None } => shadow.lease = None,
                                _ => {}
                            }
                        }
                        _ => {}
                    }
                    let live = item.lease.as_ref().map(|l| (l.annotator_id.clone(), l.expires_at));
                    assert_eq!(live, shadow.lease, "lease diverged from the model");
                    for t in targets(&item) {
                        let ann = item.annotation(&t).unwrap();
                        let n_acc = ann.candidates.iter().filter(|c| c.status == CandidateStatus::Accepted).count();
                        assert!(n_acc <= 1, "two accepted candidates");
                    }
                    log.push(ev);
                }
            }
        }
        assert_eq!(AnnotationItem::replay(&log).unwrap(), item, "replay of sequence {s}");
        let json: Vec<String> = log.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
        let parsed: Vec<ItemEvent> = json.iter().map(|j| serde_json::from_str(j).unwrap()).collect();
        assert_eq!(parsed, log, "event log serialization of sequence {s}");
    }
    FuzzStats {
        applied,
        rejected,
        accepts,
    }
}
