//! Review events and the per-case protocol they must follow.
//!
//! For every `(session, case)` the log holds an initial decision, then
//! either the final decision directly (equal to the initial one, when the
//! reviewer agreed with the model) or a guidance-shown marker followed by
//! the final decision. A session works through one case at a time.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BinaryLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    InitialDecision,
    GuidanceShown,
    FinalDecision,
}

/// One append-only log entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub seq: u64,
    pub session_id: String,
    pub case_id: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<BinaryLabel>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {seq}: {reason}")]
pub struct ProtocolViolation {
    pub seq: u64,
    pub reason: String,
}

/// Where a single `(session, case)` stands in the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseProgress {
    AwaitingFinal {
        initial: BinaryLabel,
        guidance_shown: bool,
    },
    Done {
        initial: BinaryLabel,
        guidance_shown: bool,
        final_decision: BinaryLabel,
    },
}

impl CaseProgress {
    pub fn initial(&self) -> BinaryLabel {
        match *self {
            CaseProgress::AwaitingFinal { initial, .. } | CaseProgress::Done { initial, .. } => {
                initial
            }
        }
    }

    pub fn guidance_shown(&self) -> bool {
        match *self {
            CaseProgress::AwaitingFinal { guidance_shown, .. }
            | CaseProgress::Done { guidance_shown, .. } => guidance_shown,
        }
    }
}

/// Replayed protocol state for every session in a log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolState {
    /// session id -> case id -> progress, cases in first-seen order.
    pub sessions: BTreeMap<String, Vec<(String, CaseProgress)>>,
    pub last_seq: Option<u64>,
}

impl ProtocolState {
    pub fn case(&self, session: &str, case: &str) -> Option<&CaseProgress> {
        self.sessions
            .get(session)?
            .iter()
            .find(|(id, _)| id == case)
            .map(|(_, p)| p)
    }

    /// Applies one event, enforcing the protocol. When `model_predictions`
    /// is given, guidance must appear exactly when the initial decision
    /// disagrees with the model.
    pub fn apply(
        &mut self,
        event: &ReviewEvent,
        model_predictions: Option<&HashMap<String, BinaryLabel>>,
    ) -> Result<(), ProtocolViolation> {
        let fail = |reason: String| ProtocolViolation {
            seq: event.seq,
            reason,
        };
        if let Some(last) = self.last_seq {
            if event.seq <= last {
                return Err(fail(format!("sequence number does not increase past {last}")));
            }
        }
        let model = match model_predictions {
            Some(map) => Some(
                *map.get(&event.case_id)
                    .ok_or_else(|| fail(format!("unknown case `{}`", event.case_id)))?,
            ),
            None => None,
        };
        let cases = self.sessions.entry(event.session_id.clone()).or_default();
        let position = cases.iter().position(|(id, _)| *id == event.case_id);

        match (event.kind, position) {
            (EventKind::InitialDecision, None) => {
                let initial = event
                    .prediction
                    .ok_or_else(|| fail("initial decision without a prediction".into()))?;
                if let Some((open, _)) = cases
                    .iter()
                    .find(|(_, p)| matches!(p, CaseProgress::AwaitingFinal { .. }))
                {
                    return Err(fail(format!("case `{open}` is still open in this session")));
                }
                cases.push((
                    event.case_id.clone(),
                    CaseProgress::AwaitingFinal {
                        initial,
                        guidance_shown: false,
                    },
                ));
            }
            (EventKind::InitialDecision, Some(_)) => {
                return Err(fail("duplicate initial decision".into()));
            }
            (_, None) => {
                return Err(fail("event precedes the initial decision".into()));
            }
            (EventKind::GuidanceShown, Some(i)) => match cases[i].1 {
                CaseProgress::AwaitingFinal {
                    initial,
                    guidance_shown: false,
                } => {
                    if event.prediction.is_some() {
                        return Err(fail("guidance marker carries a prediction".into()));
                    }
                    if model == Some(initial) {
                        return Err(fail("guidance shown although the reviewer agreed".into()));
                    }
                    cases[i].1 = CaseProgress::AwaitingFinal {
                        initial,
                        guidance_shown: true,
                    };
                }
                _ => return Err(fail("guidance shown twice or after the final decision".into())),
            },
            (EventKind::FinalDecision, Some(i)) => match cases[i].1 {
                CaseProgress::AwaitingFinal {
                    initial,
                    guidance_shown,
                } => {
                    let final_decision = event
                        .prediction
                        .ok_or_else(|| fail("final decision without a prediction".into()))?;
                    if !guidance_shown {
                        if final_decision != initial {
                            return Err(fail("unguided final decision differs from initial".into()));
                        }
                        if model.is_some_and(|m| m != initial) {
                            return Err(fail("disagreement recorded without guidance".into()));
                        }
                    }
                    cases[i].1 = CaseProgress::Done {
                        initial,
                        guidance_shown,
                        final_decision,
                    };
                }
                CaseProgress::Done { .. } => {
                    return Err(fail("duplicate final decision".into()));
                }
            },
        }
        self.last_seq = Some(event.seq);
        Ok(())
    }
}

/// Replays `events` and checks every protocol invariant.
pub fn validate_events(
    events: &[ReviewEvent],
    model_predictions: Option<&HashMap<String, BinaryLabel>>,
) -> Result<ProtocolState, ProtocolViolation> {
    let mut state = ProtocolState::default();
    for event in events {
        state.apply(event, model_predictions)?;
    }
    Ok(state)
}
