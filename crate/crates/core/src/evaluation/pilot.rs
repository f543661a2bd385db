//! Accuracy with and without guidance from a review-event log.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::stats::{chi_squared_independence, wilcoxon_signed_rank, Alternative, TestResult};
use crate::model::BinaryLabel;
use crate::session::{validate_events, CaseProgress, ProtocolViolation, ReviewEvent};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Protocol(#[from] ProtocolViolation),
    #[error("session `{session}` has no final decision for case `{case}`")]
    IncompleteSession { session: String, case: String },
    #[error("case `{0}` has no label")]
    MissingLabel(String),
}

/// One participant (session) worth of decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantAccuracy {
    pub session_id: String,
    pub cases: usize,
    pub guidance_shown: usize,
    pub changed: usize,
    pub accuracy_unguided: f64,
    pub accuracy_guided: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAnalysis {
    pub participants: Vec<ParticipantAccuracy>,
    /// Accuracy of the model's own predictions over the distinct cases seen.
    pub llm_accuracy: Option<f64>,
    /// Guided vs unguided accuracy, paired by participant, one-sided
    /// (guided greater). Absent when every participant scored the same
    /// both ways.
    pub wilcoxon: Option<TestResult>,
    /// Rows: changed / kept the initial prediction; columns: model
    /// correct / wrong. Guidance-shown cases only.
    pub change_table: [[u64; 2]; 2],
    /// Absent when the table has an empty row or column.
    pub chi_squared: Option<TestResult>,
}

/// Summarises a complete event log. Each session is one participant; the
/// model's prediction for a case is recovered from the protocol itself
/// (guidance appears exactly when the reviewer disagreed).
pub fn analyze_session(
    events: &[ReviewEvent],
    labels: &HashMap<String, BinaryLabel>,
) -> Result<SessionAnalysis, AnalysisError> {
    let state = validate_events(events, None)?;
    let label = |case: &str| {
        labels
            .get(case)
            .copied()
            .ok_or_else(|| AnalysisError::MissingLabel(case.to_owned()))
    };

    let mut participants = Vec::with_capacity(state.sessions.len());
    let mut llm_by_case: BTreeMap<&str, bool> = BTreeMap::new();
    let mut table = [[0u64; 2]; 2];

    for (session, cases) in &state.sessions {
        let (mut unguided, mut guided, mut shown, mut changed) = (0usize, 0usize, 0usize, 0usize);
        for (case, progress) in cases {
            let CaseProgress::Done {
                initial,
                guidance_shown,
                final_decision,
            } = *progress
            else {
                return Err(AnalysisError::IncompleteSession {
                    session: session.clone(),
                    case: case.clone(),
                });
            };
            let truth = label(case)?;
            let llm = if guidance_shown {
                initial.flipped()
            } else {
                initial
            };
            let llm_correct = llm == truth;
            llm_by_case.entry(case.as_str()).or_insert(llm_correct);
            unguided += usize::from(initial == truth);
            guided += usize::from(final_decision == truth);
            if guidance_shown {
                shown += 1;
                let did_change = final_decision != initial;
                changed += usize::from(did_change);
                let row = usize::from(!did_change);
                let col = usize::from(!llm_correct);
                table[row][col] += 1;
            }
        }
        let n = cases.len().max(1) as f64;
        participants.push(ParticipantAccuracy {
            session_id: session.clone(),
            cases: cases.len(),
            guidance_shown: shown,
            changed,
            accuracy_unguided: unguided as f64 / n,
            accuracy_guided: guided as f64 / n,
        });
    }

    let llm_accuracy = (!llm_by_case.is_empty()).then(|| {
        llm_by_case.values().filter(|c| **c).count() as f64 / llm_by_case.len() as f64
    });
    let guided: Vec<f64> = participants.iter().map(|p| p.accuracy_guided).collect();
    let unguided: Vec<f64> = participants.iter().map(|p| p.accuracy_unguided).collect();
    let wilcoxon = wilcoxon_signed_rank(&guided, &unguided, Alternative::Greater).ok();
    let chi_squared = chi_squared_independence(table).ok();

    Ok(SessionAnalysis {
        participants,
        llm_accuracy,
        wilcoxon,
        change_table: table,
        chi_squared,
    })
}
