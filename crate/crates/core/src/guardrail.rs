//! Acceptance gate for candidate guidance used as instruction data.
//!
//! A candidate is rejected when it does not parse, or when its verdict
//! contradicts the case annotation (a hallucination).

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guidance::{emit_guidance, parse_guidance, GuidanceDocument, ParseFailure};
use crate::model::BinaryLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardrailReason {
    Hallucination,
    MalformedLayout,
    MissingField,
    BadProbability,
    VerdictMismatch,
    OverlongReason,
    EmptyReason,
    NonTextContent,
}

impl GuardrailReason {
    pub const ALL: [GuardrailReason; 8] = [
        GuardrailReason::Hallucination,
        GuardrailReason::MalformedLayout,
        GuardrailReason::MissingField,
        GuardrailReason::BadProbability,
        GuardrailReason::VerdictMismatch,
        GuardrailReason::OverlongReason,
        GuardrailReason::EmptyReason,
        GuardrailReason::NonTextContent,
    ];
}

impl From<ParseFailure> for GuardrailReason {
    fn from(failure: ParseFailure) -> Self {
        match failure {
            ParseFailure::MissingField => GuardrailReason::MissingField,
            ParseFailure::BadProbability => GuardrailReason::BadProbability,
            ParseFailure::VerdictMismatch => GuardrailReason::VerdictMismatch,
            ParseFailure::NonConformantLayout => GuardrailReason::MalformedLayout,
            ParseFailure::EmptyReason => GuardrailReason::EmptyReason,
            ParseFailure::OverlongReason => GuardrailReason::OverlongReason,
            ParseFailure::NonTextContent => GuardrailReason::NonTextContent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardrailVerdict {
    /// Set only when the candidate is accepted.
    pub document: Option<GuidanceDocument>,
    pub reasons: Vec<GuardrailReason>,
}

impl GuardrailVerdict {
    pub fn accepted(&self) -> bool {
        self.reasons.is_empty()
    }
}

pub fn check_candidate(raw: &str, annotation: BinaryLabel) -> GuardrailVerdict {
    match parse_guidance(raw) {
        Ok(doc) if doc.verdict() == annotation => GuardrailVerdict {
            document: Some(doc),
            reasons: Vec::new(),
        },
        Ok(_) => GuardrailVerdict {
            document: None,
            reasons: vec![GuardrailReason::Hallucination],
        },
        Err(failure) => GuardrailVerdict {
            document: None,
            reasons: vec![failure.into()],
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuardrailError {
    #[error("candidate references unknown case `{0}`")]
    UnknownCaseId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedCandidate {
    pub case_id: String,
    pub document: GuidanceDocument,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Every reason appears, with zero counts included.
    pub by_reason: BTreeMap<GuardrailReason, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOutcome {
    pub accepted: Vec<AcceptedCandidate>,
    pub stats: RejectionStats,
}

/// Checks every `(case id, raw text)` candidate against its annotation. A
/// case may contribute several accepted candidates.
pub fn filter_candidates(
    candidates: &[(String, String)],
    annotations: &HashMap<String, BinaryLabel>,
) -> Result<FilterOutcome, GuardrailError> {
    if let Some((id, _)) = candidates.iter().find(|(id, _)| !annotations.contains_key(id)) {
        return Err(GuardrailError::UnknownCaseId(id.clone()));
    }
    let mut stats = RejectionStats {
        total: candidates.len(),
        by_reason: GuardrailReason::ALL.iter().map(|&r| (r, 0)).collect(),
        ..RejectionStats::default()
    };
    let mut accepted = Vec::new();
    for (id, raw) in candidates {
        let verdict = check_candidate(raw, annotations[id]);
        for reason in &verdict.reasons {
            *stats.by_reason.entry(*reason).or_default() += 1;
        }
        match verdict.document {
            Some(document) => accepted.push(AcceptedCandidate {
                case_id: id.clone(),
                document,
            }),
            None => stats.rejected += 1,
        }
    }
    stats.accepted = accepted.len();
    Ok(FilterOutcome { accepted, stats })
}

/// Writes `{report_text, guidance_text}` lines, one per accepted candidate
/// whose case has a report.
pub fn write_instruction_pairs(
    accepted: &[AcceptedCandidate],
    reports: &HashMap<String, String>,
    mut out: impl Write,
) -> std::io::Result<usize> {
    let mut written = 0;
    for candidate in accepted {
        let Some(report) = reports.get(&candidate.case_id) else {
            continue;
        };
        let line = serde_json::json!({
            "report_text": report,
            "guidance_text": emit_guidance(&candidate.document),
        });
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
        written += 1;
    }
    out.flush()?;
    Ok(written)
}
