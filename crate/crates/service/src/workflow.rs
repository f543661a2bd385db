//! The review workflow without HTTP: deployment state fixed at startup and
//! the mutable session table that every decision goes through.

use std::collections::HashMap;
use std::time::{SystemTime, UNIX_EPOCH};

use gdefer_core::config::RunConfig;
use gdefer_core::dataset::DatasetManifest;
use gdefer_core::deferral::{partition, rank_for_deferral, DeferralRule};
use gdefer_core::evaluation::SessionAnalysis;
use gdefer_core::guidance::GuidanceDocument;
use gdefer_core::report::{build_report, evaluation_records, resolve_alpha, ReportError, RunReport};
use gdefer_core::session::{validate_events, CaseProgress, EventKind, ProtocolState, ReviewEvent};
use gdefer_core::{BinaryLabel, BlendWeight, PredictionRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::log::{analyze_events, EventLog, ReplayError};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("no session `{0}`")]
    UnknownSession(String),
    #[error("case `{0}` is not part of this session")]
    UnknownCase(String),
    #[error("case `{case}` is not the current case{}", current.as_ref().map(|c| format!(" (expected `{c}`)")).unwrap_or_default())]
    OutOfOrder { case: String, current: Option<String> },
    #[error("a {0} decision was already recorded for this case")]
    DuplicateDecision(&'static str),
    #[error("guidance has not been shown for this case")]
    GuidanceNotShown,
    #[error("the deferral rule selects no cases")]
    NoDeferredCases,
    #[error("deferred case `{0}` has no {1}")]
    IncompleteCase(String, &'static str),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("event log write failed: {0}")]
    Log(#[from] std::io::Error),
}

/// What the reviewer sees for a deferred case.
#[derive(Debug, Clone)]
pub struct CaseInfo {
    pub report_text: String,
    pub guidance: GuidanceDocument,
    /// The model's thresholded prediction.
    pub model: BinaryLabel,
}

/// Everything fixed at startup.
#[derive(Debug)]
pub struct Deployment {
    pub manifest: DatasetManifest,
    pub config: RunConfig,
    /// Deferred ids in priority order.
    pub deferred: Vec<String>,
    pub theta: f64,
    pub cases: HashMap<String, CaseInfo>,
    pub model_predictions: HashMap<String, BinaryLabel>,
    pub labels: HashMap<String, BinaryLabel>,
    /// Metrics without the pilot section, or why they are unavailable.
    pub base_report: Result<RunReport, String>,
    pub unlabeled: bool,
}

impl Deployment {
    pub fn new(manifest: DatasetManifest, config: RunConfig) -> Result<Self, WorkflowError> {
        let alpha = resolve_alpha(&manifest, &config)?;
        let weight = BlendWeight::new(alpha.value).map_err(ReportError::from)?;
        let (_, pool) = evaluation_records(&manifest);
        let mut pool: Vec<PredictionRecord> = pool.into_iter().cloned().collect();
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        for r in &mut pool {
            r.refresh_combined(weight);
        }

        let rank_source = config.deferral.rank_source;
        let clf_source = config.deferral.classification_source;
        let rankable: Vec<PredictionRecord> = pool
            .iter()
            .filter(|r| r.probability(rank_source).is_some())
            .cloned()
            .collect();
        let (deferred, theta) = if rankable.is_empty() {
            (Vec::new(), 0.0)
        } else {
            let ranking = rank_for_deferral(&rankable, rank_source).map_err(ReportError::from)?;
            let rule: DeferralRule = config.deferral.rule();
            let theta = rule.theta(&ranking).map_err(ReportError::from)?;
            (partition(&ranking, theta).deferred, theta)
        };

        let by_id: HashMap<&str, &PredictionRecord> = pool.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut cases = HashMap::new();
        let mut model_predictions = HashMap::new();
        for id in &deferred {
            let r = by_id[id.as_str()];
            let model = r
                .probability(clf_source)
                .ok_or_else(|| WorkflowError::IncompleteCase(id.clone(), "classification probability"))?
                .classify();
            let guidance = r
                .guidance
                .clone()
                .ok_or_else(|| WorkflowError::IncompleteCase(id.clone(), "guidance"))?;
            model_predictions.insert(id.clone(), model);
            cases.insert(
                id.clone(),
                CaseInfo {
                    report_text: r.report_text.clone(),
                    guidance,
                    model,
                },
            );
        }
        let labels: HashMap<String, BinaryLabel> = manifest
            .records
            .iter()
            .filter_map(|r| Some((r.id.clone(), r.label?)))
            .collect();
        let base_report = build_report(&manifest, &config, None);
        let unlabeled = matches!(base_report, Err(ReportError::UnlabeledDataset));
        Ok(Self {
            manifest,
            config,
            deferred,
            theta,
            cases,
            model_predictions,
            labels,
            base_report: base_report.map_err(|e| e.to_string()),
            unlabeled,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReviewSession {
    pub session_id: String,
    pub participant_id: String,
    pub seed: u64,
    pub order: Vec<String>,
    pub cursor: usize,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitInitial,
    AwaitFinal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NextCase {
    Case {
        case_id: String,
        report_text: String,
        position: usize,
        total: usize,
        phase: Phase,
        /// Only once the reviewer has disagreed with the model on this case.
        guidance: Option<GuidanceDocument>,
    },
    Done {
        total: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialOutcome {
    Advance,
    ShowGuidance(GuidanceDocument),
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Mutable state. All writes go through [`Sessions::record`], which checks
/// the protocol, appends to the log and only then updates memory.
#[derive(Debug)]
pub struct Sessions {
    sessions: HashMap<String, ReviewSession>,
    protocol: ProtocolState,
    events: Vec<ReviewEvent>,
    log: EventLog,
}

impl Sessions {
    /// Starts from whatever `log` already contains; the earlier sessions are
    /// kept for analysis but cannot be resumed.
    pub fn new(log: EventLog, existing: Vec<ReviewEvent>, deployment: &Deployment) -> Result<Self, WorkflowError> {
        let protocol = validate_events(&existing, Some(&deployment.model_predictions)).map_err(|v| {
            ReplayError::CorruptLog {
                line: existing.iter().position(|e| e.seq == v.seq).map_or(0, |i| i + 1),
                seq: Some(v.seq),
                reason: v.reason,
            }
        })?;
        Ok(Self {
            sessions: HashMap::new(),
            protocol,
            events: existing,
            log,
        })
    }

    pub fn events(&self) -> &[ReviewEvent] {
        &self.events
    }

    pub fn session(&self, id: &str) -> Result<&ReviewSession, WorkflowError> {
        self.sessions
            .get(id)
            .ok_or_else(|| WorkflowError::UnknownSession(id.to_owned()))
    }

    pub fn create(
        &mut self,
        deployment: &Deployment,
        participant_id: String,
        seed: u64,
    ) -> Result<ReviewSession, WorkflowError> {
        if deployment.deferred.is_empty() {
            return Err(WorkflowError::NoDeferredCases);
        }
        let mut order = deployment.deferred.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let session = ReviewSession {
            session_id: uuid::Uuid::new_v4().to_string(),
            participant_id,
            seed,
            order,
            cursor: 0,
            created_at: now_millis(),
        };
        self.sessions.insert(session.session_id.clone(), session.clone());
        Ok(session)
    }

    fn progress(&self, session: &str, case: &str) -> Option<CaseProgress> {
        self.protocol.case(session, case).copied()
    }

    pub fn next(&self, deployment: &Deployment, session_id: &str) -> Result<NextCase, WorkflowError> {
        let session = self.session(session_id)?;
        let total = session.order.len();
        let Some(case_id) = session.order.get(session.cursor) else {
            return Ok(NextCase::Done { total });
        };
        let info = &deployment.cases[case_id];
        let (phase, guidance) = match self.progress(session_id, case_id) {
            Some(CaseProgress::AwaitingFinal { guidance_shown: true, .. }) => {
                (Phase::AwaitFinal, Some(info.guidance.clone()))
            }
            _ => (Phase::AwaitInitial, None),
        };
        Ok(NextCase::Case {
            case_id: case_id.clone(),
            report_text: info.report_text.clone(),
            position: session.cursor + 1,
            total,
            phase,
            guidance,
        })
    }

    /// Locates `case` in the session: errors unless it is the current case.
    fn current_case(&self, session_id: &str, case: &str) -> Result<(), WorkflowError> {
        let session = self.session(session_id)?;
        let index = session
            .order
            .iter()
            .position(|c| c == case)
            .ok_or_else(|| WorkflowError::UnknownCase(case.to_owned()))?;
        if index != session.cursor {
            return Err(WorkflowError::OutOfOrder {
                case: case.to_owned(),
                current: session.order.get(session.cursor).cloned(),
            });
        }
        Ok(())
    }

    fn record(
        &mut self,
        deployment: &Deployment,
        session_id: &str,
        case: &str,
        kind: EventKind,
        prediction: Option<BinaryLabel>,
    ) -> Result<(), WorkflowError> {
        let event = ReviewEvent {
            seq: self.log.next_seq(),
            session_id: session_id.to_owned(),
            case_id: case.to_owned(),
            kind,
            prediction,
            timestamp: now_millis(),
        };
        let mut next = self.protocol.clone();
        next.apply(&event, Some(&deployment.model_predictions))
            .map_err(|v| ReplayError::CorruptLog {
                line: self.events.len() + 1,
                seq: Some(v.seq),
                reason: v.reason,
            })?;
        self.log.append(&event)?;
        self.protocol = next;
        self.events.push(event);
        Ok(())
    }

    fn advance(&mut self, session_id: &str) {
        if let Some(s) = self.sessions.get_mut(session_id) {
            s.cursor += 1;
        }
    }

    pub fn submit_initial(
        &mut self,
        deployment: &Deployment,
        session_id: &str,
        case: &str,
        prediction: BinaryLabel,
    ) -> Result<InitialOutcome, WorkflowError> {
        let already = self.session(session_id)?.order.iter().position(|c| c == case);
        if let (Some(i), Some(_)) = (already, self.progress(session_id, case)) {
            if i <= self.session(session_id)?.cursor {
                return Err(WorkflowError::DuplicateDecision("initial"));
            }
        }
        self.current_case(session_id, case)?;
        let info = &deployment.cases[case];
        self.record(deployment, session_id, case, EventKind::InitialDecision, Some(prediction))?;
        if prediction == info.model {
            self.record(deployment, session_id, case, EventKind::FinalDecision, Some(prediction))?;
            self.advance(session_id);
            Ok(InitialOutcome::Advance)
        } else {
            self.record(deployment, session_id, case, EventKind::GuidanceShown, None)?;
            Ok(InitialOutcome::ShowGuidance(info.guidance.clone()))
        }
    }

    pub fn submit_final(
        &mut self,
        deployment: &Deployment,
        session_id: &str,
        case: &str,
        prediction: BinaryLabel,
    ) -> Result<(), WorkflowError> {
        let session = self.session(session_id)?;
        if !session.order.iter().any(|c| c == case) {
            return Err(WorkflowError::UnknownCase(case.to_owned()));
        }
        match self.progress(session_id, case) {
            Some(CaseProgress::AwaitingFinal { guidance_shown: true, .. }) => {}
            Some(CaseProgress::Done { guidance_shown: true, .. }) => {
                return Err(WorkflowError::DuplicateDecision("final"));
            }
            Some(_) => return Err(WorkflowError::GuidanceNotShown),
            None => {
                self.current_case(session_id, case)?;
                return Err(WorkflowError::GuidanceNotShown);
            }
        }
        self.record(deployment, session_id, case, EventKind::FinalDecision, Some(prediction))?;
        self.advance(session_id);
        Ok(())
    }

    /// Pilot analysis over the completed decisions so far; `None` before
    /// any decision or on an unlabeled deployment.
    pub fn analysis(&self, deployment: &Deployment) -> Result<Option<SessionAnalysis>, WorkflowError> {
        if self.events.is_empty() || deployment.unlabeled {
            return Ok(None);
        }
        let analysis = analyze_events(&self.events, Some(&deployment.model_predictions), &deployment.labels)?;
        Ok((!analysis.participants.is_empty()).then_some(analysis))
    }
}
