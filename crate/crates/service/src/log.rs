//! Append-only review-event log (one JSON object per line) and its replay.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use gdefer_core::evaluation::{analyze_session, AnalysisError, SessionAnalysis};
use gdefer_core::session::{validate_events, CaseProgress, ProtocolViolation, ReviewEvent};
use gdefer_core::BinaryLabel;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read event log `{path}`")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt event log at line {line}{}: {reason}", seq.map(|s| format!(" (seq {s})")).unwrap_or_default())]
    CorruptLog {
        line: usize,
        seq: Option<u64>,
        reason: String,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// Reads every event; blank lines are skipped.
pub fn read_events(path: &Path) -> Result<Vec<ReviewEvent>, ReplayError> {
    let io = |source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let event: ReviewEvent = serde_json::from_str(&line).map_err(|e| ReplayError::CorruptLog {
            line: i + 1,
            seq: None,
            reason: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Keeps only the events of `(session, case)` pairs that reached a final
/// decision, so a log cut short mid-case still analyses cleanly.
pub fn completed_events(events: &[ReviewEvent]) -> Vec<ReviewEvent> {
    let Ok(state) = validate_events(events, None) else {
        return events.to_vec();
    };
    let open: HashSet<(&str, &str)> = state
        .sessions
        .iter()
        .flat_map(|(session, cases)| {
            cases
                .iter()
                .filter(|(_, p)| matches!(p, CaseProgress::AwaitingFinal { .. }))
                .map(move |(case, _)| (session.as_str(), case.as_str()))
        })
        .collect();
    events
        .iter()
        .filter(|e| !open.contains(&(e.session_id.as_str(), e.case_id.as_str())))
        .cloned()
        .collect()
}

/// Checks every protocol invariant (against the model's predictions when
/// given), then analyses the completed decisions.
pub fn analyze_events(
    events: &[ReviewEvent],
    model_predictions: Option<&HashMap<String, BinaryLabel>>,
    labels: &HashMap<String, BinaryLabel>,
) -> Result<SessionAnalysis, ReplayError> {
    validate_events(events, model_predictions).map_err(|v: ProtocolViolation| {
        let line = events.iter().position(|e| e.seq == v.seq).map_or(0, |i| i + 1);
        ReplayError::CorruptLog {
            line,
            seq: Some(v.seq),
            reason: v.reason,
        }
    })?;
    Ok(analyze_session(&completed_events(events), labels)?)
}

pub fn replay_log(
    path: &Path,
    model_predictions: Option<&HashMap<String, BinaryLabel>>,
    labels: &HashMap<String, BinaryLabel>,
) -> Result<SessionAnalysis, ReplayError> {
    let events = read_events(path)?;
    analyze_events(&events, model_predictions, labels)
}

/// Single writer; every append is flushed before it is acknowledged.
#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
    next_seq: u64,
}

impl EventLog {
    /// Log kept in memory only.
    pub fn detached() -> Self {
        Self {
            path: None,
            file: None,
            next_seq: 1,
        }
    }

    /// Opens (or creates) `path` for appending and returns the events it
    /// already holds.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<ReviewEvent>), ReplayError> {
        let path = path.into();
        let existing = if path.exists() {
            read_events(&path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| ReplayError::Io {
                path: path.display().to_string(),
                source,
            })?;
        let next_seq = existing.last().map_or(1, |e| e.seq + 1);
        Ok((
            Self {
                path: Some(path),
                file: Some(file),
                next_seq,
            },
            existing,
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Writes `event` (whose `seq` must be [`Self::next_seq`]).
    pub fn append(&mut self, event: &ReviewEvent) -> std::io::Result<()> {
        debug_assert_eq!(event.seq, self.next_seq);
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_vec(event).map_err(std::io::Error::other)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        self.next_seq += 1;
        Ok(())
    }
}
