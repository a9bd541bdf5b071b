//! Session records: the append-only event log and everything derived from it.

mod file;
mod render;
mod replay;

use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub use file::{
    decode_session, decode_session_unchecked, encode_session, load_session, mg_from_raw, mg_to_raw,
    save_session, ConfigRecord, EventRecord, SCHEMA_VERSION,
};
pub use render::{render_documentation, render_notes, DocumentationLine, RenderOptions};
pub use replay::replay_verify;

use crate::engine::{DosingConfig, Event, EventKind, SessionState};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("sequence gap: expected seq {expected}, found {found}")]
    SeqGap { expected: u64, found: u64 },
    #[error("timestamp of seq {seq} precedes the previous event")]
    TimeRegression { seq: u64 },
    #[error("checksum mismatch: file records {recorded}, content hashes to {computed}")]
    ChecksumMismatch { recorded: String, computed: String },
}

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u64),
    #[error("integrity error: {0}")]
    Integrity(#[from] IntegrityError),
    #[error("replay diverged at seq {seq}: expected {expected}, replay produced {found}")]
    Divergence {
        seq: u64,
        expected: String,
        found: String,
    },
}

/// Ordered, gapless list of session events plus the config they were produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog<M> {
    pub session_id: String,
    pub config: DosingConfig<M>,
    pub events: Vec<Event<M>>,
    pub schema_version: u32,
}

impl<M: Scalar> EventLog<M> {
    pub fn new(session_id: impl Into<String>, config: DosingConfig<M>) -> Self {
        Self {
            session_id: session_id.into(),
            config,
            events: Vec::new(),
            schema_version: SCHEMA_VERSION,
        }
    }

    /// Builds a log from already-produced events, checking integrity.
    pub fn from_events(
        session_id: impl Into<String>,
        config: DosingConfig<M>,
        events: impl IntoIterator<Item = Event<M>>,
    ) -> Result<Self, IntegrityError> {
        let mut log = Self::new(session_id, config);
        for event in events {
            log.push(event)?;
        }
        Ok(log)
    }

    /// Returns a new log with `event` appended; `self` is left as it was.
    pub fn append(&self, event: Event<M>) -> Result<Self, IntegrityError> {
        self.check_next(&event)?;
        let mut next = self.clone();
        next.events.push(event);
        Ok(next)
    }

    /// In-place append with the same checks as [`append`](Self::append).
    pub fn push(&mut self, event: Event<M>) -> Result<(), IntegrityError> {
        self.check_next(&event)?;
        self.events.push(event);
        Ok(())
    }

    fn check_next(&self, event: &Event<M>) -> Result<(), IntegrityError> {
        let expected = self.next_seq();
        if event.seq != expected {
            return Err(IntegrityError::SeqGap {
                expected,
                found: event.seq,
            });
        }
        if let Some(last) = self.events.last() {
            if event.at.monotonic_nanos < last.at.monotonic_nanos {
                return Err(IntegrityError::TimeRegression { seq: event.seq });
            }
        }
        Ok(())
    }

    /// Re-checks the whole log.
    pub fn verify_integrity(&self) -> Result<(), IntegrityError> {
        let mut prev: Option<&Event<M>> = None;
        for (idx, event) in self.events.iter().enumerate() {
            let expected = idx as u64 + 1;
            if event.seq != expected {
                return Err(IntegrityError::SeqGap {
                    expected,
                    found: event.seq,
                });
            }
            if prev.is_some_and(|p| event.at.monotonic_nanos < p.at.monotonic_nanos) {
                return Err(IntegrityError::TimeRegression { seq: event.seq });
            }
            prev = Some(event);
        }
        Ok(())
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with `seq >= from_seq`.
    pub fn events_from(&self, from_seq: u64) -> &[Event<M>] {
        let skip = usize::try_from(from_seq.saturating_sub(1)).unwrap_or(usize::MAX);
        self.events.get(skip..).unwrap_or(&[])
    }
}

/// Aggregate view shown on the summary screen.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary<M> {
    pub defibrillation_count: u32,
    pub adrenaline_total_mg: M,
    /// Amiodarone, reported under its trade name.
    pub cordarone_total_mg: M,
    pub session_duration: Duration,
    pub ended: bool,
}

impl<M: Scalar> fmt::Display for Summary<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "defibrillations: {}, adrenaline: {}mg, cordarone: {}mg",
            self.defibrillation_count,
            self.adrenaline_total_mg.to_decimal_string(),
            self.cordarone_total_mg.to_decimal_string()
        )
    }
}

/// Fold over the log.
pub fn summarize<M: Scalar>(log: &EventLog<M>) -> Summary<M> {
    let mut summary = Summary {
        defibrillation_count: 0,
        adrenaline_total_mg: M::zero(),
        cordarone_total_mg: M::zero(),
        session_duration: Duration::ZERO,
        ended: false,
    };
    for event in &log.events {
        match &event.kind {
            EventKind::DefibrillationDelivered { .. } => summary.defibrillation_count += 1,
            EventKind::AdrenalineGiven { mg } => {
                summary.adrenaline_total_mg = summary.adrenaline_total_mg.clone() + mg.clone();
            }
            EventKind::AmiodaroneGiven { mg } => {
                summary.cordarone_total_mg = summary.cordarone_total_mg.clone() + mg.clone();
            }
            EventKind::SessionEnded => summary.ended = true,
            _ => {}
        }
    }
    let started = log
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::SessionStarted));
    if let (Some(first), Some(last)) = (started, log.events.last()) {
        summary.session_duration = last.at.saturating_since(&first.at);
    }
    summary
}

impl<M: Scalar> From<&SessionState<M>> for Summary<M> {
    /// The same aggregate computed from engine state instead of the log.
    fn from(state: &SessionState<M>) -> Self {
        let session_duration = match (&state.session_start, &state.head_at) {
            (Some(start), Some(head)) => head.saturating_since(start),
            _ => Duration::ZERO,
        };
        Summary {
            defibrillation_count: state.defib_count,
            adrenaline_total_mg: state.adrenaline_total_mg(),
            cordarone_total_mg: state.amiodarone_total_mg(),
            session_duration,
            ended: state.phase == crate::engine::Phase::Ended,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Instant;
    use crate::engine::{new_session, Action, Command};
    use chrono::{DateTime, Utc};
    use num_rational::Ratio;

    type Exact = Ratio<i64>;

    fn t(secs: u64) -> Instant {
        Instant::from_epoch(DateTime::<Utc>::UNIX_EPOCH, Duration::from_secs(secs))
    }

    fn event(seq: u64, secs: u64) -> Event<Exact> {
        Event {
            seq,
            at: t(secs),
            kind: EventKind::SessionStarted,
        }
    }

    #[test]
    fn append_is_persistent() {
        let empty = EventLog::<Exact>::new("s", DosingConfig::default());
        let one = empty.append(event(1, 0)).unwrap();
        assert_eq!(one.len(), 1);
        assert!(empty.is_empty());
    }

    #[test]
    fn append_rejects_gaps_and_regressions() {
        let log = EventLog::<Exact>::new("s", DosingConfig::default())
            .append(event(1, 5))
            .unwrap();
        assert_eq!(
            log.append(event(3, 5)),
            Err(IntegrityError::SeqGap {
                expected: 2,
                found: 3
            })
        );
        assert_eq!(
            log.append(event(2, 4)),
            Err(IntegrityError::TimeRegression { seq: 2 })
        );
        assert!(log.append(event(2, 5)).is_ok());
    }

    #[test]
    fn events_from_slices_by_seq() {
        let log = EventLog::from_events(
            "s",
            DosingConfig::<Exact>::default(),
            (1..=5).map(|s| event(s, s)),
        )
        .unwrap();
        assert_eq!(log.events_from(1).len(), 5);
        assert_eq!(log.events_from(4)[0].seq, 4);
        assert!(log.events_from(6).is_empty());
        assert!(log.events_from(100).is_empty());
    }

    #[test]
    fn empty_session_summary() {
        let (state, mut events) = new_session(DosingConfig::<Exact>::default(), t(0));
        let (state, more) = state.apply(&Command::new(Action::AnalyzeRhythm, t(1)));
        events.extend(more);
        let (state, more) = state.apply(&Command::new(Action::EndSession, t(2)));
        events.extend(more);
        let log = EventLog::from_events("s", DosingConfig::default(), events).unwrap();
        let summary = summarize(&log);
        assert_eq!(
            summary.to_string(),
            "defibrillations: 0, adrenaline: 0mg, cordarone: 0mg"
        );
        assert!(summary.ended);
        assert_eq!(summary, Summary::from(&state));
    }
}
