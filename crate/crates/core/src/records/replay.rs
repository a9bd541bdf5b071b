use std::time::Duration;

use super::{EventLog, RecordsError};
use crate::engine::{Action, Command, Event, EventKind, RejectReason, Rhythm, SessionState};
use crate::scalar::Scalar;

/// The command whose application produced a batch starting with `event`.
///
/// Alarm stages and due reminders only ever start a batch when a tick
/// produced them; every other kind maps to the button that caused it.
fn implied_command<M: Scalar>(event: &Event<M>) -> Command {
    let action = match &event.kind {
        EventKind::SessionStarted => Action::StartSession,
        EventKind::CompressionStarted => Action::StartCompression,
        EventKind::AnalysisOpened => Action::ReturnToAnalysis,
        EventKind::RhythmSelectionOpened => Action::AnalyzeRhythm,
        EventKind::RhythmSelected {
            rhythm: Rhythm::AsystolePea,
        } => Action::SelectAsystolePea,
        EventKind::RhythmSelected {
            rhythm: Rhythm::VfVt,
        } => Action::SelectVfVt,
        EventKind::DefibrillationDelivered { .. } => Action::Defibrillate,
        EventKind::AdrenalineGiven { .. } => Action::AdministerAdrenaline,
        EventKind::AmiodaroneGiven { .. } => Action::AdministerAmiodarone,
        EventKind::NoteAdded { text } => Action::AddNote(text.clone()),
        EventKind::SessionEnded => Action::EndSession,
        EventKind::CommandRejected { kind, reason } => {
            let action = Action::from_kind(*kind, String::new());
            if *reason == RejectReason::NonMonotonicTime {
                // Rejections for stale commands are stamped at the log head;
                // any earlier instant reproduces them.
                let at = event
                    .at
                    .checked_sub(Duration::from_nanos(1))
                    .unwrap_or(event.at);
                return Command::new(action, at);
            }
            action
        }
        EventKind::CompressionWarning
        | EventKind::CompressionBlink { .. }
        | EventKind::CompressionFinished
        | EventKind::AdrenalineDue
        | EventKind::AmiodaroneDue => Action::Tick,
    };
    Command::new(action, event.at)
}

/// Re-derives session state from the log through the engine and checks that
/// the regenerated event stream is identical to the stored one.
pub fn replay_verify<M: Scalar>(log: &EventLog<M>) -> Result<SessionState<M>, RecordsError> {
    log.verify_integrity()?;
    let mut state = SessionState::idle(log.config.clone());
    let stored = &log.events;
    let mut idx = 0;
    while idx < stored.len() {
        let expected = &stored[idx];
        let produced = state.apply_in_place(&implied_command(expected));
        if produced.is_empty() {
            return Err(RecordsError::Divergence {
                seq: expected.seq,
                expected: describe(expected),
                found: "no event".to_owned(),
            });
        }
        for (offset, event) in produced.iter().enumerate() {
            match stored.get(idx + offset) {
                Some(want) if want == event => {}
                Some(want) => {
                    return Err(RecordsError::Divergence {
                        seq: want.seq,
                        expected: describe(want),
                        found: describe(event),
                    })
                }
                None => {
                    return Err(RecordsError::Divergence {
                        seq: event.seq,
                        expected: "end of log".to_owned(),
                        found: describe(event),
                    })
                }
            }
        }
        idx += produced.len();
    }
    Ok(state)
}

fn describe<M: Scalar>(event: &Event<M>) -> String {
    let record = super::EventRecord::from_event(event);
    match record.payload {
        Some(p) => format!("{} {} @{}ns", record.kind, p.get(), record.monotonic_ns),
        None => format!("{} @{}ns", record.kind, record.monotonic_ns),
    }
}
