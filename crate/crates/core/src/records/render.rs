use std::fmt;

use chrono::FixedOffset;

use super::EventLog;
use crate::clock::Instant;
use crate::engine::{EventKind, Rhythm};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Also list navigation, alarm, reminder and rejection events.
    pub verbose: bool,
    /// Offset used to localize stored UTC wall times.
    pub utc_offset: FixedOffset,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            verbose: false,
            utc_offset: FixedOffset::east_opt(0).expect("zero offset"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentationLine {
    /// `YYYY-MM-DD HH:MM`
    pub timestamp_text: String,
    pub description: String,
}

impl fmt::Display for DocumentationLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}", self.description, self.timestamp_text)
    }
}

fn minute_stamp(at: &Instant, offset: FixedOffset) -> String {
    at.wall_time
        .with_timezone(&offset)
        .format("%Y-%m-%d %H:%M")
        .to_string()
}

fn rhythm_label(rhythm: Rhythm) -> &'static str {
    match rhythm {
        Rhythm::AsystolePea => "asystole/PEA",
        Rhythm::VfVt => "VF/VT",
    }
}

/// `Some(description)` for procedure events, `None` for bookkeeping ones.
fn procedure_text<M: Scalar>(kind: &EventKind<M>) -> Option<String> {
    Some(match kind {
        EventKind::SessionStarted => "CPR started".to_owned(),
        EventKind::CompressionStarted => "heart compression started".to_owned(),
        EventKind::CompressionFinished => "heart compression finished".to_owned(),
        EventKind::RhythmSelected { rhythm } => format!("rhythm {}", rhythm_label(*rhythm)),
        EventKind::DefibrillationDelivered { ordinal } => format!("defibrillation #{ordinal}"),
        EventKind::AdrenalineGiven { mg } => format!("{}mg adrenaline", mg.to_decimal_string()),
        EventKind::AmiodaroneGiven { mg } => format!("{}mg cordarone", mg.to_decimal_string()),
        EventKind::NoteAdded { text } => format!("note: {text}"),
        EventKind::SessionEnded => "CPR ended".to_owned(),
        _ => return None,
    })
}

fn bookkeeping_text<M>(kind: &EventKind<M>) -> String {
    match kind {
        EventKind::CompressionWarning => "compression ending, 10 seconds or less".to_owned(),
        EventKind::CompressionBlink { second_mark } => format!("compression blink {second_mark}"),
        EventKind::AnalysisOpened => "analysis screen".to_owned(),
        EventKind::RhythmSelectionOpened => "rhythm selection screen".to_owned(),
        EventKind::AdrenalineDue => "adrenaline due".to_owned(),
        EventKind::AmiodaroneDue => "cordarone due".to_owned(),
        EventKind::CommandRejected { kind, reason } => format!("rejected {kind} ({reason})"),
        other => other.name().to_owned(),
    }
}

/// One line per procedure, in event order.
pub fn render_documentation<M: Scalar>(
    log: &EventLog<M>,
    options: &RenderOptions,
) -> Vec<DocumentationLine> {
    log.events
        .iter()
        .filter_map(|event| {
            let description = match procedure_text(&event.kind) {
                Some(text) => text,
                None if options.verbose => bookkeeping_text(&event.kind),
                None => return None,
            };
            Some(DocumentationLine {
                timestamp_text: minute_stamp(&event.at, options.utc_offset),
                description,
            })
        })
        .collect()
}

/// `(timestamp_text, text)` for every note, in order.
pub fn render_notes<M: Scalar>(
    log: &EventLog<M>,
    options: &RenderOptions,
) -> Vec<(String, String)> {
    log.events
        .iter()
        .filter_map(|event| match &event.kind {
            EventKind::NoteAdded { text } => {
                Some((minute_stamp(&event.at, options.utc_offset), text.clone()))
            }
            _ => None,
        })
        .collect()
}
