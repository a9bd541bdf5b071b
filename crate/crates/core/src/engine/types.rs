use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Analysis,
    RhythmSelection,
    AsystolePea,
    VfVt,
    Ended,
}

impl Phase {
    pub fn is_rhythm(self) -> bool {
        matches!(self, Phase::AsystolePea | Phase::VfVt)
    }
}

/// Rhythm class chosen by the operator after reading the ECG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rhythm {
    AsystolePea,
    VfVt,
}

impl Rhythm {
    pub fn as_str(self) -> &'static str {
        match self {
            Rhythm::AsystolePea => "AsystolePea",
            Rhythm::VfVt => "VfVt",
        }
    }
}

impl FromStr for Rhythm {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AsystolePea" => Ok(Rhythm::AsystolePea),
            "VfVt" => Ok(Rhythm::VfVt),
            other => Err(UnknownName(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown name `{0}`")]
pub struct UnknownName(pub String);

/// Payload-free command tag, the unit of the enabled-command set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommandKind {
    StartSession,
    StartCompression,
    AnalyzeRhythm,
    SelectAsystolePea,
    SelectVfVt,
    Defibrillate,
    AdministerAdrenaline,
    AdministerAmiodarone,
    ReturnToAnalysis,
    AddNote,
    EndSession,
    Tick,
}

impl CommandKind {
    pub const ALL: [CommandKind; 12] = [
        CommandKind::StartSession,
        CommandKind::StartCompression,
        CommandKind::AnalyzeRhythm,
        CommandKind::SelectAsystolePea,
        CommandKind::SelectVfVt,
        CommandKind::Defibrillate,
        CommandKind::AdministerAdrenaline,
        CommandKind::AdministerAmiodarone,
        CommandKind::ReturnToAnalysis,
        CommandKind::AddNote,
        CommandKind::EndSession,
        CommandKind::Tick,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::StartSession => "StartSession",
            CommandKind::StartCompression => "StartCompression",
            CommandKind::AnalyzeRhythm => "AnalyzeRhythm",
            CommandKind::SelectAsystolePea => "SelectAsystolePea",
            CommandKind::SelectVfVt => "SelectVfVt",
            CommandKind::Defibrillate => "Defibrillate",
            CommandKind::AdministerAdrenaline => "AdministerAdrenaline",
            CommandKind::AdministerAmiodarone => "AdministerAmiodarone",
            CommandKind::ReturnToAnalysis => "ReturnToAnalysis",
            CommandKind::AddNote => "AddNote",
            CommandKind::EndSession => "EndSession",
            CommandKind::Tick => "Tick",
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommandKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommandKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_owned()))
    }
}

/// What the operator (or the clock) asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    StartSession,
    StartCompression,
    AnalyzeRhythm,
    SelectAsystolePea,
    SelectVfVt,
    Defibrillate,
    AdministerAdrenaline,
    AdministerAmiodarone,
    ReturnToAnalysis,
    AddNote(String),
    EndSession,
    Tick,
}

impl Action {
    pub fn kind(&self) -> CommandKind {
        match self {
            Action::StartSession => CommandKind::StartSession,
            Action::StartCompression => CommandKind::StartCompression,
            Action::AnalyzeRhythm => CommandKind::AnalyzeRhythm,
            Action::SelectAsystolePea => CommandKind::SelectAsystolePea,
            Action::SelectVfVt => CommandKind::SelectVfVt,
            Action::Defibrillate => CommandKind::Defibrillate,
            Action::AdministerAdrenaline => CommandKind::AdministerAdrenaline,
            Action::AdministerAmiodarone => CommandKind::AdministerAmiodarone,
            Action::ReturnToAnalysis => CommandKind::ReturnToAnalysis,
            Action::AddNote(_) => CommandKind::AddNote,
            Action::EndSession => CommandKind::EndSession,
            Action::Tick => CommandKind::Tick,
        }
    }

    /// The action for a kind; notes get the supplied text.
    pub fn from_kind(kind: CommandKind, note: impl Into<String>) -> Action {
        match kind {
            CommandKind::StartSession => Action::StartSession,
            CommandKind::StartCompression => Action::StartCompression,
            CommandKind::AnalyzeRhythm => Action::AnalyzeRhythm,
            CommandKind::SelectAsystolePea => Action::SelectAsystolePea,
            CommandKind::SelectVfVt => Action::SelectVfVt,
            CommandKind::Defibrillate => Action::Defibrillate,
            CommandKind::AdministerAdrenaline => Action::AdministerAdrenaline,
            CommandKind::AdministerAmiodarone => Action::AdministerAmiodarone,
            CommandKind::ReturnToAnalysis => Action::ReturnToAnalysis,
            CommandKind::AddNote => Action::AddNote(note.into()),
            CommandKind::EndSession => Action::EndSession,
            CommandKind::Tick => Action::Tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub action: Action,
    pub at: Instant,
}

impl Command {
    pub fn new(action: Action, at: Instant) -> Self {
        Self { action, at }
    }

    pub fn kind(&self) -> CommandKind {
        self.action.kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    NotEnabled,
    TerminalPhase,
    NonMonotonicTime,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NotEnabled => "not-enabled",
            RejectReason::TerminalPhase => "terminal-phase",
            RejectReason::NonMonotonicTime => "non-monotonic-time",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RejectReason {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "not-enabled" => Ok(RejectReason::NotEnabled),
            "terminal-phase" => Ok(RejectReason::TerminalPhase),
            "non-monotonic-time" => Ok(RejectReason::NonMonotonicTime),
            other => Err(UnknownName(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind<M> {
    SessionStarted,
    CompressionStarted,
    CompressionWarning,
    CompressionBlink {
        second_mark: u32,
    },
    /// Countdown reached zero. The UI renders this as the vibration.
    CompressionFinished,
    AnalysisOpened,
    RhythmSelectionOpened,
    RhythmSelected {
        rhythm: Rhythm,
    },
    DefibrillationDelivered {
        ordinal: u32,
    },
    AdrenalineGiven {
        mg: M,
    },
    AmiodaroneGiven {
        mg: M,
    },
    AdrenalineDue,
    AmiodaroneDue,
    NoteAdded {
        text: String,
    },
    CommandRejected {
        kind: CommandKind,
        reason: RejectReason,
    },
    SessionEnded,
}

impl<M> EventKind<M> {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionStarted => "SessionStarted",
            EventKind::CompressionStarted => "CompressionStarted",
            EventKind::CompressionWarning => "CompressionWarning",
            EventKind::CompressionBlink { .. } => "CompressionBlink",
            EventKind::CompressionFinished => "CompressionFinished",
            EventKind::AnalysisOpened => "AnalysisOpened",
            EventKind::RhythmSelectionOpened => "RhythmSelectionOpened",
            EventKind::RhythmSelected { .. } => "RhythmSelected",
            EventKind::DefibrillationDelivered { .. } => "DefibrillationDelivered",
            EventKind::AdrenalineGiven { .. } => "AdrenalineGiven",
            EventKind::AmiodaroneGiven { .. } => "AmiodaroneGiven",
            EventKind::AdrenalineDue => "AdrenalineDue",
            EventKind::AmiodaroneDue => "AmiodaroneDue",
            EventKind::NoteAdded { .. } => "NoteAdded",
            EventKind::CommandRejected { .. } => "CommandRejected",
            EventKind::SessionEnded => "SessionEnded",
        }
    }
}

/// An immutable fact in the session log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<M> {
    pub seq: u64,
    pub at: Instant,
    pub kind: EventKind<M>,
}
