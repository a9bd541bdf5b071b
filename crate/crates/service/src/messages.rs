//! JSON shapes exchanged with clients.

use chrono::SecondsFormat;
use cpr_core::clock::Instant;
use cpr_core::engine::{CommandKind, Phase};
use cpr_core::records::{mg_to_raw, EventRecord};
use cpr_core::{Session, SessionEvent};
use serde::{de, Deserialize, Deserializer, Serialize};
use serde_json::value::RawValue;

/// A command as a client sends it. There is no timestamp; the service stamps
/// it on receipt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRequest {
    pub kind: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<CommandPayload>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandPayload {
    pub text: String,
}

impl CommandRequest {
    pub fn new(kind: CommandKind) -> Self {
        Self {
            kind,
            payload: None,
        }
    }

    pub fn note(text: impl Into<String>) -> Self {
        Self {
            kind: CommandKind::AddNote,
            payload: Some(CommandPayload { text: text.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ClientMessage {
    SubmitCommand {
        session_id: String,
        command: CommandRequest,
    },
    /// One-shot fetch of the events from `from_seq` on.
    Subscribe {
        session_id: String,
        #[serde(default)]
        from_seq: Option<u64>,
    },
    RequestSnapshot {
        session_id: String,
    },
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind")]
pub enum ServerMessage {
    Events {
        session_id: String,
        events: Vec<EventRecord>,
    },
    Snapshot(Snapshot),
    Rejected {
        session_id: String,
        reason: String,
        events: Vec<EventRecord>,
    },
    Error {
        text: String,
    },
}

// Exact dose numbers are raw JSON, which serde cannot buffer for an
// internally tagged enum; read the tag first, then the variant.
impl<'de> Deserialize<'de> for ServerMessage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Tag {
            kind: String,
        }
        #[derive(Deserialize)]
        struct EventsBody {
            session_id: String,
            events: Vec<EventRecord>,
        }
        #[derive(Deserialize)]
        struct RejectedBody {
            session_id: String,
            reason: String,
            events: Vec<EventRecord>,
        }
        #[derive(Deserialize)]
        struct ErrorBody {
            text: String,
        }

        let raw = Box::<RawValue>::deserialize(deserializer)?;
        let text = raw.get();
        let parse_err = de::Error::custom;
        let tag: Tag = serde_json::from_str(text).map_err(parse_err)?;
        Ok(match tag.kind.as_str() {
            "Events" => {
                let b: EventsBody = serde_json::from_str(text).map_err(parse_err)?;
                ServerMessage::Events {
                    session_id: b.session_id,
                    events: b.events,
                }
            }
            "Snapshot" => ServerMessage::Snapshot(serde_json::from_str(text).map_err(parse_err)?),
            "Rejected" => {
                let b: RejectedBody = serde_json::from_str(text).map_err(parse_err)?;
                ServerMessage::Rejected {
                    session_id: b.session_id,
                    reason: b.reason,
                    events: b.events,
                }
            }
            "Error" => {
                let b: ErrorBody = serde_json::from_str(text).map_err(parse_err)?;
                ServerMessage::Error { text: b.text }
            }
            other => {
                return Err(de::Error::unknown_variant(
                    other,
                    &["Events", "Snapshot", "Rejected", "Error"],
                ))
            }
        })
    }
}

/// Outcome of one submitted command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub events: Vec<EventRecord>,
    pub enabled: Vec<CommandKind>,
}

/// Point-in-time projection of a session, evaluated at `as_of`: the instant
/// of the last command or tick the service applied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub phase: Phase,
    pub head_seq: u64,
    pub defibrillation_count: u32,
    pub adrenaline_doses: usize,
    pub adrenaline_total_mg: Box<RawValue>,
    pub cordarone_doses: usize,
    pub cordarone_total_mg: Box<RawValue>,
    pub adrenaline_due: bool,
    pub amiodarone_due: bool,
    pub enabled: Vec<CommandKind>,
    pub countdown_remaining_ms: Option<u64>,
    pub elapsed_ms: u64,
    pub notes: usize,
    pub as_of_monotonic_ns: u64,
    pub as_of_utc: String,
}

fn millis(d: std::time::Duration) -> u64 {
    u64::try_from(d.as_millis()).unwrap_or(u64::MAX)
}

impl Snapshot {
    pub fn project(session_id: &str, state: &Session, as_of: &Instant) -> Self {
        let enabled = state.enabled_commands(as_of);
        Self {
            session_id: session_id.to_owned(),
            phase: state.phase,
            head_seq: state.event_seq - 1,
            defibrillation_count: state.defib_count,
            adrenaline_doses: state.adrenaline_doses.len(),
            adrenaline_total_mg: mg_to_raw(&state.adrenaline_total_mg()),
            cordarone_doses: state.amiodarone_doses.len(),
            cordarone_total_mg: mg_to_raw(&state.amiodarone_total_mg()),
            adrenaline_due: enabled.contains(&CommandKind::AdministerAdrenaline),
            amiodarone_due: enabled.contains(&CommandKind::AdministerAmiodarone),
            enabled: enabled.into_iter().collect(),
            countdown_remaining_ms: state.countdown_remaining(as_of).map(millis),
            elapsed_ms: state.elapsed(as_of).map(millis).unwrap_or(0),
            notes: state.notes.len(),
            as_of_monotonic_ns: as_of.monotonic_nanos,
            as_of_utc: as_of.wall_time.to_rfc3339_opts(SecondsFormat::Millis, true),
        }
    }
}

pub fn records(events: &[SessionEvent]) -> Vec<EventRecord> {
    events.iter().map(EventRecord::from_event).collect()
}
