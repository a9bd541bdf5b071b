//! Session file format.
//!
//! UTF-8, one JSON record per line, every line newline-terminated:
//!
//! ```text
//! {"schema_version":1,"session_id":"...","config":{...}}
//! {"seq":1,"monotonic_ns":0,"wall_utc":"2021-05-07T15:00:00Z","kind":"SessionStarted","payload":null}
//! ...
//! {"checksum":"<sha256 hex of every preceding byte>"}
//! ```
//!
//! Config durations are whole seconds and doses are decimal milligrams.
//! Files are written to a temporary sibling and renamed into place.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use super::{EventLog, IntegrityError, RecordsError};
use crate::clock::Instant;
use crate::engine::{CommandKind, DosingConfig, Event, EventKind, RejectReason, Rhythm};
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    schema_version: u64,
    session_id: String,
    config: ConfigRecord,
}

/// Wire form of [`DosingConfig`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigRecord {
    pub adrenaline_dose_mg: Box<RawValue>,
    pub adrenaline_interval: u64,
    pub amiodarone_first_dose_mg: Box<RawValue>,
    pub amiodarone_repeat_dose_mg: Box<RawValue>,
    pub compression_duration: u64,
    pub warning_threshold: u64,
    pub vfvt_adrenaline_min_defibs: u32,
}

/// Wire form of an [`Event`], shared by the session file and the service.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub seq: u64,
    pub monotonic_ns: u64,
    pub wall_utc: String,
    pub kind: String,
    pub payload: Option<Box<RawValue>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChecksumRecord {
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct SecondMark {
    second_mark: u32,
}

#[derive(Serialize, Deserialize)]
struct RhythmPayload {
    rhythm: String,
}

#[derive(Serialize, Deserialize)]
struct Ordinal {
    ordinal: u32,
}

#[derive(Serialize, Deserialize)]
struct Dose {
    mg: Box<RawValue>,
}

#[derive(Serialize, Deserialize)]
struct NoteText {
    text: String,
}

#[derive(Serialize, Deserialize)]
struct Rejection {
    kind: String,
    reason: String,
}

/// Exact JSON number for a dose.
pub fn mg_to_raw<M: Scalar>(mg: &M) -> Box<RawValue> {
    RawValue::from_string(mg.to_decimal_string()).expect("decimal text is a JSON number")
}

pub fn mg_from_raw<M: Scalar>(raw: &RawValue) -> Result<M, String> {
    M::parse_decimal(raw.get()).ok_or_else(|| format!("invalid dose `{}`", raw.get()))
}

fn raw<T: Serialize>(value: &T) -> Box<RawValue> {
    serde_json::value::to_raw_value(value).expect("payload serializes")
}

fn secs(d: Duration) -> u64 {
    d.as_secs()
}

impl ConfigRecord {
    pub fn from_config<M: Scalar>(config: &DosingConfig<M>) -> Self {
        Self {
            adrenaline_dose_mg: mg_to_raw(&config.adrenaline_dose_mg),
            adrenaline_interval: secs(config.adrenaline_interval),
            amiodarone_first_dose_mg: mg_to_raw(&config.amiodarone_first_dose_mg),
            amiodarone_repeat_dose_mg: mg_to_raw(&config.amiodarone_repeat_dose_mg),
            compression_duration: secs(config.compression_duration),
            warning_threshold: secs(config.warning_threshold),
            vfvt_adrenaline_min_defibs: config.vfvt_adrenaline_min_defibs,
        }
    }

    pub fn to_config<M: Scalar>(&self) -> Result<DosingConfig<M>, String> {
        let config = DosingConfig {
            adrenaline_dose_mg: mg_from_raw(&self.adrenaline_dose_mg)?,
            adrenaline_interval: Duration::from_secs(self.adrenaline_interval),
            amiodarone_first_dose_mg: mg_from_raw(&self.amiodarone_first_dose_mg)?,
            amiodarone_repeat_dose_mg: mg_from_raw(&self.amiodarone_repeat_dose_mg)?,
            compression_duration: Duration::from_secs(self.compression_duration),
            warning_threshold: Duration::from_secs(self.warning_threshold),
            vfvt_adrenaline_min_defibs: self.vfvt_adrenaline_min_defibs,
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

impl EventRecord {
    pub fn from_event<M: Scalar>(event: &Event<M>) -> Self {
        let payload = match &event.kind {
            EventKind::CompressionBlink { second_mark } => Some(raw(&SecondMark {
                second_mark: *second_mark,
            })),
            EventKind::RhythmSelected { rhythm } => Some(raw(&RhythmPayload {
                rhythm: rhythm.as_str().to_owned(),
            })),
            EventKind::DefibrillationDelivered { ordinal } => {
                Some(raw(&Ordinal { ordinal: *ordinal }))
            }
            EventKind::AdrenalineGiven { mg } | EventKind::AmiodaroneGiven { mg } => {
                Some(raw(&Dose { mg: mg_to_raw(mg) }))
            }
            EventKind::NoteAdded { text } => Some(raw(&NoteText { text: text.clone() })),
            EventKind::CommandRejected { kind, reason } => Some(raw(&Rejection {
                kind: kind.as_str().to_owned(),
                reason: reason.as_str().to_owned(),
            })),
            _ => None,
        };
        Self {
            seq: event.seq,
            monotonic_ns: event.at.monotonic_nanos,
            wall_utc: event
                .at
                .wall_time
                .to_rfc3339_opts(SecondsFormat::AutoSi, true),
            kind: event.kind.name().to_owned(),
            payload,
        }
    }

    pub fn to_event<M: Scalar>(&self) -> Result<Event<M>, String> {
        let wall_time = DateTime::parse_from_rfc3339(&self.wall_utc)
            .map_err(|e| format!("bad wall_utc `{}`: {e}", self.wall_utc))?
            .with_timezone(&Utc);

        fn body<'a, T: Deserialize<'a>>(
            payload: &'a Option<Box<RawValue>>,
            kind: &str,
        ) -> Result<T, String> {
            let raw = payload
                .as_deref()
                .ok_or_else(|| format!("{kind} requires a payload"))?;
            serde_json::from_str(raw.get()).map_err(|e| format!("bad {kind} payload: {e}"))
        }
        let no_payload = |kind: EventKind<M>| -> Result<EventKind<M>, String> {
            match &self.payload {
                None => Ok(kind),
                Some(_) => Err(format!("{} takes no payload", self.kind)),
            }
        };

        let kind_name = self.kind.as_str();
        let kind = match kind_name {
            "SessionStarted" => no_payload(EventKind::SessionStarted)?,
            "CompressionStarted" => no_payload(EventKind::CompressionStarted)?,
            "CompressionWarning" => no_payload(EventKind::CompressionWarning)?,
            "CompressionBlink" => {
                let p: SecondMark = body(&self.payload, kind_name)?;
                EventKind::CompressionBlink {
                    second_mark: p.second_mark,
                }
            }
            "CompressionFinished" => no_payload(EventKind::CompressionFinished)?,
            "AnalysisOpened" => no_payload(EventKind::AnalysisOpened)?,
            "RhythmSelectionOpened" => no_payload(EventKind::RhythmSelectionOpened)?,
            "RhythmSelected" => {
                let p: RhythmPayload = body(&self.payload, kind_name)?;
                let rhythm: Rhythm = p.rhythm.parse().map_err(|e| format!("{e}"))?;
                EventKind::RhythmSelected { rhythm }
            }
            "DefibrillationDelivered" => {
                let p: Ordinal = body(&self.payload, kind_name)?;
                EventKind::DefibrillationDelivered { ordinal: p.ordinal }
            }
            "AdrenalineGiven" => {
                let p: Dose = body(&self.payload, kind_name)?;
                EventKind::AdrenalineGiven {
                    mg: mg_from_raw(&p.mg)?,
                }
            }
            "AmiodaroneGiven" => {
                let p: Dose = body(&self.payload, kind_name)?;
                EventKind::AmiodaroneGiven {
                    mg: mg_from_raw(&p.mg)?,
                }
            }
            "AdrenalineDue" => no_payload(EventKind::AdrenalineDue)?,
            "AmiodaroneDue" => no_payload(EventKind::AmiodaroneDue)?,
            "NoteAdded" => {
                let p: NoteText = body(&self.payload, kind_name)?;
                EventKind::NoteAdded { text: p.text }
            }
            "CommandRejected" => {
                let p: Rejection = body(&self.payload, kind_name)?;
                let kind: CommandKind = p.kind.parse().map_err(|e| format!("{e}"))?;
                let reason: RejectReason = p.reason.parse().map_err(|e| format!("{e}"))?;
                EventKind::CommandRejected { kind, reason }
            }
            "SessionEnded" => no_payload(EventKind::SessionEnded)?,
            other => return Err(format!("unknown event kind `{other}`")),
        };
        Ok(Event {
            seq: self.seq,
            at: Instant::new(self.monotonic_ns, wall_time),
            kind,
        })
    }
}

fn json_line<T: Serialize>(out: &mut Vec<u8>, record: &T) {
    serde_json::to_writer(&mut *out, record).expect("records serialize");
    out.push(b'\n');
}

/// Bytes of the session file for `log`.
pub fn encode_session<M: Scalar>(log: &EventLog<M>) -> Vec<u8> {
    let mut out = Vec::new();
    json_line(
        &mut out,
        &HeaderRecord {
            schema_version: u64::from(log.schema_version),
            session_id: log.session_id.clone(),
            config: ConfigRecord::from_config(&log.config),
        },
    );
    for event in &log.events {
        json_line(&mut out, &EventRecord::from_event(event));
    }
    let checksum = hex::encode(Sha256::digest(&out));
    json_line(&mut out, &ChecksumRecord { checksum });
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> RecordsError {
    RecordsError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses and verifies session file bytes.
pub fn decode_session<M: Scalar>(bytes: &[u8]) -> Result<EventLog<M>, RecordsError> {
    decode(bytes, true)
}

/// Like [`decode_session`] but ignores the checksum record, so that a file
/// whose checksum no longer matches can still be replayed to locate the
/// altered event.
pub fn decode_session_unchecked<M: Scalar>(bytes: &[u8]) -> Result<EventLog<M>, RecordsError> {
    decode(bytes, false)
}

fn decode<M: Scalar>(bytes: &[u8], verify_checksum: bool) -> Result<EventLog<M>, RecordsError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()]
            .iter()
            .filter(|b| **b == b'\n')
            .count()
            + 1;
        parse_err(line, "invalid UTF-8")
    })?;
    if text.is_empty() {
        return Err(parse_err(1, "empty file"));
    }

    let mut offset = 0;
    let mut header: Option<(u64, String, DosingConfig<M>)> = None;
    let mut records: Vec<(usize, EventRecord)> = Vec::new();
    let mut checksum: Option<(usize, String, usize)> = None;
    let mut line_no = 0;

    for raw_line in text.split_inclusive('\n') {
        line_no += 1;
        let start = offset;
        offset += raw_line.len();
        let Some(line) = raw_line.strip_suffix('\n') else {
            return Err(parse_err(line_no, "truncated line"));
        };
        if checksum.is_some() {
            return Err(parse_err(line_no, "content after checksum record"));
        }
        if line_no == 1 {
            let record: HeaderRecord =
                serde_json::from_str(line).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
            if record.schema_version != u64::from(SCHEMA_VERSION) {
                return Err(RecordsError::UnsupportedSchema(record.schema_version));
            }
            let config = record
                .config
                .to_config()
                .map_err(|e| parse_err(1, format!("bad config: {e}")))?;
            header = Some((record.schema_version, record.session_id, config));
            continue;
        }
        if let Ok(record) = serde_json::from_str::<ChecksumRecord>(line) {
            checksum = Some((line_no, record.checksum, start));
            continue;
        }
        let record: EventRecord = serde_json::from_str(line)
            .map_err(|e| parse_err(line_no, format!("bad event record: {e}")))?;
        records.push((line_no, record));
    }

    let (schema_version, session_id, config) =
        header.ok_or_else(|| parse_err(1, "missing header"))?;
    if verify_checksum {
        let Some((_, recorded, checksum_start)) = checksum else {
            return Err(parse_err(line_no + 1, "missing checksum record"));
        };
        let computed = hex::encode(Sha256::digest(&bytes[..checksum_start]));
        if computed != recorded {
            return Err(IntegrityError::ChecksumMismatch { recorded, computed }.into());
        }
    }

    let mut log = EventLog::new(session_id, config);
    log.schema_version = schema_version as u32;
    for (line, record) in records {
        let event = record.to_event().map_err(|e| parse_err(line, e))?;
        log.push(event)?;
    }
    Ok(log)
}

/// Writes `log` to `destination` atomically and durably.
pub fn save_session<M: Scalar>(log: &EventLog<M>, destination: &Path) -> Result<(), RecordsError> {
    let io_err = |source: std::io::Error| RecordsError::Io {
        path: destination.to_path_buf(),
        source,
    };
    let dir = match destination.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let bytes = encode_session(log);
    let mut tmp = tempfile::Builder::new()
        .prefix(".session-")
        .suffix(".tmp")
        .tempfile_in(dir)
        .map_err(io_err)?;
    tmp.write_all(&bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(destination).map_err(|e| io_err(e.error))?;
    // Make the rename itself durable where the platform allows opening a directory.
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

pub fn load_session<M: Scalar>(source: &Path) -> Result<EventLog<M>, RecordsError> {
    let bytes = std::fs::read(source).map_err(|source_err| RecordsError::Io {
        path: source.to_path_buf(),
        source: source_err,
    })?;
    decode_session(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{new_session, Action, Command};
    use chrono::TimeZone;
    use num_rational::Ratio;

    type Exact = Ratio<i64>;

    fn started_log() -> EventLog<Exact> {
        let start = Instant::new(0, Utc.with_ymd_and_hms(2021, 5, 7, 15, 0, 0).unwrap());
        let (_, events) = new_session(DosingConfig::default(), start);
        EventLog::from_events("abc", DosingConfig::default(), events).unwrap()
    }

    fn with_note(text: &str) -> EventLog<Exact> {
        let mut log = started_log();
        let at = Instant::new(
            1_500_000_000,
            Utc.with_ymd_and_hms(2021, 5, 7, 15, 0, 1).unwrap()
                + chrono::TimeDelta::milliseconds(500),
        );
        let mut state = new_session(DosingConfig::default(), log.events[0].at).0;
        for e in state.apply_in_place(&Command::new(Action::AddNote(text.into()), at)) {
            log.push(e).unwrap();
        }
        log
    }

    #[test]
    fn started_session_has_header_two_events_and_checksum() {
        let bytes = encode_session(&started_log());
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            r#"{"schema_version":1,"session_id":"abc","config":{"adrenaline_dose_mg":1,"adrenaline_interval":240,"amiodarone_first_dose_mg":300,"amiodarone_repeat_dose_mg":150,"compression_duration":120,"warning_threshold":10,"vfvt_adrenaline_min_defibs":3}}"#
        );
        assert_eq!(
            lines[1],
            r#"{"seq":1,"monotonic_ns":0,"wall_utc":"2021-05-07T15:00:00Z","kind":"SessionStarted","payload":null}"#
        );
        assert!(lines[3].starts_with(r#"{"checksum":""#));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn round_trip_preserves_log() {
        let log = with_note("patient \"intubated\" \u{e5}\u{e4}\u{f6}");
        let decoded: EventLog<Exact> = decode_session(&encode_session(&log)).unwrap();
        assert_eq!(decoded, log);
    }

    #[test]
    fn fractional_doses_survive_exactly() {
        let config = DosingConfig::<Exact> {
            adrenaline_dose_mg: Exact::new(1, 8),
            ..DosingConfig::default()
        };
        let log = EventLog::new("x", config);
        let decoded: EventLog<Exact> = decode_session(&encode_session(&log)).unwrap();
        assert_eq!(decoded.config.adrenaline_dose_mg, Exact::new(1, 8));
    }

    #[test]
    fn truncated_last_line_names_the_line() {
        let bytes = encode_session(&started_log());
        let cut = &bytes[..bytes.len() - 10];
        match decode_session::<Exact>(cut) {
            Err(RecordsError::Parse { line, message }) => {
                assert_eq!(line, 4);
                assert!(message.contains("truncated"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_checksum_is_a_parse_error() {
        let bytes = encode_session(&started_log());
        let text = String::from_utf8(bytes).unwrap();
        let without: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            decode_session::<Exact>(without.as_bytes()),
            Err(RecordsError::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn tampered_bytes_fail_integrity() {
        let text = String::from_utf8(encode_session(&started_log())).unwrap();
        let tampered = text.replacen("\"seq\":2", "\"seq\":3", 1);
        assert!(matches!(
            decode_session::<Exact>(tampered.as_bytes()),
            Err(RecordsError::Integrity(
                IntegrityError::ChecksumMismatch { .. }
            ))
        ));
    }

    #[test]
    fn unchecked_decode_still_reads_altered_content() {
        let text = String::from_utf8(encode_session(&started_log())).unwrap();
        let altered = text.replacen(
            "\"kind\":\"AnalysisOpened\"",
            "\"kind\":\"SessionEnded\"",
            1,
        );
        assert_ne!(altered, text);
        let log: EventLog<Exact> = decode_session_unchecked(altered.as_bytes()).unwrap();
        assert_eq!(log.events[1].kind, EventKind::SessionEnded);
        assert!(decode_session_unchecked::<Exact>(b"").is_err());
    }

    #[test]
    fn resealed_seq_gap_is_an_integrity_error() {
        let text = String::from_utf8(encode_session(&started_log())).unwrap();
        let body: String = text
            .lines()
            .take(3)
            .map(|l| format!("{}\n", l.replacen("\"seq\":2", "\"seq\":3", 1)))
            .collect();
        let resealed = format!(
            "{body}{{\"checksum\":\"{}\"}}\n",
            hex::encode(Sha256::digest(body.as_bytes()))
        );
        assert!(matches!(
            decode_session::<Exact>(resealed.as_bytes()),
            Err(RecordsError::Integrity(IntegrityError::SeqGap {
                expected: 2,
                found: 3
            }))
        ));
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let text = String::from_utf8(encode_session(&started_log())).unwrap();
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
        assert!(matches!(
            decode_session::<Exact>(bumped.as_bytes()),
            Err(RecordsError::UnsupportedSchema(2))
        ));
    }

    #[test]
    fn empty_input_is_a_parse_error() {
        assert!(matches!(
            decode_session::<Exact>(b""),
            Err(RecordsError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn save_and_load_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.session.jsonl");
        let log = with_note("hello");
        save_session(&log, &path).unwrap();
        assert_eq!(load_session::<Exact>(&path).unwrap(), log);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_save_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        // Destination is an existing directory, so the final rename fails.
        let blocked = dir.path().join("occupied");
        std::fs::create_dir(&blocked).unwrap();
        std::fs::write(blocked.join("keep"), b"x").unwrap();
        let err = save_session(&started_log(), &blocked).unwrap_err();
        assert!(matches!(err, RecordsError::Io { .. }));
        assert!(err.to_string().contains("occupied"));
        let names: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("occupied")]);

        let missing = dir.path().join("no/such/dir/s.jsonl");
        assert!(matches!(
            save_session(&started_log(), &missing),
            Err(RecordsError::Io { .. })
        ));
    }
}
