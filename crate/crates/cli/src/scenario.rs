//! Scripted scenarios: a TOML list of button presses at offsets from session
//! start, run against a virtual clock.
//!
//! ```toml
//! name = "vf_first_shock"
//! wall_start = "2021-05-07T15:00:00Z"   # optional
//!
//! [config]                              # optional dosing overrides
//! adrenaline_interval = 240
//!
//! [[step]]
//! at = "0:05"                           # seconds, or "m:ss" / "h:mm:ss"
//! command = "AnalyzeRhythm"
//!
//! [[step]]
//! at = 12.5
//! command = "AddNote"
//! text = "iv access"
//!
//! [[step]]
//! at = 13
//! command = "Defibrillate"
//! expect = "rejected"
//! ```

use std::fmt;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use cpr_core::clock::{Instant, TimeSource, VirtualClock};
use cpr_core::engine::{Action, Command, CommandKind, EventKind, RejectReason};
use cpr_core::{Dosing, DosingOverrides, Session, SessionLog};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("step {index}: {message}")]
    Step { index: usize, message: String },
    #[error("invalid config: {0}")]
    Config(#[from] cpr_core::engine::ConfigError),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OffsetSpec {
    Seconds(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Accepted,
    Rejected,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepFile {
    at: OffsetSpec,
    command: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    expect: Option<Expectation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    wall_start: Option<DateTime<Utc>>,
    #[serde(default)]
    config: DosingOverrides,
    #[serde(default, rename = "step")]
    steps: Vec<StepFile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub offset: Duration,
    pub action: Action,
    pub expect: Expectation,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub wall_start: DateTime<Utc>,
    pub config: Dosing,
    pub steps: Vec<Step>,
}

pub fn default_wall_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 5, 7, 15, 0, 0).unwrap()
}

/// `"75"`, `"1:15"`, `"0:01:15"` and `"1:15.5"` all parse; so do plain numbers.
fn parse_offset(spec: &OffsetSpec) -> Result<Duration, String> {
    let secs = match spec {
        OffsetSpec::Seconds(s) => *s,
        OffsetSpec::Text(text) => {
            let parts: Vec<&str> = text.trim().split(':').collect();
            if parts.len() > 3 || parts.iter().any(|p| p.is_empty()) {
                return Err(format!("bad offset `{text}`"));
            }
            let mut total = 0.0;
            for (i, part) in parts.iter().enumerate() {
                let value: f64 = part.parse().map_err(|_| format!("bad offset `{text}`"))?;
                let last = i == parts.len() - 1;
                if (!last && value.fract() != 0.0) || (i > 0 && value >= 60.0) {
                    return Err(format!("bad offset `{text}`"));
                }
                total = total * 60.0 + value;
            }
            total
        }
    };
    Duration::try_from_secs_f64(secs)
        .map_err(|_| format!("offset {secs} must be a non-negative number"))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        let config = file.config.apply_to(&Dosing::default())?;
        let mut steps = Vec::with_capacity(file.steps.len());
        let mut previous = Duration::ZERO;
        for (i, raw) in file.steps.into_iter().enumerate() {
            let index = i + 1;
            let step_err = |message: String| ScenarioError::Step { index, message };
            let offset = parse_offset(&raw.at).map_err(step_err)?;
            if offset < previous {
                return Err(step_err(format!(
                    "offset {offset:?} is earlier than the previous step ({previous:?})"
                )));
            }
            previous = offset;
            let kind: CommandKind = raw.command.parse().map_err(|e| step_err(format!("{e}")))?;
            let action = match (kind, raw.text) {
                (CommandKind::AddNote, Some(text)) => Action::AddNote(text),
                (CommandKind::AddNote, None) => {
                    return Err(step_err("AddNote needs `text`".into()))
                }
                (CommandKind::StartSession, _) => {
                    return Err(step_err("the session starts itself at offset 0".into()))
                }
                (_, Some(_)) => return Err(step_err(format!("{kind} takes no `text`"))),
                (kind, None) => Action::from_kind(kind, String::new()),
            };
            steps.push(Step {
                offset,
                action,
                expect: raw.expect.unwrap_or(Expectation::Accepted),
            });
        }
        Ok(Scenario {
            name: file.name,
            wall_start: file.wall_start.unwrap_or_else(default_wall_start),
            config,
            steps,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

/// A step whose outcome differed from its expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct Surprise {
    pub index: usize,
    pub kind: CommandKind,
    pub offset: Duration,
    /// `Some(reason)` if rejected but expected to pass; `None` if accepted
    /// but expected to be rejected.
    pub reason: Option<RejectReason>,
}

impl fmt::Display for Surprise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = format_offset(self.offset);
        match self.reason {
            Some(reason) => write!(
                f,
                "step {} ({} at {at}): rejected, {reason}",
                self.index, self.kind
            ),
            None => write!(
                f,
                "step {} ({} at {at}): accepted but expected a rejection",
                self.index, self.kind
            ),
        }
    }
}

#[derive(Debug)]
pub struct Report {
    pub log: SessionLog,
    /// Every rejection, expected or not, as `(step index, kind, reason)`.
    pub rejections: Vec<(usize, CommandKind, RejectReason)>,
    pub surprises: Vec<Surprise>,
}

pub fn format_offset(d: Duration) -> String {
    let secs = d.as_secs();
    let frac = d.subsec_millis();
    let base = format!("{}:{:02}", secs / 60, secs % 60);
    if frac == 0 {
        base
    } else {
        format!("{base}.{frac:03}")
    }
}

struct Runner {
    clock: VirtualClock,
    state: Session,
    log: SessionLog,
}

impl Runner {
    fn apply(&mut self, action: Action) -> Vec<cpr_core::SessionEvent> {
        let now = self.clock.now();
        let events = self.state.apply_in_place(&Command::new(action, now));
        for event in &events {
            self.log
                .push(event.clone())
                .expect("engine emits gapless, ordered events");
        }
        events
    }

    fn now_offset(&self) -> Duration {
        Duration::from_nanos(self.clock.now().monotonic_nanos)
    }

    /// Moves the clock to `target`, ticking on every whole second on the way.
    fn advance_to(&mut self, target: Duration) {
        let mut next_second = Duration::from_secs(self.now_offset().as_secs() + 1);
        while next_second <= target {
            self.move_clock(next_second);
            if self
                .state
                .enabled_commands(&self.clock.now())
                .contains(&CommandKind::Tick)
            {
                self.apply(Action::Tick);
            }
            next_second += Duration::from_secs(1);
        }
        self.move_clock(target);
    }

    fn move_clock(&mut self, to: Duration) {
        let delta = to.saturating_sub(self.now_offset());
        if !delta.is_zero() {
            self.clock.advance(delta).expect("virtual clock advances");
        }
    }
}

/// Runs `scenario` with the session id `session_id`.
pub fn run(scenario: &Scenario, session_id: &str) -> Report {
    let clock = VirtualClock::new(scenario.wall_start);
    let start: Instant = clock.now();
    let mut state = Session::idle(scenario.config.clone());
    let mut log = SessionLog::new(session_id, scenario.config.clone());
    for event in state.apply_in_place(&Command::new(Action::StartSession, start)) {
        log.push(event)
            .expect("engine emits gapless, ordered events");
    }
    let mut runner = Runner { clock, state, log };
    let mut rejections = Vec::new();
    let mut surprises = Vec::new();

    for (i, step) in scenario.steps.iter().enumerate() {
        let index = i + 1;
        runner.advance_to(step.offset);
        let kind = step.action.kind();
        let events = runner.apply(step.action.clone());
        let rejected = events.iter().find_map(|e| match e.kind {
            EventKind::CommandRejected { reason, .. } => Some(reason),
            _ => None,
        });
        if let Some(reason) = rejected {
            rejections.push((index, kind, reason));
        }
        let surprise = match (rejected, step.expect) {
            (Some(reason), Expectation::Accepted) => Some(Some(reason)),
            (None, Expectation::Rejected) => Some(None),
            _ => None,
        };
        if let Some(reason) = surprise {
            surprises.push(Surprise {
                index,
                kind,
                offset: step.offset,
                reason,
            });
        }
    }
    Report {
        log: runner.log,
        rejections,
        surprises,
    }
}

/// Session ids for scenario runs derive from the scenario name so that runs
/// are reproducible byte for byte.
pub fn session_id_for(name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect();
    format!("scenario-{slug}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpr_core::records::{replay_verify, summarize};

    fn offset(text: &str) -> Result<Duration, String> {
        parse_offset(&OffsetSpec::Text(text.into()))
    }

    #[test]
    fn offsets_parse_in_every_form() {
        assert_eq!(offset("75").unwrap(), Duration::from_secs(75));
        assert_eq!(offset("1:15").unwrap(), Duration::from_secs(75));
        assert_eq!(offset("0:01:15").unwrap(), Duration::from_secs(75));
        assert_eq!(offset("1:15.5").unwrap(), Duration::from_millis(75_500));
        assert_eq!(
            parse_offset(&OffsetSpec::Seconds(2.25)).unwrap(),
            Duration::from_millis(2250)
        );
        for bad in ["", "1:", "1:75", "a:10", "1.5:10", "1:2:3:4"] {
            assert!(offset(bad).is_err(), "{bad}");
        }
        assert!(parse_offset(&OffsetSpec::Seconds(-1.0)).is_err());
    }

    #[test]
    fn offset_formatting() {
        assert_eq!(format_offset(Duration::from_secs(75)), "1:15");
        assert_eq!(format_offset(Duration::from_millis(500)), "0:00.500");
    }

    #[test]
    fn steps_must_not_go_back_in_time() {
        let text = r#"
            name = "x"
            [[step]]
            at = 10
            command = "AnalyzeRhythm"
            [[step]]
            at = 5
            command = "EndSession"
        "#;
        match Scenario::parse(text) {
            Err(ScenarioError::Step { index: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_commands_and_fields_are_reported() {
        let text = "name = \"x\"\n[[step]]\nat = 1\ncommand = \"Shock\"\n";
        assert!(matches!(
            Scenario::parse(text),
            Err(ScenarioError::Step { index: 1, .. })
        ));
        let text = "name = \"x\"\n[[step]]\nat = 1\ncommand = \"Tick\"\nwhen = 3\n";
        let err = Scenario::parse(text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn ticks_fill_the_gaps_between_steps() {
        let text = r#"
            name = "compress"
            [[step]]
            at = 1
            command = "StartCompression"
            [[step]]
            at = "2:05"
            command = "AnalyzeRhythm"
        "#;
        let scenario = Scenario::parse(text).unwrap();
        let report = run(&scenario, "t");
        let blinks = report
            .log
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::CompressionBlink { .. }))
            .count();
        assert_eq!(blinks, 11);
        assert!(report.surprises.is_empty());
        replay_verify(&report.log).unwrap();
    }

    #[test]
    fn defibrillation_in_analysis_is_a_surprise() {
        let text = "name = \"x\"\n[[step]]\nat = 0\ncommand = \"Defibrillate\"\n";
        let report = run(&Scenario::parse(text).unwrap(), "t");
        assert_eq!(report.surprises.len(), 1);
        assert_eq!(report.surprises[0].reason, Some(RejectReason::NotEnabled));
        assert_eq!(
            report.surprises[0].to_string(),
            "step 1 (Defibrillate at 0:00): rejected, not-enabled"
        );
    }

    #[test]
    fn expected_rejections_pass() {
        let text =
            "name = \"x\"\n[[step]]\nat = 0\ncommand = \"Defibrillate\"\nexpect = \"rejected\"\n";
        let report = run(&Scenario::parse(text).unwrap(), "t");
        assert!(report.surprises.is_empty());
        assert_eq!(report.rejections.len(), 1);
        assert_eq!(summarize(&report.log).defibrillation_count, 0);
    }

    #[test]
    fn session_ids_are_slugs() {
        assert_eq!(session_id_for("s1 vf/vt"), "scenario-s1-vf-vt");
    }
}
