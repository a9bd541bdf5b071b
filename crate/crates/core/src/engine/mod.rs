//! The resuscitation protocol state machine.
//!
//! [`SessionState::apply`] is the only way state changes. It validates a
//! command against [`SessionState::enabled_commands`], performs the
//! transition, and returns the events it produced. A rejected command leaves
//! the state untouched apart from the `CommandRejected` event it logs.
//!
//! Phase graph:
//!
//! ```text
//! Idle --StartSession--> Analysis --AnalyzeRhythm--> RhythmSelection
//! RhythmSelection --SelectAsystolePea--> AsystolePea --ReturnToAnalysis--> Analysis
//! RhythmSelection --SelectVfVt--> VfVt --ReturnToAnalysis--> Analysis
//! RhythmSelection --EndSession--> Ended
//! ```
//!
//! Drug rules: adrenaline on first opportunity and then no sooner than the
//! configured interval (four minutes) after the previous dose, across rhythm
//! changes; on the VF/VT path it also waits for the third defibrillation.
//! Amiodarone is offered at defibrillations 3, 5, 7, ... with a larger first
//! dose.

mod config;
mod types;

use std::collections::BTreeSet;
use std::time::Duration;

use thiserror::Error;

pub use config::{ConfigError, ConfigOverrides, DosingConfig};
pub use types::{
    Action, Command, CommandKind, Event, EventKind, Phase, RejectReason, Rhythm, UnknownName,
};

use crate::alarms::{AlarmSignal, Countdown};
use crate::clock::Instant;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("session has not started")]
    NotStarted,
    #[error("instant precedes session start")]
    BeforeSessionStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdrenalineDose<M> {
    pub at: Instant,
    pub mg: M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmiodaroneDose<M> {
    pub at: Instant,
    pub mg: M,
    /// Defibrillation count when the dose was given.
    pub defib_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub at: Instant,
    pub text: String,
}

/// Full derived state of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState<M> {
    pub phase: Phase,
    pub session_start: Option<Instant>,
    pub defib_count: u32,
    pub last_adrenaline_at: Option<Instant>,
    pub adrenaline_doses: Vec<AdrenalineDose<M>>,
    pub amiodarone_doses: Vec<AmiodaroneDose<M>>,
    pub last_amiodarone_defib_count: Option<u32>,
    pub active_countdown: Option<Countdown>,
    pub notes: Vec<Note>,
    pub config: DosingConfig<M>,
    /// Sequence number the next event will carry.
    pub event_seq: u64,
    /// Timestamp of the last emitted event.
    pub head_at: Option<Instant>,
    adrenaline_reminder: bool,
    amiodarone_reminder: bool,
}

/// Creates a session and emits `SessionStarted`, `AnalysisOpened`.
pub fn new_session<M: Scalar>(
    config: DosingConfig<M>,
    start: Instant,
) -> (SessionState<M>, Vec<Event<M>>) {
    SessionState::idle(config).apply(&Command::new(Action::StartSession, start))
}

impl<M: Scalar> SessionState<M> {
    /// The pre-session state, which only accepts `StartSession`.
    pub fn idle(config: DosingConfig<M>) -> Self {
        Self {
            phase: Phase::Idle,
            session_start: None,
            defib_count: 0,
            last_adrenaline_at: None,
            adrenaline_doses: Vec::new(),
            amiodarone_doses: Vec::new(),
            last_amiodarone_defib_count: None,
            active_countdown: None,
            notes: Vec::new(),
            config,
            event_seq: 1,
            head_at: None,
            adrenaline_reminder: false,
            amiodarone_reminder: false,
        }
    }

    /// Pure transition: returns the successor state and the events produced.
    pub fn apply(&self, cmd: &Command) -> (SessionState<M>, Vec<Event<M>>) {
        let mut next = self.clone();
        let events = next.apply_in_place(cmd);
        (next, events)
    }

    /// In-place form of [`apply`](Self::apply) for single-writer hosts.
    pub fn apply_in_place(&mut self, cmd: &Command) -> Vec<Event<M>> {
        let mut out = Vec::new();
        let kind = cmd.kind();
        if let Err(reason) = self.admit(kind, &cmd.at) {
            // Stale commands are logged at the head so the log stays ordered.
            let at = match self.head_at {
                Some(head) if self.is_before_head(&cmd.at) => head,
                _ => cmd.at,
            };
            self.emit(at, EventKind::CommandRejected { kind, reason }, &mut out);
            return out;
        }

        let at = cmd.at;
        match &cmd.action {
            Action::StartSession => {
                self.session_start = Some(at);
                self.phase = Phase::Analysis;
                self.emit(at, EventKind::SessionStarted, &mut out);
                self.emit(at, EventKind::AnalysisOpened, &mut out);
            }
            Action::StartCompression => {
                self.active_countdown = Some(Countdown::start(
                    at,
                    self.config.compression_duration,
                    self.config.warning_threshold,
                ));
                self.emit(at, EventKind::CompressionStarted, &mut out);
            }
            Action::AnalyzeRhythm => {
                self.phase = Phase::RhythmSelection;
                self.emit(at, EventKind::RhythmSelectionOpened, &mut out);
                self.refresh_reminders(at, &mut out);
            }
            Action::SelectAsystolePea | Action::SelectVfVt => {
                let rhythm = if matches!(cmd.action, Action::SelectVfVt) {
                    self.phase = Phase::VfVt;
                    Rhythm::VfVt
                } else {
                    self.phase = Phase::AsystolePea;
                    Rhythm::AsystolePea
                };
                self.emit(at, EventKind::RhythmSelected { rhythm }, &mut out);
                self.refresh_reminders(at, &mut out);
            }
            Action::ReturnToAnalysis => {
                self.phase = Phase::Analysis;
                self.emit(at, EventKind::AnalysisOpened, &mut out);
                self.refresh_reminders(at, &mut out);
            }
            Action::Defibrillate => {
                self.defib_count += 1;
                let ordinal = self.defib_count;
                self.emit(at, EventKind::DefibrillationDelivered { ordinal }, &mut out);
                self.refresh_reminders(at, &mut out);
            }
            Action::AdministerAdrenaline => {
                let mg = self.config.adrenaline_dose_mg.clone();
                self.last_adrenaline_at = Some(at);
                self.adrenaline_doses
                    .push(AdrenalineDose { at, mg: mg.clone() });
                self.emit(at, EventKind::AdrenalineGiven { mg }, &mut out);
                self.refresh_reminders(at, &mut out);
            }
            Action::AdministerAmiodarone => {
                let mg = if self.amiodarone_doses.is_empty() {
                    self.config.amiodarone_first_dose_mg.clone()
                } else {
                    self.config.amiodarone_repeat_dose_mg.clone()
                };
                self.last_amiodarone_defib_count = Some(self.defib_count);
                self.amiodarone_doses.push(AmiodaroneDose {
                    at,
                    mg: mg.clone(),
                    defib_count: self.defib_count,
                });
                self.emit(at, EventKind::AmiodaroneGiven { mg }, &mut out);
                self.refresh_reminders(at, &mut out);
            }
            Action::AddNote(text) => {
                self.notes.push(Note {
                    at,
                    text: text.clone(),
                });
                self.emit(at, EventKind::NoteAdded { text: text.clone() }, &mut out);
            }
            Action::EndSession => {
                self.phase = Phase::Ended;
                self.active_countdown = None;
                self.adrenaline_reminder = false;
                self.amiodarone_reminder = false;
                self.emit(at, EventKind::SessionEnded, &mut out);
            }
            Action::Tick => {
                self.tick_countdown(at, &mut out);
                self.refresh_reminders(at, &mut out);
            }
        }
        out
    }

    fn admit(&self, kind: CommandKind, at: &Instant) -> Result<(), RejectReason> {
        if self.phase == Phase::Ended {
            return Err(RejectReason::TerminalPhase);
        }
        if self.is_before_head(at) {
            return Err(RejectReason::NonMonotonicTime);
        }
        if !self.enabled_commands(at).contains(&kind) {
            return Err(RejectReason::NotEnabled);
        }
        Ok(())
    }

    fn is_before_head(&self, at: &Instant) -> bool {
        self.head_at
            .is_some_and(|head| at.monotonic_nanos < head.monotonic_nanos)
    }

    fn emit(&mut self, at: Instant, kind: EventKind<M>, out: &mut Vec<Event<M>>) {
        out.push(Event {
            seq: self.event_seq,
            at,
            kind,
        });
        self.event_seq += 1;
        self.head_at = Some(at);
    }

    fn tick_countdown(&mut self, at: Instant, out: &mut Vec<Event<M>>) {
        let Some(countdown) = &self.active_countdown else {
            return;
        };
        // The countdown is only stored back when it emitted, so its last
        // observed instant never passes the head that admit() checks against.
        let (next, signals) = countdown
            .tick(at)
            .expect("tick time is monotone under admit()");
        if signals.is_empty() {
            return;
        }
        for signal in signals {
            let kind = match signal {
                AlarmSignal::WarningSound => EventKind::CompressionWarning,
                AlarmSignal::Blink(second_mark) => EventKind::CompressionBlink { second_mark },
                AlarmSignal::Vibrate => continue,
                AlarmSignal::Finished => EventKind::CompressionFinished,
            };
            self.emit(at, kind, out);
        }
        self.active_countdown = (!next.finished).then_some(next);
    }

    /// Edge-triggered due reminders; adrenaline before amiodarone.
    fn refresh_reminders(&mut self, at: Instant, out: &mut Vec<Event<M>>) {
        let adrenaline = self.adrenaline_offered(&at);
        if adrenaline && !self.adrenaline_reminder {
            self.emit(at, EventKind::AdrenalineDue, out);
        }
        self.adrenaline_reminder = adrenaline;

        let amiodarone = self.phase == Phase::VfVt && self.amiodarone_due();
        if amiodarone && !self.amiodarone_reminder {
            self.emit(at, EventKind::AmiodaroneDue, out);
        }
        self.amiodarone_reminder = amiodarone;
    }

    fn adrenaline_offered(&self, now: &Instant) -> bool {
        match self.phase {
            Phase::AsystolePea => self.adrenaline_due(now),
            Phase::VfVt => {
                self.adrenaline_due(now)
                    && self.defib_count >= self.config.vfvt_adrenaline_min_defibs
            }
            _ => false,
        }
    }

    /// Commands the operator may issue at `now`. Empty once ended, and empty
    /// for instants before the last logged event.
    pub fn enabled_commands(&self, now: &Instant) -> BTreeSet<CommandKind> {
        use CommandKind::*;

        let mut set = BTreeSet::new();
        if self.phase == Phase::Ended || self.is_before_head(now) {
            return set;
        }
        let can_compress = self.active_countdown.is_none();
        match self.phase {
            Phase::Idle => {
                set.insert(StartSession);
            }
            Phase::Analysis => {
                set.extend([AnalyzeRhythm, AddNote, Tick]);
                if can_compress {
                    set.insert(StartCompression);
                }
            }
            Phase::RhythmSelection => {
                set.extend([SelectAsystolePea, SelectVfVt, EndSession, AddNote, Tick]);
            }
            Phase::AsystolePea => {
                set.extend([ReturnToAnalysis, AddNote, Tick]);
                if can_compress {
                    set.insert(StartCompression);
                }
                if self.adrenaline_offered(now) {
                    set.insert(AdministerAdrenaline);
                }
            }
            Phase::VfVt => {
                set.extend([Defibrillate, ReturnToAnalysis, AddNote, Tick]);
                if can_compress {
                    set.insert(StartCompression);
                }
                if self.adrenaline_offered(now) {
                    set.insert(AdministerAdrenaline);
                }
                if self.amiodarone_due() {
                    set.insert(AdministerAmiodarone);
                }
            }
            Phase::Ended => unreachable!(),
        }
        set
    }

    /// Never dosed, or at least the adrenaline interval since the last dose.
    /// Phase gating is applied by [`enabled_commands`](Self::enabled_commands).
    pub fn adrenaline_due(&self, now: &Instant) -> bool {
        match &self.last_adrenaline_at {
            None => true,
            Some(last) => now
                .checked_since(last)
                .is_some_and(|gap| gap >= self.config.adrenaline_interval),
        }
    }

    /// Due at defibrillations 3, 5, 7, ... unless already given at this count.
    pub fn amiodarone_due(&self) -> bool {
        self.defib_count >= 3
            && self.defib_count % 2 == 1
            && self.last_amiodarone_defib_count != Some(self.defib_count)
    }

    /// Session time on the monotonic axis.
    pub fn elapsed(&self, now: &Instant) -> Result<Duration, EngineError> {
        let start = self.session_start.as_ref().ok_or(EngineError::NotStarted)?;
        now.checked_since(start)
            .ok_or(EngineError::BeforeSessionStart)
    }

    /// Remaining compression time, if a countdown is running.
    pub fn countdown_remaining(&self, now: &Instant) -> Option<Duration> {
        self.active_countdown.as_ref().map(|cd| cd.remaining(now))
    }

    pub fn adrenaline_total_mg(&self) -> M {
        self.adrenaline_doses
            .iter()
            .fold(M::zero(), |acc, d| acc + d.mg.clone())
    }

    pub fn amiodarone_total_mg(&self) -> M {
        self.amiodarone_doses
            .iter()
            .fold(M::zero(), |acc, d| acc + d.mg.clone())
    }
}

#[cfg(test)]
mod tests;
