//! The compression countdown and its alert stages.
//!
//! A countdown runs for the configured compression duration (two minutes by
//! default). Entering the warning window fires one warning sound, every whole
//! second mark from the top of the window down to zero fires one blink, and
//! reaching zero fires vibrate then finished. A coarse tick catches up on all
//! marks it skipped, so the emitted signals do not depend on tick cadence.

use std::time::Duration;

use thiserror::Error;

use crate::clock::{duration_nanos, Instant};

pub const DEFAULT_COMPRESSION: Duration = Duration::from_secs(120);
pub const DEFAULT_WARNING: Duration = Duration::from_secs(10);

const NANOS_PER_SEC: u64 = 1_000_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlarmError {
    #[error("a countdown is already running")]
    AlreadyActive,
    #[error("tick at {now_ns} ns precedes the last observed instant {observed_ns} ns")]
    NonMonotonic { now_ns: u64, observed_ns: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlarmSignal {
    WarningSound,
    Blink(u32),
    Vibrate,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Countdown {
    pub started_at: Instant,
    pub duration: Duration,
    pub warning_threshold: Duration,
    /// Lowest second mark already blinked.
    pub last_processed_remaining_second: Option<u32>,
    pub warning_emitted: bool,
    pub finished: bool,
    observed_at: Instant,
}

/// Starts a fresh countdown unless one is still running.
pub fn start_countdown(
    active: Option<&Countdown>,
    now: Instant,
    duration: Duration,
    warning_threshold: Duration,
) -> Result<Countdown, AlarmError> {
    match active {
        Some(cd) if !cd.finished => Err(AlarmError::AlreadyActive),
        _ => Ok(Countdown::start(now, duration, warning_threshold)),
    }
}

impl Countdown {
    pub fn start(now: Instant, duration: Duration, warning_threshold: Duration) -> Self {
        Self {
            started_at: now,
            duration,
            warning_threshold,
            last_processed_remaining_second: None,
            warning_emitted: false,
            finished: false,
            observed_at: now,
        }
    }

    /// `max(0, duration - (now - started_at))`.
    pub fn remaining(&self, now: &Instant) -> Duration {
        self.duration
            .saturating_sub(now.saturating_since(&self.started_at))
    }

    fn top_mark(&self) -> u32 {
        let secs = self.warning_threshold.min(self.duration).as_secs();
        u32::try_from(secs).unwrap_or(u32::MAX)
    }

    /// Advances the countdown to `now` and returns the signals that became due.
    pub fn tick(&self, now: Instant) -> Result<(Countdown, Vec<AlarmSignal>), AlarmError> {
        if now.monotonic_nanos < self.observed_at.monotonic_nanos {
            return Err(AlarmError::NonMonotonic {
                now_ns: now.monotonic_nanos,
                observed_ns: self.observed_at.monotonic_nanos,
            });
        }
        let mut next = self.clone();
        next.observed_at = now;
        let mut signals = Vec::new();
        if self.finished {
            return Ok((next, signals));
        }

        let remaining = self.remaining(&now);
        if !next.warning_emitted && remaining <= self.warning_threshold {
            next.warning_emitted = true;
            signals.push(AlarmSignal::WarningSound);
        }

        // Mark s is reached once remaining <= s seconds, so the lowest reached
        // mark is ceil(remaining).
        let lowest_reached = duration_nanos(remaining).div_ceil(NANOS_PER_SEC);
        let top = self.top_mark();
        if lowest_reached <= u64::from(top) {
            let lowest_reached = lowest_reached as u32;
            let first = match self.last_processed_remaining_second {
                None => Some(top),
                Some(0) => None,
                Some(last) => Some(last - 1),
            };
            if let Some(first) = first {
                if first >= lowest_reached {
                    signals.extend((lowest_reached..=first).rev().map(AlarmSignal::Blink));
                    next.last_processed_remaining_second = Some(lowest_reached);
                }
            }
        }

        if remaining.is_zero() {
            next.finished = true;
            signals.push(AlarmSignal::Vibrate);
            signals.push(AlarmSignal::Finished);
        }
        Ok((next, signals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};

    fn at(nanos: u64) -> Instant {
        Instant::from_epoch(DateTime::<Utc>::UNIX_EPOCH, Duration::from_nanos(nanos))
    }

    fn secs(s: f64) -> Instant {
        at((s * 1e9).round() as u64)
    }

    fn fresh() -> Countdown {
        Countdown::start(at(0), DEFAULT_COMPRESSION, DEFAULT_WARNING)
    }

    fn run(schedule: &[Instant]) -> Vec<AlarmSignal> {
        let mut cd = fresh();
        let mut out = Vec::new();
        for t in schedule {
            let (next, signals) = cd.tick(*t).unwrap();
            out.extend(signals);
            cd = next;
        }
        out
    }

    fn reference() -> Vec<AlarmSignal> {
        let mut expected = vec![AlarmSignal::WarningSound];
        expected.extend((0..=10).rev().map(AlarmSignal::Blink));
        expected.push(AlarmSignal::Vibrate);
        expected.push(AlarmSignal::Finished);
        expected
    }

    #[test]
    fn remaining_examples() {
        let cd = fresh();
        assert_eq!(cd.remaining(&at(0)), Duration::from_secs(120));
        assert_eq!(cd.remaining(&secs(110.0)), Duration::from_secs(10));
        assert_eq!(cd.remaining(&secs(119.5)), Duration::from_millis(500));
        assert_eq!(cd.remaining(&secs(500.0)), Duration::ZERO);
    }

    #[test]
    fn tick_at_start_is_silent() {
        let (_, signals) = fresh().tick(at(0)).unwrap();
        assert!(signals.is_empty());
    }

    #[test]
    fn one_hertz_run_emits_each_stage_once() {
        let schedule: Vec<_> = (0..=120).map(|s| secs(s as f64)).collect();
        assert_eq!(run(&schedule), reference());
    }

    #[test]
    fn warning_and_top_blink_fire_together_at_ten_seconds() {
        let (_, signals) = fresh().tick(secs(110.0)).unwrap();
        assert_eq!(
            signals,
            vec![AlarmSignal::WarningSound, AlarmSignal::Blink(10)]
        );
        let (_, signals) = fresh().tick(secs(109.999)).unwrap();
        assert!(signals.is_empty());
    }

    #[test]
    fn single_late_tick_catches_up() {
        assert_eq!(run(&[secs(120.0)]), reference());
        assert_eq!(run(&[secs(300.0)]), reference());
    }

    #[test]
    fn repeat_tick_is_idempotent() {
        let (cd, first) = fresh().tick(secs(113.2)).unwrap();
        assert_eq!(first.len(), 5);
        let (_, again) = cd.tick(secs(113.2)).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn finished_countdown_stays_quiet() {
        let (cd, _) = fresh().tick(secs(120.0)).unwrap();
        assert!(cd.finished);
        let (_, later) = cd.tick(secs(200.0)).unwrap();
        assert!(later.is_empty());
    }

    #[test]
    fn regressing_tick_is_rejected() {
        let (cd, _) = fresh().tick(secs(50.0)).unwrap();
        assert!(matches!(
            cd.tick(secs(49.0)),
            Err(AlarmError::NonMonotonic { .. })
        ));
    }

    #[test]
    fn double_start_is_rejected() {
        let running = fresh();
        assert_eq!(
            start_countdown(Some(&running), at(5), DEFAULT_COMPRESSION, DEFAULT_WARNING),
            Err(AlarmError::AlreadyActive)
        );
        let (done, _) = running.tick(secs(120.0)).unwrap();
        assert!(start_countdown(
            Some(&done),
            secs(121.0),
            DEFAULT_COMPRESSION,
            DEFAULT_WARNING
        )
        .is_ok());
        assert!(start_countdown(None, at(0), DEFAULT_COMPRESSION, DEFAULT_WARNING).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn cadence_does_not_change_signals(mut points in proptest::collection::vec(0u64..130_000_000_000, 0..200)) {
            points.sort_unstable();
            let mut schedule: Vec<_> = points.into_iter().map(at).collect();
            schedule.push(secs(130.0));
            proptest::prop_assert_eq!(run(&schedule), reference());
        }
    }
}
