//! Time sources.
//!
//! Every [`Instant`] carries two readings: a monotonic nanosecond counter that
//! drives all protocol timing, and a UTC wall time used only when rendering
//! documentation. The engine never reads a clock itself; time arrives inside
//! commands.

use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("advance is only supported on a virtual clock")]
    NotVirtual,
    #[error("monotonic counter overflow")]
    Overflow,
}

/// A point in session time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instant {
    /// Nanoseconds since the time source's epoch.
    pub monotonic_nanos: u64,
    pub wall_time: DateTime<Utc>,
}

impl Instant {
    pub fn new(monotonic_nanos: u64, wall_time: DateTime<Utc>) -> Self {
        Self {
            monotonic_nanos,
            wall_time,
        }
    }

    /// The instant `offset` after a source epoch whose wall reading is `wall_epoch`.
    pub fn from_epoch(wall_epoch: DateTime<Utc>, offset: Duration) -> Self {
        let nanos = duration_nanos(offset);
        Self {
            monotonic_nanos: nanos,
            wall_time: wall_epoch + TimeDelta::nanoseconds(nanos as i64),
        }
    }

    /// Time from `earlier` to `self`, or `None` if `earlier` is actually later.
    pub fn checked_since(&self, earlier: &Instant) -> Option<Duration> {
        self.monotonic_nanos
            .checked_sub(earlier.monotonic_nanos)
            .map(Duration::from_nanos)
    }

    /// Like [`checked_since`](Self::checked_since) but clamps to zero.
    pub fn saturating_since(&self, earlier: &Instant) -> Duration {
        self.checked_since(earlier).unwrap_or(Duration::ZERO)
    }

    /// Both readings moved forward by `d`.
    pub fn checked_add(&self, d: Duration) -> Option<Instant> {
        let nanos = u64::try_from(d.as_nanos()).ok()?;
        Some(Instant {
            monotonic_nanos: self.monotonic_nanos.checked_add(nanos)?,
            wall_time: self
                .wall_time
                .checked_add_signed(TimeDelta::nanoseconds(i64::try_from(nanos).ok()?))?,
        })
    }

    /// Both readings moved back by `d`, if the monotonic reading allows it.
    pub fn checked_sub(&self, d: Duration) -> Option<Instant> {
        let nanos = u64::try_from(d.as_nanos()).ok()?;
        Some(Instant {
            monotonic_nanos: self.monotonic_nanos.checked_sub(nanos)?,
            wall_time: self
                .wall_time
                .checked_sub_signed(TimeDelta::nanoseconds(i64::try_from(nanos).ok()?))?,
        })
    }
}

/// `b - a` on the monotonic axis. `None` if `b` precedes `a`.
pub fn elapsed(a: &Instant, b: &Instant) -> Option<Duration> {
    b.checked_since(a)
}

pub(crate) fn duration_nanos(d: Duration) -> u64 {
    u64::try_from(d.as_nanos()).unwrap_or(u64::MAX)
}

pub trait TimeSource: Send + Sync {
    fn now(&self) -> Instant;

    /// Moves a virtual source forward. Real sources reject this.
    fn advance(&self, _d: Duration) -> Result<Instant, ClockError> {
        Err(ClockError::NotVirtual)
    }
}

/// Deterministic source for tests, scenario runs and replay.
#[derive(Debug)]
pub struct VirtualClock {
    wall_epoch: DateTime<Utc>,
    nanos: Mutex<u64>,
}

impl VirtualClock {
    pub fn new(wall_epoch: DateTime<Utc>) -> Self {
        Self {
            wall_epoch,
            nanos: Mutex::new(0),
        }
    }

    pub fn wall_epoch(&self) -> DateTime<Utc> {
        self.wall_epoch
    }

    fn instant_at(&self, nanos: u64) -> Instant {
        Instant {
            monotonic_nanos: nanos,
            wall_time: self.wall_epoch + TimeDelta::nanoseconds(nanos as i64),
        }
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new(DateTime::<Utc>::UNIX_EPOCH)
    }
}

impl TimeSource for VirtualClock {
    fn now(&self) -> Instant {
        let nanos = *self.nanos.lock().unwrap_or_else(|e| e.into_inner());
        self.instant_at(nanos)
    }

    fn advance(&self, d: Duration) -> Result<Instant, ClockError> {
        let mut guard = self.nanos.lock().unwrap_or_else(|e| e.into_inner());
        let step = u64::try_from(d.as_nanos()).map_err(|_| ClockError::Overflow)?;
        let next = guard.checked_add(step).ok_or(ClockError::Overflow)?;
        // Keep the wall reading representable as i64 nanoseconds.
        if next > i64::MAX as u64 {
            return Err(ClockError::Overflow);
        }
        *guard = next;
        Ok(self.instant_at(next))
    }
}

/// Production source backed by the OS monotonic clock.
///
/// Wall time is the UTC reading taken at construction plus monotonic elapsed
/// time, so it never jumps when the system clock is adjusted mid-session.
#[derive(Debug)]
pub struct SystemClock {
    origin: std::time::Instant,
    wall_origin: DateTime<Utc>,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: std::time::Instant::now(),
            wall_origin: Utc::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl TimeSource for SystemClock {
    fn now(&self) -> Instant {
        let nanos = duration_nanos(self.origin.elapsed());
        Instant {
            monotonic_nanos: nanos,
            wall_time: self.wall_origin + TimeDelta::nanoseconds(nanos as i64),
        }
    }
}
