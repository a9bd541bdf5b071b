//! Event-sourced resuscitation protocol engine.
//!
//! - [`clock`]: virtual and system time sources with dual monotonic/wall readings.
//! - [`alarms`]: the compression countdown and its warning, blink and finish stages.
//! - [`engine`]: the protocol state machine, dosing rules and enabled-command sets.
//! - [`records`]: the append-only event log, documentation, summaries, the session
//!   file format and replay verification.
//!
//! Milligram amounts are generic over [`Scalar`]; the aliases below fix them to
//! exact rationals, which is what the tools in this workspace use.

pub mod alarms;
pub mod clock;
pub mod engine;
pub mod records;
pub mod scalar;

pub use scalar::Scalar;

/// Exact milligram quantity.
pub type Mg = num_rational::Ratio<i64>;

pub type Session = engine::SessionState<Mg>;
pub type SessionEvent = engine::Event<Mg>;
pub type SessionEventKind = engine::EventKind<Mg>;
pub type Dosing = engine::DosingConfig<Mg>;
pub type DosingOverrides = engine::ConfigOverrides<Mg>;
pub type SessionLog = records::EventLog<Mg>;
pub type SessionSummary = records::Summary<Mg>;

/// Float-backed variants.
pub type SessionF64 = engine::SessionState<f64>;
pub type SessionLogF64 = records::EventLog<f64>;
pub type SessionF32 = engine::SessionState<f32>;
