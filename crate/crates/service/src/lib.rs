//! Local session service: hosts engine sessions behind a serialized writer per
//! session, stamps every command with the service clock, runs the tick loop,
//! and exposes sessions over HTTP with a resumable server-sent event stream.

pub mod http;
pub mod hub;
pub mod messages;

pub use http::{handle, router, Created};
pub use hub::{session_path, spawn_ticker, Hub, ServiceError, SessionView, TICK_PERIOD};
pub use messages::{Ack, ClientMessage, CommandPayload, CommandRequest, ServerMessage, Snapshot};
