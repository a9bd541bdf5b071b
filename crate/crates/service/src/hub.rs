//! In-memory session registry. Each session has one writer lock that orders
//! every command, and a watch channel that publishes immutable views to
//! readers and subscribers.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use cpr_core::clock::{Instant, TimeSource};
use cpr_core::engine::{Action, Command, CommandKind, ConfigError, EventKind, Phase};
use cpr_core::records::{encode_session, load_session, replay_verify, save_session, RecordsError};
use cpr_core::{Dosing, DosingOverrides, Session, SessionEvent, SessionLog};
use futures::stream::{self, Stream};
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::messages::{records, Ack, CommandRequest, Snapshot};

pub const TICK_PERIOD: Duration = Duration::from_millis(250);

const SESSION_FILE_EXT: &str = "jsonl";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("{0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("could not persist session: {0}")]
    Persist(RecordsError),
}

/// What readers see of a session. Replaced wholesale after every applied
/// command, so a reader never observes a half-applied batch.
#[derive(Debug, Clone)]
pub struct SessionView {
    pub session_id: String,
    pub events: Arc<Vec<SessionEvent>>,
    pub state: Session,
    pub as_of: Instant,
}

impl SessionView {
    pub fn snapshot(&self) -> Snapshot {
        Snapshot::project(&self.session_id, &self.state, &self.as_of)
    }

    pub fn head_seq(&self) -> u64 {
        self.state.event_seq - 1
    }

    pub fn ended(&self) -> bool {
        self.state.phase == Phase::Ended
    }
}

struct Writer {
    state: Session,
    log: SessionLog,
    /// Shared with the published view until the next batch lands.
    events: Arc<Vec<SessionEvent>>,
}

struct Slot {
    writer: Mutex<Writer>,
    view: watch::Sender<Arc<SessionView>>,
}

pub struct Hub {
    clock: Arc<dyn TimeSource>,
    defaults: Dosing,
    data_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

impl Hub {
    pub fn new(clock: Arc<dyn TimeSource>, defaults: Dosing) -> Self {
        Self {
            clock,
            defaults,
            data_dir: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Persists every session to `<dir>/<session_id>.jsonl` after each batch
    /// of events, before the batch is published.
    pub fn with_data_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.data_dir = Some(dir.into());
        self
    }

    pub fn clock(&self) -> &Arc<dyn TimeSource> {
        &self.clock
    }

    /// Loads and verifies every session file in the data directory. Returns
    /// the ids that were restored.
    pub fn recover(&self) -> Result<Vec<String>, RecordsError> {
        let Some(dir) = &self.data_dir else {
            return Ok(Vec::new());
        };
        let entries = std::fs::read_dir(dir).map_err(|source| RecordsError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut restored = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some(SESSION_FILE_EXT) {
                continue;
            }
            let log = load_session(&path)?;
            let state = replay_verify(&log)?;
            let as_of = log.events.last().map_or_else(|| self.clock.now(), |e| e.at);
            restored.push(log.session_id.clone());
            self.insert(log, state, as_of);
        }
        restored.sort();
        Ok(restored)
    }

    pub fn create_session(&self, overrides: &DosingOverrides) -> Result<String, ServiceError> {
        let config = overrides.apply_to(&self.defaults)?;
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let mut state = Session::idle(config.clone());
        let mut log = SessionLog::new(session_id.clone(), config);
        let now = self.clock.now();
        for event in state.apply_in_place(&Command::new(Action::StartSession, now)) {
            log.push(event)
                .expect("engine emits gapless, ordered events");
        }
        self.persist(&log)?;
        self.insert(log, state, now);
        tracing::info!(session_id, "session created");
        Ok(session_id)
    }

    fn insert(&self, log: SessionLog, state: Session, as_of: Instant) {
        let events = Arc::new(log.events.clone());
        let view = Arc::new(SessionView {
            session_id: log.session_id.clone(),
            events: events.clone(),
            state: state.clone(),
            as_of,
        });
        let id = log.session_id.clone();
        let slot = Slot {
            writer: Mutex::new(Writer { state, log, events }),
            view: watch::Sender::new(view),
        };
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(slot));
    }

    fn slot(&self, session_id: &str) -> Result<Arc<Slot>, ServiceError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_owned()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self
            .sessions
            .read()
            .expect("session map poisoned")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    fn persist(&self, log: &SessionLog) -> Result<(), ServiceError> {
        match &self.data_dir {
            Some(dir) => save_session(log, &session_path(dir, &log.session_id))
                .map_err(ServiceError::Persist),
            None => Ok(()),
        }
    }

    /// Stamps `action` with the service clock and applies it. The stamp is
    /// taken under the session lock, so stamps follow the apply order.
    fn apply(&self, slot: &Slot, action: Action) -> Result<Ack, ServiceError> {
        let mut writer = slot.writer.lock().expect("session writer poisoned");
        self.apply_locked(slot, &mut writer, action)
    }

    fn apply_locked(
        &self,
        slot: &Slot,
        writer: &mut Writer,
        action: Action,
    ) -> Result<Ack, ServiceError> {
        let now = self.clock.now();
        let (next, produced) = writer.state.apply(&Command::new(action, now));

        if !produced.is_empty() {
            let mut log = writer.log.clone();
            for event in &produced {
                log.push(event.clone())
                    .expect("engine emits gapless, ordered events");
            }
            self.persist(&log)?;
            writer.log = log;
            writer.events = Arc::new(writer.log.events.clone());
        }
        writer.state = next;

        let rejection = produced.iter().find_map(|e| match &e.kind {
            EventKind::CommandRejected { reason, .. } => Some(reason.as_str().to_owned()),
            _ => None,
        });
        let enabled = writer.state.enabled_commands(&now);
        slot.view.send_replace(Arc::new(SessionView {
            session_id: writer.log.session_id.clone(),
            events: writer.events.clone(),
            state: writer.state.clone(),
            as_of: now,
        }));
        Ok(Ack {
            accepted: rejection.is_none(),
            reason: rejection,
            events: records(&produced),
            enabled: enabled.into_iter().collect(),
        })
    }

    pub fn submit_command(
        &self,
        session_id: &str,
        request: &CommandRequest,
    ) -> Result<Ack, ServiceError> {
        let action = match (request.kind, &request.payload) {
            (CommandKind::AddNote, Some(p)) => Action::AddNote(p.text.clone()),
            (CommandKind::AddNote, None) => {
                return Err(ServiceError::BadRequest(
                    "AddNote requires payload.text".into(),
                ))
            }
            (kind, None) => Action::from_kind(kind, String::new()),
            (kind, Some(_)) => {
                return Err(ServiceError::BadRequest(format!("{kind} takes no payload")))
            }
        };
        let slot = self.slot(session_id)?;
        self.apply(&slot, action)
    }

    /// Ticks every live session once.
    pub fn tick_all(&self) {
        let slots: Vec<_> = self
            .sessions
            .read()
            .expect("session map poisoned")
            .values()
            .cloned()
            .collect();
        for slot in slots {
            let mut writer = slot.writer.lock().expect("session writer poisoned");
            if writer.state.phase == Phase::Ended {
                continue;
            }
            if let Err(e) = self.apply_locked(&slot, &mut writer, Action::Tick) {
                tracing::error!(session_id = %writer.log.session_id, "tick failed: {e}");
            }
        }
    }

    pub fn view(&self, session_id: &str) -> Result<Arc<SessionView>, ServiceError> {
        Ok(self.slot(session_id)?.view.borrow().clone())
    }

    pub fn snapshot(&self, session_id: &str) -> Result<Snapshot, ServiceError> {
        Ok(self.view(session_id)?.snapshot())
    }

    /// Session file bytes for the current log.
    pub fn export(&self, session_id: &str) -> Result<Vec<u8>, ServiceError> {
        let slot = self.slot(session_id)?;
        let writer = slot.writer.lock().expect("session writer poisoned");
        Ok(encode_session(&writer.log))
    }

    /// Ordered batches of events with `seq >= from_seq`: history first, then
    /// live batches as they are applied. The stream ends once the session has
    /// ended and everything has been delivered. A `from_seq` beyond the head
    /// starts at the next event.
    pub fn stream_events(
        &self,
        session_id: &str,
        from_seq: u64,
    ) -> Result<impl Stream<Item = Vec<SessionEvent>> + Send + 'static, ServiceError> {
        let rx = self.slot(session_id)?.view.subscribe();
        let head = rx.borrow().head_seq();
        let next = from_seq.clamp(1, head + 1);
        Ok(stream::unfold((rx, next), |(mut rx, next)| async move {
            loop {
                let view = Arc::clone(&rx.borrow_and_update());
                let pending = view.events.get(idx(next)..).unwrap_or(&[]);
                if let Some(last) = pending.last() {
                    let after = last.seq + 1;
                    return Some((pending.to_vec(), (rx, after)));
                }
                if view.ended() || rx.changed().await.is_err() {
                    return None;
                }
            }
        }))
    }
}

fn idx(seq: u64) -> usize {
    usize::try_from(seq.saturating_sub(1)).unwrap_or(usize::MAX)
}

pub fn session_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{session_id}.{SESSION_FILE_EXT}"))
}

/// Runs [`Hub::tick_all`] every `period` until the handle is aborted.
pub fn spawn_ticker(hub: Arc<Hub>, period: Duration) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            let hub = hub.clone();
            if tokio::task::spawn_blocking(move || hub.tick_all())
                .await
                .is_err()
            {
                tracing::error!("tick task panicked");
            }
        }
    })
}
