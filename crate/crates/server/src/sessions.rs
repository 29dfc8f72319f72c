//! Live sessions. Each session is owned by one driver task that serializes
//! commands and clock ticks; handlers talk to it over a channel and read
//! what it publishes.

use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use feedmon_core::error::Error as CoreError;
use feedmon_core::fsm::{FsmDefinition, FsmState, Session, SessionOutput, TelemetryFrame};
use feedmon_core::records::RecordStore;
use feedmon_core::signal::{AnomalyInjection, Task};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::{Interval, MissedTickBehavior};

use crate::api::{enabled_verbs, Ack, Command, Rejection, SessionView, Verb, API_VERSION, REJECTED_REASON};

pub(crate) enum Event {
    Command {
        cmd: Command,
        reply: oneshot::Sender<CommandResult>,
    },
    Close {
        reply: oneshot::Sender<()>,
    },
}

#[derive(Debug)]
pub enum CommandResult {
    Ack(Ack),
    Rejected(Rejection),
    BadRequest(String),
    Failed(String),
}

pub(crate) struct Published {
    pub frames: Vec<TelemetryFrame>,
    pub view: SessionView,
}

/// Shared face of a session: its command queue and the frames and view
/// its driver has published.
pub struct SessionHandle {
    pub id: String,
    tx: mpsc::Sender<Event>,
    published: RwLock<Published>,
    changed: watch::Sender<u64>,
}

impl SessionHandle {
    pub fn view(&self) -> SessionView {
        self.published.read().unwrap().view.clone()
    }

    pub fn is_closed(&self) -> bool {
        self.published.read().unwrap().view.closed
    }

    pub(crate) fn subscribe(&self) -> watch::Receiver<u64> {
        self.changed.subscribe()
    }

    /// Index of the first frame after `timestep`.
    pub(crate) fn index_after(&self, timestep: Option<u64>) -> usize {
        let p = self.published.read().unwrap();
        match timestep {
            Some(t) => p.frames.partition_point(|f| f.timestep <= t),
            None => 0,
        }
    }

    /// Frame at `idx`, and whether the stream should end once caught up.
    pub(crate) fn frame_at(&self, idx: usize) -> (Option<TelemetryFrame>, bool) {
        let p = self.published.read().unwrap();
        let done = p.view.closed || p.view.state == FsmState::Halted;
        (p.frames.get(idx).cloned(), done)
    }

    pub(crate) async fn send(&self, event: Event) -> bool {
        self.tx.send(event).await.is_ok()
    }
}

pub(crate) struct Driver {
    pub session: Session,
    pub task: Option<Task>,
    pub def: Arc<FsmDefinition>,
    pub store: Arc<Mutex<RecordStore>>,
    pub tick: Duration,
}

fn view_of(session: &Session, def: &FsmDefinition, task: Option<Task>, last_timestep: u64) -> SessionView {
    let st = session.state();
    SessionView {
        version: API_VERSION,
        session_id: st.session_id.clone(),
        task,
        state: st.current_state,
        detector_flag: st.detector_flag,
        closed: session.is_closed(),
        last_timestep,
        enabled_verbs: if session.is_closed() {
            Vec::new()
        } else {
            enabled_verbs(def, st.current_state)
        },
        history: st.history.clone(),
    }
}

pub(crate) fn spawn(driver: Driver, first: TelemetryFrame) -> Arc<SessionHandle> {
    let (tx, rx) = mpsc::channel(64);
    let view = view_of(&driver.session, &driver.def, driver.task, first.timestep);
    let handle = Arc::new(SessionHandle {
        id: driver.session.session_id().to_string(),
        tx,
        published: RwLock::new(Published {
            frames: vec![first],
            view,
        }),
        changed: watch::Sender::new(0),
    });
    tokio::spawn(drive(driver, Arc::clone(&handle), rx));
    handle
}

async fn next_tick(ticker: Option<&mut Interval>) {
    match ticker {
        Some(t) => {
            t.tick().await;
        }
        None => tokio::task::yield_now().await,
    }
}

async fn drive(mut d: Driver, handle: Arc<SessionHandle>, mut rx: mpsc::Receiver<Event>) {
    let mut ticker = (!d.tick.is_zero()).then(|| {
        let mut t = tokio::time::interval(d.tick);
        t.set_missed_tick_behavior(MissedTickBehavior::Delay);
        t
    });
    loop {
        let running = !d.session.awaiting_input();
        tokio::select! {
            biased;
            event = rx.recv() => match event {
                Some(Event::Command { cmd, reply }) => {
                    let result = d.command(&handle, cmd);
                    let _ = reply.send(result);
                }
                Some(Event::Close { reply }) => {
                    d.close(&handle);
                    let _ = reply.send(());
                    break;
                }
                None => {
                    d.close(&handle);
                    break;
                }
            },
            _ = next_tick(ticker.as_mut()), if running => {
                match d.session.tick() {
                    Ok(out) => d.publish(&handle, out),
                    Err(e) => {
                        tracing::error!(session = %handle.id, error = %e, "session failed; closing");
                        d.close(&handle);
                        break;
                    }
                }
            }
        }
    }
}

impl Driver {
    fn publish(&self, handle: &SessionHandle, out: SessionOutput) {
        if !out.records.is_empty() {
            let store = self.store.lock().unwrap();
            for r in &out.records {
                match store.append(r) {
                    Ok(()) => tracing::info!(record = %r.record_id, label = ?r.label, "record persisted"),
                    Err(e) => tracing::error!(record = %r.record_id, error = %e, "failed to persist record"),
                }
            }
        }
        let mut p = handle.published.write().unwrap();
        p.frames.extend(out.frames);
        let last = p.frames.last().map_or(0, |f| f.timestep);
        p.view = view_of(&self.session, &self.def, self.task, last);
        drop(p);
        handle.changed.send_modify(|n| *n += 1);
    }

    fn close(&mut self, handle: &SessionHandle) {
        let out = self.session.close().unwrap_or_else(|e| {
            tracing::error!(session = %handle.id, error = %e, "close failed");
            SessionOutput::default()
        });
        self.publish(handle, out);
    }

    fn ack(&self, handle: &SessionHandle, verb: Verb) -> CommandResult {
        let v = handle.view();
        CommandResult::Ack(Ack {
            version: API_VERSION,
            session_id: v.session_id,
            accepted: true,
            verb,
            state: v.state,
            timestep: v.last_timestep,
        })
    }

    fn reject(&self, verb: Verb) -> CommandResult {
        tracing::info!(session = %self.session.session_id(), ?verb, state = %self.session.current_state(), "command rejected");
        CommandResult::Rejected(Rejection {
            version: API_VERSION,
            session_id: self.session.session_id().to_string(),
            accepted: false,
            verb,
            state: self.session.current_state(),
            reason: REJECTED_REASON.to_string(),
        })
    }

    fn command(&mut self, handle: &SessionHandle, cmd: Command) -> CommandResult {
        let Command { verb, payload, .. } = cmd;
        if payload.inject.is_some() && verb != Verb::Start {
            return CommandResult::BadRequest("`inject` is only valid for `start`".into());
        }
        if payload.task.is_some() && !matches!(verb, Verb::SelectTask | Verb::Start) {
            return CommandResult::BadRequest(format!("`task` is not valid for `{verb:?}`"));
        }
        let initial = self.session.current_state() == self.def.initial();
        match verb {
            Verb::SelectTask => {
                let Some(task) = payload.task else {
                    return CommandResult::BadRequest("`select_task` needs `payload.task`".into());
                };
                if !initial {
                    return self.reject(verb);
                }
                self.task = Some(task);
                self.publish(handle, SessionOutput::default());
                return self.ack(handle, verb);
            }
            Verb::Start => {
                if let Some(task) = payload.task {
                    if !initial {
                        return self.reject(verb);
                    }
                    self.task = Some(task);
                }
                if self.task.is_none() {
                    return CommandResult::BadRequest("no task selected".into());
                }
            }
            _ => {}
        }
        let trigger = verb.trigger(self.task).expect("every other verb maps to a trigger");
        if self.session.state().peek(&self.def, trigger).is_err() {
            return self.reject(verb);
        }
        if let Some(inj) = payload.inject {
            if let Err(msg) = check_injection(&inj, self.task.expect("checked above")) {
                return CommandResult::BadRequest(msg);
            }
            if let Err(e) = self.session.schedule_fault(inj) {
                return CommandResult::BadRequest(e.to_string());
            }
        }
        match self.session.command(trigger) {
            Ok(out) => {
                self.publish(handle, out);
                self.ack(handle, verb)
            }
            Err(CoreError::RejectedTrigger { .. }) => self.reject(verb),
            Err(e) => CommandResult::Failed(e.to_string()),
        }
    }
}

fn check_injection(inj: &AnomalyInjection, task: Task) -> Result<(), String> {
    if !task.anomaly_kinds().contains(&inj.kind) {
        return Err(format!("{:?} cannot occur during {task}", inj.kind));
    }
    if !(0.0..=1.0).contains(&inj.onset_phase) {
        return Err("onset_phase must lie in [0, 1]".into());
    }
    if !(inj.magnitude.is_finite() && inj.magnitude > 0.0) {
        return Err("magnitude must be positive".into());
    }
    Ok(())
}
