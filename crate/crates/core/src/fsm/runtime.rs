//! Tick-driven session runtime.
//!
//! One tick is one sensor sample period. Location estimation and arm
//! retraction are timed phases that end in `motion_complete`; scooping and
//! feeding replay an observation sequence from a [`MotionSource`] through an
//! online detector, and a detector alarm dispatches `anomalous`.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorModel, OnlineDetector};
use crate::error::{invalid, Error, Result};
use crate::records::{ExecutionRecord, InjectedFault, Outcome, RECORD_FORMAT_VERSION};
use crate::signal::{AnomalyInjection, Label, MultimodalSequence, Simulator, Task};

use super::{Action, FsmDefinition, FsmState, SessionState, Trigger};

pub const TELEMETRY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    /// Ticks spent in each location-estimation state.
    pub estimation_steps: usize,
    /// Ticks spent retracting in corrective_action.
    pub retract_steps: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            estimation_steps: 10,
            retract_steps: 10,
        }
    }
}

/// Supplies the observation stream for each motion execution.
pub trait MotionSource: Send {
    fn channels(&self, task: Task) -> Vec<String>;
    fn next_motion(&mut self, task: Task) -> Result<MultimodalSequence>;

    /// Queues a fault for an upcoming motion, if the source can simulate one.
    fn schedule_fault(&mut self, injection: AnomalyInjection) -> Result<()> {
        let _ = injection;
        Err(invalid("this motion source cannot inject faults"))
    }
}

/// Simulator-backed motions; queued injections apply to upcoming motions in
/// order, one per motion.
#[derive(Debug)]
pub struct SimulatedMotions {
    sim: Simulator,
    rng: ChaCha8Rng,
    pending: VecDeque<AnomalyInjection>,
}

impl SimulatedMotions {
    pub fn new(sim: Simulator, seed: u64) -> Self {
        Self {
            sim,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: VecDeque::new(),
        }
    }

    pub fn inject_next(&mut self, injection: AnomalyInjection) {
        self.pending.push_back(injection);
    }
}

impl MotionSource for SimulatedMotions {
    fn channels(&self, task: Task) -> Vec<String> {
        self.sim.channel_names(task)
    }

    fn schedule_fault(&mut self, injection: AnomalyInjection) -> Result<()> {
        self.inject_next(injection);
        Ok(())
    }

    fn next_motion(&mut self, task: Task) -> Result<MultimodalSequence> {
        let seq = self
            .sim
            .generate_nominal(task, self.sim.default_duration(task), self.rng.random())?;
        match self.pending.pop_front() {
            Some(inj) => self.sim.inject_anomaly(&seq, &inj, self.rng.random()),
            None => Ok(seq),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// One sensor sample of a scooping or feeding motion.
    Motion,
    /// The session entered `fsm_state`.
    Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub version: u32,
    pub session_id: String,
    /// Strictly increasing within a session.
    pub timestep: u64,
    pub kind: FrameKind,
    pub fsm_state: FsmState,
    /// Sample index within the current motion.
    pub motion_step: Option<usize>,
    pub channels: Option<Vec<f64>>,
    pub progress: Option<Vec<f64>>,
    pub log_likelihood: Option<f64>,
    /// Detector score; for HMM-SVM detectors this is the SVM margin.
    pub score: Option<f64>,
    pub svm_margin: Option<f64>,
    /// Latched detector flag for the current motion.
    pub flagged: bool,
}

/// Frames and records produced by one call into a [`Session`].
#[derive(Debug, Default, Clone)]
pub struct SessionOutput {
    pub frames: Vec<TelemetryFrame>,
    pub records: Vec<ExecutionRecord>,
}

impl SessionOutput {
    fn extend(&mut self, other: SessionOutput) {
        self.frames.extend(other.frames);
        self.records.extend(other.records);
    }
}

struct MotionRun {
    source: MultimodalSequence,
    step: usize,
}

/// A live session: FSM state, timers, the running motion, and the detector.
pub struct Session {
    def: Arc<FsmDefinition>,
    cfg: RuntimeConfig,
    state: SessionState,
    clock: u64,
    motions: Box<dyn MotionSource>,
    detectors: BTreeMap<Task, Arc<DetectorModel>>,
    online: Option<OnlineDetector>,
    motion: Option<MotionRun>,
    countdown: usize,
    /// Samples of the last motion, truncated on interruption.
    active: Option<MultimodalSequence>,
    injected: Option<InjectedFault>,
    first_detection: Option<usize>,
    recorded: bool,
    n_records: usize,
    closed: bool,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("state", &self.state)
            .field("clock", &self.clock)
            .field("closed", &self.closed)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Opens a session in the definition's initial state and returns the
    /// first frame.
    pub fn new(
        session_id: impl Into<String>,
        def: Arc<FsmDefinition>,
        cfg: RuntimeConfig,
        motions: Box<dyn MotionSource>,
        detectors: BTreeMap<Task, Arc<DetectorModel>>,
    ) -> Result<(Self, TelemetryFrame)> {
        for (task, model) in &detectors {
            let expected = motions.channels(*task);
            if model.channels() != expected.as_slice() {
                return Err(invalid(format!(
                    "{task} detector expects channels {:?}, motion source provides {:?}",
                    model.channels(),
                    expected
                )));
            }
        }
        let state = SessionState::new(session_id, &def);
        let mut session = Self {
            def,
            cfg,
            state,
            clock: 0,
            motions,
            detectors,
            online: None,
            motion: None,
            countdown: 0,
            active: None,
            injected: None,
            first_detection: None,
            recorded: true,
            n_records: 0,
            closed: false,
        };
        let frame = session.transition_frame();
        Ok((session, frame))
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn session_id(&self) -> &str {
        &self.state.session_id
    }

    pub fn current_state(&self) -> FsmState {
        self.state.current_state
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Idle, feedback-wait and halted states make no progress on their own.
    pub fn awaiting_input(&self) -> bool {
        matches!(
            self.state.current_state,
            FsmState::Idle | FsmState::ScoopFeedbackWait | FsmState::FeedFeedbackWait | FsmState::Halted
        )
    }

    pub fn schedule_fault(&mut self, injection: AnomalyInjection) -> Result<()> {
        self.motions.schedule_fault(injection)
    }

    /// Samples already emitted by the running motion.
    pub fn motion_step(&self) -> Option<usize> {
        self.motion.as_ref().map(|m| m.step)
    }

    pub fn first_detection(&self) -> Option<usize> {
        self.first_detection
    }

    fn next_timestep(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn transition_frame(&mut self) -> TelemetryFrame {
        let timestep = if self.state.history.is_empty() && self.clock == 0 {
            0
        } else {
            self.clock
        };
        TelemetryFrame {
            version: TELEMETRY_VERSION,
            session_id: self.state.session_id.clone(),
            timestep,
            kind: FrameKind::Transition,
            fsm_state: self.state.current_state,
            motion_step: None,
            channels: None,
            progress: None,
            log_likelihood: None,
            score: None,
            svm_margin: None,
            flagged: self.first_detection.is_some() && self.state.detector_flag,
        }
    }

    /// Operator or external trigger. Rejected triggers leave the session
    /// unchanged and return the error.
    pub fn command(&mut self, trigger: Trigger) -> Result<SessionOutput> {
        if self.closed {
            return Err(invalid("session is closed"));
        }
        self.apply(trigger)
    }

    fn apply(&mut self, trigger: Trigger) -> Result<SessionOutput> {
        let (to, _) = self.state.peek(&self.def, trigger)?;
        let timestep = self.clock + 1;
        let actions = self.state.dispatch(&self.def, trigger, timestep)?;
        self.clock = timestep;
        debug_assert_eq!(self.state.current_state, to);
        let mut out = SessionOutput::default();
        out.frames.push(self.transition_frame());
        for action in actions {
            match action {
                Action::EstimatePose => self.countdown = self.cfg.estimation_steps,
                Action::RetractArm => {
                    self.motion = None;
                    self.countdown = self.cfg.retract_steps;
                }
                Action::StartMotion => self.start_motion()?,
                Action::Halt => self.motion = None,
                Action::RecordLabel => {
                    let label = match trigger {
                        Trigger::FeedbackSuccess => Some(Outcome::Success),
                        Trigger::FeedbackFailure => Some(Outcome::Failure),
                        _ => None,
                    };
                    out.records.push(self.make_record(label, true));
                }
            }
        }
        Ok(out)
    }

    fn start_motion(&mut self) -> Result<()> {
        let task = self
            .state
            .current_state
            .task()
            .expect("motion states belong to a task");
        let source = self.motions.next_motion(task)?;
        let mut active = source.clone();
        active.samples.clear();
        active.label = Label::Nominal;
        active.anomaly_onset = None;
        active.anomaly_kind = None;
        self.injected = match (source.anomaly_onset, source.anomaly_kind) {
            (Some(onset), Some(kind)) => Some(InjectedFault { kind, onset }),
            _ => None,
        };
        self.active = Some(active);
        self.online = self.detectors.get(&task).map(|m| OnlineDetector::new(Arc::clone(m)));
        self.first_detection = None;
        self.recorded = false;
        self.motion = Some(MotionRun { source, step: 0 });
        Ok(())
    }

    fn make_record(&mut self, label: Option<Outcome>, complete: bool) -> ExecutionRecord {
        self.n_records += 1;
        self.recorded = true;
        let sequence = self.active.clone().filter(|s| s.len() >= 2);
        ExecutionRecord {
            format_version: RECORD_FORMAT_VERSION,
            record_id: format!("{}-{}", self.state.session_id, self.n_records),
            session_id: self.state.session_id.clone(),
            task: self.active.as_ref().map(|s| s.task),
            label,
            complete,
            sequence,
            history: self.state.history.clone(),
            first_detection_step: self.first_detection,
            injected: self.injected.filter(|f| self.active.as_ref().is_some_and(|s| f.onset < s.len())),
        }
    }

    /// Advances one sample period.
    pub fn tick(&mut self) -> Result<SessionOutput> {
        if self.closed {
            return Ok(SessionOutput::default());
        }
        match self.state.current_state {
            FsmState::BowlLocationEstimation | FsmState::MouthLocationEstimation | FsmState::CorrectiveAction => {
                self.countdown = self.countdown.saturating_sub(1);
                if self.countdown == 0 {
                    return self.apply(Trigger::MotionComplete);
                }
                Ok(SessionOutput::default())
            }
            FsmState::Scooping | FsmState::Feeding => self.motion_tick(),
            _ => Ok(SessionOutput::default()),
        }
    }

    fn motion_tick(&mut self) -> Result<SessionOutput> {
        let Some(run) = self.motion.as_mut() else {
            return self.apply(Trigger::MotionComplete);
        };
        let step = run.step;
        let obs = run.source.samples[step].clone();
        run.step += 1;
        let finished = run.step >= run.source.len();
        if let Some(active) = self.active.as_mut() {
            active.samples.push(obs.clone());
        }

        let mut alarm = false;
        let mut scored = None;
        if let Some(online) = self.online.as_mut() {
            if !online.degraded() {
                match online.push(&obs) {
                    Ok(s) => {
                        alarm = s.alarm;
                        scored = Some(s);
                    }
                    Err(e) => tracing::warn!(session = %self.state.session_id, step, error = %e, "detector degraded"),
                }
            }
        }
        if alarm {
            self.first_detection = Some(step);
        }
        let is_svm = self
            .online
            .as_ref()
            .is_some_and(|o| o.model().method() == crate::detector::Method::HmmSvm);
        let timestep = self.next_timestep();
        let frame = TelemetryFrame {
            version: TELEMETRY_VERSION,
            session_id: self.state.session_id.clone(),
            timestep,
            kind: FrameKind::Motion,
            fsm_state: self.state.current_state,
            motion_step: Some(step),
            channels: Some(obs),
            progress: scored.as_ref().map(|s| s.features.progress.clone()),
            log_likelihood: scored.as_ref().map(|s| s.features.log_likelihood),
            score: scored.as_ref().map(|s| s.score),
            svm_margin: scored.as_ref().filter(|_| is_svm).map(|s| s.score),
            flagged: self.first_detection.is_some(),
        };
        let mut out = SessionOutput {
            frames: vec![frame],
            records: Vec::new(),
        };
        if alarm {
            out.extend(self.apply(Trigger::Anomalous)?);
        } else if finished {
            self.motion = None;
            out.extend(self.apply(Trigger::MotionComplete)?);
        }
        Ok(out)
    }

    /// Ends the session as if its event source disappeared: a running motion
    /// is stopped and retracted, the session halts, and an unlabeled motion
    /// is written as an incomplete record.
    pub fn close(&mut self) -> Result<SessionOutput> {
        let mut out = SessionOutput::default();
        if self.closed {
            return Ok(out);
        }
        if self.state.current_state != FsmState::Idle && self.state.current_state != FsmState::Halted {
            if self.state.peek(&self.def, Trigger::Stop).is_ok() {
                out.extend(self.apply(Trigger::Stop)?);
            }
            // retraction and other timed phases run to completion
            let mut guard = 0;
            while matches!(self.state.current_state, FsmState::CorrectiveAction) {
                out.extend(self.tick()?);
                guard += 1;
                if guard > self.cfg.retract_steps + 1 {
                    return Err(invalid("retraction did not finish"));
                }
            }
        }
        if !self.recorded && self.active.is_some() {
            out.records.push(self.make_record(None, false));
        }
        self.closed = true;
        Ok(out)
    }
}

/// When a scripted event fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum At {
    /// The next time the session waits for operator input.
    Ready,
    /// Once the running motion has emitted this many samples.
    MotionStep(usize),
    /// Right after the previous cue, before the next tick.
    Now,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptEvent {
    Trigger(Trigger),
    /// The event source goes away.
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cue {
    pub at: At,
    pub event: ScriptEvent,
}

impl Cue {
    pub fn ready(trigger: Trigger) -> Self {
        Self {
            at: At::Ready,
            event: ScriptEvent::Trigger(trigger),
        }
    }

    pub fn at_step(step: usize, trigger: Trigger) -> Self {
        Self {
            at: At::MotionStep(step),
            event: ScriptEvent::Trigger(trigger),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub state: SessionState,
    pub frames: Vec<TelemetryFrame>,
    pub records: Vec<ExecutionRecord>,
    /// Scripted triggers the FSM refused.
    pub rejected: Vec<(usize, Trigger)>,
}

/// Drives one session from a script until the script is exhausted and the
/// session waits for input, or the script closes it.
pub fn run_session(
    session_id: &str,
    def: Arc<FsmDefinition>,
    cfg: RuntimeConfig,
    motions: Box<dyn MotionSource>,
    detectors: BTreeMap<Task, Arc<DetectorModel>>,
    script: impl IntoIterator<Item = Cue>,
) -> Result<SessionOutcome> {
    let (mut session, first) = Session::new(session_id, def, cfg, motions, detectors)?;
    let mut frames = vec![first];
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut script = script.into_iter().enumerate().peekable();
    let mut idle_ticks = 0usize;

    loop {
        let due = match script.peek() {
            Some((_, cue)) => match cue.at {
                At::Ready => session.awaiting_input(),
                At::MotionStep(n) => session.motion_step() == Some(n),
                At::Now => true,
            },
            None => session.awaiting_input(),
        };
        if due {
            let Some((index, cue)) = script.next() else {
                break;
            };
            idle_ticks = 0;
            let out = match cue.event {
                ScriptEvent::Close => {
                    let out = session.close()?;
                    frames.extend(out.frames);
                    records.extend(out.records);
                    break;
                }
                ScriptEvent::Trigger(t) => match session.command(t) {
                    Ok(out) => out,
                    Err(Error::RejectedTrigger { .. }) => {
                        rejected.push((index, t));
                        SessionOutput::default()
                    }
                    Err(e) => return Err(e),
                },
            };
            frames.extend(out.frames);
            records.extend(out.records);
            continue;
        }
        if session.awaiting_input() {
            if let Some((index, cue)) = script.peek() {
                return Err(invalid(format!(
                    "script cue {index} ({:?}) can never fire: session is waiting in {}",
                    cue.at,
                    session.current_state()
                )));
            }
        }
        let out = session.tick()?;
        idle_ticks += 1;
        if idle_ticks > 1_000_000 {
            return Err(invalid("session made no progress"));
        }
        frames.extend(out.frames);
        records.extend(out.records);
    }
    Ok(SessionOutcome {
        state: session.state().clone(),
        frames,
        records,
        rejected,
    })
}
