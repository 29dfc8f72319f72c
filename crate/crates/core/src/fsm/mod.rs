//! Scooping/feeding task executor.
//!
//! The transition table is data ([`FsmDefinition`]); [`SessionState`] folds
//! triggers through it and keeps the history needed to replay a session.

mod runtime;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::Task;

pub use runtime::{
    run_session, At, Cue, FrameKind, MotionSource, RuntimeConfig, ScriptEvent, Session, SessionOutcome, SessionOutput,
    SimulatedMotions, TelemetryFrame, TELEMETRY_VERSION,
};

const BUILTIN_DEFINITION: &str = include_str!("../../config/fsm.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    Idle,
    BowlLocationEstimation,
    Scooping,
    ScoopFeedbackWait,
    MouthLocationEstimation,
    Feeding,
    FeedFeedbackWait,
    CorrectiveAction,
    Halted,
}

impl FsmState {
    pub const ALL: [FsmState; 9] = [
        FsmState::Idle,
        FsmState::BowlLocationEstimation,
        FsmState::Scooping,
        FsmState::ScoopFeedbackWait,
        FsmState::MouthLocationEstimation,
        FsmState::Feeding,
        FsmState::FeedFeedbackWait,
        FsmState::CorrectiveAction,
        FsmState::Halted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FsmState::Idle => "idle",
            FsmState::BowlLocationEstimation => "bowl_location_estimation",
            FsmState::Scooping => "scooping",
            FsmState::ScoopFeedbackWait => "scoop_feedback_wait",
            FsmState::MouthLocationEstimation => "mouth_location_estimation",
            FsmState::Feeding => "feeding",
            FsmState::FeedFeedbackWait => "feed_feedback_wait",
            FsmState::CorrectiveAction => "corrective_action",
            FsmState::Halted => "halted",
        }
    }

    /// The task this state belongs to, if any.
    pub fn task(self) -> Option<Task> {
        match self {
            FsmState::BowlLocationEstimation | FsmState::Scooping | FsmState::ScoopFeedbackWait => Some(Task::Scooping),
            FsmState::MouthLocationEstimation | FsmState::Feeding | FsmState::FeedFeedbackWait => Some(Task::Feeding),
            _ => None,
        }
    }

    /// States in which the arm executes a recorded motion.
    pub fn is_motion(self) -> bool {
        matches!(self, FsmState::Scooping | FsmState::Feeding)
    }

    pub fn estimation_state(task: Task) -> FsmState {
        match task {
            Task::Scooping => FsmState::BowlLocationEstimation,
            Task::Feeding => FsmState::MouthLocationEstimation,
        }
    }
}

impl fmt::Display for FsmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FsmState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FsmState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown state `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    StartScooping,
    StartFeeding,
    Anomalous,
    Yp,
    Yn,
    Stop,
    Resume,
    FeedbackSuccess,
    FeedbackFailure,
    MotionComplete,
}

impl Trigger {
    pub const ALL: [Trigger; 10] = [
        Trigger::StartScooping,
        Trigger::StartFeeding,
        Trigger::Anomalous,
        Trigger::Yp,
        Trigger::Yn,
        Trigger::Stop,
        Trigger::Resume,
        Trigger::FeedbackSuccess,
        Trigger::FeedbackFailure,
        Trigger::MotionComplete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::StartScooping => "start_scooping",
            Trigger::StartFeeding => "start_feeding",
            Trigger::Anomalous => "anomalous",
            Trigger::Yp => "yp",
            Trigger::Yn => "yn",
            Trigger::Stop => "stop",
            Trigger::Resume => "resume",
            Trigger::FeedbackSuccess => "feedback_success",
            Trigger::FeedbackFailure => "feedback_failure",
            Trigger::MotionComplete => "motion_complete",
        }
    }

    pub fn start(task: Task) -> Trigger {
        match task {
            Task::Scooping => Trigger::StartScooping,
            Task::Feeding => Trigger::StartFeeding,
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Trigger {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Trigger::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown trigger `{s}`")))
    }
}

/// Side effects requested by a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    EstimatePose,
    StartMotion,
    RetractArm,
    Halt,
    RecordLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResumeTarget {
    #[serde(rename = "@resume")]
    Resume,
}

/// Destination of a transition: a fixed state, or the estimation state of
/// the interrupted task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    State(FsmState),
    Resume(ResumeTarget),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub from: FsmState,
    pub trigger: Trigger,
    pub to: Target,
    #[serde(default)]
    pub actions: Vec<Action>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDefinition {
    initial: FsmState,
    transition: Vec<TransitionRule>,
}

/// Validated transition table.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmDefinition {
    initial: FsmState,
    rules: BTreeMap<(FsmState, Trigger), TransitionRule>,
}

impl FsmDefinition {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_DEFINITION).expect("builtin FSM definition is valid")
    }

    pub fn builtin_toml() -> &'static str {
        BUILTIN_DEFINITION
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawDefinition = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(raw.initial, raw.transition)
    }

    pub fn new(initial: FsmState, rules: Vec<TransitionRule>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for rule in rules {
            let key = (rule.from, rule.trigger);
            if map.insert(key, rule).is_some() {
                return Err(invalid(format!("duplicate transition for ({}, {})", key.0, key.1)));
            }
        }
        let def = Self { initial, rules: map };
        def.validate()?;
        Ok(def)
    }

    fn validate(&self) -> Result<()> {
        for state in FsmState::ALL {
            if state != FsmState::Halted && self.accepted(state).is_empty() {
                return Err(invalid(format!("state {state} has no outgoing transition")));
            }
        }
        for state in [FsmState::Scooping, FsmState::Feeding] {
            for trigger in [Trigger::Anomalous, Trigger::Stop] {
                match self.rule(state, trigger) {
                    Some(r) if r.to == Target::State(FsmState::CorrectiveAction) => {}
                    _ => {
                        return Err(invalid(format!(
                            "({state}, {trigger}) must lead to corrective_action"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn initial(&self) -> FsmState {
        self.initial
    }

    pub fn rule(&self, state: FsmState, trigger: Trigger) -> Option<&TransitionRule> {
        self.rules.get(&(state, trigger))
    }

    pub fn rules(&self) -> impl Iterator<Item = &TransitionRule> {
        self.rules.values()
    }

    /// Triggers accepted in `state`, in declaration order of [`Trigger::ALL`].
    pub fn accepted(&self, state: FsmState) -> Vec<Trigger> {
        Trigger::ALL
            .into_iter()
            .filter(|t| self.rules.contains_key(&(state, *t)))
            .collect()
    }
}

impl Default for FsmDefinition {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Session clock value; strictly increasing within a session.
    pub timestamp: u64,
    pub trigger: Trigger,
    pub from: FsmState,
    pub to: FsmState,
}

/// Current state plus the ordered transition history of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub current_state: FsmState,
    pub history: Vec<HistoryEntry>,
    /// Task being executed, used to resolve `@resume`.
    pub task: Option<Task>,
    pub detector_flag: bool,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, def: &FsmDefinition) -> Self {
        Self {
            session_id: session_id.into(),
            current_state: def.initial(),
            history: Vec::new(),
            task: None,
            detector_flag: false,
        }
    }

    fn last_timestamp(&self) -> Option<u64> {
        self.history.last().map(|h| h.timestamp)
    }

    /// Destination and actions of `trigger` without applying it.
    pub fn peek<'d>(&self, def: &'d FsmDefinition, trigger: Trigger) -> Result<(FsmState, &'d [Action])> {
        let rejected = || Error::RejectedTrigger {
            state: self.current_state,
            trigger,
        };
        let rule = def.rule(self.current_state, trigger).ok_or_else(rejected)?;
        let to = match rule.to {
            Target::State(s) => s,
            Target::Resume(_) => FsmState::estimation_state(self.task.ok_or_else(rejected)?),
        };
        Ok((to, &rule.actions))
    }

    /// Applies `trigger` at `timestamp`. On error the state is unchanged.
    pub fn dispatch(&mut self, def: &FsmDefinition, trigger: Trigger, timestamp: u64) -> Result<Vec<Action>> {
        if let Some(last) = self.last_timestamp() {
            if timestamp <= last {
                return Err(invalid(format!(
                    "timestamp {timestamp} does not follow the previous transition at {last}"
                )));
            }
        }
        let (to, actions) = match self.peek(def, trigger) {
            Ok((to, actions)) => (to, actions.to_vec()),
            Err(e) => {
                tracing::info!(session = %self.session_id, state = %self.current_state, %trigger, "trigger rejected");
                return Err(e);
            }
        };
        self.history.push(HistoryEntry {
            timestamp,
            trigger,
            from: self.current_state,
            to,
        });
        if let Some(task) = to.task() {
            self.task = Some(task);
        } else if to == FsmState::Idle {
            self.task = None;
        }
        if to.is_motion() {
            self.detector_flag = false;
        } else if trigger == Trigger::Anomalous {
            self.detector_flag = true;
        }
        self.current_state = to;
        Ok(actions)
    }
}

/// Re-runs a recorded history from the initial state and returns the final
/// state. Any entry that disagrees with the table is reported by index.
pub fn replay(def: &FsmDefinition, history: &[HistoryEntry]) -> Result<FsmState> {
    let mut state = SessionState::new("replay", def);
    for (index, entry) in history.iter().enumerate() {
        if entry.from != state.current_state {
            return Err(Error::ReplayMismatch {
                index,
                message: format!("entry starts in {} but the session is in {}", entry.from, state.current_state),
            });
        }
        state.dispatch(def, entry.trigger, entry.timestamp).map_err(|e| Error::ReplayMismatch {
            index,
            message: e.to_string(),
        })?;
        if state.current_state != entry.to {
            return Err(Error::ReplayMismatch {
                index,
                message: format!(
                    "({}, {}) leads to {}, history says {}",
                    entry.from, entry.trigger, state.current_state, entry.to
                ),
            });
        }
    }
    Ok(state.current_state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(triggers: &[Trigger]) -> SessionState {
        let def = FsmDefinition::builtin();
        let mut s = SessionState::new("t", &def);
        for (i, t) in triggers.iter().enumerate() {
            s.dispatch(&def, *t, i as u64 + 1).unwrap();
        }
        s
    }

    #[test]
    fn anomaly_while_scooping_retracts() {
        use Trigger::*;
        let def = FsmDefinition::builtin();
        let mut s = run(&[StartScooping, MotionComplete]);
        assert_eq!(s.current_state, FsmState::Scooping);
        let actions = s.dispatch(&def, Anomalous, 10).unwrap();
        assert_eq!(s.current_state, FsmState::CorrectiveAction);
        assert!(actions.contains(&Action::RetractArm));
        assert!(s.detector_flag);
    }

    #[test]
    fn no_yogurt_rescoops() {
        use Trigger::*;
        let s = run(&[StartScooping, MotionComplete, MotionComplete, Yn]);
        assert_eq!(s.current_state, FsmState::Scooping);
    }

    #[test]
    fn rejected_trigger_leaves_state() {
        use Trigger::*;
        let def = FsmDefinition::builtin();
        let mut s = run(&[StartFeeding, MotionComplete, Stop, MotionComplete]);
        assert_eq!(s.current_state, FsmState::Halted);
        let before = s.clone();
        let err = s.dispatch(&def, Yp, 100).unwrap_err();
        assert!(matches!(
            err,
            Error::RejectedTrigger {
                state: FsmState::Halted,
                trigger: Yp
            }
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn resume_returns_to_interrupted_estimation() {
        use Trigger::*;
        let s = run(&[StartFeeding, MotionComplete, Stop, MotionComplete, Resume]);
        assert_eq!(s.current_state, FsmState::MouthLocationEstimation);
        let s = run(&[StartScooping, MotionComplete, Anomalous, MotionComplete, Resume]);
        assert_eq!(s.current_state, FsmState::BowlLocationEstimation);
    }

    #[test]
    fn timestamps_must_increase() {
        let def = FsmDefinition::builtin();
        let mut s = SessionState::new("t", &def);
        s.dispatch(&def, Trigger::StartScooping, 5).unwrap();
        assert!(s.dispatch(&def, Trigger::MotionComplete, 5).is_err());
        assert_eq!(s.current_state, FsmState::BowlLocationEstimation);
    }

    #[test]
    fn replay_reports_first_bad_index() {
        use Trigger::*;
        let def = FsmDefinition::builtin();
        assert_eq!(replay(&def, &[]).unwrap(), FsmState::Idle);
        let s = run(&[StartScooping, MotionComplete, MotionComplete, Yp]);
        assert_eq!(replay(&def, &s.history).unwrap(), s.current_state);
        let mut bad = s.history.clone();
        bad[2].to = FsmState::Halted;
        match replay(&def, &bad) {
            Err(Error::ReplayMismatch { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn definition_rejects_duplicates_and_unsafe_tables() {
        let text = FsmDefinition::builtin_toml();
        let dup = format!(
            "{text}\n[[transition]]\nfrom = \"idle\"\ntrigger = \"start_scooping\"\nto = \"halted\"\n"
        );
        assert!(FsmDefinition::from_toml_str(&dup).is_err());
        let unsafe_table = text.replacen(
            "from = \"feeding\"\ntrigger = \"stop\"\nto = \"corrective_action\"",
            "from = \"feeding\"\ntrigger = \"stop\"\nto = \"halted\"",
            1,
        );
        assert_ne!(unsafe_table, text);
        assert!(FsmDefinition::from_toml_str(&unsafe_table).is_err());
    }
}
