//! Request and response bodies. Every body carries `version`.

use std::collections::BTreeMap;

use feedmon_core::detector::{DetectorModel, Method};
use feedmon_core::fsm::{FsmDefinition, FsmState, HistoryEntry, Trigger, TELEMETRY_VERSION};
use feedmon_core::records::{Outcome, RecordSummary, RECORD_FORMAT_VERSION};
use feedmon_core::signal::{AnomalyInjection, Task};
use serde::{Deserialize, Serialize};

pub const API_VERSION: u32 = 1;

/// Machine-readable reason attached to every FSM rejection.
pub const REJECTED_REASON: &str = "invalid trigger for state";

/// Operator affordances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    SelectTask,
    Start,
    Stop,
    Resume,
    FeedbackYp,
    FeedbackYn,
    FeedbackSuccess,
    FeedbackFailure,
}

impl Verb {
    pub const ALL: [Verb; 8] = [
        Verb::SelectTask,
        Verb::Start,
        Verb::Stop,
        Verb::Resume,
        Verb::FeedbackYp,
        Verb::FeedbackYn,
        Verb::FeedbackSuccess,
        Verb::FeedbackFailure,
    ];

    /// FSM trigger for the verb. `select_task` has none; `start` needs the
    /// session's task.
    pub fn trigger(self, task: Option<Task>) -> Option<Trigger> {
        match self {
            Verb::SelectTask => None,
            Verb::Start => task.map(Trigger::start),
            Verb::Stop => Some(Trigger::Stop),
            Verb::Resume => Some(Trigger::Resume),
            Verb::FeedbackYp => Some(Trigger::Yp),
            Verb::FeedbackYn => Some(Trigger::Yn),
            Verb::FeedbackSuccess => Some(Trigger::FeedbackSuccess),
            Verb::FeedbackFailure => Some(Trigger::FeedbackFailure),
        }
    }

    /// Whether the server would accept the verb in `state`. The console
    /// enables a button exactly when this holds.
    pub fn enabled(self, def: &FsmDefinition, state: FsmState) -> bool {
        match self {
            Verb::SelectTask => state == def.initial(),
            Verb::Start => Task::ALL.iter().any(|t| def.rule(state, Trigger::start(*t)).is_some()),
            v => v.trigger(None).is_some_and(|t| def.rule(state, t).is_some()),
        }
    }
}

pub fn enabled_verbs(def: &FsmDefinition, state: FsmState) -> Vec<Verb> {
    Verb::ALL.into_iter().filter(|v| v.enabled(def, state)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub version: u32,
    pub task: Task,
    /// Seeds the session's simulated motions; the server picks one if absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    pub version: u32,
    pub verb: Verb,
    #[serde(default)]
    pub payload: CommandPayload,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandPayload {
    /// Required by `select_task`.
    #[serde(default)]
    pub task: Option<Task>,
    /// `start` only: simulate this fault during the motion.
    #[serde(default)]
    pub inject: Option<AnomalyInjection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub version: u32,
    pub session_id: String,
    pub accepted: bool,
    pub verb: Verb,
    pub state: FsmState,
    /// Timestep of the last frame emitted by the command.
    pub timestep: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub version: u32,
    pub session_id: String,
    pub accepted: bool,
    pub verb: Verb,
    pub state: FsmState,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub version: u32,
    /// `bad_request`, `not_found`, `conflict` or `internal`.
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub version: u32,
    pub session_id: String,
    pub task: Option<Task>,
    pub state: FsmState,
    pub detector_flag: bool,
    pub closed: bool,
    pub last_timestep: u64,
    pub enabled_verbs: Vec<Verb>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub version: u32,
    pub status: String,
    pub live_sessions: usize,
    pub max_live_sessions: usize,
    pub active_models: BTreeMap<Task, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordList {
    pub version: u32,
    pub records: Vec<RecordSummary>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordQuery {
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub label: Option<Outcome>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetryQuery {
    /// Only frames with a larger timestep are sent.
    #[serde(default)]
    pub after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelUpload {
    pub version: u32,
    pub task: Task,
    pub model: DetectorModel,
    /// Make it the task's active detector right away.
    #[serde(default)]
    pub activate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub version: u32,
    pub model_id: String,
    pub task: Task,
    pub method: Method,
    pub channels: Vec<String>,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelList {
    pub version: u32,
    pub models: Vec<ModelInfo>,
}

/// Static description of the API: enumerations, payload versions and the
/// button-enable table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub version: u32,
    pub telemetry_version: u32,
    pub record_format_version: u32,
    pub verbs: Vec<Verb>,
    pub states: Vec<FsmState>,
    pub tasks: Vec<Task>,
    pub rejection_reason: String,
    pub button_enable: BTreeMap<FsmState, BTreeMap<Verb, bool>>,
}

impl Schema {
    pub fn for_definition(def: &FsmDefinition) -> Self {
        let button_enable = FsmState::ALL
            .into_iter()
            .map(|s| (s, Verb::ALL.into_iter().map(|v| (v, v.enabled(def, s))).collect()))
            .collect();
        Self {
            version: API_VERSION,
            telemetry_version: TELEMETRY_VERSION,
            record_format_version: RECORD_FORMAT_VERSION,
            verbs: Verb::ALL.to_vec(),
            states: FsmState::ALL.to_vec(),
            tasks: Task::ALL.to_vec(),
            rejection_reason: REJECTED_REASON.to_string(),
            button_enable,
        }
    }
}
