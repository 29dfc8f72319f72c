//! Streaming detection with a latched alarm.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hmm::{FilterState, HmmFeatures};

use super::DetectorModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineStep {
    pub step: usize,
    pub features: HmmFeatures,
    pub score: f64,
    /// Latched: stays true from the first flagged step until [`OnlineDetector::reset`].
    pub flagged: bool,
    /// True only on the step where the latch closed.
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum OnlineEvent {
    Step(OnlineStep),
    Error { step: usize, message: String },
}

/// Constant-time-per-step detector session over one observation stream.
#[derive(Debug, Clone)]
pub struct OnlineDetector {
    model: Arc<DetectorModel>,
    filter: FilterState,
    step: usize,
    first_detection: Option<usize>,
    degraded: bool,
}

impl OnlineDetector {
    pub fn new(model: Arc<DetectorModel>) -> Self {
        let filter = model.hmm.new_filter();
        Self {
            model,
            filter,
            step: 0,
            first_detection: None,
            degraded: false,
        }
    }

    pub fn model(&self) -> &DetectorModel {
        &self.model
    }

    pub fn first_detection(&self) -> Option<usize> {
        self.first_detection
    }

    pub fn flagged(&self) -> bool {
        self.first_detection.is_some()
    }

    /// True after a malformed observation; the session no longer scores.
    pub fn degraded(&self) -> bool {
        self.degraded
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Clears the latch and starts a fresh observation stream.
    pub fn reset(&mut self) {
        self.filter = self.model.hmm.new_filter();
        self.step = 0;
        self.first_detection = None;
        self.degraded = false;
    }

    pub fn push(&mut self, observation: &[f64]) -> Result<OnlineStep> {
        if self.degraded {
            return Err(invalid("detector session is degraded; reset before scoring again"));
        }
        let features = match self.model.hmm.forward_step(&mut self.filter, observation) {
            Ok(f) => f,
            Err(e) => {
                self.degraded = true;
                return Err(e);
            }
        };
        let score = self.model.step_score(&features);
        let step = self.step;
        self.step += 1;
        let alarm = self.first_detection.is_none() && score > 0.0;
        if alarm {
            self.first_detection = Some(step);
        }
        Ok(OnlineStep {
            step,
            features,
            score,
            flagged: self.first_detection.is_some(),
            alarm,
        })
    }
}

/// Runs a detector over an observation stream. Emits one event per
/// observation; a malformed observation yields an error event and ends the
/// stream.
pub fn detect_online<I>(model: Arc<DetectorModel>, stream: I) -> impl Iterator<Item = OnlineEvent>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut detector = OnlineDetector::new(model);
    let mut stream = stream.into_iter();
    std::iter::from_fn(move || {
        if detector.degraded() {
            return None;
        }
        let obs = stream.next()?;
        Some(match detector.push(&obs) {
            Ok(step) => OnlineEvent::Step(step),
            Err(e) => OnlineEvent::Error {
                step: detector.steps(),
                message: e.to_string(),
            },
        })
    })
}
