//! Browser demo over `feedmon-core`. Every call returns a JSON string; the
//! page in `www/` parses it and draws on canvases.

use feedmon_core::detector::{evaluate_roc, split_by_label, train_detector, DetectorConfig, DetectorModel, Method};
use feedmon_core::hmm::TrainConfig;
use feedmon_core::signal::{AnomalyInjection, AnomalyKind, MultimodalSequence, Simulator, Task};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Smaller than the service defaults so that training stays interactive.
fn demo_config() -> DetectorConfig {
    DetectorConfig {
        hmm: TrainConfig {
            n_states: 10,
            max_iterations: 40,
            ..TrainConfig::default()
        },
        ..DetectorConfig::default()
    }
}

#[derive(Serialize)]
struct Trace<'a> {
    task: Task,
    channels: &'a [String],
    /// One array per channel.
    series: Vec<Vec<f64>>,
    onset: Option<usize>,
    kind: Option<AnomalyKind>,
}

#[derive(Serialize)]
struct Scores {
    method: Method,
    scores: Vec<f64>,
    first_detection: Option<usize>,
    flagged: bool,
}

#[derive(Serialize)]
struct Curve {
    method: Method,
    auc: f64,
    fpr: Vec<f64>,
    tpr: Vec<f64>,
}

fn fail(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[wasm_bindgen]
pub struct Demo {
    sim: Simulator,
    task: Task,
    trace: Option<MultimodalSequence>,
    model: Option<DetectorModel>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(task: &str) -> Result<Demo, JsError> {
        Ok(Demo {
            sim: Simulator::default(),
            task: task.parse().map_err(fail)?,
            trace: None,
            model: None,
        })
    }

    /// Fault kinds the current task can suffer, as a JSON array.
    pub fn fault_kinds(&self) -> String {
        json(&self.task.anomaly_kinds())
    }

    /// Simulates one motion; `fault` is empty for a nominal one.
    pub fn simulate(&mut self, fault: &str, onset_phase: f64, magnitude: f64, seed: u64) -> Result<String, JsError> {
        let nominal = self
            .sim
            .generate_nominal(self.task, self.sim.default_duration(self.task), seed)
            .map_err(fail)?;
        let seq = if fault.is_empty() {
            nominal
        } else {
            let inj = AnomalyInjection {
                kind: fault.parse().map_err(fail)?,
                onset_phase,
                magnitude,
            };
            self.sim.inject_anomaly(&nominal, &inj, seed ^ 0x5eed).map_err(fail)?
        };
        let out = json(&Trace {
            task: seq.task,
            channels: &seq.channels,
            series: (0..seq.n_channels()).map(|c| seq.channel(c).collect()).collect(),
            onset: seq.anomaly_onset,
            kind: seq.anomaly_kind,
        });
        self.trace = Some(seq);
        Ok(out)
    }

    /// Trains a detector on a fresh simulated corpus and returns a short
    /// summary.
    pub fn train(&mut self, method: &str, n_nominal: usize, n_anomalous: usize, seed: u64) -> Result<String, JsError> {
        let method: Method = method.parse().map_err(fail)?;
        let corpus = self.sim.generate_corpus(self.task, n_nominal, n_anomalous, seed).map_err(fail)?;
        let (nominal, anomalous) = split_by_label(&corpus);
        let (model, summary) = train_detector(&nominal, &anomalous, method, &demo_config(), seed).map_err(fail)?;
        self.model = Some(model);
        Ok(json(&serde_json::json!({
            "method": method,
            "em_iterations": summary.loglik_trace.len(),
            "converged": summary.hmm_converged,
            "support_vectors": summary.svm_support_vectors,
        })))
    }

    /// Per-step scores of the current trace under the trained detector.
    /// Positive scores flag the step.
    pub fn score(&self) -> Result<String, JsError> {
        let model = self.model.as_ref().ok_or_else(|| JsError::new("train a detector first"))?;
        let trace = self.trace.as_ref().ok_or_else(|| JsError::new("simulate a motion first"))?;
        let d = model.score_sequence(trace).map_err(fail)?;
        Ok(json(&Scores {
            method: model.method(),
            scores: d.per_step_scores,
            first_detection: d.first_detection_step,
            flagged: d.flagged,
        }))
    }

    /// Two-fold ROC curves of all three detectors on one small corpus.
    pub fn roc(&self, n_nominal: usize, n_anomalous: usize, seed: u64) -> Result<String, JsError> {
        let corpus = self.sim.generate_corpus(self.task, n_nominal, n_anomalous, seed).map_err(fail)?;
        let cfg = demo_config();
        let curves = Method::ALL
            .iter()
            .map(|&m| {
                let r = evaluate_roc(&corpus, m, 2, &m.default_sweep(), &cfg, seed)?;
                Ok(Curve {
                    method: m,
                    auc: r.auc,
                    fpr: r.points.iter().map(|p| p.false_positive_rate).collect(),
                    tpr: r.points.iter().map(|p| p.true_positive_rate).collect(),
                })
            })
            .collect::<feedmon_core::error::Result<Vec<_>>>()
            .map_err(fail)?;
        Ok(json(&curves))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn simulate_train_score_round_trip() {
        let mut demo = Demo::new("feeding").ok().unwrap();
        let kinds: Vec<String> = serde_json::from_str(&demo.fault_kinds()).unwrap();
        let t: Value = serde_json::from_str(&demo.simulate(&kinds[0], 0.5, 1.5, 3).ok().unwrap()).unwrap();
        let n = t["series"][0].as_array().unwrap().len();
        assert_eq!(t["series"].as_array().unwrap().len(), t["channels"].as_array().unwrap().len());
        assert!(t["onset"].as_u64().unwrap() < n as u64);

        demo.train("hmm-svm", 12, 10, 1).ok().unwrap();
        let s: Value = serde_json::from_str(&demo.score().ok().unwrap()).unwrap();
        assert_eq!(s["scores"].as_array().unwrap().len(), n);
    }

    #[test]
    fn roc_has_one_curve_per_method() {
        let demo = Demo::new("scooping").ok().unwrap();
        let curves: Vec<Value> = serde_json::from_str(&demo.roc(8, 8, 2).ok().unwrap()).unwrap();
        assert_eq!(curves.len(), 3);
        for c in curves {
            let auc = c["auc"].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&auc));
            assert_eq!(c["fpr"].as_array().unwrap().len(), c["tpr"].as_array().unwrap().len());
        }
    }
}
