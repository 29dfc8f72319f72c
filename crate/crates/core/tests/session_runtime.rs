use std::collections::BTreeMap;
use std::sync::Arc;

use feedmon_core::detector::{split_by_label, train_detector, DetectorConfig, Method};
use feedmon_core::fsm::{replay, run_session, At, Cue, FsmDefinition, FsmState, RuntimeConfig, ScriptEvent, SimulatedMotions, Trigger};
use feedmon_core::records::{Outcome, RecordFilter, RecordStore};
use feedmon_core::signal::{AnomalyInjection, AnomalyKind, Label, Simulator, Task};

#[test]
fn injected_push_is_caught_and_labeled() {
    let sim = Simulator::default();
    let corpus = sim.generate_corpus(Task::Scooping, 30, 30, 21).unwrap();
    let (nominal, anomalous) = split_by_label(&corpus);
    let (model, _) = train_detector(&nominal, &anomalous, Method::HmmSvm, &DetectorConfig::default(), 0).unwrap();
    let detectors = BTreeMap::from([(Task::Scooping, Arc::new(model))]);

    let mut motions = SimulatedMotions::new(sim.clone(), 3);
    motions.inject_next(AnomalyInjection {
        kind: AnomalyKind::ForcePush,
        onset_phase: 0.5,
        magnitude: 4.0,
    });
    let def = Arc::new(FsmDefinition::builtin());
    let out = run_session(
        "push",
        Arc::clone(&def),
        RuntimeConfig::default(),
        Box::new(motions),
        detectors,
        [Cue::ready(Trigger::StartScooping), Cue::ready(Trigger::FeedbackFailure)],
    )
    .unwrap();

    let h = &out.state.history;
    assert!(h.iter().any(|e| e.trigger == Trigger::Anomalous && e.from == FsmState::Scooping));
    assert_eq!(replay(&def, h).unwrap(), FsmState::Idle);
    assert_eq!(out.records.len(), 1);
    let rec = &out.records[0];
    let onset = rec.injected.unwrap().onset;
    let detected = rec.first_detection_step.unwrap();
    assert!(detected >= onset, "detected at {detected}, onset {onset}");
    // the stored sequence stops where the arm retracted
    assert_eq!(rec.sequence.as_ref().unwrap().len(), detected + 1);

    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::open(dir.path()).unwrap();
    store.append(rec).unwrap();
    let corpus = store.export_corpus(&RecordFilter::default()).unwrap();
    assert_eq!(corpus[0].label, Label::Anomalous);
    assert_eq!(corpus[0].anomaly_onset, Some(onset));
    assert_eq!(store.list(&RecordFilter { label: Some(Outcome::Failure), ..Default::default() }).unwrap().len(), 1);
}

#[test]
fn stop_mid_feeding_then_resume_returns_to_mouth_estimation() {
    let def = Arc::new(FsmDefinition::builtin());
    let out = run_session(
        "stop",
        def,
        RuntimeConfig::default(),
        Box::new(SimulatedMotions::new(Simulator::default(), 8)),
        BTreeMap::new(),
        [
            Cue::ready(Trigger::StartFeeding),
            Cue::at_step(20, Trigger::Stop),
            // repeated stop while retracting is accepted and changes nothing
            Cue {
                at: At::Now,
                event: ScriptEvent::Trigger(Trigger::Stop),
            },
            Cue::ready(Trigger::Resume),
            Cue {
                at: At::MotionStep(5),
                event: ScriptEvent::Close,
            },
        ],
    )
    .unwrap();
    let path: Vec<(Trigger, FsmState)> = out.state.history.iter().map(|h| (h.trigger, h.to)).collect();
    assert_eq!(
        path,
        [
            (Trigger::StartFeeding, FsmState::MouthLocationEstimation),
            (Trigger::MotionComplete, FsmState::Feeding),
            (Trigger::Stop, FsmState::CorrectiveAction),
            (Trigger::Stop, FsmState::CorrectiveAction),
            (Trigger::MotionComplete, FsmState::Halted),
            (Trigger::Resume, FsmState::MouthLocationEstimation),
            (Trigger::MotionComplete, FsmState::Feeding),
            (Trigger::Stop, FsmState::CorrectiveAction),
            (Trigger::MotionComplete, FsmState::Halted),
        ]
    );
    assert_eq!(out.records.len(), 1);
    assert!(!out.records[0].complete);
}
