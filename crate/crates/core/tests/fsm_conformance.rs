use std::collections::BTreeMap;
use std::sync::Arc;

use feedmon_core::error::Error;
use feedmon_core::fsm::{
    replay, run_session, Action, Cue, FrameKind, FsmDefinition, FsmState, RuntimeConfig, SessionState,
    SimulatedMotions, Trigger,
};
use feedmon_core::signal::{Simulator, Task};
use proptest::prelude::*;

/// The shipped table read straight from the TOML text, without the typed loader.
fn raw_table() -> BTreeMap<(String, String), String> {
    let doc: toml::Table = FsmDefinition::builtin_toml().parse().unwrap();
    doc["transition"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            let get = |k: &str| t[k].as_str().unwrap().to_string();
            ((get("from"), get("trigger")), get("to"))
        })
        .collect()
}

#[test]
fn dispatch_matches_the_shipped_table_for_every_pair() {
    let def = FsmDefinition::builtin();
    let table = raw_table();
    for state in FsmState::ALL {
        for trigger in Trigger::ALL {
            let expected = table.get(&(state.as_str().to_string(), trigger.as_str().to_string()));
            for task in [Task::Scooping, Task::Feeding] {
                let mut s = SessionState::new("x", &def);
                s.current_state = state;
                s.task = Some(task);
                let got = s.dispatch(&def, trigger, 1);
                match expected {
                    None => {
                        assert!(matches!(got, Err(Error::RejectedTrigger { .. })), "{state} {trigger}");
                        assert_eq!(s.current_state, state);
                        assert!(s.history.is_empty());
                    }
                    Some(to) if to == "@resume" => {
                        got.unwrap();
                        assert_eq!(s.current_state, FsmState::estimation_state(task));
                    }
                    Some(to) => {
                        got.unwrap();
                        assert_eq!(s.current_state.as_str(), to, "{state} {trigger}");
                    }
                }
            }
        }
    }
}

#[test]
fn motion_states_retract_on_stop_and_anomaly() {
    let def = FsmDefinition::builtin();
    for state in [FsmState::Scooping, FsmState::Feeding] {
        for trigger in [Trigger::Stop, Trigger::Anomalous] {
            let mut s = SessionState::new("x", &def);
            s.current_state = state;
            let actions = s.dispatch(&def, trigger, 1).unwrap();
            assert_eq!(s.current_state, FsmState::CorrectiveAction);
            assert!(actions.contains(&Action::RetractArm));
        }
    }
    for state in FsmState::ALL {
        if state != FsmState::Halted {
            assert!(!def.accepted(state).is_empty(), "{state} has no way out");
        }
    }
}

#[test]
fn yp_and_yn_are_only_accepted_while_waiting_for_feedback() {
    let def = FsmDefinition::builtin();
    for state in FsmState::ALL {
        let waiting = matches!(state, FsmState::ScoopFeedbackWait | FsmState::FeedFeedbackWait);
        for t in [Trigger::Yp, Trigger::Yn] {
            assert_eq!(def.rule(state, t).is_some(), waiting, "{state} {t}");
        }
    }
}

#[test]
fn a_hundred_step_run_emits_a_hundred_motion_frames() {
    let def = Arc::new(FsmDefinition::builtin());
    let sim = Simulator::default();
    let out = run_session(
        "s",
        def,
        RuntimeConfig::default(),
        Box::new(SimulatedMotions::new(sim.clone(), 0)),
        BTreeMap::new(),
        [Cue::ready(Trigger::StartFeeding), Cue::ready(Trigger::FeedbackSuccess)],
    )
    .unwrap();
    let t = (sim.default_duration(Task::Feeding) * sim.config().task(Task::Feeding).sample_rate_hz).round() as usize;
    assert_eq!(out.frames.iter().filter(|f| f.kind == FrameKind::Motion).count(), t);
}

fn trigger_strategy() -> impl Strategy<Value = Trigger> {
    prop::sample::select(Trigger::ALL.to_vec())
}

proptest! {
    #[test]
    fn replay_reproduces_every_prefix(triggers in prop::collection::vec(trigger_strategy(), 0..60)) {
        let def = FsmDefinition::builtin();
        let mut s = SessionState::new("p", &def);
        for (i, t) in triggers.iter().enumerate() {
            let before = s.clone();
            if s.dispatch(&def, *t, i as u64 + 1).is_err() {
                prop_assert_eq!(&s, &before);
            }
            prop_assert_eq!(replay(&def, &s.history).unwrap(), s.current_state);
        }
        prop_assert!(s.history.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
    }

    #[test]
    fn tampered_history_is_caught_at_the_edit(
        triggers in prop::collection::vec(trigger_strategy(), 1..40),
        pick in any::<prop::sample::Index>(),
    ) {
        let def = FsmDefinition::builtin();
        let mut s = SessionState::new("p", &def);
        for (i, t) in triggers.iter().enumerate() {
            let _ = s.dispatch(&def, *t, i as u64 + 1);
        }
        prop_assume!(!s.history.is_empty());
        let idx = pick.index(s.history.len());
        let mut bad = s.history.clone();
        bad[idx].to = if bad[idx].to == FsmState::Halted { FsmState::Idle } else { FsmState::Halted };
        match replay(&def, &bad) {
            Err(Error::ReplayMismatch { index, .. }) => prop_assert_eq!(index, idx),
            other => prop_assert!(false, "expected mismatch, got {:?}", other),
        }
    }
}
