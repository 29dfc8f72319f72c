use feedmon_core::hmm::{fit, HmmModel, TrainConfig, MODEL_FORMAT_VERSION};
use feedmon_core::reference::path_enumeration_log_likelihood;
use feedmon_core::signal::{Label, MultimodalSequence, Simulator, Task};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn sequence(samples: Vec<Vec<f64>>) -> MultimodalSequence {
    let d = samples[0].len();
    MultimodalSequence {
        task: Task::Scooping,
        sample_rate_hz: 10.0,
        channels: (0..d).map(|i| format!("c{i}")).collect(),
        samples,
        label: Label::Nominal,
        anomaly_onset: None,
        anomaly_kind: None,
        seed: 0,
    }
}

/// Random left-to-right model with `k` states over `d` channels.
fn random_model(k: usize, d: usize, rng: &mut ChaCha8Rng) -> HmmModel {
    let mut initial: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= s);
    let transition = (0..k)
        .map(|i| {
            let mut row = vec![0.0; k];
            if i + 1 < k {
                let stay = rng.random_range(0.1..0.9);
                row[i] = stay;
                row[i + 1] = 1.0 - stay;
            } else {
                row[i] = 1.0;
            }
            row
        })
        .collect();
    HmmModel {
        format_version: MODEL_FORMAT_VERSION,
        n_states: k,
        channels: (0..d).map(|i| format!("c{i}")).collect(),
        initial_dist: initial,
        transition,
        emission_means: (0..k).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
        emission_vars: (0..k).map(|_| (0..d).map(|_| rng.random_range(0.3..2.0)).collect()).collect(),
        variance_floor: 1e-4,
        channel_means: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        channel_stds: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_filter_matches_path_enumeration(seed in any::<u64>(), k in 1usize..=3, t in 1usize..=6, d in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(k, d, &mut rng);
        m.validate().unwrap();
        let obs: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let features = m.featurize(&obs).unwrap();
        let expected = path_enumeration_log_likelihood(&m, &obs);
        let got = features.last().unwrap().cumulative_log_likelihood;
        prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1e-300), "{} vs {}", got, expected);
        for (i, f) in features.iter().enumerate() {
            prop_assert!((f.progress.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(f.progress.iter().all(|p| *p >= 0.0));
            prop_assert!((f.log_likelihood * (i + 1) as f64 - f.cumulative_log_likelihood).abs() < 1e-9 * f.cumulative_log_likelihood.abs().max(1.0));
        }
    }

    #[test]
    fn joint_rescaling_leaves_features_unchanged(seed in any::<u64>(), pow in -4i32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(3, 2, &mut rng);
        let obs: Vec<Vec<f64>> = (0..8).map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let scale = 2f64.powi(pow);
        let mut scaled = m.clone();
        scaled.channel_means.iter_mut().for_each(|v| *v *= scale);
        scaled.channel_stds.iter_mut().for_each(|v| *v *= scale);
        let scaled_obs: Vec<Vec<f64>> = obs.iter().map(|o| o.iter().map(|v| v * scale).collect()).collect();
        prop_assert_eq!(m.featurize(&obs).unwrap(), scaled.featurize(&scaled_obs).unwrap());
    }
}

#[test]
fn two_state_fit_recovers_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let seqs: Vec<MultimodalSequence> = (0..10)
        .map(|_| {
            sequence(
                (0..60)
                    .map(|t| vec![if t < 30 { 0.0 } else { 5.0 } + unit.sample(&mut rng)])
                    .collect(),
            )
        })
        .collect();
    let cfg = TrainConfig {
        n_states: 2,
        ..TrainConfig::default()
    };
    let report = fit(&seqs, &cfg).unwrap();
    let means = report.model.destandardized_means();
    assert!((means[0][0] - 0.0).abs() < 0.3, "state 0 mean {}", means[0][0]);
    assert!((means[1][0] - 5.0).abs() < 0.3, "state 1 mean {}", means[1][0]);
}

#[test]
fn em_never_decreases_the_likelihood_and_keeps_structure() {
    let sim = Simulator::default();
    for seed in 0..3 {
        let seqs = sim.generate_corpus(Task::Feeding, 20, 0, seed).unwrap();
        let report = fit(&seqs, &TrainConfig::default()).unwrap();
        assert!(report.loglik_trace.len() >= 2);
        for w in report.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {} -> {}", w[0], w[1]);
        }
        let m = &report.model;
        m.validate().unwrap();
        for (i, row) in m.transition.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                if j < i || j > i + 1 {
                    assert_eq!(*p, 0.0);
                }
            }
        }
    }
}

#[test]
fn batch_features_equal_streaming_features() {
    let sim = Simulator::default();
    let seqs = sim.generate_corpus(Task::Scooping, 6, 2, 1).unwrap();
    let nominal: Vec<_> = seqs.iter().filter(|s| s.label == Label::Nominal).cloned().collect();
    let m = fit(&nominal, &TrainConfig::default()).unwrap().model;
    for s in &seqs {
        let batch = m.featurize_sequence(s).unwrap();
        let mut filter = m.new_filter();
        for (t, o) in s.samples.iter().enumerate() {
            assert_eq!(m.forward_step(&mut filter, o).unwrap(), batch[t]);
        }
        assert_eq!(m.featurize_sequence(s).unwrap(), batch);
    }
    let one = sequence(vec![nominal[0].samples[0].clone()]);
    let mut one = one;
    one.channels = m.channels.clone();
    assert_eq!(m.featurize_sequence(&one).unwrap().len(), 1);
}

#[test]
fn progress_follows_a_walk_through_the_state_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut m = random_model(5, 1, &mut rng);
    m.initial_dist = vec![1.0, 0.0, 0.0, 0.0, 0.0];
    m.channel_means = vec![0.0];
    m.channel_stds = vec![1.0];
    m.emission_means = (0..5).map(|k| vec![k as f64 * 3.0]).collect();
    m.emission_vars = vec![vec![1e-3]; 5];
    // two steps in each state
    let obs: Vec<Vec<f64>> = (0..10).map(|t| m.emission_means[t / 2].clone()).collect();
    for (t, f) in m.featurize(&obs).unwrap().iter().enumerate() {
        assert!(f.progress[t / 2] > 0.99, "step {t}: {:?}", f.progress);
    }
}
