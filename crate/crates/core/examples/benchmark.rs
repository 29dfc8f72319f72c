//! Cross-validated AUC of the three detectors on the synthetic benchmark
//! corpora, plus detection latency of the default HMM-SVM detector.
//!
//! cargo run --release -p feedmon-core --example benchmark [seeds] [simulator.toml]

use std::time::Instant;

use feedmon_core::detector::{evaluate_roc, split_by_label, train_detector, DetectorConfig, Method};
use feedmon_core::signal::{AnomalyInjection, SimConfig, Simulator, Task};
use rand::{Rng, SeedableRng};

fn main() -> feedmon_core::error::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed count"));
    let sim = match std::env::args().nth(2) {
        Some(path) => Simulator::new(SimConfig::from_toml_str(&std::fs::read_to_string(path)?)?),
        None => Simulator::default(),
    };
    let cfg = DetectorConfig::default();
    let start = Instant::now();
    for (task, n_nom, n_anom) in [(Task::Scooping, 72, 86), (Task::Feeding, 53, 39)] {
        for seed in 0..seeds {
            let corpus = sim.generate_corpus(task, n_nom, n_anom, seed)?;
            let mut line = format!("{task:<9} seed {seed}");
            for method in Method::ALL {
                let t = Instant::now();
                let roc = evaluate_roc(&corpus, method, 4, &method.default_sweep(), &cfg, seed)?;
                line += &format!("  {method}={:.3} ({:.1}s)", roc.auc, t.elapsed().as_secs_f64());
            }
            println!("{line}");
        }
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());

    for task in [Task::Scooping, Task::Feeding] {
        let corpus = sim.generate_corpus(task, 72, 86, 100)?;
        let (nominal, anomalous) = split_by_label(&corpus);
        let (model, _) = train_detector(&nominal, &anomalous, Method::HmmSvm, &cfg, 100)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut delays = Vec::new();
        let mut clean_prefix = 0;
        let [lo, hi] = sim.config().anomaly.onset_range;
        for _ in 0..50 {
            let base = sim.generate_nominal(task, sim.default_duration(task), rng.random())?;
            let kinds = task.anomaly_kinds();
            let inj = AnomalyInjection {
                kind: kinds[rng.random_range(0..kinds.len())],
                onset_phase: rng.random_range(lo..hi),
                magnitude: sim.config().anomaly.default_magnitude,
            };
            let seq = sim.inject_anomaly(&base, &inj, rng.random())?;
            let onset = seq.anomaly_onset.unwrap();
            let d = model.score_sequence(&seq)?;
            if d.first_detection_step.is_none_or(|f| f >= onset) {
                clean_prefix += 1;
            }
            // a miss counts as an unbounded delay
            delays.push(d.first_detection_step.map_or(f64::INFINITY, |f| f as f64 - onset as f64));
        }
        delays.sort_by(f64::total_cmp);
        let missed = delays.iter().filter(|d| d.is_infinite()).count();
        let median = 0.5 * (delays[24] + delays[25]);
        println!("{task:<9} median delay {median} missed {missed} clean prefix {clean_prefix}/50");
    }
    Ok(())
}
