use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use feedmon_core::detector::{evaluate_roc, split_by_label, train_detector, DetectorModel};
use feedmon_core::fsm::{run_session, Cue, FsmDefinition, SimulatedMotions, Trigger};
use feedmon_core::records::{RecordStore, RECORDS_FILE};
use feedmon_core::signal::wire::{corpus_to_string, parse_corpus};
use feedmon_core::signal::{MultimodalSequence, Simulator};
use serde::Serialize;

use crate::error::{read, write, CliError};
use crate::manifest::{EvaluateArgs, Invocation, RunArgs, SimulateArgs, TrainArgs};

/// What a command produced.
#[derive(Debug, Default)]
pub struct Executed {
    pub outputs: Vec<PathBuf>,
    /// Lines for stdout.
    pub report: Vec<String>,
    /// Convergence warnings.
    pub warnings: Vec<String>,
}

pub fn execute(inv: &Invocation) -> Result<Executed, CliError> {
    match inv {
        Invocation::Simulate(a) => simulate(a),
        Invocation::Train(a) => train(a),
        Invocation::Evaluate(a) => evaluate(a),
        Invocation::Run(a) => run(a),
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<MultimodalSequence>, CliError> {
    parse_corpus(&read(path)?).map_err(|e| CliError::core(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn simulate(a: &SimulateArgs) -> Result<Executed, CliError> {
    let sim = Simulator::new(a.simulator.clone());
    let corpus = sim.generate_corpus(a.task, a.n_nominal, a.n_anomalous, a.seed)?;
    write(&a.out, corpus_to_string(&corpus))?;
    Ok(Executed {
        outputs: vec![a.out.clone()],
        report: vec![format!(
            "wrote {} {} sequences ({} nominal, {} anomalous) to {}",
            corpus.len(),
            a.task,
            a.n_nominal,
            a.n_anomalous,
            a.out.display()
        )],
        warnings: Vec::new(),
    })
}

fn train(a: &TrainArgs) -> Result<Executed, CliError> {
    let corpus = load_corpus(&a.corpus)?;
    let (nominal, anomalous) = split_by_label(&corpus);
    let (model, summary) =
        train_detector(&nominal, &anomalous, a.method, &a.detector, a.seed).map_err(|e| CliError::core(&a.corpus, e))?;
    write(&a.out, model.to_json())?;

    let trace = &summary.loglik_trace;
    let mut report = vec![format!(
        "EM: {} iterations, log-likelihood {:.3} -> {:.3}, converged: {}",
        trace.len(),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN),
        summary.hmm_converged
    )];
    if !summary.dropped_outliers.is_empty() {
        report.push(format!("dropped {} outlier sequences: {:?}", summary.dropped_outliers.len(), summary.dropped_outliers));
    }
    if let Some(sv) = summary.svm_support_vectors {
        report.push(format!("SVM: {sv} support vectors, converged: {}", summary.svm_converged.unwrap_or(true)));
    }
    report.push(format!("wrote {} model to {}", a.method, a.out.display()));
    let mut warnings = Vec::new();
    if !summary.hmm_converged {
        warnings.push("EM stopped at max_iterations before converging".to_string());
    }
    if summary.svm_converged == Some(false) {
        warnings.push("SVM solver stopped at max_passes before meeting the KKT tolerance".to_string());
    }
    Ok(Executed {
        outputs: vec![a.out.clone()],
        report,
        warnings,
    })
}

/// Summary file written next to an ROC table.
pub fn summary_path(table: &Path) -> PathBuf {
    table.with_extension("summary.json")
}

#[derive(Serialize)]
struct RocSummary<'a> {
    method: feedmon_core::detector::Method,
    auc: f64,
    folds: usize,
    per_fold_auc: &'a [f64],
    unconverged_fits: usize,
    n_sequences: usize,
}

fn evaluate(a: &EvaluateArgs) -> Result<Executed, CliError> {
    let corpus = load_corpus(&a.corpus)?;
    let roc = evaluate_roc(&corpus, a.method, a.k_folds, &a.sweep, &a.detector, a.seed)
        .map_err(|e| CliError::core(&a.corpus, e))?;
    let summary_file = summary_path(&a.out);
    write(&a.out, roc.to_table())?;
    write(
        &summary_file,
        to_json(&RocSummary {
            method: roc.method,
            auc: roc.auc,
            folds: roc.folds,
            per_fold_auc: &roc.per_fold_auc,
            unconverged_fits: roc.unconverged_fits,
            n_sequences: corpus.len(),
        }),
    )?;
    let mut warnings = Vec::new();
    if roc.unconverged_fits > 0 {
        warnings.push(format!("{} fits stopped at their iteration cap", roc.unconverged_fits));
    }
    Ok(Executed {
        outputs: vec![a.out.clone(), summary_file],
        report: vec![
            format!("{} {}-fold AUC {:.4}", roc.method, roc.folds, roc.auc),
            format!("wrote {} ROC points to {}", roc.points.len(), a.out.display()),
        ],
        warnings,
    })
}

#[derive(Debug, Serialize)]
struct RunRow {
    session_id: String,
    injected: Option<feedmon_core::records::InjectedFault>,
    first_detection_step: Option<usize>,
    final_state: feedmon_core::fsm::FsmState,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    sessions: usize,
    anomalous: usize,
    detected_anomalous: usize,
    false_alarms: usize,
    runs: Vec<RunRow>,
}

/// Spreads `k` marked items evenly over `n`.
fn is_marked(i: usize, k: usize, n: usize) -> bool {
    (i + 1) * k / n > i * k / n
}

fn run(a: &RunArgs) -> Result<Executed, CliError> {
    if a.anomalous > a.sessions {
        return Err(CliError::Validation("more anomalous sessions than sessions".into()));
    }
    let mut detectors = BTreeMap::new();
    if let Some(path) = &a.model {
        let model = DetectorModel::from_json(&read(path)?).map_err(|e| CliError::core(path, e))?;
        detectors.insert(a.task, Arc::new(model));
    }
    let sim = Simulator::new(a.simulator.clone());
    let def = Arc::new(FsmDefinition::builtin());
    let records_path = a.out.join(RECORDS_FILE);
    if records_path.exists() {
        std::fs::remove_file(&records_path).map_err(|e| CliError::io(&records_path, e))?;
    }
    let store = RecordStore::open(&a.out).map_err(|e| CliError::core(&a.out, e))?;

    let mut rows = Vec::with_capacity(a.sessions);
    for i in 0..a.sessions {
        let session_seed = a.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut motions = SimulatedMotions::new(sim.clone(), session_seed);
        let anomalous = a.anomalous > 0 && is_marked(i, a.anomalous, a.sessions);
        if anomalous {
            motions.inject_next(sim.sample_injection(a.task, !session_seed));
        }
        // the scripted operator labels by ground truth
        let label = if anomalous { Trigger::FeedbackFailure } else { Trigger::FeedbackSuccess };
        let out = run_session(
            &format!("run{i}"),
            Arc::clone(&def),
            a.runtime,
            Box::new(motions),
            detectors.clone(),
            [Cue::ready(Trigger::start(a.task)), Cue::ready(label)],
        )
        .map_err(|e| CliError::Validation(format!("session {i}: {e}")))?;
        for r in &out.records {
            store.append(r).map_err(|e| CliError::core(&records_path, e))?;
        }
        let rec = out.records.last();
        rows.push(RunRow {
            session_id: out.state.session_id.clone(),
            injected: rec.and_then(|r| r.injected),
            first_detection_step: rec.and_then(|r| r.first_detection_step),
            final_state: out.state.current_state,
        });
    }
    let summary = RunSummary {
        sessions: a.sessions,
        anomalous: a.anomalous,
        detected_anomalous: rows.iter().filter(|r| r.injected.is_some() && r.first_detection_step.is_some()).count(),
        false_alarms: rows.iter().filter(|r| r.injected.is_none() && r.first_detection_step.is_some()).count(),
        runs: rows,
    };
    let summary_file = a.out.join("summary.json");
    write(&summary_file, to_json(&summary))?;
    let mut report = vec![format!("ran {} {} sessions into {}", a.sessions, a.task, a.out.display())];
    if a.model.is_some() {
        report.push(format!(
            "detected {}/{} anomalous sessions, {} false alarms",
            summary.detected_anomalous, summary.anomalous, summary.false_alarms
        ));
    }
    Ok(Executed {
        outputs: vec![records_path, summary_file],
        report,
        warnings: Vec::new(),
    })
}
