//! Stratified k-fold ROC evaluation.
//!
//! For every fold the HMM is fit on the training folds' nominal sequences;
//! each sweep value then yields a detector whose sequence-level decisions on
//! the held-out fold are pooled into one (FPR, TPR) point.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hmm::{self, HmmFeatures};
use crate::signal::{Label, MultimodalSequence};
use crate::svm::{PreparedProblem, SvmConfig};

use super::{
    dynamic_params, feature_vector, fixed_params, svm_training_set, DetectorConfig, DetectorModel, DetectorParams, Method,
    MODEL_FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
    pub sweep_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub method: Method,
    /// Sorted by false positive rate, then true positive rate.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub folds: usize,
    pub per_fold_auc: Vec<f64>,
    /// EM fits and SVM solves that stopped at their iteration cap.
    pub unconverged_fits: usize,
}

impl RocResult {
    /// CSV table, one row per sweep value.
    pub fn to_table(&self) -> String {
        let mut out = String::from("sweep_value,fpr,tpr\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.sweep_value, p.false_positive_rate, p.true_positive_rate).unwrap();
        }
        out
    }
}

/// Area under the monotone upper envelope of the given (FPR, TPR) points,
/// anchored at (0, 0) and (1, 1), by the trapezoid rule.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    // highest TPR first within an FPR so the envelope jumps before it spans
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    let mut prev = (0.0, 0.0);
    let mut best_tpr: f64 = 0.0;
    for (fpr, tpr) in pts {
        best_tpr = best_tpr.max(tpr);
        area += (fpr - prev.0) * (best_tpr + prev.1) / 2.0;
        prev = (fpr, best_tpr);
    }
    area
}

/// Assigns each item to one of `k` folds, stratified by label so that every
/// fold's class counts are within one of the global proportion.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid(format!("k_folds must be >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut offset = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|i| labels[*i] == class).collect();
        idx.shuffle(&mut rng);
        for (n, i) in idx.iter().enumerate() {
            folds[*i] = (offset + n) % k;
        }
        offset += idx.len();
    }
    for f in 0..k {
        for (class, name) in [(false, "nominal"), (true, "anomalous")] {
            if !labels.iter().zip(&folds).any(|(l, g)| *l == class && *g == f) {
                return Err(invalid(format!("fold {f} has no {name} sequences after stratification")));
            }
        }
    }
    Ok(folds)
}

/// Flag counts for one fold at every sweep value.
struct FoldOutcome {
    /// (flagged nominal, flagged anomalous) per sweep value.
    flagged: Vec<(usize, usize)>,
    n_nominal: usize,
    n_anomalous: usize,
    unconverged: usize,
}

fn evaluate_fold(
    corpus: &[MultimodalSequence],
    folds: &[usize],
    fold: usize,
    method: Method,
    sweep: &[f64],
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<FoldOutcome> {
    let train: Vec<&MultimodalSequence> = corpus.iter().zip(folds).filter(|(_, f)| **f != fold).map(|(s, _)| s).collect();
    let test: Vec<&MultimodalSequence> = corpus.iter().zip(folds).filter(|(_, f)| **f == fold).map(|(s, _)| s).collect();
    let train_nominal: Vec<MultimodalSequence> =
        train.iter().filter(|s| s.label == Label::Nominal).map(|s| (*s).clone()).collect();

    let report = hmm::fit(&train_nominal, &cfg.hmm)?;
    let mut unconverged = usize::from(!report.converged);
    let hmm = report.model;
    let featurize = |seqs: &[&MultimodalSequence]| -> Result<Vec<Vec<HmmFeatures>>> {
        seqs.iter().map(|s| hmm.featurize_sequence(s)).collect()
    };
    let train_features = featurize(&train)?;
    let test_features = featurize(&test)?;
    let nominal_features: Vec<Vec<HmmFeatures>> = train
        .iter()
        .zip(&train_features)
        .filter(|(s, _)| s.label == Label::Nominal)
        .map(|(_, f)| f.clone())
        .collect();

    let fold_seed = seed.wrapping_add(fold as u64);
    let wrap = |params: DetectorParams| DetectorModel {
        format_version: MODEL_FORMAT_VERSION,
        hmm: hmm.clone(),
        params,
    };
    let count = |model: &DetectorModel| -> (usize, usize) {
        let mut flagged = (0, 0);
        for (seq, feats) in test.iter().zip(&test_features) {
            if model.first_flag(feats).is_some() {
                match seq.label {
                    Label::Nominal => flagged.0 += 1,
                    Label::Anomalous => flagged.1 += 1,
                }
            }
        }
        flagged
    };

    let flagged = match method {
        Method::HmmSvm => {
            let data = svm_training_set(
                train.iter().copied().zip(train_features.iter().map(Vec::as_slice)),
                cfg.stride,
            );
            let problem = PreparedProblem::new(&data, cfg.svm.gamma, fold_seed)?;
            let queries: Vec<Vec<f64>> = test_features.iter().flatten().map(feature_vector).collect();
            let cross = problem.cross_kernel(&queries.iter().map(Vec::as_slice).collect::<Vec<_>>());
            drop(queries);
            let mut offsets = Vec::with_capacity(test.len());
            let mut start = 0;
            for f in &test_features {
                offsets.push(start..start + f.len());
                start += f.len();
            }
            // ascending class weights so each solve can start from the last
            let mut order: Vec<usize> = (0..sweep.len()).collect();
            order.sort_by(|a, b| sweep[*a].total_cmp(&sweep[*b]));
            let mut flagged = vec![(0, 0); sweep.len()];
            let mut last = None;
            for i in order {
                let svm_cfg = SvmConfig {
                    w_pos: sweep[i],
                    ..cfg.svm.clone()
                };
                let (_, sol) = problem.solve_from(&svm_cfg, last.as_ref())?;
                unconverged += usize::from(!sol.converged);
                let expansion = problem.expansion(&sol);
                for (seq, range) in test.iter().zip(&offsets) {
                    if range.clone().any(|q| cross.margin(q, &expansion) > 0.0) {
                        match seq.label {
                            Label::Nominal => flagged[i].0 += 1,
                            Label::Anomalous => flagged[i].1 += 1,
                        }
                    }
                }
                last = Some(sol);
            }
            flagged
        }
        Method::FixedThreshold | Method::DynamicThreshold => {
            let base = wrap(if method == Method::FixedThreshold {
                fixed_params(&nominal_features, 0.0)
            } else {
                dynamic_params(&nominal_features, cfg.clusters, 0.0, fold_seed)
            });
            sweep
                .iter()
                .map(|c| Ok(count(&base.with_threshold_c(*c)?)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(FoldOutcome {
        flagged,
        n_nominal: test.iter().filter(|s| s.label == Label::Nominal).count(),
        n_anomalous: test.iter().filter(|s| s.label == Label::Anomalous).count(),
        unconverged,
    })
}

fn to_points(sweep: &[f64], flagged: &[(usize, usize)], n_nominal: usize, n_anomalous: usize) -> Vec<RocPoint> {
    let mut points: Vec<RocPoint> = sweep
        .iter()
        .zip(flagged)
        .map(|(v, (fp, tp))| RocPoint {
            false_positive_rate: *fp as f64 / n_nominal as f64,
            true_positive_rate: *tp as f64 / n_anomalous as f64,
            sweep_value: *v,
        })
        .collect();
    points.sort_by(|a, b| {
        a.false_positive_rate
            .total_cmp(&b.false_positive_rate)
            .then(a.true_positive_rate.total_cmp(&b.true_positive_rate))
    });
    points
}

fn points_auc(points: &[RocPoint]) -> f64 {
    auc(&points
        .iter()
        .map(|p| (p.false_positive_rate, p.true_positive_rate))
        .collect::<Vec<_>>())
}

/// k-fold cross-validated ROC of one detection method over a sweep.
pub fn evaluate_roc(
    corpus: &[MultimodalSequence],
    method: Method,
    k_folds: usize,
    sweep: &[f64],
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<RocResult> {
    cfg.validate()?;
    if sweep.is_empty() {
        return Err(invalid("sweep must contain at least one value"));
    }
    if sweep.iter().any(|v| !v.is_finite()) {
        return Err(invalid("sweep values must be finite"));
    }
    if method == Method::HmmSvm && sweep.iter().any(|w| *w <= 0.0) {
        return Err(invalid("class-weight sweep values must be positive"));
    }
    if let Some(first) = corpus.first() {
        if corpus.iter().any(|s| s.channels != first.channels) {
            return Err(invalid("corpus mixes channel layouts"));
        }
    }
    let labels: Vec<bool> = corpus.iter().map(|s| s.label == Label::Anomalous).collect();
    if !labels.iter().any(|l| *l) || labels.iter().all(|l| *l) {
        return Err(invalid("corpus must contain both nominal and anomalous sequences"));
    }
    let folds = stratified_folds(&labels, k_folds, seed)?;

    let run = |fold: usize| evaluate_fold(corpus, &folds, fold, method, sweep, cfg, seed);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Result<FoldOutcome>> = {
        use rayon::prelude::*;
        (0..k_folds).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Result<FoldOutcome>> = (0..k_folds).map(run).collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut pooled = vec![(0, 0); sweep.len()];
    let (mut n_nominal, mut n_anomalous) = (0, 0);
    let mut per_fold_auc = Vec::with_capacity(k_folds);
    for o in &outcomes {
        for (acc, f) in pooled.iter_mut().zip(&o.flagged) {
            acc.0 += f.0;
            acc.1 += f.1;
        }
        n_nominal += o.n_nominal;
        n_anomalous += o.n_anomalous;
        per_fold_auc.push(points_auc(&to_points(sweep, &o.flagged, o.n_nominal, o.n_anomalous)));
    }
    let points = to_points(sweep, &pooled, n_nominal, n_anomalous);
    Ok(RocResult {
        method,
        auc: points_auc(&points),
        points,
        folds: k_folds,
        per_fold_auc,
        unconverged_fits: outcomes.iter().map(|o| o.unconverged).sum(),
    })
}
