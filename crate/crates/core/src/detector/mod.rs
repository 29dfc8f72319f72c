//! HMM-based anomaly detectors.
//!
//! Three decision rules share one nominal-behavior HMM:
//!
//! * `HmmSvm` feeds each timestep's (progress, log-likelihood) features to a
//!   class-weighted RBF SVM; a positive margin flags the step.
//! * `FixedThreshold` flags a step whose log-likelihood drops below one
//!   global threshold `mean - c·std` computed over nominal training steps.
//! * `DynamicThreshold` clusters nominal progress vectors with k-means and
//!   keeps a `mean - c·std` threshold per cluster.
//!
//! A sequence is flagged when any of its timesteps is flagged.

mod kmeans;
pub mod online;
pub mod roc;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{bad_model, invalid, Error, Result};
use crate::hmm::{self, FitReport, HmmFeatures, HmmModel, TrainConfig};
use crate::signal::{Label, MultimodalSequence};
use crate::svm::{GammaSpec, LabeledFeature, PreparedProblem, SvmConfig, SvmModel};

pub use kmeans::KMeans;
pub use online::{detect_online, OnlineDetector, OnlineEvent, OnlineStep};
pub use roc::{evaluate_roc, RocPoint, RocResult};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Extra standard deviations added to a calibrated threshold multiplier.
pub const CALIBRATION_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    HmmSvm,
    FixedThreshold,
    DynamicThreshold,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::HmmSvm, Method::DynamicThreshold, Method::FixedThreshold];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::HmmSvm => "hmm_svm",
            Method::FixedThreshold => "fixed_threshold",
            Method::DynamicThreshold => "dynamic_threshold",
        }
    }

    /// Default ROC sweep: anomalous-class weight for the SVM, threshold
    /// multiplier `c` for the baselines.
    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            Method::HmmSvm => (0..=24).map(|i| 10f64.powf(-3.0 + 0.25 * i as f64)).collect(),
            Method::FixedThreshold | Method::DynamicThreshold => {
                let mut v = vec![-1.0e6];
                v.extend((0..=160).map(|i| -10.0 + 0.25 * i as f64));
                v.push(1.0e6);
                v
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "hmm_svm" | "hmmsvm" | "svm" => Ok(Method::HmmSvm),
            "fixed_threshold" | "fixed" => Ok(Method::FixedThreshold),
            "dynamic_threshold" | "dynamic" => Ok(Method::DynamicThreshold),
            other => Err(invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub hmm: TrainConfig,
    #[serde(deserialize_with = "svm_over_detector_defaults")]
    pub svm: SvmConfig,
    /// Keep every `stride`-th timestep when building the SVM training set.
    pub stride: usize,
    /// Threshold multiplier `c` for the baselines. Unset means calibrate:
    /// the smallest `c` that accepts every nominal training step, plus
    /// [`CALIBRATION_MARGIN`].
    pub threshold_c: Option<f64>,
    /// Number of progress clusters for the dynamic threshold.
    pub clusters: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hmm: TrainConfig::default(),
            // a fixed width resolves the log-likelihood axis better than the
            // median heuristic, which the 20 progress coordinates dominate;
            // w_pos < 1 keeps sequence-level false alarms rare
            svm: SvmConfig {
                gamma: GammaSpec::Value(0.3),
                w_pos: 0.3,
                ..SvmConfig::default()
            },
            stride: 2,
            threshold_c: None,
            clusters: 5,
        }
    }
}

/// A partial `svm` table overrides the detector's SVM settings, not the
/// plain [`SvmConfig`] defaults.
fn svm_over_detector_defaults<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<SvmConfig, D::Error> {
    #[derive(Deserialize)]
    struct Partial {
        c_base: Option<f64>,
        w_pos: Option<f64>,
        w_neg: Option<f64>,
        gamma: Option<GammaSpec>,
        kkt_tolerance: Option<f64>,
        max_passes: Option<usize>,
    }
    let p = Partial::deserialize(d)?;
    let base = DetectorConfig::default().svm;
    Ok(SvmConfig {
        c_base: p.c_base.unwrap_or(base.c_base),
        w_pos: p.w_pos.unwrap_or(base.w_pos),
        w_neg: p.w_neg.unwrap_or(base.w_neg),
        gamma: p.gamma.unwrap_or(base.gamma),
        kkt_tolerance: p.kkt_tolerance.unwrap_or(base.kkt_tolerance),
        max_passes: p.max_passes.or(base.max_passes),
    })
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(invalid("stride must be >= 1"));
        }
        if self.clusters == 0 {
            return Err(invalid("clusters must be >= 1"));
        }
        if self.threshold_c.is_some_and(|c| !c.is_finite()) {
            return Err(invalid("threshold_c must be finite"));
        }
        self.svm.validate()
    }
}

/// Method-specific decision parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DetectorParams {
    HmmSvm {
        svm: SvmModel,
    },
    FixedThreshold {
        mean: f64,
        std: f64,
        c: f64,
    },
    DynamicThreshold {
        centroids: Vec<Vec<f64>>,
        means: Vec<f64>,
        stds: Vec<f64>,
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub format_version: u32,
    pub hmm: HmmModel,
    pub params: DetectorParams,
}

/// Sequence-level outcome of running a detector over every timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDecision {
    pub flagged: bool,
    pub first_detection_step: Option<usize>,
    /// Positive values flag the step: SVM margin, or threshold minus
    /// log-likelihood for the baselines.
    pub per_step_scores: Vec<f64>,
}

/// Training artifacts besides the model itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub loglik_trace: Vec<f64>,
    pub hmm_converged: bool,
    pub dropped_outliers: Vec<usize>,
    pub svm_converged: Option<bool>,
    pub svm_support_vectors: Option<usize>,
}

/// SVM input for one timestep: progress vector followed by log-likelihood.
pub fn feature_vector(f: &HmmFeatures) -> Vec<f64> {
    let mut x = Vec::with_capacity(f.progress.len() + 1);
    x.extend_from_slice(&f.progress);
    x.push(f.log_likelihood);
    x
}

impl DetectorModel {
    pub fn method(&self) -> Method {
        match self.params {
            DetectorParams::HmmSvm { .. } => Method::HmmSvm,
            DetectorParams::FixedThreshold { .. } => Method::FixedThreshold,
            DetectorParams::DynamicThreshold { .. } => Method::DynamicThreshold,
        }
    }

    pub fn channels(&self) -> &[String] {
        &self.hmm.channels
    }

    /// Score for one timestep; positive flags it.
    pub fn step_score(&self, f: &HmmFeatures) -> f64 {
        match &self.params {
            DetectorParams::HmmSvm { svm } => svm
                .decide(&feature_vector(f))
                .expect("feature width fixed by the HMM"),
            DetectorParams::FixedThreshold { mean, std, c } => (mean - c * std) - f.log_likelihood,
            DetectorParams::DynamicThreshold {
                centroids,
                means,
                stds,
                c,
            } => {
                let k = kmeans::nearest(centroids, &f.progress);
                (means[k] - c * stds[k]) - f.log_likelihood
            }
        }
    }

    /// Copy of a threshold detector with a different multiplier `c`.
    pub fn with_threshold_c(&self, new_c: f64) -> Result<DetectorModel> {
        let mut out = self.clone();
        match &mut out.params {
            DetectorParams::FixedThreshold { c, .. } | DetectorParams::DynamicThreshold { c, .. } => {
                *c = new_c;
                Ok(out)
            }
            DetectorParams::HmmSvm { .. } => Err(invalid("HMM-SVM detectors have no threshold multiplier")),
        }
    }

    pub fn score_features(&self, features: &[HmmFeatures]) -> SequenceDecision {
        let per_step_scores: Vec<f64> = features.iter().map(|f| self.step_score(f)).collect();
        let first_detection_step = per_step_scores.iter().position(|s| *s > 0.0);
        SequenceDecision {
            flagged: first_detection_step.is_some(),
            first_detection_step,
            per_step_scores,
        }
    }

    /// Earliest flagged step, stopping at the first hit.
    pub fn first_flag(&self, features: &[HmmFeatures]) -> Option<usize> {
        features.iter().position(|f| self.step_score(f) > 0.0)
    }

    pub fn score_sequence(&self, seq: &MultimodalSequence) -> Result<SequenceDecision> {
        if seq.channels != self.hmm.channels {
            return Err(invalid(format!(
                "sequence channels {:?} do not match detector channels {:?}",
                seq.channels, self.hmm.channels
            )));
        }
        let features = self.hmm.featurize_sequence(seq)?;
        Ok(self.score_features(&features))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(bad_model("format_version", format!("unsupported version {}", self.format_version)));
        }
        self.hmm.validate()?;
        let k = self.hmm.n_states;
        match &self.params {
            DetectorParams::HmmSvm { svm } => {
                svm.validate()?;
                if svm.n_features() != k + 1 {
                    return Err(bad_model(
                        "params.svm.feature_means",
                        format!("expected {} features (K progress + log-likelihood)", k + 1),
                    ));
                }
            }
            DetectorParams::FixedThreshold { mean, std, c } => {
                if !mean.is_finite() || !(*std > 0.0) || !c.is_finite() {
                    return Err(bad_model("params", "fixed threshold needs finite mean/c and std > 0"));
                }
            }
            DetectorParams::DynamicThreshold {
                centroids,
                means,
                stds,
                c,
            } => {
                let n = centroids.len();
                if n == 0 || means.len() != n || stds.len() != n {
                    return Err(bad_model("params.centroids", "centroids, means and stds must align"));
                }
                if centroids.iter().any(|c| c.len() != k) {
                    return Err(bad_model("params.centroids", format!("centroids must have {k} entries")));
                }
                if stds.iter().any(|s| !(*s > 0.0)) || !c.is_finite() {
                    return Err(bad_model("params.stds", "cluster stds must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DetectorModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Per-step SVM training points. Nominal steps are labeled -1; anomalous
/// steps at or after the onset are labeled +1 and earlier ones discarded.
pub fn svm_training_set<'a, I>(featurized: I, stride: usize) -> Vec<LabeledFeature>
where
    I: IntoIterator<Item = (&'a MultimodalSequence, &'a [HmmFeatures])>,
{
    let mut out = Vec::new();
    for (seq, feats) in featurized {
        let start = match (seq.label, seq.anomaly_onset) {
            (Label::Anomalous, Some(onset)) => onset,
            (Label::Anomalous, None) => continue,
            (Label::Nominal, _) => 0,
        };
        let anomalous = seq.label == Label::Anomalous;
        for (t, f) in feats.iter().enumerate().skip(start) {
            // align the stride to the sequence start so that both classes sample the same clock
            if t % stride == 0 {
                out.push(LabeledFeature::new(feature_vector(f), anomalous));
            }
        }
    }
    out
}

pub(crate) fn fixed_params(nominal_features: &[Vec<HmmFeatures>], c: f64) -> DetectorParams {
    let lls: Vec<f64> = nominal_features.iter().flatten().map(|f| f.log_likelihood).collect();
    let (mean, std) = mean_std(&lls);
    DetectorParams::FixedThreshold { mean, std, c }
}

pub(crate) fn dynamic_params(nominal_features: &[Vec<HmmFeatures>], clusters: usize, c: f64, seed: u64) -> DetectorParams {
    let steps: Vec<&HmmFeatures> = nominal_features.iter().flatten().collect();
    let points: Vec<&[f64]> = steps.iter().map(|f| f.progress.as_slice()).collect();
    let km = KMeans::fit(&points, clusters, seed, 100);
    let (global_mean, global_std) = mean_std(&steps.iter().map(|f| f.log_likelihood).collect::<Vec<_>>());
    let mut groups = vec![Vec::new(); km.centroids.len()];
    for (f, a) in steps.iter().zip(&km.assignments) {
        groups[*a].push(f.log_likelihood);
    }
    let (means, stds) = groups
        .iter()
        .map(|g| if g.len() >= 2 { mean_std(g) } else { (global_mean, global_std) })
        .unzip();
    DetectorParams::DynamicThreshold {
        centroids: km.centroids,
        means,
        stds,
        c,
    }
}

/// Sets the multiplier of a threshold rule, calibrating it against the
/// nominal training steps when `c` is unset.
fn calibrate(mut params: DetectorParams, nominal_features: &[Vec<HmmFeatures>], c: Option<f64>) -> DetectorParams {
    let value = c.unwrap_or_else(|| {
        let worst = nominal_features
            .iter()
            .flatten()
            .map(|f| match &params {
                DetectorParams::FixedThreshold { mean, std, .. } => (mean - f.log_likelihood) / std,
                DetectorParams::DynamicThreshold {
                    centroids, means, stds, ..
                } => {
                    let k = kmeans::nearest(centroids, &f.progress);
                    (means[k] - f.log_likelihood) / stds[k]
                }
                DetectorParams::HmmSvm { .. } => unreachable!("SVM rules have no multiplier"),
            })
            .fold(0.0, f64::max);
        worst + CALIBRATION_MARGIN
    });
    match &mut params {
        DetectorParams::FixedThreshold { c, .. } | DetectorParams::DynamicThreshold { c, .. } => *c = value,
        DetectorParams::HmmSvm { .. } => {}
    }
    params
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1e-12 })
}

fn check_layout(nominal: &[MultimodalSequence], anomalous: &[MultimodalSequence]) -> Result<()> {
    let channels = &nominal[0].channels;
    for (i, s) in nominal.iter().enumerate() {
        if s.label != Label::Nominal {
            return Err(invalid(format!("nominal sequence {i} is labeled anomalous")));
        }
        if &s.channels != channels {
            return Err(invalid(format!("nominal sequence {i} has a different channel layout")));
        }
    }
    for (i, s) in anomalous.iter().enumerate() {
        if s.label != Label::Anomalous || s.anomaly_onset.is_none() {
            return Err(invalid(format!("anomalous sequence {i} lacks an anomaly label and onset")));
        }
        if &s.channels != channels {
            return Err(invalid(format!("anomalous sequence {i} has a different channel layout")));
        }
    }
    Ok(())
}

/// Fits the nominal HMM and the chosen decision rule.
pub fn train_detector(
    nominal: &[MultimodalSequence],
    anomalous: &[MultimodalSequence],
    method: Method,
    cfg: &DetectorConfig,
    seed: u64,
) -> Result<(DetectorModel, TrainingSummary)> {
    cfg.validate()?;
    if nominal.is_empty() {
        return Err(invalid("no nominal training sequences"));
    }
    if method == Method::HmmSvm && anomalous.is_empty() {
        return Err(invalid("the HMM-SVM detector needs anomalous training sequences"));
    }
    check_layout(nominal, anomalous)?;

    let FitReport {
        model: hmm,
        loglik_trace,
        converged,
        dropped,
    } = hmm::fit(nominal, &cfg.hmm)?;
    let nominal_features = nominal
        .iter()
        .map(|s| hmm.featurize_sequence(s))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = TrainingSummary {
        loglik_trace,
        hmm_converged: converged,
        dropped_outliers: dropped,
        svm_converged: None,
        svm_support_vectors: None,
    };
    let params = match method {
        Method::FixedThreshold => {
            calibrate(fixed_params(&nominal_features, 0.0), &nominal_features, cfg.threshold_c)
        }
        Method::DynamicThreshold => calibrate(
            dynamic_params(&nominal_features, cfg.clusters, 0.0, seed),
            &nominal_features,
            cfg.threshold_c,
        ),
        Method::HmmSvm => {
            let anomalous_features = anomalous
                .iter()
                .map(|s| hmm.featurize_sequence(s))
                .collect::<Result<Vec<_>>>()?;
            let data = svm_training_set(
                nominal
                    .iter()
                    .zip(nominal_features.iter().map(Vec::as_slice))
                    .chain(anomalous.iter().zip(anomalous_features.iter().map(Vec::as_slice))),
                cfg.stride,
            );
            let problem = PreparedProblem::new(&data, cfg.svm.gamma, seed)?;
            let (svm, _) = problem.solve(&cfg.svm)?;
            summary.svm_converged = Some(svm.converged);
            summary.svm_support_vectors = Some(svm.support_vectors.len());
            DetectorParams::HmmSvm { svm }
        }
    };
    let model = DetectorModel {
        format_version: MODEL_FORMAT_VERSION,
        hmm,
        params,
    };
    Ok((model, summary))
}

/// Splits a labeled corpus into its nominal and anomalous parts.
pub fn split_by_label(corpus: &[MultimodalSequence]) -> (Vec<MultimodalSequence>, Vec<MultimodalSequence>) {
    corpus.iter().cloned().partition(|s| s.label == Label::Nominal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Simulator, Task};

    #[test]
    fn partial_svm_table_keeps_detector_defaults() {
        let cfg: DetectorConfig = serde_json::from_str(r#"{"svm": {"w_pos": 1.0}}"#).unwrap();
        assert_eq!(cfg.svm.w_pos, 1.0);
        assert_eq!(cfg.svm.gamma, DetectorConfig::default().svm.gamma);
        let full = DetectorConfig::default();
        let back: DetectorConfig = serde_json::from_str(&serde_json::to_string(&full).unwrap()).unwrap();
        assert_eq!(back, full);
    }

    fn small_cfg() -> DetectorConfig {
        DetectorConfig {
            hmm: TrainConfig {
                n_states: 8,
                ..TrainConfig::default()
            },
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn empty_nominal_is_rejected() {
        let sim = Simulator::default();
        let corpus = sim.generate_corpus(Task::Scooping, 0, 3, 1).unwrap();
        for method in Method::ALL {
            assert!(matches!(
                train_detector(&[], &corpus, method, &small_cfg(), 0),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn svm_needs_anomalies_but_baselines_do_not() {
        let sim = Simulator::default();
        let nominal = sim.generate_corpus(Task::Scooping, 6, 0, 1).unwrap();
        assert!(train_detector(&nominal, &[], Method::HmmSvm, &small_cfg(), 0).is_err());
        assert!(train_detector(&nominal, &[], Method::FixedThreshold, &small_cfg(), 0).is_ok());
        assert!(train_detector(&nominal, &[], Method::DynamicThreshold, &small_cfg(), 0).is_ok());
    }

    #[test]
    fn all_positive_scores_flag_step_zero() {
        let sim = Simulator::default();
        let nominal = sim.generate_corpus(Task::Scooping, 6, 0, 1).unwrap();
        let (model, _) = train_detector(&nominal, &[], Method::FixedThreshold, &small_cfg(), 0).unwrap();
        let eager = model.with_threshold_c(-1.0e6).unwrap();
        let d = eager.score_sequence(&nominal[0]).unwrap();
        assert!(d.flagged);
        assert_eq!(d.first_detection_step, Some(0));
        assert!(d.per_step_scores.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn training_set_discards_pre_onset_steps() {
        let sim = Simulator::default();
        let corpus = sim.generate_corpus(Task::Feeding, 3, 3, 8).unwrap();
        let (nominal, anomalous) = split_by_label(&corpus);
        let report = hmm::fit(&nominal, &small_cfg().hmm).unwrap();
        let feats: Vec<Vec<HmmFeatures>> = corpus.iter().map(|s| report.model.featurize_sequence(s).unwrap()).collect();
        let data = svm_training_set(corpus.iter().zip(feats.iter().map(Vec::as_slice)), 2);
        let expected_pos: usize = anomalous
            .iter()
            .map(|s| (s.anomaly_onset.unwrap()..s.len()).filter(|t| t % 2 == 0).count())
            .sum();
        assert_eq!(data.iter().filter(|d| d.y > 0).count(), expected_pos);
        assert_eq!(data.iter().filter(|d| d.y < 0).count(), 3 * 50);
        assert!(data.iter().all(|d| d.x.len() == 9));
    }

    #[test]
    fn detector_json_round_trip() {
        let sim = Simulator::default();
        let nominal = sim.generate_corpus(Task::Scooping, 6, 0, 1).unwrap();
        let (model, _) = train_detector(&nominal, &[], Method::DynamicThreshold, &small_cfg(), 0).unwrap();
        let back = DetectorModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.method(), Method::DynamicThreshold);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
