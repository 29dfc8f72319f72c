//! Left-to-right hidden Markov model with diagonal Gaussian emissions.
//!
//! The model is fit to nominal executions with Baum-Welch EM and, online,
//! turns each observation into two features: the posterior over hidden
//! states ("execution progress") and the log-likelihood of the observation
//! prefix normalized by its length.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{bad_model, invalid, Error, Result};
use crate::signal::{Label, MultimodalSequence};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Per-step log-predictive values below this are clamped and the filter is
/// marked degraded.
pub const LOG_PROB_FLOOR: f64 = -1.0e4;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_states: usize,
    pub max_iterations: usize,
    /// Stop when the mean per-observation log-likelihood improves by less
    /// than this between iterations.
    pub loglik_tolerance: f64,
    /// Lower bound on emission variances, in standardized units.
    pub variance_floor: f64,
    /// Recorded for reproducibility; uniform-slice initialization is
    /// deterministic and does not draw from it.
    pub seed: u64,
    /// Drop low-likelihood training sequences after a provisional fit and refit once.
    pub drop_outliers: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_states: 20,
            max_iterations: 100,
            loglik_tolerance: 1e-5,
            variance_floor: 1e-4,
            seed: 0,
            drop_outliers: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(invalid("n_states must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be >= 1"));
        }
        if !(self.loglik_tolerance > 0.0) {
            return Err(invalid("loglik_tolerance must be positive"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(invalid("variance_floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModel {
    pub format_version: u32,
    pub n_states: usize,
    pub channels: Vec<String>,
    pub initial_dist: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    /// K×D, standardized units.
    pub emission_means: Vec<Vec<f64>>,
    /// K×D, standardized units.
    pub emission_vars: Vec<Vec<f64>>,
    pub variance_floor: f64,
    pub channel_means: Vec<f64>,
    pub channel_stds: Vec<f64>,
}

/// The two HMM-induced features at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmFeatures {
    /// Posterior over hidden states given the observation prefix.
    pub progress: Vec<f64>,
    /// `cumulative_log_likelihood / t`.
    pub log_likelihood: f64,
    pub cumulative_log_likelihood: f64,
}

impl HmmFeatures {
    /// Index of the most probable hidden state.
    pub fn progress_state(&self) -> usize {
        argmax(&self.progress)
    }
}

/// Running forward variables for one observation stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    alpha: Vec<f64>,
    steps: usize,
    cumulative: f64,
    degraded: bool,
}

impl FilterState {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Set once a step's likelihood had to be clamped to [`LOG_PROB_FLOOR`].
    pub fn degraded(&self) -> bool {
        self.degraded
    }

    pub fn cumulative_log_likelihood(&self) -> f64 {
        self.cumulative
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: HmmModel,
    /// Total training log-likelihood after each EM iteration's E-step.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Indices (into the input) of sequences dropped as outliers.
    pub dropped: Vec<usize>,
}

impl HmmModel {
    pub fn n_channels(&self) -> usize {
        self.channel_means.len()
    }

    pub fn new_filter(&self) -> FilterState {
        FilterState {
            alpha: Vec::new(),
            steps: 0,
            cumulative: 0.0,
            degraded: false,
        }
    }

    /// Checks every structural invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let k = self.n_states;
        let d = self.channel_means.len();
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(bad_model(
                "format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        if k == 0 {
            return Err(bad_model("n_states", "must be >= 1"));
        }
        if d == 0 {
            return Err(bad_model("channel_means", "must have at least one channel"));
        }
        if self.channels.len() != d {
            return Err(bad_model("channels", format!("expected {d} names")));
        }
        if self.channel_stds.len() != d || self.channel_stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(bad_model("channel_stds", format!("expected {d} positive finite values")));
        }
        if self.channel_means.iter().any(|m| !m.is_finite()) {
            return Err(bad_model("channel_means", "values must be finite"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(bad_model("variance_floor", "must be positive"));
        }
        if self.initial_dist.len() != k || self.initial_dist.iter().any(|p| !(*p >= 0.0)) {
            return Err(bad_model("initial_dist", format!("expected {k} non-negative probabilities")));
        }
        if (self.initial_dist.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
            return Err(bad_model("initial_dist", "must sum to 1"));
        }
        if self.transition.len() != k {
            return Err(bad_model("transition", format!("expected {k} rows")));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != k || row.iter().any(|p| !(*p >= 0.0)) {
                return Err(bad_model(
                    format!("transition[{i}]"),
                    format!("expected {k} non-negative probabilities"),
                ));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
                return Err(bad_model(format!("transition[{i}]"), "row must sum to 1"));
            }
            if let Some(j) = row
                .iter()
                .enumerate()
                .position(|(j, p)| (j < i || j > i + 1) && *p != 0.0)
            {
                return Err(bad_model(
                    format!("transition[{i}][{j}]"),
                    "left-to-right topology allows only self and next-state transitions",
                ));
            }
        }
        for (field, mat) in [("emission_means", &self.emission_means), ("emission_vars", &self.emission_vars)] {
            if mat.len() != k || mat.iter().any(|r| r.len() != d) {
                return Err(bad_model(field, format!("expected a {k}x{d} matrix")));
            }
            if mat.iter().flatten().any(|v| !v.is_finite()) {
                return Err(bad_model(field, "values must be finite"));
            }
        }
        for (i, row) in self.emission_vars.iter().enumerate() {
            if row.iter().any(|v| *v < self.variance_floor) {
                return Err(bad_model(
                    format!("emission_vars[{i}]"),
                    format!("variance below floor {}", self.variance_floor),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: HmmModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Maps a raw observation into standardized units.
    pub fn standardize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(self.channel_means.iter().zip(&self.channel_stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Emission means mapped back into channel units.
    pub fn destandardized_means(&self) -> Vec<Vec<f64>> {
        self.emission_means
            .iter()
            .map(|row| {
                row.iter()
                    .zip(self.channel_means.iter().zip(&self.channel_stds))
                    .map(|(z, (m, s))| z * s + m)
                    .collect()
            })
            .collect()
    }

    fn log_emissions(&self, z: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = log_gaussian_diag(z, &self.emission_means[k], &self.emission_vars[k]);
        }
    }

    /// One step of the scaled forward recursion.
    pub fn forward_step(&self, filter: &mut FilterState, observation: &[f64]) -> Result<HmmFeatures> {
        let d = self.n_channels();
        if observation.len() != d {
            return Err(invalid(format!(
                "observation has {} values, model expects {d}",
                observation.len()
            )));
        }
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observation contains a non-finite value"));
        }
        let k = self.n_states;
        let predicted: Vec<f64> = if filter.steps == 0 {
            self.initial_dist.clone()
        } else {
            predict(&filter.alpha, &self.transition)
        };
        let z = self.standardize(observation);
        let mut log_b = vec![0.0; k];
        self.log_emissions(&z, &mut log_b);

        let (alpha, mut log_pred) = weigh(&predicted, &log_b);
        let alpha = match alpha {
            Some(a) => a,
            None => {
                filter.degraded = true;
                predicted
            }
        };
        if !(log_pred >= LOG_PROB_FLOOR) {
            log_pred = LOG_PROB_FLOOR;
            filter.degraded = true;
        }
        filter.alpha = alpha;
        filter.steps += 1;
        filter.cumulative += log_pred;
        Ok(HmmFeatures {
            progress: filter.alpha.clone(),
            log_likelihood: filter.cumulative / filter.steps as f64,
            cumulative_log_likelihood: filter.cumulative,
        })
    }

    /// Features for every timestep of `seq`.
    pub fn featurize_sequence(&self, seq: &MultimodalSequence) -> Result<Vec<HmmFeatures>> {
        if seq.channels != self.channels {
            return Err(invalid(format!(
                "sequence channels {:?} do not match model channels {:?}",
                seq.channels, self.channels
            )));
        }
        self.featurize(&seq.samples)
    }

    pub fn featurize(&self, observations: &[Vec<f64>]) -> Result<Vec<HmmFeatures>> {
        let mut filter = self.new_filter();
        observations
            .iter()
            .map(|o| self.forward_step(&mut filter, o))
            .collect()
    }

    /// Total log-likelihood of a full observation sequence (unclamped).
    pub fn log_likelihood(&self, observations: &[Vec<f64>]) -> f64 {
        let z: Vec<Vec<f64>> = observations.iter().map(|o| self.standardize(o)).collect();
        forward_backward(self, &z, false).log_likelihood
    }
}

fn log_gaussian_diag(z: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    z.iter()
        .zip(mean.iter().zip(var))
        .map(|(x, (m, v))| -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v))
        .sum()
}

fn predict(alpha: &[f64], transition: &[Vec<f64>]) -> Vec<f64> {
    let k = alpha.len();
    let mut out = vec![0.0; k];
    for (i, a) in alpha.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for (j, p) in transition[i].iter().enumerate() {
            out[j] += a * p;
        }
    }
    out
}

/// Multiplies a predictive distribution by emission likelihoods given in
/// log space. Returns the normalized posterior (None if every term vanished)
/// and the log of the normalizer.
fn weigh(predicted: &[f64], log_b: &[f64]) -> (Option<Vec<f64>>, f64) {
    let shift = predicted
        .iter()
        .zip(log_b)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return (None, f64::NEG_INFINITY);
    }
    let mut post: Vec<f64> = predicted
        .iter()
        .zip(log_b)
        .map(|(p, l)| if *p > 0.0 { p * (l - shift).exp() } else { 0.0 })
        .collect();
    let c: f64 = post.iter().sum();
    if !(c > 0.0) || !c.is_finite() {
        return (None, f64::NEG_INFINITY);
    }
    post.iter_mut().for_each(|p| *p /= c);
    (Some(post), shift + c.ln())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

struct Posteriors {
    log_likelihood: f64,
    /// T×K state posteriors.
    gamma: Vec<Vec<f64>>,
    /// K×K expected transition counts summed over t.
    xi_sum: Vec<Vec<f64>>,
}

/// Scaled forward-backward pass over a standardized sequence.
fn forward_backward(model: &HmmModel, z: &[Vec<f64>], want_posteriors: bool) -> Posteriors {
    let k = model.n_states;
    let t_len = z.len();
    let mut log_b = vec![vec![0.0; k]; t_len];
    for (t, obs) in z.iter().enumerate() {
        model.log_emissions(obs, &mut log_b[t]);
    }
    let mut alpha = vec![vec![0.0; k]; t_len];
    // per-step shift and normalizer: p(o_t | o_<t) = exp(shift_t) * c_t
    let mut shift = vec![0.0; t_len];
    let mut scale = vec![0.0; t_len];
    let mut log_likelihood = 0.0;
    for t in 0..t_len {
        let predicted = if t == 0 {
            model.initial_dist.clone()
        } else {
            predict(&alpha[t - 1], &model.transition)
        };
        let m = predicted
            .iter()
            .zip(&log_b[t])
            .filter(|(p, _)| **p > 0.0)
            .map(|(_, l)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut c = 0.0;
        for j in 0..k {
            let v = if predicted[j] > 0.0 {
                predicted[j] * (log_b[t][j] - m).exp()
            } else {
                0.0
            };
            alpha[t][j] = v;
            c += v;
        }
        if !(c > 0.0) || !m.is_finite() {
            return Posteriors {
                log_likelihood: f64::NAN,
                gamma: Vec::new(),
                xi_sum: Vec::new(),
            };
        }
        alpha[t].iter_mut().for_each(|a| *a /= c);
        shift[t] = m;
        scale[t] = c;
        log_likelihood += m + c.ln();
    }
    if !want_posteriors {
        return Posteriors {
            log_likelihood,
            gamma: Vec::new(),
            xi_sum: Vec::new(),
        };
    }

    let mut beta = vec![vec![1.0; k]; t_len];
    let mut xi_sum = vec![vec![0.0; k]; k];
    let mut weighted = vec![0.0; k];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for j in 0..k {
            weighted[j] = (log_b[t + 1][j] - shift[t + 1]).exp() * beta[t + 1][j] / scale[t + 1];
        }
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                let a = model.transition[i][j];
                if a == 0.0 {
                    continue;
                }
                let w = a * weighted[j];
                acc += w;
                xi_sum[i][j] += alpha[t][i] * w;
            }
            beta[t][i] = acc;
        }
    }
    let gamma = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| {
            let mut g: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            let s: f64 = g.iter().sum();
            if s > 0.0 {
                g.iter_mut().for_each(|v| *v /= s);
            }
            g
        })
        .collect();
    Posteriors {
        log_likelihood,
        gamma,
        xi_sum,
    }
}

/// Fits a left-to-right HMM to nominal sequences with Baum-Welch EM.
pub fn fit(sequences: &[MultimodalSequence], cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    if sequences.len() < 2 {
        return Err(invalid(format!(
            "need at least 2 training sequences, got {}",
            sequences.len()
        )));
    }
    let channels = sequences[0].channels.clone();
    for (i, s) in sequences.iter().enumerate() {
        if s.label != Label::Nominal {
            return Err(invalid(format!("training sequence {i} is not nominal")));
        }
        if s.channels != channels {
            return Err(invalid(format!("training sequence {i} has a different channel layout")));
        }
        if s.samples.is_empty() {
            return Err(invalid(format!("training sequence {i} is empty")));
        }
        if s.samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid(format!("training sequence {i} contains non-finite samples")));
        }
    }
    let data: Vec<&[Vec<f64>]> = sequences.iter().map(|s| s.samples.as_slice()).collect();
    let first = fit_observations(&data, &channels, cfg)?;
    if !cfg.drop_outliers {
        return Ok(first);
    }
    let dropped = outliers(&first.model, &data);
    if dropped.is_empty() || data.len() - dropped.len() < 2 {
        return Ok(first);
    }
    tracing::debug!(dropped = dropped.len(), "refitting without outlier sequences");
    let kept: Vec<&[Vec<f64>]> = data
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, d)| *d)
        .collect();
    let mut refit = fit_observations(&kept, &channels, cfg)?;
    refit.dropped = dropped;
    Ok(refit)
}

/// Sequences whose length-normalized log-likelihood falls below the 5th
/// percentile minus three interquartile ranges.
fn outliers(model: &HmmModel, data: &[&[Vec<f64>]]) -> Vec<usize> {
    let scores: Vec<f64> = data
        .iter()
        .map(|s| model.log_likelihood(s) / s.len() as f64)
        .collect();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let cutoff = percentile(&sorted, 5.0) - 3.0 * (percentile(&sorted, 75.0) - percentile(&sorted, 25.0));
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| !(**s >= cutoff))
        .map(|(i, _)| i)
        .collect()
}

/// Linear-interpolation percentile of sorted data.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn fit_observations(data: &[&[Vec<f64>]], channels: &[String], cfg: &TrainConfig) -> Result<FitReport> {
    let d = channels.len();
    let k = cfg.n_states;
    let n_obs: usize = data.iter().map(|s| s.len()).sum();

    let mut channel_means = vec![0.0; d];
    for row in data.iter().flat_map(|s| s.iter()) {
        for (m, x) in channel_means.iter_mut().zip(row) {
            *m += x;
        }
    }
    channel_means.iter_mut().for_each(|m| *m /= n_obs as f64);
    let mut channel_stds = vec![0.0; d];
    for row in data.iter().flat_map(|s| s.iter()) {
        for ((v, x), m) in channel_stds.iter_mut().zip(row).zip(&channel_means) {
            *v += (x - m) * (x - m);
        }
    }
    channel_stds.iter_mut().for_each(|v| {
        let s = (*v / n_obs as f64).sqrt();
        *v = if s > 1e-12 { s } else { 1.0 };
    });

    let z: Vec<Vec<Vec<f64>>> = data
        .iter()
        .map(|s| {
            s.iter()
                .map(|o| {
                    o.iter()
                        .zip(channel_means.iter().zip(&channel_stds))
                        .map(|(x, (m, sd))| (x - m) / sd)
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut model = initialize(&z, channels, k, cfg.variance_floor, &channel_means, &channel_stds);

    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 0..=cfg.max_iterations {
        let want_update = iteration < cfg.max_iterations;
        let posteriors: Vec<Posteriors> = z.iter().map(|s| forward_backward(&model, s, want_update)).collect();
        let total: f64 = posteriors.iter().map(|p| p.log_likelihood).sum();
        if !total.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration,
                reason: "non-finite training log-likelihood".into(),
            });
        }
        if let Some(prev) = trace.last() {
            if (total - prev) / (n_obs as f64) < cfg.loglik_tolerance {
                trace.push(total);
                converged = true;
                break;
            }
        }
        trace.push(total);
        if !want_update {
            break;
        }
        m_step(&mut model, &z, &posteriors, cfg.variance_floor);
        if model.emission_means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged {
                iteration,
                reason: "non-finite emission mean after M-step".into(),
            });
        }
    }
    Ok(FitReport {
        model,
        loglik_trace: trace,
        converged,
        dropped: Vec::new(),
    })
}

/// Uniform-duration initialization: state k starts from the k-th 1/K slice of
/// every training sequence.
fn initialize(
    z: &[Vec<Vec<f64>>],
    channels: &[String],
    k: usize,
    floor: f64,
    channel_means: &[f64],
    channel_stds: &[f64],
) -> HmmModel {
    let d = channels.len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut sq = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for seq in z {
        let t_len = seq.len();
        for (t, obs) in seq.iter().enumerate() {
            let state = (t * k / t_len).min(k - 1);
            counts[state] += 1;
            for (j, x) in obs.iter().enumerate() {
                sums[state][j] += x;
                sq[state][j] += x * x;
            }
        }
    }
    let mut means = vec![vec![0.0; d]; k];
    let mut vars = vec![vec![1.0; d]; k];
    for s in 0..k {
        if counts[s] == 0 {
            continue;
        }
        let n = counts[s] as f64;
        for j in 0..d {
            let m = sums[s][j] / n;
            means[s][j] = m;
            vars[s][j] = if counts[s] > 1 {
                (sq[s][j] / n - m * m).max(floor)
            } else {
                1.0
            };
        }
    }
    let mean_len = z.iter().map(Vec::len).sum::<usize>() as f64 / z.len() as f64;
    let dwell = (mean_len / k as f64).max(1.0);
    let advance = (1.0 / dwell).clamp(1e-3, 1.0 - 1e-3);
    let transition = (0..k)
        .map(|i| {
            let mut row = vec![0.0; k];
            if i + 1 < k {
                row[i] = 1.0 - advance;
                row[i + 1] = advance;
            } else {
                row[i] = 1.0;
            }
            row
        })
        .collect();
    let mut initial_dist = vec![0.0; k];
    initial_dist[0] = 1.0;
    HmmModel {
        format_version: MODEL_FORMAT_VERSION,
        n_states: k,
        channels: channels.to_vec(),
        initial_dist,
        transition,
        emission_means: means,
        emission_vars: vars,
        variance_floor: floor,
        channel_means: channel_means.to_vec(),
        channel_stds: channel_stds.to_vec(),
    }
}

fn m_step(model: &mut HmmModel, z: &[Vec<Vec<f64>>], posteriors: &[Posteriors], floor: f64) {
    let k = model.n_states;
    let d = model.n_channels();
    let n_seq = z.len() as f64;

    let mut initial = vec![0.0; k];
    let mut trans_num = vec![vec![0.0; k]; k];
    let mut occupancy = vec![0.0; k];
    let mut from_occupancy = vec![0.0; k];
    let mut weighted_sum = vec![vec![0.0; d]; k];
    for (seq, post) in z.iter().zip(posteriors) {
        for (i, g) in post.gamma[0].iter().enumerate() {
            initial[i] += g / n_seq;
        }
        for i in 0..k {
            for j in 0..k {
                trans_num[i][j] += post.xi_sum[i][j];
            }
        }
        for (t, (obs, g)) in seq.iter().zip(&post.gamma).enumerate() {
            for s in 0..k {
                if g[s] == 0.0 {
                    continue;
                }
                occupancy[s] += g[s];
                if t + 1 < seq.len() {
                    from_occupancy[s] += g[s];
                }
                for j in 0..d {
                    weighted_sum[s][j] += g[s] * obs[j];
                }
            }
        }
    }

    let total: f64 = initial.iter().sum();
    if total > 0.0 {
        model.initial_dist = initial.iter().map(|p| p / total).collect();
    }
    for i in 0..k {
        let row_total: f64 = trans_num[i].iter().sum();
        if row_total > 1e-300 && from_occupancy[i] > 1e-300 {
            model.transition[i] = trans_num[i].iter().map(|x| x / row_total).collect();
        }
    }
    let mut new_means = model.emission_means.clone();
    for s in 0..k {
        if occupancy[s] > 1e-10 {
            for j in 0..d {
                new_means[s][j] = weighted_sum[s][j] / occupancy[s];
            }
        }
    }
    let mut sq = vec![vec![0.0; d]; k];
    for (seq, post) in z.iter().zip(posteriors) {
        for (obs, g) in seq.iter().zip(&post.gamma) {
            for s in 0..k {
                if g[s] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    let diff = obs[j] - new_means[s][j];
                    sq[s][j] += g[s] * diff * diff;
                }
            }
        }
    }
    for s in 0..k {
        if occupancy[s] > 1e-10 {
            for j in 0..d {
                model.emission_vars[s][j] = (sq[s][j] / occupancy[s]).max(floor);
            }
        }
    }
    model.emission_means = new_means;
}
