//! Synthetic multimodal sensor sequences for the scooping and feeding tasks.
//!
//! The simulated spoon tool carries two sensing modalities: a force channel
//! and an audio energy envelope. Nominal executions follow a piecewise-linear
//! template per channel plus Gaussian noise; faults are injected on top of a
//! nominal sequence and carry ground-truth onset labels.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const BUILTIN_CONFIG: &str = include_str!("../config/simulator.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Scooping,
    Feeding,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Scooping, Task::Feeding];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Scooping => "scooping",
            Task::Feeding => "feeding",
        }
    }

    /// Fault kinds that can physically occur during this task.
    pub fn anomaly_kinds(self) -> &'static [AnomalyKind] {
        match self {
            Task::Scooping => &[AnomalyKind::ForcePush, AnomalyKind::LoudSound],
            Task::Feeding => &[
                AnomalyKind::ForcePush,
                AnomalyKind::LoudSound,
                AnomalyKind::MouthClosed,
            ],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scooping" => Ok(Task::Scooping),
            "feeding" => Ok(Task::Feeding),
            other => Err(invalid(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Nominal,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    ForcePush,
    LoudSound,
    MouthClosed,
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "force_push" | "forcepush" => Ok(AnomalyKind::ForcePush),
            "loud_sound" | "loudsound" => Ok(AnomalyKind::LoudSound),
            "mouth_closed" | "mouthclosed" => Ok(AnomalyKind::MouthClosed),
            other => Err(invalid(format!("unknown anomaly kind `{other}`"))),
        }
    }
}

/// Piecewise-linear template over task phase [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Profile {
    knots: Vec<[f64; 2]>,
}

impl Profile {
    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(invalid("profile needs at least two knots"));
        }
        if knots[0][0] != 0.0 || knots[knots.len() - 1][0] != 1.0 {
            return Err(invalid("profile must span the phase interval [0, 1]"));
        }
        if knots.iter().any(|k| !k[0].is_finite() || !k[1].is_finite()) {
            return Err(invalid("profile knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(invalid("profile phases must be strictly increasing"));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn eval(&self, phase: f64) -> f64 {
        let phase = phase.clamp(0.0, 1.0);
        let idx = self.knots.partition_point(|k| k[0] <= phase);
        if idx == 0 {
            return self.knots[0][1];
        }
        if idx == self.knots.len() {
            return self.knots[self.knots.len() - 1][1];
        }
        let [x0, y0] = self.knots[idx - 1];
        let [x1, y1] = self.knots[idx];
        y0 + (y1 - y0) * (phase - x0) / (x1 - x0)
    }

    pub fn max_value(&self) -> f64 {
        self.knots.iter().map(|k| k[1]).fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<[f64; 2]>> for Profile {
    type Error = Error;

    fn try_from(knots: Vec<[f64; 2]>) -> Result<Self> {
        Profile::new(knots)
    }
}

impl From<Profile> for Vec<[f64; 2]> {
    fn from(p: Profile) -> Self {
        p.knots
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    #[serde(rename = "profile")]
    pub nominal_profile: Profile,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Per-execution pacing variation: phase is warped by `j·sin(π·phase)`
    /// with `j` uniform in `[-timing_jitter, timing_jitter]`.
    #[serde(default)]
    pub timing_jitter: f64,
    pub channels: Vec<ChannelSpec>,
}

impl TaskProfile {
    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub rise_s: f64,
    pub hold_s: f64,
    pub decay_s: f64,
    pub peak_scale: f64,
}

impl PulseShape {
    /// Unit-height trapezoid evaluated `dt` seconds after it starts.
    fn unit(&self, dt: f64, stretch: f64) -> f64 {
        let (rise, hold, decay) = (
            self.rise_s * stretch,
            self.hold_s * stretch,
            self.decay_s * stretch,
        );
        if dt <= 0.0 {
            0.0
        } else if dt < rise {
            dt / rise
        } else if dt < rise + hold {
            1.0
        } else if dt < rise + hold + decay {
            1.0 - (dt - rise - hold) / decay
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauShape {
    pub level_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    pub onset_range: [f64; 2],
    pub default_magnitude: f64,
    pub force_push: PulseShape,
    pub loud_sound: PulseShape,
    pub mouth_closed: PlateauShape,
}

/// Simulator configuration: nominal templates per task and fault shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub force_channel: String,
    pub audio_channel: String,
    pub scooping: TaskProfile,
    pub feeding: TaskProfile,
    pub anomaly: AnomalyConfig,
}

impl SimConfig {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_CONFIG).expect("builtin simulator config is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn task(&self, task: Task) -> &TaskProfile {
        match task {
            Task::Scooping => &self.scooping,
            Task::Feeding => &self.feeding,
        }
    }

    pub fn task_mut(&mut self, task: Task) -> &mut TaskProfile {
        match task {
            Task::Scooping => &mut self.scooping,
            Task::Feeding => &mut self.feeding,
        }
    }

    fn validate(&self) -> Result<()> {
        for task in Task::ALL {
            let p = self.task(task);
            if !(p.sample_rate_hz > 0.0) || !(p.duration_s > 0.0) {
                return Err(invalid(format!("{task}: rate and duration must be positive")));
            }
            // beyond 1/π the warp stops being monotone
            if !(0.0..1.0 / std::f64::consts::PI).contains(&p.timing_jitter) {
                return Err(invalid(format!("{task}: timing_jitter must lie in [0, 1/pi)")));
            }
            if p.channels.is_empty() {
                return Err(invalid(format!("{task}: no channels")));
            }
            if p.channels.iter().any(|c| !(c.noise_std >= 0.0)) {
                return Err(invalid(format!("{task}: noise_std must be >= 0")));
            }
            for name in [&self.force_channel, &self.audio_channel] {
                if p.channel_index(name).is_none() {
                    return Err(invalid(format!("{task}: missing channel `{name}`")));
                }
            }
        }
        let [lo, hi] = self.anomaly.onset_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(invalid("anomaly.onset_range must lie within [0, 1]"));
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Fixed-rate multichannel time series for one task execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "wire::CorpusRecord", into = "wire::CorpusRecord")]
pub struct MultimodalSequence {
    pub task: Task,
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    /// T rows of D samples.
    pub samples: Vec<Vec<f64>>,
    pub label: Label,
    pub anomaly_onset: Option<usize>,
    pub anomaly_kind: Option<AnomalyKind>,
    pub seed: u64,
}

impl MultimodalSequence {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn channel(&self, idx: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(move |row| row[idx])
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.samples.len();
        let d = self.channels.len();
        if t < 2 {
            return Err(invalid(format!("sequence has {t} samples, need at least 2")));
        }
        if d == 0 {
            return Err(invalid("sequence has no channels"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(invalid("sample_rate_hz must be positive"));
        }
        for (i, row) in self.samples.iter().enumerate() {
            if row.len() != d {
                return Err(invalid(format!("row {i} has {} values, expected {d}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("row {i} contains a non-finite sample")));
            }
        }
        match (self.label, self.anomaly_onset) {
            (Label::Nominal, Some(_)) => {
                return Err(invalid("nominal sequence must not carry anomaly_onset"))
            }
            (Label::Anomalous, None) => {
                return Err(invalid("anomalous sequence must carry anomaly_onset"))
            }
            (Label::Anomalous, Some(onset)) if onset >= t => {
                return Err(invalid(format!("anomaly_onset {onset} outside [0, {t})")))
            }
            _ => {}
        }
        if self.label == Label::Nominal && self.anomaly_kind.is_some() {
            return Err(invalid("nominal sequence must not carry anomaly_kind"));
        }
        Ok(())
    }
}

/// Where and how strongly to inject a fault.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyInjection {
    pub kind: AnomalyKind,
    pub onset_phase: f64,
    pub magnitude: f64,
}

/// Sequence generator backed by a [`SimConfig`]. Stateless; all randomness
/// comes from the seed passed to each call.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    config: SimConfig,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn channel_names(&self, task: Task) -> Vec<String> {
        self.config.task(task).channel_names()
    }

    pub fn default_duration(&self, task: Task) -> f64 {
        self.config.task(task).duration_s
    }

    pub fn generate_nominal(&self, task: Task, duration_s: f64, seed: u64) -> Result<MultimodalSequence> {
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(invalid(format!("duration must be positive, got {duration_s}")));
        }
        let profile = self.config.task(task);
        let n_steps = (duration_s * profile.sample_rate_hz).round() as usize;
        if n_steps < 2 {
            return Err(invalid(format!(
                "duration {duration_s}s at {} Hz yields {n_steps} samples, need at least 2",
                profile.sample_rate_hz
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let warp = if profile.timing_jitter > 0.0 {
            rng.random_range(-profile.timing_jitter..=profile.timing_jitter)
        } else {
            0.0
        };
        let noise: Vec<Option<Normal<f64>>> = profile
            .channels
            .iter()
            .map(|c| (c.noise_std > 0.0).then(|| Normal::new(0.0, c.noise_std).expect("finite std")))
            .collect();
        let samples = (0..n_steps)
            .map(|t| {
                let phase = t as f64 / n_steps as f64;
                let phase = phase + warp * (std::f64::consts::PI * phase).sin();
                profile
                    .channels
                    .iter()
                    .zip(&noise)
                    .map(|(c, n)| {
                        let base = c.nominal_profile.eval(phase);
                        match n {
                            Some(n) => base + n.sample(&mut rng),
                            None => base,
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(MultimodalSequence {
            task,
            sample_rate_hz: profile.sample_rate_hz,
            channels: profile.channel_names(),
            samples,
            label: Label::Nominal,
            anomaly_onset: None,
            anomaly_kind: None,
            seed,
        })
    }

    pub fn inject_anomaly(
        &self,
        seq: &MultimodalSequence,
        inj: &AnomalyInjection,
        seed: u64,
    ) -> Result<MultimodalSequence> {
        if seq.label != Label::Nominal {
            return Err(invalid("anomalies can only be injected into nominal sequences"));
        }
        if !(0.0..=1.0).contains(&inj.onset_phase) {
            return Err(invalid(format!("onset_phase {} outside [0, 1]", inj.onset_phase)));
        }
        if !(inj.magnitude >= 0.0) || !inj.magnitude.is_finite() {
            return Err(invalid("magnitude must be finite and >= 0"));
        }
        if inj.kind == AnomalyKind::MouthClosed && seq.task != Task::Feeding {
            return Err(invalid("mouth_closed only applies to feeding sequences"));
        }
        let profile = self.config.task(seq.task);
        let n_steps = seq.len();
        let onset = ((inj.onset_phase * n_steps as f64).round() as usize).min(n_steps - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stretch: f64 = rng.random_range(0.8..1.2);

        let mut out = seq.clone();
        out.label = Label::Anomalous;
        out.anomaly_onset = Some(onset);
        out.anomaly_kind = Some(inj.kind);

        let spec_for = |name: &str| -> Result<(usize, &ChannelSpec)> {
            let idx = seq
                .channel_index(name)
                .ok_or_else(|| invalid(format!("sequence lacks channel `{name}`")))?;
            let spec = profile
                .channels
                .iter()
                .find(|c| c.name == name)
                .ok_or_else(|| invalid(format!("simulator lacks channel `{name}`")))?;
            Ok((idx, spec))
        };

        let anomaly = &self.config.anomaly;
        match inj.kind {
            AnomalyKind::ForcePush | AnomalyKind::LoudSound => {
                let (name, shape) = if inj.kind == AnomalyKind::ForcePush {
                    (&self.config.force_channel, &anomaly.force_push)
                } else {
                    (&self.config.audio_channel, &anomaly.loud_sound)
                };
                let (idx, spec) = spec_for(name)?;
                let peak = inj.magnitude * shape.peak_scale * spec.noise_std;
                for t in onset..n_steps {
                    // the pulse starts one sample period before the onset sample
                    let dt = (t - onset + 1) as f64 / seq.sample_rate_hz;
                    out.samples[t][idx] += peak * shape.unit(dt, stretch);
                }
            }
            AnomalyKind::MouthClosed => {
                let (idx, spec) = spec_for(&self.config.force_channel)?;
                let contact = spec.nominal_profile.max_value();
                let lift = inj.magnitude * anomaly.mouth_closed.level_scale * spec.noise_std;
                let blend = inj.magnitude.min(1.0);
                for t in onset..n_steps {
                    let phase = t as f64 / n_steps as f64;
                    let nominal = spec.nominal_profile.eval(phase);
                    out.samples[t][idx] += blend * (contact - nominal) + lift;
                }
            }
        }
        Ok(out)
    }

    /// A fault of a kind that fits `task`, with onset drawn from the
    /// configured range and the default magnitude.
    pub fn sample_injection(&self, task: Task, seed: u64) -> AnomalyInjection {
        let kinds = task.anomaly_kinds();
        let [lo, hi] = self.config.anomaly.onset_range;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AnomalyInjection {
            kind: kinds[rng.random_range(0..kinds.len())],
            onset_phase: if hi > lo { rng.random_range(lo..hi) } else { lo },
            magnitude: self.config.anomaly.default_magnitude,
        }
    }

    pub fn generate_corpus(
        &self,
        task: Task,
        n_nominal: usize,
        n_anomalous: usize,
        seed: u64,
    ) -> Result<Vec<MultimodalSequence>> {
        let duration = self.config.task(task).duration_s;
        let kinds = task.anomaly_kinds();
        let [lo, hi] = self.config.anomaly.onset_range;
        let magnitude = self.config.anomaly.default_magnitude;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut corpus = Vec::with_capacity(n_nominal + n_anomalous);
        for _ in 0..n_nominal {
            corpus.push(self.generate_nominal(task, duration, rng.random())?);
        }
        for _ in 0..n_anomalous {
            let base_seed: u64 = rng.random();
            let kind = kinds[rng.random_range(0..kinds.len())];
            let onset_phase = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let inj_seed: u64 = rng.random();
            let nominal = self.generate_nominal(task, duration, base_seed)?;
            let inj = AnomalyInjection {
                kind,
                onset_phase,
                magnitude,
            };
            corpus.push(self.inject_anomaly(&nominal, &inj, inj_seed)?);
        }
        Ok(corpus)
    }
}

/// Line-delimited corpus files: one JSON object per sequence.
pub mod wire {
    use super::*;
    use crate::error::bad_line;

    pub const FORMAT_VERSION: u32 = 1;

    /// On-disk form of a [`MultimodalSequence`]; `samples` is the row-major
    /// flattening of the T×D matrix.
    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct CorpusRecord {
        pub format_version: u32,
        pub task: Task,
        pub sample_rate_hz: f64,
        pub channels: Vec<String>,
        pub n_steps: usize,
        pub samples: Vec<f64>,
        pub label: Label,
        pub anomaly_onset: Option<usize>,
        pub anomaly_kind: Option<AnomalyKind>,
        pub seed: u64,
    }

    impl From<MultimodalSequence> for CorpusRecord {
        fn from(s: MultimodalSequence) -> Self {
            CorpusRecord {
                format_version: FORMAT_VERSION,
                task: s.task,
                sample_rate_hz: s.sample_rate_hz,
                n_steps: s.samples.len(),
                channels: s.channels,
                samples: s.samples.into_iter().flatten().collect(),
                label: s.label,
                anomaly_onset: s.anomaly_onset,
                anomaly_kind: s.anomaly_kind,
                seed: s.seed,
            }
        }
    }

    impl TryFrom<CorpusRecord> for MultimodalSequence {
        type Error = Error;

        fn try_from(r: CorpusRecord) -> Result<Self> {
            if r.format_version != FORMAT_VERSION {
                return Err(Error::Format(format!(
                    "unsupported corpus format_version {}",
                    r.format_version
                )));
            }
            let d = r.channels.len();
            if d == 0 || r.samples.len() != r.n_steps * d {
                return Err(invalid(format!(
                    "samples has {} values, expected n_steps ({}) x channels ({d})",
                    r.samples.len(),
                    r.n_steps
                )));
            }
            let seq = MultimodalSequence {
                task: r.task,
                sample_rate_hz: r.sample_rate_hz,
                samples: r.samples.chunks(d).map(<[f64]>::to_vec).collect(),
                channels: r.channels,
                label: r.label,
                anomaly_onset: r.anomaly_onset,
                anomaly_kind: r.anomaly_kind,
                seed: r.seed,
            };
            seq.validate()?;
            Ok(seq)
        }
    }

    pub fn write_corpus<W: std::io::Write>(mut w: W, corpus: &[MultimodalSequence]) -> Result<()> {
        for seq in corpus {
            serde_json::to_writer(&mut w, seq)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn corpus_to_string(corpus: &[MultimodalSequence]) -> String {
        let mut buf = Vec::new();
        write_corpus(&mut buf, corpus).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parses a corpus, naming the line that fails validation. Blank lines
    /// are skipped.
    pub fn parse_corpus(text: &str) -> Result<Vec<MultimodalSequence>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| serde_json::from_str::<MultimodalSequence>(line).map_err(|e| bad_line(i + 1, e)))
            .collect()
    }
}
