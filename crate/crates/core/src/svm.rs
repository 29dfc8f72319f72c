//! Class-weighted soft-margin SVM with an RBF kernel, trained by sequential
//! minimal optimization.
//!
//! The dual problem solved is
//!
//! ```text
//! min_a  1/2 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_i <= C(y_i)
//! ```
//!
//! with `Q_ij = y_i y_j K(x_i, x_j)`, `C(+1) = c_base * w_pos` and
//! `C(-1) = c_base * w_neg`. Working pairs are chosen by maximal KKT
//! violation; ties go to the lowest index.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bad_model, invalid, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const TAU: f64 = 1e-12;
const GAMMA_SUBSAMPLE: usize = 1000;

/// Kernel width: either a fixed value or the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Value(f64),
    Named(GammaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaRule {
    #[serde(rename = "median-heuristic")]
    MedianHeuristic,
}

impl GammaSpec {
    pub const MEDIAN: GammaSpec = GammaSpec::Named(GammaRule::MedianHeuristic);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c_base: f64,
    /// Weight of the anomalous (+1) class.
    pub w_pos: f64,
    /// Weight of the nominal (-1) class.
    pub w_neg: f64,
    pub gamma: GammaSpec,
    pub kkt_tolerance: f64,
    /// Cap on SMO pair updates; `None` means 10·n.
    pub max_passes: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c_base: 1.0,
            w_pos: 1.0,
            w_neg: 1.0,
            gamma: GammaSpec::MEDIAN,
            kkt_tolerance: 1e-3,
            max_passes: None,
        }
    }
}

impl SvmConfig {
    pub fn c_pos(&self) -> f64 {
        self.c_base * self.w_pos
    }

    pub fn c_neg(&self) -> f64 {
        self.c_base * self.w_neg
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c_base", self.c_base),
            ("w_pos", self.w_pos),
            ("w_neg", self.w_neg),
            ("kkt_tolerance", self.kkt_tolerance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if let GammaSpec::Value(g) = self.gamma {
            if !(g > 0.0) || !g.is_finite() {
                return Err(invalid(format!("gamma must be positive, got {g}")));
            }
        }
        if self.max_passes == Some(0) {
            return Err(invalid("max_passes must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub x: Vec<f64>,
    /// +1 anomalous, -1 nominal.
    pub y: i8,
}

impl LabeledFeature {
    pub fn new(x: Vec<f64>, anomalous: bool) -> Self {
        Self {
            x,
            y: if anomalous { 1 } else { -1 },
        }
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit<'a, I>(rows: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut means = vec![0.0; dim];
        let mut n = 0usize;
        for row in rows.clone() {
            for (m, x) in means.iter_mut().zip(row) {
                *m += x;
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; dim];
        for row in rows {
            for ((v, x), m) in stds.iter_mut().zip(row).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        stds.iter_mut().for_each(|v| {
            let s = (*v / n).sqrt();
            *v = if s > 1e-12 { s } else { 1.0 };
        });
        Self { means, stds }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub format_version: u32,
    /// M×F, in standardized feature space.
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub c_pos: f64,
    pub c_neg: f64,
    /// False when SMO hit its update cap before the KKT gap closed.
    pub converged: bool,
    /// Final maximal KKT violation.
    pub kkt_gap: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl SvmModel {
    pub fn n_features(&self) -> usize {
        self.feature_means.len()
    }

    /// Signed margin; positive means anomalous.
    pub fn decide(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(invalid(format!(
                "feature vector has {} values, model expects {}",
                x.len(),
                self.n_features()
            )));
        }
        let z: Vec<f64> = x
            .iter()
            .zip(self.feature_means.iter().zip(&self.feature_stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        Ok(self.decide_standardized(&z))
    }

    pub(crate) fn decide_standardized(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefficients)
            .map(|(sv, c)| c * (-self.gamma * sq_dist(z, sv)).exp())
            .sum::<f64>()
            + self.bias
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(bad_model("format_version", format!("unsupported version {}", self.format_version)));
        }
        let f = self.feature_means.len();
        if f == 0 {
            return Err(bad_model("feature_means", "must not be empty"));
        }
        if self.feature_stds.len() != f || self.feature_stds.iter().any(|s| !(*s > 0.0)) {
            return Err(bad_model("feature_stds", format!("expected {f} positive values")));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(bad_model("gamma", "must be positive and finite"));
        }
        if !self.bias.is_finite() {
            return Err(bad_model("bias", "must be finite"));
        }
        if self.support_vectors.len() != self.dual_coefficients.len() {
            return Err(bad_model("dual_coefficients", "length must match support_vectors"));
        }
        if self.support_vectors.is_empty() {
            return Err(bad_model("support_vectors", "model has no support vectors"));
        }
        if self.support_vectors.iter().any(|sv| sv.len() != f || sv.iter().any(|v| !v.is_finite())) {
            return Err(bad_model("support_vectors", format!("rows must hold {f} finite values")));
        }
        let slack = 1e-9;
        for (i, c) in self.dual_coefficients.iter().enumerate() {
            let bound = if *c > 0.0 { self.c_pos } else { self.c_neg };
            if !(c.abs() > 0.0) || c.abs() > bound * (1.0 + slack) {
                return Err(bad_model(
                    format!("dual_coefficients[{i}]"),
                    format!("|alpha| = {} outside (0, {bound}]", c.abs()),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SvmModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Dense symmetric RBF kernel matrix.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn rbf(points: &[Vec<f64>], gamma: f64) -> Self {
        let n = points.len();
        let row = |i: usize, out: &mut [f64]| {
            for (j, o) in out.iter_mut().enumerate() {
                *o = (-gamma * sq_dist(&points[i], &points[j])).exp();
            }
        };
        let mut values = vec![0.0; n * n];
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            values
                .par_chunks_mut(n.max(1))
                .enumerate()
                .for_each(|(i, out)| row(i, out));
        }
        #[cfg(not(feature = "parallel"))]
        values
            .chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, out)| row(i, out));
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Result of the SMO dual solve.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset with decision `f(x) = sum a_i y_i K(x_i, x) - rho`.
    pub rho: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `e'a - 1/2 a'Qa`, the quantity SMO maximizes.
pub fn dual_objective(kernel: &KernelMatrix, y: &[f64], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let row = kernel.row(i);
        for j in 0..n {
            if alpha[j] != 0.0 {
                quad += alpha[i] * alpha[j] * y[i] * y[j] * row[j];
            }
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// SMO over a precomputed kernel. `y` holds ±1.0.
pub fn solve_dual(
    kernel: &KernelMatrix,
    y: &[f64],
    c_pos: f64,
    c_neg: f64,
    tolerance: f64,
    max_updates: usize,
) -> DualSolution {
    solve_dual_from(kernel, y, c_pos, c_neg, tolerance, max_updates, vec![0.0; y.len()])
}

/// SMO started from a feasible `alpha` (within the boxes, `y'a = 0`), e.g.
/// the solution for a smaller `c_pos`.
pub fn solve_dual_from(
    kernel: &KernelMatrix,
    y: &[f64],
    c_pos: f64,
    c_neg: f64,
    tolerance: f64,
    max_updates: usize,
    mut alpha: Vec<f64>,
) -> DualSolution {
    let n = y.len();
    let bound = |i: usize| if y[i] > 0.0 { c_pos } else { c_neg };
    assert_eq!(alpha.len(), n, "one starting coefficient per point");
    // gradient of 1/2 a'Qa - e'a
    let mut grad = vec![-1.0; n];
    for (i, a) in alpha.iter().enumerate() {
        if *a != 0.0 {
            let row = kernel.row(i);
            for t in 0..n {
                grad[t] += y[t] * y[i] * row[t] * a;
            }
        }
    }
    let mut iterations = 0;
    let mut gap;
    let mut converged = false;

    loop {
        // i maximizes -y G over I_up, j minimizes it over I_low
        let mut i_best = None;
        let mut g_max = f64::NEG_INFINITY;
        let mut j_best = None;
        let mut g_min = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let at_upper = alpha[t] >= bound(t);
            let at_lower = alpha[t] <= 0.0;
            let in_up = if y[t] > 0.0 { !at_upper } else { !at_lower };
            let in_low = if y[t] > 0.0 { !at_lower } else { !at_upper };
            if in_up && v > g_max {
                g_max = v;
                i_best = Some(t);
            }
            if in_low && v < g_min {
                g_min = v;
                j_best = Some(t);
            }
        }
        gap = g_max - g_min;
        let (Some(i), Some(j)) = (i_best, j_best) else {
            gap = 0.0;
            converged = true;
            break;
        };
        if gap < tolerance {
            converged = true;
            break;
        }
        if iterations >= max_updates {
            break;
        }
        iterations += 1;

        let (ci, cj) = (bound(i), bound(j));
        let kij = kernel.get(i, j);
        let qii = kernel.get(i, i);
        let qjj = kernel.get(j, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qii + qjj + 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        let (row_i, row_j) = (kernel.row(i), kernel.row(j));
        for t in 0..n {
            grad[t] += y[t] * (y[i] * row_i[t] * di + y[j] * row_j[t] * dj);
        }
    }

    // offset: mean over free vectors, else midpoint of the feasible interval
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= bound(t) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else {
        lb
    };

    DualSolution {
        alpha,
        rho,
        gap,
        iterations,
        converged,
    }
}

/// Median-heuristic kernel width: `1 / (2 median^2)` over pairwise distances
/// of a seeded subsample of at most 1000 points; `1/F` when the median is 0.
pub fn resolve_gamma(data: &[LabeledFeature], seed: u64) -> f64 {
    let points: Vec<&[f64]> = data.iter().map(|d| d.x.as_slice()).collect();
    median_heuristic(&points, seed)
}

pub(crate) fn median_heuristic(points: &[&[f64]], seed: u64) -> f64 {
    let dim = points.first().map_or(1, |p| p.len()).max(1);
    let chosen: Vec<&[f64]> = if points.len() > GAMMA_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, points.len(), GAMMA_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        points.to_vec()
    };
    let mut dists = Vec::with_capacity(chosen.len() * chosen.len().saturating_sub(1) / 2);
    for i in 0..chosen.len() {
        for j in i + 1..chosen.len() {
            dists.push(sq_dist(chosen[i], chosen[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0 / dim as f64;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        (dists[mid - 1] + dists[mid]) / 2.0
    } else {
        dists[mid]
    };
    if median > 0.0 {
        1.0 / (2.0 * median * median)
    } else {
        1.0 / dim as f64
    }
}

/// Standardized training set with its kernel matrix, reusable across
/// class-weight settings.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub scaler: FeatureScaler,
    pub gamma: f64,
    pub points: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel: KernelMatrix,
}

impl PreparedProblem {
    pub fn new(data: &[LabeledFeature], gamma: GammaSpec, seed: u64) -> Result<Self> {
        if data.len() < 2 {
            return Err(invalid(format!("need at least 2 training points, got {}", data.len())));
        }
        let dim = data[0].x.len();
        if dim == 0 {
            return Err(invalid("feature vectors must not be empty"));
        }
        for (i, d) in data.iter().enumerate() {
            if d.x.len() != dim {
                return Err(invalid(format!("point {i} has {} features, expected {dim}", d.x.len())));
            }
            if d.x.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("point {i} has a non-finite feature")));
            }
            if d.y != 1 && d.y != -1 {
                return Err(invalid(format!("point {i} has label {}, expected ±1", d.y)));
            }
        }
        let n_pos = data.iter().filter(|d| d.y > 0).count();
        if n_pos == 0 || n_pos == data.len() {
            return Err(invalid("training data must contain both classes"));
        }
        let scaler = FeatureScaler::fit(data.iter().map(|d| d.x.as_slice()), dim);
        let points: Vec<Vec<f64>> = data.iter().map(|d| scaler.apply(&d.x)).collect();
        let gamma = match gamma {
            GammaSpec::Value(g) => g,
            GammaSpec::Named(GammaRule::MedianHeuristic) => {
                let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
                median_heuristic(&refs, seed)
            }
        };
        let kernel = KernelMatrix::rbf(&points, gamma);
        let y = data.iter().map(|d| f64::from(d.y)).collect();
        Ok(Self {
            scaler,
            gamma,
            points,
            y,
            kernel,
        })
    }

    pub fn cross_kernel(&self, queries: &[&[f64]]) -> CrossKernel {
        let n = self.points.len();
        let gamma = self.gamma;
        let row = |q: &[f64], out: &mut [f64]| {
            let z = self.scaler.apply(q);
            for (o, p) in out.iter_mut().zip(&self.points) {
                *o = (-gamma * sq_dist(&z, p)).exp();
            }
        };
        let mut values = vec![0.0; queries.len() * n];
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            values
                .par_chunks_mut(n.max(1))
                .zip(queries.par_iter())
                .for_each(|(out, q)| row(q, out));
        }
        #[cfg(not(feature = "parallel"))]
        values.chunks_mut(n.max(1)).zip(queries).for_each(|(out, q)| row(q, out));
        CrossKernel { n_train: n, values }
    }

    pub fn expansion(&self, sol: &DualSolution) -> SupportExpansion {
        let (index, coefficients) = sol
            .alpha
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0)
            .map(|(i, a)| (i, a * self.y[i]))
            .unzip();
        SupportExpansion {
            index,
            coefficients,
            bias: -sol.rho,
        }
    }

    pub fn solve(&self, cfg: &SvmConfig) -> Result<(SvmModel, DualSolution)> {
        self.solve_from(cfg, None)
    }

    /// Like [`solve`](Self::solve), warm-started from an earlier solution of
    /// this problem. The start is used only if it is feasible under `cfg`'s
    /// boxes, which holds when `c_pos` grew and `c_neg` stayed put.
    pub fn solve_from(&self, cfg: &SvmConfig, start: Option<&DualSolution>) -> Result<(SvmModel, DualSolution)> {
        cfg.validate()?;
        let n = self.y.len();
        let max_updates = cfg.max_passes.unwrap_or(10 * n);
        let (c_pos, c_neg) = (cfg.c_pos(), cfg.c_neg());
        let alpha = match start {
            Some(s)
                if s.alpha.len() == n
                    && s.alpha.iter().zip(&self.y).all(|(a, y)| *a <= if *y > 0.0 { c_pos } else { c_neg }) =>
            {
                s.alpha.clone()
            }
            _ => vec![0.0; n],
        };
        let sol = solve_dual_from(&self.kernel, &self.y, c_pos, c_neg, cfg.kkt_tolerance, max_updates, alpha);
        if !sol.converged {
            tracing::warn!(
                iterations = sol.iterations,
                gap = sol.gap,
                "SMO stopped before reaching the KKT tolerance"
            );
        }
        let (support_vectors, dual_coefficients) = sol
            .alpha
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0)
            .map(|(i, a)| (self.points[i].clone(), a * self.y[i]))
            .unzip();
        let model = SvmModel {
            format_version: MODEL_FORMAT_VERSION,
            support_vectors,
            dual_coefficients,
            bias: -sol.rho,
            gamma: self.gamma,
            feature_means: self.scaler.means.clone(),
            feature_stds: self.scaler.stds.clone(),
            c_pos: cfg.c_pos(),
            c_neg: cfg.c_neg(),
            converged: sol.converged,
            kkt_gap: sol.gap,
        };
        Ok((model, sol))
    }
}

/// RBF kernel between query points (raw features) and the training points
/// of a [`PreparedProblem`], for scoring many solutions on one test set.
#[derive(Debug, Clone)]
pub struct CrossKernel {
    n_train: usize,
    values: Vec<f64>,
}

impl CrossKernel {
    pub fn n_queries(&self) -> usize {
        self.values.len() / self.n_train.max(1)
    }

    /// Margin of query `q` under `sol`; bit-identical to [`SvmModel::decide`]
    /// on the model built from the same solution.
    pub fn margin(&self, q: usize, expansion: &SupportExpansion) -> f64 {
        let row = &self.values[q * self.n_train..(q + 1) * self.n_train];
        expansion
            .index
            .iter()
            .zip(&expansion.coefficients)
            .map(|(i, c)| c * row[*i])
            .sum::<f64>()
            + expansion.bias
    }
}

/// Support vectors of a solution as indices into the training set.
#[derive(Debug, Clone)]
pub struct SupportExpansion {
    index: Vec<usize>,
    coefficients: Vec<f64>,
    bias: f64,
}

/// Trains a class-weighted RBF SVM.
pub fn train(data: &[LabeledFeature], cfg: &SvmConfig, seed: u64) -> Result<SvmModel> {
    cfg.validate()?;
    let problem = PreparedProblem::new(data, cfg.gamma, seed)?;
    problem.solve(cfg).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> Vec<LabeledFeature> {
        vec![LabeledFeature::new(vec![-1.0], false), LabeledFeature::new(vec![1.0], true)]
    }

    #[test]
    fn symmetric_pair_splits_at_zero() {
        let m = train(&pair(), &SvmConfig::default(), 0).unwrap();
        assert!(m.decide(&[-0.5]).unwrap() < 0.0);
        assert!(m.decide(&[0.5]).unwrap() > 0.0);
        assert!(m.decide(&[0.0]).unwrap().abs() < 1e-9);
        assert_eq!(m.support_vectors.len(), 2);
    }

    #[test]
    fn single_class_is_rejected() {
        let data = vec![LabeledFeature::new(vec![0.0], true), LabeledFeature::new(vec![1.0], true)];
        assert!(train(&data, &SvmConfig::default(), 0).is_err());
        assert!(train(&pair()[..1], &SvmConfig::default(), 0).is_err());
    }

    #[test]
    fn decide_checks_dimension() {
        let m = train(&pair(), &SvmConfig::default(), 0).unwrap();
        assert!(m.decide(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn gamma_closed_forms() {
        let same = vec![LabeledFeature::new(vec![3.0, 3.0], false); 5];
        assert_eq!(resolve_gamma(&same, 0), 0.5);
        let two = vec![LabeledFeature::new(vec![0.0], false), LabeledFeature::new(vec![2.0], true)];
        assert_eq!(resolve_gamma(&two, 0), 1.0 / 8.0);
    }

    #[test]
    fn config_parses_gamma_forms() {
        let c: SvmConfig = toml::from_str("gamma = \"median-heuristic\"\nw_pos = 3.0").unwrap();
        assert_eq!(c.gamma, GammaSpec::MEDIAN);
        assert_eq!(c.w_pos, 3.0);
        let c: SvmConfig = toml::from_str("gamma = 0.25").unwrap();
        assert_eq!(c.gamma, GammaSpec::Value(0.25));
    }

    #[test]
    fn json_round_trip_preserves_margins() {
        let m = train(&pair(), &SvmConfig::default(), 0).unwrap();
        let back = SvmModel::from_json(&m.to_json()).unwrap();
        for x in [-2.0, -0.3, 0.0, 0.7, 5.0] {
            assert_eq!(m.decide(&[x]).unwrap(), back.decide(&[x]).unwrap());
        }
        let mut bad = m;
        bad.dual_coefficients[0] = 10.0;
        assert!(SvmModel::from_json(&bad.to_json()).is_err());
    }
}
