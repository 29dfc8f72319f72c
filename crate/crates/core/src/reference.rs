//! Slow reference implementations used to check the fast paths.
//!
//! Nothing here is used at run time. Each function recomputes its answer
//! from first principles so it shares no code with the module it checks.

use crate::hmm::HmmModel;
use crate::svm::KernelMatrix;

/// Log-likelihood of `observations` by summing over every hidden-state path.
/// Cost is `K^T`; keep both small.
pub fn path_enumeration_log_likelihood(model: &HmmModel, observations: &[Vec<f64>]) -> f64 {
    let k = model.n_states;
    let t_len = observations.len();
    assert!(t_len > 0 && (k as f64).powi(t_len as i32) <= 1e7, "too many paths");
    // emission densities, computed directly in raw units
    let dens: Vec<Vec<f64>> = observations
        .iter()
        .map(|o| {
            (0..k)
                .map(|s| {
                    o.iter()
                        .enumerate()
                        .map(|(d, x)| {
                            let sd = model.channel_stds[d];
                            let z = (x - model.channel_means[d]) / sd;
                            let var = model.emission_vars[s][d];
                            let diff = z - model.emission_means[s][d];
                            (-diff * diff / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
                        })
                        .product::<f64>()
                })
                .collect()
        })
        .collect();
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    loop {
        let mut p = model.initial_dist[path[0]] * dens[0][path[0]];
        for t in 1..t_len {
            p *= model.transition[path[t - 1]][path[t]] * dens[t][path[t]];
        }
        total += p;
        // odometer increment
        let mut t = 0;
        while t < t_len {
            path[t] += 1;
            if path[t] < k {
                break;
            }
            path[t] = 0;
            t += 1;
        }
        if t == t_len {
            break;
        }
    }
    total.ln()
}

/// Per-point box bound for labels `y` (±1).
fn bounds(y: &[f64], c_pos: f64, c_neg: f64) -> Vec<f64> {
    y.iter().map(|v| if *v > 0.0 { c_pos } else { c_neg }).collect()
}

/// Euclidean projection onto `{0 <= a_i <= c_i, y'a = 0}` by bisection on
/// the multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: &[f64]) -> Vec<f64> {
    let at = |lambda: f64| -> (Vec<f64>, f64) {
        let a: Vec<f64> = v
            .iter()
            .zip(y)
            .zip(c)
            .map(|((vi, yi), ci)| (vi - lambda * yi).clamp(0.0, *ci))
            .collect();
        let s = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
        (a, s)
    };
    // y'a(lambda) is non-increasing in lambda
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + c.iter().fold(0.0, |m: f64, x| m.max(*x)) + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi)).0
}

/// Dual SVM solution by accelerated projected gradient ascent.
///
/// Maximizes `e'a - 1/2 a'Qa` with `Q_ij = y_i y_j K_ij` over the class
/// boxes and `y'a = 0`. Returns the coefficients and the final objective.
pub fn projected_gradient_dual(kernel: &KernelMatrix, y: &[f64], c_pos: f64, c_neg: f64, iterations: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let c = bounds(y, c_pos, c_neg);
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * kernel.get(i, j)).collect()).collect();
    // Gershgorin bound on the largest eigenvalue
    let lipschitz = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max).max(1e-12);
    let objective = |a: &[f64]| -> f64 {
        let quad: f64 = (0..n).map(|i| a[i] * (0..n).map(|j| q[i][j] * a[j]).sum::<f64>()).sum();
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    let mut best = objective(&a);
    for _ in 0..iterations {
        let grad: Vec<f64> = (0..n).map(|i| 1.0 - (0..n).map(|j| q[i][j] * z[j]).sum::<f64>()).collect();
        let step: Vec<f64> = (0..n).map(|i| z[i] + grad[i] / lipschitz).collect();
        let next = project(&step, y, &c);
        let f_next = objective(&next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f_next < best {
            // restart momentum when the objective drops
            z = a.clone();
            t = 1.0;
            continue;
        }
        best = f_next;
        z = (0..n).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - a[i])).collect();
        a = next;
        t = t_next;
    }
    let f = objective(&a);
    (a, f)
}

/// Largest violation of the soft-margin optimality conditions over the
/// training points, for decision `f(x_i) = sum_j a_j y_j K_ij - rho`:
/// `a_i = 0` needs `y_i f_i >= 1`, `a_i = C_i` needs `y_i f_i <= 1`, and a
/// free `a_i` needs `y_i f_i = 1`.
pub fn kkt_residual(kernel: &KernelMatrix, y: &[f64], alpha: &[f64], rho: f64, c_pos: f64, c_neg: f64) -> f64 {
    let n = y.len();
    let c = bounds(y, c_pos, c_neg);
    let mut worst = 0.0f64;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alpha[j] * y[j] * kernel.get(i, j)).sum::<f64>() - rho;
        let m = y[i] * f - 1.0;
        let v = if alpha[i] <= 0.0 {
            (-m).max(0.0)
        } else if alpha[i] >= c[i] {
            m.max(0.0)
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Median of all pairwise Euclidean distances; the mean of the two middle
/// values for an even count.
pub fn median_pairwise_distance(points: &[&[f64]]) -> f64 {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(points[i].iter().zip(points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    assert!(!d.is_empty(), "need two points");
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}
