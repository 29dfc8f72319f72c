use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lloyd's k-means with k-means++ seeding.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid (lowest index on ties).
pub fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

impl KMeans {
    /// May return fewer than `k` centroids when the data has fewer distinct points.
    pub fn fit(points: &[&[f64]], k: usize, seed: u64, max_iter: usize) -> Self {
        assert!(!points.is_empty(), "k-means needs at least one point");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].to_vec()];
        let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
        while centroids.len() < k {
            let total: f64 = d2.iter().sum();
            if !(total > 0.0) {
                break;
            }
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            centroids.push(points[pick].to_vec());
            for (d, p) in d2.iter_mut().zip(points) {
                *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
            }
        }

        let dim = points[0].len();
        let mut assignments = vec![0; points.len()];
        for iter in 0..max_iter {
            let mut changed = false;
            for (a, p) in assignments.iter_mut().zip(points) {
                let n = nearest(&centroids, p);
                if *a != n || iter == 0 {
                    changed |= *a != n;
                    *a = n;
                }
            }
            if iter > 0 && !changed {
                break;
            }
            let mut sums = vec![vec![0.0; dim]; centroids.len()];
            let mut counts = vec![0usize; centroids.len()];
            for (a, p) in assignments.iter().zip(points) {
                counts[*a] += 1;
                for (s, x) in sums[*a].iter_mut().zip(p.iter()) {
                    *s += x;
                }
            }
            for (c, (s, n)) in centroids.iter_mut().zip(sums.into_iter().zip(counts)) {
                // empty clusters keep their previous centroid
                if n > 0 {
                    *c = s.into_iter().map(|v| v / n as f64).collect();
                }
            }
        }
        Self { centroids, assignments }
    }
}
