//! Affinity propagation on the cosine matrix (responsibility/availability message
//! passing with damping). Preference is the median of all similarities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{percentile, ClusterParams, Space};

pub fn affinity_propagation(space: &Space, params: &ClusterParams, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
    let n = space.len();
    if n < 2 {
        return vec![Some(0); n];
    }
    let flat: Vec<f64> = space.sim.iter().flatten().copied().collect();
    let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        // every point is equally similar to every other: nothing to separate
        return vec![Some(0); n];
    }
    let preference = percentile(&flat, 50.0).unwrap_or(0.0);

    let mut s = space.sim.clone();
    for (i, row) in s.iter_mut().enumerate() {
        row[i] = preference;
    }
    // tiny jitter breaks exact ties between candidate exemplars
    for row in s.iter_mut() {
        for v in row.iter_mut() {
            *v += 1e-12 * (rng.random::<f64>() - 0.5);
        }
    }

    let damping = params.affinity_damping;
    let conv = params.affinity_convergence_iter.max(1);
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut history: Vec<Vec<bool>> = vec![vec![false; conv]; n];
    let mut exemplar = vec![false; n];

    for it in 0..params.affinity_max_iter {
        for i in 0..n {
            let (mut best, mut best_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[i][k] + s[i][k];
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let new = if k == best_k { s[i][k] - second } else { s[i][k] - best };
                r[i][k] = damping * r[i][k] + (1.0 - damping) * new;
            }
        }
        for k in 0..n {
            let pos: f64 = (0..n).filter(|&i| i != k).map(|i| r[i][k].max(0.0)).sum();
            let total = pos + r[k][k];
            for i in 0..n {
                let new = if i == k { total - r[k][k] } else { (total - r[i][k].max(0.0)).min(0.0) };
                a[i][k] = damping * a[i][k] + (1.0 - damping) * new;
            }
        }
        for k in 0..n {
            exemplar[k] = a[k][k] + r[k][k] > 0.0;
            history[k][it % conv] = exemplar[k];
        }
        let count = exemplar.iter().filter(|&&e| e).count();
        if it >= conv {
            let stable = history.iter().all(|h| h.iter().all(|&x| x) || h.iter().all(|&x| !x));
            if stable && count > 0 {
                break;
            }
        }
    }

    let mut centers: Vec<usize> = (0..n).filter(|&k| exemplar[k]).collect();
    if centers.is_empty() {
        return vec![None; n];
    }
    let nearest = |i: usize, centers: &[usize]| -> usize {
        if let Some(pos) = centers.iter().position(|&c| c == i) {
            return pos;
        }
        (0..centers.len()).fold(0, |b, c| if s[i][centers[c]] > s[i][centers[b]] { c } else { b })
    };
    // refine each exemplar to the member with the largest summed similarity
    let labels: Vec<usize> = (0..n).map(|i| nearest(i, &centers)).collect();
    for (c, center) in centers.iter_mut().enumerate() {
        let group: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let score = |j: usize| group.iter().map(|&i| s[i][j]).sum::<f64>();
        *center = group.iter().copied().fold(group[0], |b, j| if score(j) > score(b) { j } else { b });
    }
    (0..n).map(|i| Some(nearest(i, &centers))).collect()
}
