//! Normalized spectral clustering: top-k eigenvectors of `D^-1/2 W D^-1/2` with
//! `W = max(0, cos)`, row-normalized, then seeded k-means.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_chacha::ChaCha8Rng;

use super::{kmeans, ClusterParams, Space};

pub fn spectral(space: &Space, k: usize, params: &ClusterParams, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = space.len();
    let w = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { space.similarity(i, j).max(0.0) });
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / w.row(i).sum().sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let k = k.clamp(1, n);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = order[..k].iter().map(|&c| eig.eigenvectors[(i, c)]).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 { row.iter().map(|x| x / norm).collect() } else { row }
        })
        .collect();
    kmeans::kmeans(&rows, k, params.kmeans_restarts, params.kmeans_max_iter, rng)
}
