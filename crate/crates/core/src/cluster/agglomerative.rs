//! Average-linkage agglomerative clustering on cosine distance, cut at `k` groups.

use super::Space;

pub fn average_linkage(space: &Space, k: usize) -> Vec<usize> {
    let n = space.len();
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut dist: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| space.distance(i, j)).collect()).collect();
    let mut live = n;
    while live > k.max(1) {
        // closest pair of live groups, lowest indices on ties
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..n {
            if members[a].is_none() {
                continue;
            }
            for b in a + 1..n {
                if members[b].is_none() {
                    continue;
                }
                if best.is_none_or(|(_, _, d)| dist[a][b] < d) {
                    best = Some((a, b, dist[a][b]));
                }
            }
        }
        let Some((a, b, _)) = best else { break };
        let (na, nb) = (
            members[a].as_ref().map_or(0, Vec::len) as f64,
            members[b].as_ref().map_or(0, Vec::len) as f64,
        );
        for c in 0..n {
            if c != a && c != b && members[c].is_some() {
                let d = (na * dist[a][c] + nb * dist[b][c]) / (na + nb);
                dist[a][c] = d;
                dist[c][a] = d;
            }
        }
        let moved = members[b].take().unwrap_or_default();
        if let Some(m) = members[a].as_mut() {
            m.extend(moved);
        }
        live -= 1;
    }
    let mut labels = vec![0; n];
    for (label, group) in members.iter().flatten().enumerate() {
        for &i in group {
            labels[i] = label;
        }
    }
    labels
}
