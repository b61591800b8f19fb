//! OPTICS ordering on cosine distance with xi-steep cluster extraction.
//!
//! Extraction follows the usual steep-area scheme with an infinite sentinel appended to
//! the reachability plot so clusters touching the end of the ordering get closed. Both
//! infinities (the sentinel and the first point's reachability) would otherwise let a
//! lone far point at either end of the ordering join its neighbouring cluster, so ranges
//! that touch an end are trimmed when that end point is steeply above their interior.

use super::Space;

struct Ordering {
    order: Vec<usize>,
    reachability: Vec<f64>,
    predecessor: Vec<Option<usize>>,
}

fn build_ordering(space: &Space, min_samples: usize) -> Ordering {
    let n = space.len();
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| space.distance(i, j)).collect();
            d.sort_by(f64::total_cmp);
            // the point itself counts toward min_samples
            d.get(min_samples - 1).copied().unwrap_or(f64::INFINITY)
        })
        .collect();
    let mut reach = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let p = (0..n)
            .filter(|&i| !done[i])
            .fold(None, |b: Option<usize>, i| match b {
                Some(b) if reach[b] <= reach[i] => Some(b),
                _ => Some(i),
            })
            .expect("unprocessed point remains");
        done[p] = true;
        order.push(p);
        if core[p].is_finite() {
            for q in (0..n).filter(|&q| !done[q]) {
                let rd = space.distance(p, q).max(core[p]);
                if rd < reach[q] {
                    reach[q] = rd;
                    pred[q] = Some(p);
                }
            }
        }
    }
    Ordering { order, reachability: reach, predecessor: pred }
}

fn extend_region(steep: &[bool], xward: &[bool], start: usize, min_samples: usize) -> usize {
    let mut non_xward = 0;
    let mut end = start;
    for index in start..steep.len() {
        if steep[index] {
            non_xward = 0;
            end = index;
        } else if !xward[index] {
            non_xward += 1;
            if non_xward > min_samples {
                break;
            }
        } else {
            return end;
        }
    }
    end
}

struct SteepDown {
    start: usize,
    end: usize,
    mib: f64,
}

fn update_filter(sdas: &mut Vec<SteepDown>, mib: f64, xi_c: f64, plot: &[f64]) {
    if mib.is_infinite() {
        sdas.clear();
        return;
    }
    sdas.retain(|d| mib <= plot[d.start] * xi_c);
    for d in sdas.iter_mut() {
        d.mib = d.mib.max(mib);
    }
}

fn correct_predecessor(
    plot: &[f64],
    pred: &[Option<usize>],
    order: &[usize],
    s: usize,
    mut e: usize,
) -> Option<(usize, usize)> {
    while s < e {
        if plot[s] > plot[e] {
            return Some((s, e));
        }
        if order[s..e].iter().any(|&o| pred[e] == Some(o)) {
            return Some((s, e));
        }
        e -= 1;
    }
    None
}

/// Candidate clusters as inclusive ranges over the ordering, in discovery order.
fn xi_clusters(
    reach: &[f64],
    pred: &[Option<usize>],
    order: &[usize],
    xi: f64,
    min_samples: usize,
    min_cluster_size: usize,
) -> Vec<(usize, usize)> {
    let n = reach.len();
    let mut plot = reach.to_vec();
    plot.push(f64::INFINITY);
    let xi_c = 1.0 - xi;
    let ratio: Vec<f64> = (0..n).map(|i| plot[i] / plot[i + 1]).collect();
    let steep_up: Vec<bool> = ratio.iter().map(|&r| r <= xi_c).collect();
    let steep_down: Vec<bool> = ratio.iter().map(|&r| r >= 1.0 / xi_c).collect();
    let down: Vec<bool> = ratio.iter().map(|&r| r > 1.0).collect();
    let up: Vec<bool> = ratio.iter().map(|&r| r < 1.0).collect();

    let mut sdas: Vec<SteepDown> = Vec::new();
    let mut clusters = Vec::new();
    let mut index = 0;
    let mut mib: f64 = 0.0;
    for steep_index in (0..n).filter(|&i| steep_up[i] || steep_down[i]) {
        if steep_index < index {
            continue;
        }
        mib = plot[index..=steep_index].iter().copied().fold(mib, f64::max);
        update_filter(&mut sdas, mib, xi_c, &plot);
        if steep_down[steep_index] {
            let end = extend_region(&steep_down, &up, steep_index, min_samples);
            sdas.push(SteepDown { start: steep_index, end, mib: 0.0 });
            index = end + 1;
            mib = plot[index];
            continue;
        }
        let u_start = steep_index;
        let u_end = extend_region(&steep_up, &down, u_start, min_samples);
        index = u_end + 1;
        mib = plot[index];
        let mut found = Vec::new();
        for d in &sdas {
            let mut c_start = d.start;
            let mut c_end = u_end;
            if plot[c_end + 1] * xi_c < d.mib {
                continue;
            }
            let d_max = plot[d.start];
            if d_max * xi_c >= plot[c_end + 1] {
                while plot[c_start + 1] > plot[c_end + 1] && c_start < d.end {
                    c_start += 1;
                }
            } else if plot[c_end + 1] * xi_c >= d_max {
                while plot[c_end - 1] > d_max && c_end > u_start {
                    c_end -= 1;
                }
            }
            // a range closed only by the sentinel or opened only by the first point's
            // infinite reachability drops that end point when it sits steeply above the
            // interior of the range
            if c_end >= c_start + 2 {
                let interior = |a: usize, b: usize| plot[a..=b].iter().copied().fold(0.0, f64::max);
                if c_end == n - 1 && plot[c_end] * xi_c > interior(c_start + 1, c_end - 1) {
                    c_end -= 1;
                }
                if c_start == 0 && d.end >= 1 && c_end >= 2 && plot[1] * xi_c > interior(2, c_end) {
                    c_start = 1;
                }
            }
            let Some((s, e)) = correct_predecessor(&plot, pred, order, c_start, c_end) else {
                continue;
            };
            if e - s + 1 < min_cluster_size || s > d.end || e < u_start {
                continue;
            }
            found.push((s, e));
        }
        found.reverse();
        clusters.extend(found);
    }
    clusters
}

/// Per-point labels; `None` marks noise.
pub fn optics_xi(space: &Space, min_samples: usize, xi: f64) -> Vec<Option<usize>> {
    let n = space.len();
    let ord = build_ordering(space, min_samples);
    let reach: Vec<f64> = ord.order.iter().map(|&p| ord.reachability[p]).collect();
    let pred: Vec<Option<usize>> = ord.order.iter().map(|&p| ord.predecessor[p]).collect();
    let ranges = xi_clusters(&reach, &pred, &ord.order, xi, min_samples, 2);
    let mut by_pos: Vec<Option<usize>> = vec![None; n];
    let mut label = 0;
    for (s, e) in ranges {
        if by_pos[s..=e].iter().all(Option::is_none) {
            by_pos[s..=e].iter_mut().for_each(|l| *l = Some(label));
            label += 1;
        }
    }
    let mut labels = vec![None; n];
    for (pos, &p) in ord.order.iter().enumerate() {
        labels[p] = by_pos[pos];
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::Embedding;

    fn at_angles(angles: &[f64]) -> Space {
        let e: Vec<Embedding> =
            angles.iter().map(|t| Embedding::new(vec![t.cos(), t.sin()]).unwrap()).collect();
        Space::new(&e).unwrap()
    }

    #[test]
    fn reachability_by_hand() {
        // blob at 0, .01, .02, .05 rad plus a point at 1.4 rad
        let space = at_angles(&[0.0, 0.02, 0.05, 0.01, 1.4]);
        let ord = build_ordering(&space, 2);
        assert_eq!(ord.order, vec![0, 3, 1, 2, 4]);
        let d = |a: f64| 1.0 - a.cos();
        // each point is first reached from its nearest processed neighbour, floored by
        // that neighbour's core distance (distance to its own nearest neighbour)
        let expected = [f64::INFINITY, d(0.01), d(0.01), d(0.03), d(1.35)];
        for (pos, &p) in ord.order.iter().enumerate() {
            let r = ord.reachability[p];
            if expected[pos].is_infinite() {
                assert!(r.is_infinite());
            } else {
                assert!((r - expected[pos]).abs() < 1e-12, "pos {pos}: {r} vs {}", expected[pos]);
            }
        }
        let labels = optics_xi(&space, 2, 0.05);
        assert_eq!(labels[4], None);
        assert!(labels[..4].iter().all(|l| *l == labels[0] && l.is_some()));
    }

    #[test]
    fn outlier_first_in_ordering_is_noise() {
        let space = at_angles(&[1.4, 0.0, 0.02, 0.05, 0.01]);
        let labels = optics_xi(&space, 2, 0.05);
        assert_eq!(labels[0], None);
        assert!(labels[1..].iter().all(|l| *l == labels[1] && l.is_some()));
    }

    #[test]
    fn blob_at_end_still_closes() {
        let space = at_angles(&[0.0, 0.01, 0.02, 1.0, 1.01, 1.02]);
        let labels = optics_xi(&space, 2, 0.05);
        assert!(labels.iter().all(Option::is_some));
        assert_eq!(labels[0], labels[2]);
        assert_eq!(labels[3], labels[5]);
        assert_ne!(labels[0], labels[3]);
    }
}
