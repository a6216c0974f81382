//! CLEAR-style point-detection metrics on the ground plane.
//!
//! Detections are matched to ground truth by an optimal assignment that
//! first maximizes the number of pairs within the distance threshold, then
//! minimizes the total matched distance. Counts are pooled over frames
//! before MODA, MODP, precision and recall are formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True-positive distance threshold, meters.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatch {
    /// (detection index, ground-truth index, distance in meters)
    pub pairs: Vec<(usize, usize, f64)>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub threshold: f64,
}

impl FrameMatch {
    pub fn n_gt(&self) -> usize {
        self.tp + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub moda: f64,
    pub modp: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_gt: usize,
}

/// Minimum-cost perfect assignment of a square cost matrix (row -> column).
///
/// Shortest augmenting paths with potentials, O(n³).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Optimal matching of one frame; pairs farther than `threshold` are forbidden.
pub fn match_frame(dets: &[[f64; 2]], gts: &[[f64; 2]], threshold: f64) -> FrameMatch {
    let n = dets.len().max(gts.len());
    // Allowed edges cost d - big, forbidden and padding edges cost 0. `big`
    // exceeds any achievable total distance, so one more pair always wins.
    let big = threshold * (n as f64 + 1.0) + 1.0;
    let mut cost = vec![vec![0.0; n]; n];
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let dd = dist(d, g);
            if dd <= threshold {
                cost[i][j] = dd - big;
            }
        }
    }
    let assignment = hungarian(&cost);
    let mut pairs = Vec::new();
    for (i, &j) in assignment.iter().enumerate() {
        if i < dets.len() && j < gts.len() {
            let dd = dist(&dets[i], &gts[j]);
            if dd <= threshold {
                pairs.push((i, j, dd));
            }
        }
    }
    let tp = pairs.len();
    FrameMatch {
        pairs,
        tp,
        fp: dets.len() - tp,
        fn_: gts.len() - tp,
        threshold,
    }
}

/// Pooled metrics over all frames.
pub fn compute_metrics(matches: &[FrameMatch]) -> Result<MetricsReport> {
    if matches.is_empty() {
        return Err(Error::EmptyInput);
    }
    let tp: usize = matches.iter().map(|m| m.tp).sum();
    let fp: usize = matches.iter().map(|m| m.fp).sum();
    let fn_: usize = matches.iter().map(|m| m.fn_).sum();
    let n_gt = tp + fn_;
    let closeness: f64 = matches
        .iter()
        .flat_map(|m| m.pairs.iter().map(move |p| 1.0 - p.2 / m.threshold))
        .sum();
    let ratio = |num: f64, den: usize, empty: f64| if den == 0 { empty } else { num / den as f64 };
    Ok(MetricsReport {
        // With no ground truth each false positive costs one whole point.
        moda: 1.0 - (fp + fn_) as f64 / n_gt.max(1) as f64,
        modp: ratio(closeness, tp, 0.0),
        precision: ratio(tp as f64, tp + fp, 1.0),
        recall: ratio(tp as f64, n_gt, 0.0),
        tp,
        fp,
        fn_,
        n_gt,
    })
}
