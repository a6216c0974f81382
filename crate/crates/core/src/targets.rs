//! Soft occupancy targets and occupancy-map decoding.
//!
//! Targets are the per-cell maximum of isotropic Gaussians centred on the
//! ground-truth positions. Decoding keeps cells at or above a probability
//! threshold and runs greedy distance-based NMS on the ground plane.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GroundGrid;
use crate::tensor::Tensor;

/// Minimum occupancy probability of a candidate cell.
pub const DEFAULT_THRESHOLD: f64 = 0.4;
/// NMS radius on the ground plane, meters.
pub const DEFAULT_NMS_RADIUS: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapRole {
    Prediction,
    SoftTarget,
    BinaryTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyMap {
    /// 1 x rows x cols
    pub map: Tensor<f32>,
    pub role: MapRole,
}

impl OccupancyMap {
    pub fn prediction(map: Tensor<f32>) -> Self {
        Self {
            map,
            role: MapRole::Prediction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

impl Detection {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    fn dist(&self, other: &Detection) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Scored ground-plane detections, meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionSet(pub Vec<Detection>);

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Detection> {
        self.0.iter()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.0.iter().map(Detection::position).collect()
    }
}

/// Max-combined Gaussian soft target; `sigma` is in cells.
pub fn gaussian_target(g: &GroundGrid, gt_points: &[[f64; 2]], sigma: f64) -> Result<OccupancyMap> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!(
            "gaussian sigma {sigma} must be positive"
        )));
    }
    let mut map = Tensor::zeros(1, g.rows, g.cols);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let data = map.data_mut();
    for p in gt_points {
        for i in 0..g.rows {
            for j in 0..g.cols {
                let c = g.center(i, j);
                let dx = (c[0] - p[0]) / g.cell_size;
                let dy = (c[1] - p[1]) / g.cell_size;
                let v = (-(dx * dx + dy * dy) * inv).exp() as f32;
                let cell = &mut data[i * g.cols + j];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
    Ok(OccupancyMap {
        map,
        role: MapRole::SoftTarget,
    })
}

/// Greedy NMS: stable sort by descending score, keep a candidate iff no
/// kept detection is strictly closer than `radius`.
pub fn nms(candidates: &DetectionSet, radius: f64) -> DetectionSet {
    let mut order: Vec<&Detection> = candidates.iter().collect();
    order.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    let mut kept: Vec<Detection> = Vec::new();
    for c in order {
        if kept.iter().all(|k| k.dist(c) >= radius) {
            kept.push(*c);
        }
    }
    DetectionSet(kept)
}

/// Thresholded cells (row-major, scored by value, at cell centres) then NMS.
pub fn decode(
    pom: &OccupancyMap,
    g: &GroundGrid,
    threshold: f64,
    nms_radius: f64,
) -> Result<DetectionSet> {
    let (c, h, w) = pom.map.shape();
    if (c, h, w) != (1, g.rows, g.cols) {
        return Err(Error::shape(format!(
            "occupancy map {:?} does not match a {}x{} grid",
            pom.map.shape(),
            g.rows,
            g.cols
        )));
    }
    let mut candidates = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let v = pom.map.get(0, i, j) as f64;
            if v >= threshold {
                let [x, y] = g.center(i, j);
                candidates.push(Detection { x, y, score: v });
            }
        }
    }
    Ok(nms(&DetectionSet(candidates), nms_radius))
}

/// `frame,x_m,y_m,score` lines, frames in the given order.
pub fn detections_to_csv(frames: &[(usize, DetectionSet)]) -> String {
    let mut s = String::new();
    for (frame, dets) in frames {
        for d in dets.iter() {
            let _ = writeln!(s, "{frame},{},{},{}", d.x, d.y, d.score);
        }
    }
    s
}

/// `frame,x_m,y_m` lines.
pub fn ground_truth_to_csv(frames: &[(usize, Vec<[f64; 2]>)]) -> String {
    let mut s = String::new();
    for (frame, pts) in frames {
        for p in pts {
            let _ = writeln!(s, "{frame},{},{}", p[0], p[1]);
        }
    }
    s
}

fn parse_fields(line: &str, lineno: usize, want: usize) -> Result<(usize, Vec<f64>)> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    if parts.len() != want + 1 {
        return Err(Error::Parse(format!(
            "line {lineno}: expected {} fields, found {}",
            want + 1,
            parts.len()
        )));
    }
    let frame = parts[0]
        .parse()
        .map_err(|e| Error::Parse(format!("line {lineno}: frame: {e}")))?;
    let vals = parts[1..]
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {lineno}: {e}")))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::Parse(format!("line {lineno}: non-finite value")))
                    }
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((frame, vals))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#') && !l.starts_with("frame"))
}

pub fn detections_from_csv(text: &str) -> Result<BTreeMap<usize, DetectionSet>> {
    let mut out: BTreeMap<usize, DetectionSet> = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let (frame, v) = parse_fields(line, n, 3)?;
        out.entry(frame).or_default().0.push(Detection {
            x: v[0],
            y: v[1],
            score: v[2],
        });
    }
    Ok(out)
}

pub fn ground_truth_from_csv(text: &str) -> Result<BTreeMap<usize, Vec<[f64; 2]>>> {
    let mut out: BTreeMap<usize, Vec<[f64; 2]>> = BTreeMap::new();
    for (n, line) in data_lines(text) {
        let (frame, v) = parse_fields(line, n, 2)?;
        out.entry(frame).or_default().push([v[0], v[1]]);
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<BTreeMap<usize, DetectionSet>> {
    detections_from_csv(&crate::io::read_to_string(path)?)
}

pub fn read_ground_truth(path: &Path) -> Result<BTreeMap<usize, Vec<[f64; 2]>>> {
    ground_truth_from_csv(&crate::io::read_to_string(path)?)
}
