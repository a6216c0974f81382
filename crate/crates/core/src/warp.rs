//! Anchor-free multiview aggregation.
//!
//! Every ground cell is projected into each camera once to build a
//! [`SamplingGrid`]; per-camera feature maps are then bilinearly sampled at
//! those positions and stacked with the coordinate map. Cells a camera does
//! not see stay exactly zero.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{ground_to_image, Homography};
use crate::error::{Error, Result};
use crate::grid::GroundGrid;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Per-cell sampling position in feature-map pixels (integer = pixel centre).
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid {
    pub rows: usize,
    pub cols: usize,
    /// (H_f, W_f) of the maps this grid samples.
    pub feat_size: (usize, usize),
    /// Row-major, `None` for cells that must read as zero.
    pub entries: Vec<Option<[f64; 2]>>,
}

impl SamplingGrid {
    pub fn entry(&self, i: usize, j: usize) -> Option<[f64; 2]> {
        self.entries[i * self.cols + j]
    }

    pub fn valid_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}

/// Projects every cell centre through `h`.
///
/// Validity is decided in image pixels: the cell must be in front of the
/// camera and land inside `[0, W_i) x [0, H_i)`. Valid positions are then
/// scaled by `(W_f / W_i, H_f / H_i)` into feature pixels.
pub fn build_sampling_grid(
    h: &Homography<f64>,
    g: &GroundGrid,
    image_size: (usize, usize),
    feat_size: (usize, usize),
) -> SamplingGrid {
    let (hi, wi) = (image_size.0 as f64, image_size.1 as f64);
    let sx = feat_size.1 as f64 / wi;
    let sy = feat_size.0 as f64 / hi;
    let mut entries = Vec::with_capacity(g.len());
    for i in 0..g.rows {
        for j in 0..g.cols {
            let entry = ground_to_image(h, &g.center(i, j)).and_then(|[u, v]| {
                let inside = u >= 0.0 && u < wi && v >= 0.0 && v < hi;
                inside.then(|| [u * sx, v * sy])
            });
            entries.push(entry);
        }
    }
    SamplingGrid {
        rows: g.rows,
        cols: g.cols,
        feat_size,
        entries,
    }
}

/// Bilinear neighbours of `(u, v)` that fall inside a `w x h` map, as
/// (flat pixel index, weight). Neighbours outside contribute nothing.
#[inline]
fn bilinear_taps(u: f64, v: f64, w: usize, h: usize) -> impl Iterator<Item = (usize, f64)> {
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
    .into_iter()
    .filter(move |&(x, y, _)| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h)
    .map(move |(x, y, wt)| (y as usize * w + x as usize, wt))
}

/// Samples `f` on the ground plane. Output is `C x rows x cols`.
pub fn warp_features<T: Real>(f: &Tensor<T>, s: &SamplingGrid) -> Result<Tensor<T>> {
    let (c, hf, wf) = f.shape();
    if (hf, wf) != s.feat_size {
        return Err(Error::shape(format!(
            "feature map {hf}x{wf} but sampling grid expects {}x{}",
            s.feat_size.0, s.feat_size.1
        )));
    }
    let cells = s.rows * s.cols;
    let mut out = Tensor::zeros(c, s.rows, s.cols);
    let plane = hf * wf;
    let src = f.data();
    let dst = out.data_mut();
    for (cell, entry) in s.entries.iter().enumerate() {
        let Some([u, v]) = *entry else { continue };
        for (px, wt) in bilinear_taps(u, v, wf, hf) {
            let wt = T::lit(wt);
            for ch in 0..c {
                dst[ch * cells + cell] += wt * src[ch * plane + px];
            }
        }
    }
    Ok(out)
}

/// Stacks the warped maps in camera order and appends the coordinate map.
pub fn aggregate<T: Real>(warped: &[Tensor<T>], coord: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, rows, cols) = coord.shape();
    let per_view = warped.first().map_or(0, |t| t.channels());
    for (k, t) in warped.iter().enumerate() {
        if t.shape() != (per_view, rows, cols) {
            return Err(Error::shape(format!(
                "view {k} is {:?}, expected {:?}",
                t.shape(),
                (per_view, rows, cols)
            )));
        }
    }
    let mut data = Vec::with_capacity((warped.len() * per_view + coord.channels()) * rows * cols);
    for t in warped {
        data.extend_from_slice(t.data());
    }
    data.extend_from_slice(coord.data());
    Tensor::from_vec(warped.len() * per_view + coord.channels(), rows, cols, data)
}

/// What gets projected onto the ground plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Raw 3-channel renders.
    Images,
    /// Per-view feature maps.
    #[default]
    Features,
    /// Single-view foot score map only (last feature channel).
    Results,
}

impl ProjectionMode {
    pub const ALL: [ProjectionMode; 3] = [Self::Images, Self::Features, Self::Results];

    /// Channels contributed per camera given the feature width.
    pub fn channels_per_view(self, image_channels: usize, feature_channels: usize) -> usize {
        match self {
            Self::Images => image_channels,
            Self::Features => feature_channels,
            Self::Results => 1,
        }
    }
}

impl fmt::Display for ProjectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Images => "images",
            Self::Features => "features",
            Self::Results => "results",
        })
    }
}

impl FromStr for ProjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "images" => Ok(Self::Images),
            "features" => Ok(Self::Features),
            "results" => Ok(Self::Results),
            other => Err(Error::Config(format!(
                "unknown projection mode {other:?} (expected images|features|results)"
            ))),
        }
    }
}

/// Per-camera inputs available for projection.
#[derive(Clone, Copy, Debug)]
pub struct ViewSources<'a, T> {
    pub image: &'a Tensor<T>,
    pub features: &'a Tensor<T>,
}

/// Providers put their single-view foot score in the last channel.
fn foot_channel<T: Real>(features: &Tensor<T>) -> Result<usize> {
    features
        .channels()
        .checked_sub(1)
        .ok_or_else(|| Error::shape("results mode needs a foot score channel"))
}

/// Tensor that `mode` projects from one view.
pub fn source_for<T: Real>(mode: ProjectionMode, view: &ViewSources<'_, T>) -> Result<Tensor<T>> {
    match mode {
        ProjectionMode::Images => Ok(view.image.clone()),
        ProjectionMode::Features => Ok(view.features.clone()),
        ProjectionMode::Results => {
            let c = foot_channel(view.features)?;
            view.features.slice_channels(c..c + 1)
        }
    }
}

/// Warps the chosen source of every view and aggregates them with `coord`.
///
/// Views are warped in parallel; the result does not depend on the order in
/// which they finish.
pub fn project_choice<T: Real>(
    mode: ProjectionMode,
    views: &[ViewSources<'_, T>],
    grids: &[SamplingGrid],
    coord: &Tensor<T>,
) -> Result<Tensor<T>> {
    if views.len() != grids.len() {
        return Err(Error::shape(format!(
            "{} views but {} sampling grids",
            views.len(),
            grids.len()
        )));
    }
    let warped = views
        .par_iter()
        .zip(grids.par_iter())
        .map(|(view, grid)| match mode {
            ProjectionMode::Results => {
                warp_single_channel(view.features, foot_channel(view.features)?, grid)
            }
            _ => warp_features(&source_for(mode, view)?, grid),
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&warped, coord)
}

fn warp_single_channel<T: Real>(
    f: &Tensor<T>,
    channel: usize,
    s: &SamplingGrid,
) -> Result<Tensor<T>> {
    if channel >= f.channels() {
        return Err(Error::shape(format!(
            "channel {channel} of a {}-channel map",
            f.channels()
        )));
    }
    let plane = Tensor::from_vec(1, f.height(), f.width(), f.channel(channel).to_vec())?;
    warp_features(&plane, s)
}
