//! Synthetic multi-camera scenes.
//!
//! People are vertical cylinders standing on the ground plane inside a
//! rectangular area watched by a rig of calibrated cameras. Each view is
//! ray cast directly at feature resolution with a z-buffer, producing a
//! 4-channel toy feature map, a 3-channel colour render, and head/foot
//! target heat maps.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{self, look_at, projection_matrix, world_to_image, CameraCalibration};
use crate::error::{Error, Result};
use crate::grid::GroundGrid;
use crate::io::{read_to_string, write_atomic};
use crate::linalg::{self, Vec3};
use crate::targets::{ground_truth_from_csv, ground_truth_to_csv};
use crate::tensor::Tensor;

/// Feature channel layout.
pub const SILHOUETTE_CHANNEL: usize = 0;
pub const INV_DEPTH_CHANNEL: usize = 1;
pub const HEAD_CHANNEL: usize = 2;
/// Last, so that results-mode projection picks it up.
pub const FOOT_CHANNEL: usize = 3;
pub const FEATURE_CHANNELS: usize = 4;
pub const IMAGE_CHANNELS: usize = 3;

const PLACEMENT_ATTEMPTS_PER_PERSON: usize = 1000;

/// Where the cameras go.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum RigSpec {
    /// Evenly spaced on a horizontal ring around the area centre, first
    /// camera on the diagonal, all looking at the centre.
    Ring {
        height: f64,
        radius: f64,
        hfov_deg: f64,
    },
    /// Rig file (JSON array of calibrations).
    Explicit { path: PathBuf },
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec::Ring {
            height: 2.5,
            radius: 18.0,
            hfov_deg: 60.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// (width along x, depth along y), meters.
    pub area: [f64; 2],
    pub n_cameras: usize,
    /// Persons per frame.
    pub crowdedness: usize,
    pub person_radius: f64,
    pub person_height: f64,
    pub seed: u64,
    pub frames: usize,
    pub rig: RigSpec,
    /// Nominal camera resolution (H, W).
    pub image_size: (usize, usize),
    /// Render resolution (H_f, W_f).
    pub feat_size: (usize, usize),
    /// Head/foot Gaussian sigma, feature pixels.
    pub heat_sigma: f64,
    /// Distance mapped to inverse depth 1.
    pub near: f64,
    /// Scale of every feature channel.
    pub feature_gain: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            area: [16.0, 25.0],
            n_cameras: 4,
            crowdedness: 10,
            person_radius: 0.15,
            person_height: 1.7,
            seed: 0,
            frames: 10,
            rig: RigSpec::default(),
            image_size: (720, 1280),
            feat_size: (180, 320),
            heat_sigma: 2.0,
            near: 2.0,
            feature_gain: 2.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [w, d] = self.area;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.person_radius > 0.0 && self.person_height > 0.0) {
            return bad("person radius and height must be positive".into());
        }
        if !(w > 2.0 * self.person_radius && d > 2.0 * self.person_radius) {
            return bad(format!(
                "a person of radius {} does not fit in {w}x{d}",
                self.person_radius
            ));
        }
        if self.feat_size.0 == 0
            || self.feat_size.1 == 0
            || self.image_size.0 == 0
            || self.image_size.1 == 0
        {
            return bad("image and feature sizes must be nonzero".into());
        }
        if !(self.heat_sigma > 0.0 && self.near > 0.0 && self.feature_gain > 0.0) {
            return bad("heat sigma, near distance and feature gain must be positive".into());
        }
        if let RigSpec::Ring { hfov_deg, .. } = self.rig {
            if self.n_cameras == 0 || !(hfov_deg > 0.0 && hfov_deg < 180.0) {
                return bad("ring rig needs cameras and a field of view in (0, 180)".into());
            }
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 2] {
        [self.area[0] / 2.0, self.area[1] / 2.0]
    }

    /// Calibrations for the configured rig.
    pub fn build_rig(&self) -> Result<Vec<CameraCalibration<f64>>> {
        match &self.rig {
            RigSpec::Ring {
                height,
                radius,
                hfov_deg,
            } => {
                let [cx, cy] = self.center();
                let base = self.area[1].atan2(self.area[0]);
                (0..self.n_cameras)
                    .map(|k| {
                        let a = base + std::f64::consts::TAU * k as f64 / self.n_cameras as f64;
                        let eye = [cx + radius * a.cos(), cy + radius * a.sin(), *height];
                        look_at(eye, [cx, cy, 0.0], *hfov_deg, self.image_size)
                    })
                    .collect()
            }
            RigSpec::Explicit { path } => calib::load_rig(path),
        }
    }
}

/// Placements for every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub rig: Vec<CameraCalibration<f64>>,
    pub frames: Vec<Vec<[f64; 2]>>,
}

/// Deterministic per-frame random stream.
fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 + 1);
    rng
}

/// Rejection-samples `cfg.crowdedness` positions at least `2r` apart.
pub fn place_persons(cfg: &SceneConfig, frame: usize) -> Result<Vec<[f64; 2]>> {
    let r = cfg.person_radius;
    let min_d2 = 4.0 * r * r;
    let mut rng = frame_rng(cfg.seed, frame);
    let budget = PLACEMENT_ATTEMPTS_PER_PERSON * cfg.crowdedness.max(1);
    let mut placed: Vec<[f64; 2]> = Vec::with_capacity(cfg.crowdedness);
    let mut attempts = 0;
    while placed.len() < cfg.crowdedness {
        if attempts == budget {
            return Err(Error::Placement {
                frame,
                wanted: cfg.crowdedness,
                attempts,
            });
        }
        attempts += 1;
        let p = [
            rng.gen_range(r..cfg.area[0] - r),
            rng.gen_range(r..cfg.area[1] - r),
        ];
        if placed
            .iter()
            .all(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) >= min_d2)
        {
            placed.push(p);
        }
    }
    Ok(placed)
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let rig = cfg.build_rig()?;
    let frames = (0..cfg.frames)
        .into_par_iter()
        .map(|f| place_persons(cfg, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        config: cfg.clone(),
        rig,
        frames,
    })
}

/// Per-view tensors a model consumes, plus supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTensors {
    /// `FEATURE_CHANNELS x H_f x W_f`
    pub features: Tensor<f32>,
    /// `IMAGE_CHANNELS x H_f x W_f`
    pub image: Tensor<f32>,
    /// Head / foot heat of every person, ignoring occlusion.
    pub head: Tensor<f32>,
    pub foot: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub tensors: ViewTensors,
    /// Index of the frontmost person at each pixel, row-major.
    pub owner: Vec<Option<usize>>,
}

/// Static ground colouring: a few plane waves per channel.
#[derive(Clone, Debug)]
struct GroundTexture {
    waves: Vec<[f64; 4]>,
}

impl GroundTexture {
    const WAVES: usize = 4;

    fn new(seed: u64) -> Self {
        let mut rng = frame_rng(seed, usize::MAX - 1);
        let waves = (0..IMAGE_CHANNELS * Self::WAVES)
            .map(|_| {
                let wavelength = rng.gen_range(0.6..4.0);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                [
                    k * angle.cos(),
                    k * angle.sin(),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    0.0,
                ]
            })
            .collect();
        Self { waves }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = [0.5; 3];
        for (ch, out) in c.iter_mut().enumerate() {
            for w in &self.waves[ch * Self::WAVES..(ch + 1) * Self::WAVES] {
                *out += 0.12 * (w[0] * x + w[1] * y + w[2]).sin();
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

/// Per-frame appearance of each person.
fn person_colors(seed: u64, frame: usize, n: usize) -> Vec<[f64; 3]> {
    let mut rng = frame_rng(seed ^ 0x9e37_79b9_7f4a_7c15, frame);
    (0..n)
        .map(|_| {
            [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect()
}

/// Entry parameter of a ray `c + t d` into an upright cylinder, if any.
fn ray_cylinder(c: &Vec3<f64>, d: &Vec3<f64>, p: &[f64; 2], r: f64, h: f64) -> Option<f64> {
    let ox = c[0] - p[0];
    let oy = c[1] - p[1];
    let a = d[0] * d[0] + d[1] * d[1];
    let (mut t0, mut t1) = if a < 1e-18 {
        if ox * ox + oy * oy > r * r {
            return None;
        }
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let b = ox * d[0] + oy * d[1];
        let cc = ox * ox + oy * oy - r * r;
        let disc = b * b - a * cc;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        ((-b - s) / a, (-b + s) / a)
    };
    if d[2].abs() < 1e-18 {
        if c[2] < 0.0 || c[2] > h {
            return None;
        }
    } else {
        let za = -c[2] / d[2];
        let zb = (h - c[2]) / d[2];
        t0 = t0.max(za.min(zb));
        t1 = t1.min(za.max(zb));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// World ray through feature pixel `(x, y)`: origin and unit direction.
fn pixel_ray(
    cam: &CameraCalibration<f64>,
    k_inv: &linalg::Mat3<f64>,
    scale: [f64; 2],
    x: usize,
    y: usize,
) -> (Vec3<f64>, Vec3<f64>) {
    let uv1 = [x as f64 * scale[0], y as f64 * scale[1], 1.0];
    let dc = linalg::mat_vec(k_inv, &uv1);
    let dw = linalg::mat_vec(&linalg::transpose(&cam.rotation), &dc);
    (cam.center(), linalg::normalize3(&dw))
}

fn gaussian(dx: f64, dy: f64, sigma: f64) -> f64 {
    (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
}

/// Pixel window `[x0, x1) x [y0, y1)` containing a person's silhouette, or
/// `None` when it is off screen. Falls back to the whole map when part of the
/// person is behind the camera.
fn pixel_bounds(
    p: &[f64; 2],
    r: f64,
    h: f64,
    project: &impl Fn(&[f64; 2], f64) -> Option<[f64; 2]>,
    hf: usize,
    wf: usize,
) -> Option<(usize, usize, usize, usize)> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for dx in [-r, r] {
        for dy in [-r, r] {
            for z in [0.0, h] {
                let Some(q) = project(&[p[0] + dx, p[1] + dy], z) else {
                    return Some((0, wf, 0, hf));
                };
                for a in 0..2 {
                    lo[a] = lo[a].min(q[a]);
                    hi[a] = hi[a].max(q[a]);
                }
            }
        }
    }
    let clip = |v: f64, n: usize| v.clamp(0.0, n as f64) as usize;
    let (x0, x1) = (clip(lo[0].floor(), wf), clip(hi[0].ceil() + 1.0, wf));
    let (y0, y1) = (clip(lo[1].floor(), hf), clip(hi[1].ceil() + 1.0, hf));
    (x0 < x1 && y0 < y1).then_some((x0, x1, y0, y1))
}

/// Max of Gaussians at `points`, truncated at 5 sigma.
fn heat_map(points: &[Option<[f64; 2]>], sigma: f64, hf: usize, wf: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(1, hf, wf);
    let reach = 5.0 * sigma;
    let data = t.data_mut();
    for q in points.iter().flatten() {
        let clip = |v: f64, n: usize| v.clamp(0.0, n as f64) as usize;
        for y in clip((q[1] - reach).floor(), hf)..clip((q[1] + reach).ceil() + 1.0, hf) {
            for x in clip((q[0] - reach).floor(), wf)..clip((q[0] + reach).ceil() + 1.0, wf) {
                let v = gaussian(x as f64 - q[0], y as f64 - q[1], sigma) as f32;
                let cell = &mut data[y * wf + x];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
    t
}

/// Renders one camera's view of `persons`.
pub fn render_view(
    cfg: &SceneConfig,
    cam: &CameraCalibration<f64>,
    persons: &[[f64; 2]],
    colors: &[[f64; 3]],
    texture_seed: u64,
) -> Result<RenderedView> {
    let (hf, wf) = cfg.feat_size;
    let scale = [
        cam.image_size.1 as f64 / wf as f64,
        cam.image_size.0 as f64 / hf as f64,
    ];
    let k_inv = linalg::inverse(&cam.intrinsic, 1e-12)
        .ok_or_else(|| Error::Validation("singular intrinsic matrix".into()))?;
    let pm = projection_matrix(cam);
    let to_feat = |p: [f64; 2]| [p[0] / scale[0], p[1] / scale[1]];
    let project = |x: &[f64; 2], z: f64| world_to_image(&pm, &[x[0], x[1], z]).map(to_feat);
    let heads: Vec<_> = persons
        .iter()
        .map(|p| project(p, cfg.person_height))
        .collect();
    let feet: Vec<_> = persons.iter().map(|p| project(p, 0.0)).collect();
    let texture = GroundTexture::new(texture_seed);

    let plane = hf * wf;
    let mut features = Tensor::zeros(FEATURE_CHANNELS, hf, wf);
    let mut image = Tensor::zeros(IMAGE_CHANNELS, hf, wf);
    let mut owner: Vec<Option<usize>> = vec![None; plane];
    let mut depth = vec![f64::INFINITY; plane];
    let c = cam.center();
    let rays: Vec<Vec3<f64>> = (0..plane)
        .map(|px| pixel_ray(cam, &k_inv, scale, px % wf, px / wf).1)
        .collect();

    // z-buffer, testing only the pixels a person's bounding box can cover
    let (r, h) = (cfg.person_radius, cfg.person_height);
    for (k, p) in persons.iter().enumerate() {
        let (x0, x1, y0, y1) = match pixel_bounds(p, r, h, &project, hf, wf) {
            Some(b) => b,
            None => continue,
        };
        for y in y0..y1 {
            for x in x0..x1 {
                let px = y * wf + x;
                if let Some(t) = ray_cylinder(&c, &rays[px], p, r, h) {
                    if t < depth[px] {
                        depth[px] = t;
                        owner[px] = Some(k);
                    }
                }
            }
        }
    }

    let sigma = cfg.heat_sigma;
    let gain = cfg.feature_gain as f32;
    for px in 0..plane {
        let (x, y) = ((px % wf) as f64, (px / wf) as f64);
        let d = &rays[px];
        let heat = |q: &Option<[f64; 2]>| q.map_or(0.0, |q| gaussian(x - q[0], y - q[1], sigma));
        let color = match owner[px] {
            Some(k) => {
                let t = depth[px];
                let f = features.data_mut();
                f[SILHOUETTE_CHANNEL * plane + px] = gain;
                f[INV_DEPTH_CHANNEL * plane + px] = (cfg.near / t).min(1.0) as f32 * gain;
                f[HEAD_CHANNEL * plane + px] = heat(&heads[k]) as f32 * gain;
                f[FOOT_CHANNEL * plane + px] = heat(&feet[k]) as f32 * gain;
                let z = (c[2] + t * d[2]) / h;
                colors[k].map(|v| v * (0.6 + 0.4 * z.clamp(0.0, 1.0)))
            }
            None if d[2] < 0.0 => {
                let t = -c[2] / d[2];
                texture.color(c[0] + t * d[0], c[1] + t * d[1])
            }
            None => [0.0; 3],
        };
        for (ch, v) in color.iter().enumerate() {
            image.data_mut()[ch * plane + px] = *v as f32;
        }
    }
    let head = heat_map(&heads, sigma, hf, wf);
    let foot = heat_map(&feet, sigma, hf, wf);
    Ok(RenderedView {
        tensors: ViewTensors {
            features,
            image,
            head,
            foot,
        },
        owner,
    })
}

/// All views of one frame.
pub fn render_frame(scene: &Scene, frame: usize) -> Result<Vec<RenderedView>> {
    let persons = scene
        .frames
        .get(frame)
        .ok_or_else(|| Error::Config(format!("frame {frame} of {}", scene.frames.len())))?;
    let colors = person_colors(scene.config.seed, frame, persons.len());
    scene
        .rig
        .par_iter()
        .map(|cam| render_view(&scene.config, cam, persons, &colors, scene.config.seed))
        .collect()
}

/// Every frame, rendered in parallel.
pub fn render_views(scene: &Scene) -> Result<Vec<Vec<RenderedView>>> {
    (0..scene.frames.len())
        .into_par_iter()
        .map(|f| render_frame(scene, f))
        .collect()
}

/// Mean number of cameras seeing each cell centre of `g`.
pub fn average_coverage(rig: &[CameraCalibration<f64>], g: &GroundGrid) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    let pms: Vec<_> = rig.iter().map(projection_matrix).collect();
    let mut seen = 0usize;
    for i in 0..g.rows {
        for j in 0..g.cols {
            let [x, y] = g.center(i, j);
            for (pm, cam) in pms.iter().zip(rig) {
                if let Some([u, v]) = world_to_image(pm, &[x, y, 0.0]) {
                    let (h, w) = cam.image_size;
                    if u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64 {
                        seen += 1;
                    }
                }
            }
        }
    }
    seen as f64 / g.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: usize,
    pub n_cameras: usize,
    pub crowdedness: usize,
    pub area: [f64; 2],
    pub image_size: (usize, usize),
    pub feat_size: (usize, usize),
    pub feature_channels: usize,
    pub image_channels: usize,
    /// Mean number of cameras covering a 0.5 m cell of the area.
    pub avg_coverage: f64,
    pub scene: SceneConfig,
}

impl Manifest {
    pub fn for_scene(scene: &Scene) -> Result<Self> {
        let cfg = &scene.config;
        let g = GroundGrid::covering(cfg.area[0], cfg.area[1], 0.5)?;
        Ok(Self {
            frames: scene.frames.len(),
            n_cameras: scene.rig.len(),
            crowdedness: cfg.crowdedness,
            area: cfg.area,
            image_size: cfg.image_size,
            feat_size: cfg.feat_size,
            feature_channels: FEATURE_CHANNELS,
            image_channels: IMAGE_CHANNELS,
            avg_coverage: average_coverage(&scene.rig, &g),
            scene: cfg.clone(),
        })
    }
}

pub fn frame_dir(root: &Path, frame: usize) -> PathBuf {
    root.join("frames").join(frame.to_string())
}

fn view_paths(root: &Path, frame: usize, cam: usize) -> [PathBuf; 4] {
    let d = frame_dir(root, frame);
    [
        d.join(format!("cam{cam}.ften")),
        d.join(format!("cam{cam}_rgb.ften")),
        d.join(format!("cam{cam}_head.ften")),
        d.join(format!("cam{cam}_foot.ften")),
    ]
}

/// Writes the dataset layout under `dir`, frames rendered in parallel.
pub fn export_dataset(scene: &Scene, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..scene.frames.len()).into_par_iter().try_for_each(|f| {
        for (n, view) in render_frame(scene, f)?.into_iter().enumerate() {
            let t = &view.tensors;
            let [feat, rgb, head, foot] = view_paths(dir, f, n);
            t.features.write(feat)?;
            t.image.write(rgb)?;
            t.head.write(head)?;
            t.foot.write(foot)?;
        }
        Ok::<_, Error>(())
    })?;
    calib::save_rig(dir.join("rig.json"), &scene.rig)?;
    let gt: Vec<_> = scene.frames.iter().cloned().enumerate().collect();
    write_atomic(&dir.join("gt.csv"), ground_truth_to_csv(&gt).as_bytes())?;
    let manifest = Manifest::for_scene(scene)?;
    write_atomic(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

/// An exported dataset opened for reading.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub rig: Vec<CameraCalibration<f64>>,
    /// Ground truth of every frame, including empty ones.
    pub gt: Vec<Vec<[f64; 2]>>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&read_to_string(&dir.join("manifest.json"))?)?;
        let rig = calib::load_rig(dir.join("rig.json"))?;
        if rig.len() != manifest.n_cameras {
            return Err(Error::Config(format!(
                "rig has {} cameras, manifest says {}",
                rig.len(),
                manifest.n_cameras
            )));
        }
        let by_frame = ground_truth_from_csv(&read_to_string(&dir.join("gt.csv"))?)?;
        let mut gt = vec![Vec::new(); manifest.frames];
        for (f, pts) in by_frame {
            let slot = gt.get_mut(f).ok_or_else(|| {
                Error::Parse(format!(
                    "gt.csv references frame {f} of {}",
                    manifest.frames
                ))
            })?;
            *slot = pts;
        }
        Ok(Self {
            root: dir.to_path_buf(),
            manifest,
            rig,
            gt,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load_view(&self, frame: usize, cam: usize) -> Result<ViewTensors> {
        let [feat, rgb, head, foot] = view_paths(&self.root, frame, cam);
        let t = ViewTensors {
            features: Tensor::read(feat)?,
            image: Tensor::read(rgb)?,
            head: Tensor::read(head)?,
            foot: Tensor::read(foot)?,
        };
        let (hf, wf) = self.manifest.feat_size;
        let ok = t.features.shape() == (FEATURE_CHANNELS, hf, wf)
            && t.image.shape() == (IMAGE_CHANNELS, hf, wf)
            && t.head.shape() == (1, hf, wf)
            && t.foot.shape() == (1, hf, wf);
        if !ok {
            return Err(Error::shape(format!(
                "frame {frame} camera {cam} does not match the manifest"
            )));
        }
        Ok(t)
    }

    pub fn load_frame(&self, frame: usize) -> Result<Vec<ViewTensors>> {
        (0..self.rig.len())
            .map(|n| self.load_view(frame, n))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::ground_homography;

    fn small_cfg() -> SceneConfig {
        SceneConfig {
            area: [6.0, 8.0],
            n_cameras: 3,
            crowdedness: 5,
            frames: 3,
            rig: RigSpec::Ring {
                height: 2.5,
                radius: 8.0,
                hfov_deg: 60.0,
            },
            image_size: (240, 320),
            feat_size: (48, 64),
            ..SceneConfig::default()
        }
    }

    fn single_frame(cfg: &SceneConfig, persons: Vec<[f64; 2]>) -> Scene {
        Scene {
            config: cfg.clone(),
            rig: cfg.build_rig().unwrap(),
            frames: vec![persons],
        }
    }

    #[test]
    fn zero_crowdedness_gives_empty_zero_frames() {
        let cfg = SceneConfig {
            crowdedness: 0,
            ..small_cfg()
        };
        let scene = generate_scene(&cfg).unwrap();
        assert!(scene.frames.iter().all(Vec::is_empty));
        for v in render_frame(&scene, 0).unwrap() {
            assert!(v.tensors.features.data().iter().all(|&x| x == 0.0));
            assert!(v.tensors.head.data().iter().all(|&x| x == 0.0));
            assert!(v.tensors.foot.data().iter().all(|&x| x == 0.0));
            assert!(v.owner.iter().all(Option::is_none));
        }
    }

    #[test]
    fn placement_is_deterministic() {
        let cfg = small_cfg();
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = SceneConfig {
            seed: 1,
            ..small_cfg()
        };
        assert_ne!(
            generate_scene(&cfg).unwrap().frames,
            generate_scene(&other).unwrap().frames
        );
    }

    #[test]
    fn frames_do_not_depend_on_frame_count() {
        let short = generate_scene(&small_cfg()).unwrap();
        let long = generate_scene(&SceneConfig {
            frames: 6,
            ..small_cfg()
        })
        .unwrap();
        assert_eq!(short.frames[..], long.frames[..3]);
    }

    #[test]
    fn dense_placement_keeps_min_distance() {
        let cfg = SceneConfig {
            crowdedness: 40,
            frames: 1000,
            ..SceneConfig::default()
        };
        let r = cfg.person_radius;
        for f in 0..cfg.frames {
            let pts = place_persons(&cfg, f).unwrap();
            assert_eq!(pts.len(), 40);
            for (a, p) in pts.iter().enumerate() {
                assert!(
                    p[0] >= r && p[0] <= cfg.area[0] - r && p[1] >= r && p[1] <= cfg.area[1] - r
                );
                for q in &pts[a + 1..] {
                    assert!((p[0] - q[0]).hypot(p[1] - q[1]) >= 2.0 * r - 1e-12);
                }
            }
        }
    }

    #[test]
    fn overfull_area_reports_placement_failure() {
        let cfg = SceneConfig {
            area: [1.0, 1.0],
            crowdedness: 50,
            ..small_cfg()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::Placement { .. })));
    }

    #[test]
    fn ring_cameras_see_the_area_centre() {
        let cfg = small_cfg();
        for cam in cfg.build_rig().unwrap() {
            let pm = projection_matrix(&cam);
            let [cx, cy] = cfg.center();
            let [u, v] = world_to_image(&pm, &[cx, cy, 0.0]).unwrap();
            assert!((u - 160.0).abs() < 1e-6 && (v - 120.0).abs() < 1e-6);
        }
    }

    /// First person hit by marching along the ray in small steps.
    fn march_owner(
        c: &Vec3<f64>,
        d: &Vec3<f64>,
        persons: &[[f64; 2]],
        r: f64,
        h: f64,
    ) -> Option<usize> {
        let step = 2e-3;
        for s in 1..20_000 {
            let t = s as f64 * step;
            let q = [c[0] + t * d[0], c[1] + t * d[1], c[2] + t * d[2]];
            if q[2] < 0.0 {
                return None;
            }
            if q[2] <= h {
                if let Some(k) = persons
                    .iter()
                    .position(|p| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) <= r * r)
                {
                    return Some(k);
                }
            }
        }
        None
    }

    #[test]
    fn nearer_person_owns_overlap() {
        let cfg = small_cfg();
        let rig = cfg.build_rig().unwrap();
        let cam = &rig[0];
        let eye = cam.center();
        let [cx, cy] = cfg.center();
        // Two people on the line from the camera to the area centre.
        let dir = linalg::normalize3(&[cx - eye[0], cy - eye[1], 0.0]);
        let near = [cx - 1.5 * dir[0], cy - 1.5 * dir[1]];
        let far = [cx + 0.5 * dir[0], cy + 0.5 * dir[1]];
        let persons = vec![far, near];
        let scene = single_frame(&cfg, persons.clone());
        let view = &render_frame(&scene, 0).unwrap()[0];

        let (hf, wf) = cfg.feat_size;
        let k_inv = linalg::inverse(&cam.intrinsic, 1e-12).unwrap();
        let scale = [320.0 / 64.0, 240.0 / 48.0];
        let mut near_pixels = 0;
        let mut agree = 0;
        let mut total = 0;
        for y in 0..hf {
            for x in 0..wf {
                let (c, d) = pixel_ray(cam, &k_inv, scale, x, y);
                let oracle = march_owner(&c, &d, &persons, cfg.person_radius, cfg.person_height);
                let got = view.owner[y * wf + x];
                if oracle.is_some() || got.is_some() {
                    total += 1;
                    agree += usize::from(oracle == got);
                }
                near_pixels += usize::from(got == Some(1));
                // Wherever both are hit, only the near one may own the pixel.
                if got == Some(0) {
                    assert!(
                        ray_cylinder(&c, &d, &near, cfg.person_radius, cfg.person_height).is_none()
                    );
                }
            }
        }
        assert!(near_pixels > 0);
        // Marching can only disagree on grazing boundary pixels.
        assert!(agree as f64 >= 0.97 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn centred_person_silhouette_is_connected_and_contains_foot() {
        let cfg = small_cfg();
        let scene = single_frame(&cfg, vec![cfg.center()]);
        let cam = &scene.rig[0];
        let view = &render_frame(&scene, 0).unwrap()[0];
        let (hf, wf) = cfg.feat_size;
        let covered: Vec<bool> = view.owner.iter().map(Option::is_some).collect();
        let start = covered.iter().position(|&c| c).unwrap();
        let mut seen = vec![false; covered.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            let (y, x) = (p / wf, p % wf);
            let mut push = |ny: usize, nx: usize| {
                let q = ny * wf + nx;
                if covered[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if y > 0 {
                push(y - 1, x);
            }
            if y + 1 < hf {
                push(y + 1, x);
            }
            if x > 0 {
                push(y, x - 1);
            }
            if x + 1 < wf {
                push(y, x + 1);
            }
        }
        assert_eq!(seen, covered, "silhouette has several components");

        let h = ground_homography(&projection_matrix(cam)).unwrap();
        let [u, v] = calib::ground_to_image(&h, &cfg.center()).unwrap();
        let (fx, fy) = (u / 5.0, v / 5.0);
        let near_foot = (0..covered.len()).any(|p| {
            covered[p] && ((p % wf) as f64 - fx).abs() <= 1.0 && ((p / wf) as f64 - fy).abs() <= 1.0
        });
        assert!(near_foot);
    }

    #[test]
    fn foot_heat_peaks_at_projected_position() {
        let cfg = small_cfg();
        let scene = generate_scene(&cfg).unwrap();
        let (_, wf) = cfg.feat_size;
        for (f, persons) in scene.frames.iter().enumerate() {
            let views = render_frame(&scene, f).unwrap();
            for (cam, view) in scene.rig.iter().zip(&views) {
                let h = ground_homography(&projection_matrix(cam)).unwrap();
                let proj: Vec<_> = persons
                    .iter()
                    .filter_map(|p| calib::ground_to_image(&h, p))
                    .map(|[u, v]| (u * 64.0 / 320.0, v * 48.0 / 240.0))
                    .collect();
                for (k, &(fx, fy)) in proj.iter().enumerate() {
                    if fx < 1.0 || fy < 1.0 || fx > 62.0 || fy > 46.0 {
                        continue;
                    }
                    // Overlapping neighbours legitimately shift the peak.
                    let isolated = proj
                        .iter()
                        .enumerate()
                        .all(|(o, q)| o == k || (q.0 - fx).hypot(q.1 - fy) > 4.0);
                    if !isolated {
                        continue;
                    }
                    // Peak of the truth heat within a 3-pixel window of the projection.
                    let (cx, cy) = (fx.round() as usize, fy.round() as usize);
                    let mut best = (0.0f32, 0usize, 0usize);
                    for y in cy - 1..=cy + 1 {
                        for x in cx - 1..=cx + 1 {
                            let v = view.tensors.foot.data()[y * wf + x];
                            if v > best.0 {
                                best = (v, x, y);
                            }
                        }
                    }
                    assert!((best.1 as f64 - fx).abs() <= 1.0 && (best.2 as f64 - fy).abs() <= 1.0);
                    assert!(best.0 > 0.3);
                }
            }
        }
    }

    #[test]
    fn adding_a_person_never_grows_other_silhouettes() {
        let cfg = SceneConfig {
            crowdedness: 8,
            ..small_cfg()
        };
        let all = place_persons(&cfg, 0).unwrap();
        let base = single_frame(&cfg, all[..7].to_vec());
        let more = single_frame(&cfg, all.clone());
        let a = render_frame(&base, 0).unwrap();
        let b = render_frame(&more, 0).unwrap();
        for (va, vb) in a.iter().zip(&b) {
            for k in 0..7 {
                let before = va.owner.iter().filter(|o| **o == Some(k)).count();
                let after = vb.owner.iter().filter(|o| **o == Some(k)).count();
                assert!(after <= before);
            }
        }
    }

    #[test]
    fn features_are_bounded_and_finite() {
        let scene = generate_scene(&small_cfg()).unwrap();
        for frame in render_views(&scene).unwrap() {
            for v in frame {
                let t = &v.tensors;
                let gain = scene.config.feature_gain as f32;
                assert!(t.features.data().iter().all(|x| (0.0..=gain).contains(x)));
                for x in t
                    .image
                    .data()
                    .iter()
                    .chain(t.head.data())
                    .chain(t.foot.data())
                {
                    assert!(x.is_finite() && (0.0..=1.0).contains(x));
                }
            }
        }
    }

    #[test]
    fn export_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(&small_cfg()).unwrap();
        let manifest = export_dataset(&scene, dir.path()).unwrap();
        assert_eq!(manifest.frames, 3);
        assert!(manifest.avg_coverage > 0.0 && manifest.avg_coverage <= 3.0);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.rig, scene.rig);
        assert_eq!(ds.gt, scene.frames);
        let gt = fs::read_to_string(dir.path().join("gt.csv")).unwrap();
        for f in 0..3 {
            let rows = gt
                .lines()
                .filter(|l| l.starts_with(&format!("{f},")))
                .count();
            assert_eq!(rows, 5);
            let fresh = render_frame(&scene, f).unwrap();
            let loaded = ds.load_frame(f).unwrap();
            for (a, b) in fresh.iter().zip(&loaded) {
                assert_eq!(&a.tensors, b);
            }
        }
    }
}
