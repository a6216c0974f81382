//! Training and inference loops over a source of frames.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{ground_homography, projection_matrix, CameraCalibration};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, match_frame, MetricsReport};
use crate::grid::GroundGrid;
use crate::net::{
    backward_full, forward_full, sgd_step, FrameTargets, Mvdet, OneCycle, RigInputs, SgdState,
};
use crate::synth::{render_frame, Dataset, Scene, ViewTensors};
use crate::targets::{decode, gaussian_target, DetectionSet, OccupancyMap};
use crate::tensor::Tensor;
use crate::warp::{build_sampling_grid, SamplingGrid, ViewSources};

/// Optimisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Weight of the single-view loss.
    pub alpha: f64,
    pub batch: usize,
    /// Ground target Gaussian sigma, cells.
    pub sigma: f64,
    pub n_hid: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_lr: 0.1,
            momentum: 0.5,
            weight_decay: 5e-4,
            epochs: 10,
            alpha: 1.0,
            batch: 1,
            sigma: 2.0,
            n_hid: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.n_hid == 0 {
            return Err(Error::Config("batch and n_hid must be positive".into()));
        }
        if !(self.max_lr > 0.0 && self.sigma > 0.0 && self.alpha >= 0.0) {
            return Err(Error::Config(
                "max_lr and sigma must be positive, alpha nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "momentum must be in [0, 1), weight decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Detection post-processing settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub threshold: f64,
    pub nms_radius: f64,
    /// True-positive distance for evaluation, meters.
    pub match_threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            threshold: crate::targets::DEFAULT_THRESHOLD,
            nms_radius: crate::targets::DEFAULT_NMS_RADIUS,
            match_threshold: crate::eval::DEFAULT_MATCH_THRESHOLD,
        }
    }
}

/// Fixed per-rig geometry: the grid, one sampling grid per camera and the
/// coordinate map.
#[derive(Clone, Debug)]
pub struct RigGeometry {
    pub grid: GroundGrid,
    pub sampling: Vec<SamplingGrid>,
    pub coord: Tensor<f32>,
}

impl RigGeometry {
    pub fn new(
        rig: &[CameraCalibration<f64>],
        grid: &GroundGrid,
        feat_size: (usize, usize),
    ) -> Result<Self> {
        grid.validate()?;
        let sampling = rig
            .iter()
            .map(|cam| {
                let h = ground_homography(&projection_matrix(cam))?;
                Ok(build_sampling_grid(&h, grid, cam.image_size, feat_size))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.clone(),
            sampling,
            coord: grid.coordinate_map(),
        })
    }
}

/// One frame: per-view tensors and ground truth positions.
#[derive(Clone, Debug)]
pub struct Frame {
    pub index: usize,
    pub views: Vec<ViewTensors>,
    pub gt: Vec<[f64; 2]>,
}

/// Random access to frames.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<Frame>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Renders frames on demand instead of keeping them in memory.
impl FrameSource for Scene {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn load(&self, index: usize) -> Result<Frame> {
        let views = render_frame(self, index)?
            .into_iter()
            .map(|v| v.tensors)
            .collect();
        Ok(Frame {
            index,
            views,
            gt: self.frames[index].clone(),
        })
    }
}

impl FrameSource for Dataset {
    fn len(&self) -> usize {
        Dataset::len(self)
    }

    fn load(&self, index: usize) -> Result<Frame> {
        if index >= self.len() {
            return Err(Error::Config(format!("frame {index} of {}", self.len())));
        }
        Ok(Frame {
            index,
            views: self.load_frame(index)?,
            gt: self.gt[index].clone(),
        })
    }
}

fn rig_inputs<'a>(frame: &'a Frame, geo: &'a RigGeometry) -> RigInputs<'a, f32> {
    RigInputs {
        views: frame
            .views
            .iter()
            .map(|v| ViewSources {
                image: &v.image,
                features: &v.features,
            })
            .collect(),
        grids: &geo.sampling,
        coord: &geo.coord,
    }
}

fn frame_targets(frame: &Frame, geo: &RigGeometry, sigma: f64) -> Result<FrameTargets<f32>> {
    Ok(FrameTargets {
        pom: gaussian_target(&geo.grid, &frame.gt, sigma)?.map,
        head: frame.views.iter().map(|v| v.head.clone()).collect(),
        foot: frame.views.iter().map(|v| v.foot.clone()).collect(),
    })
}

/// One optimisation step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub ground: f64,
    pub single: f64,
}

/// `epoch,step,lr,loss,ground,single` rows.
pub fn loss_curve_csv(log: &[StepLog]) -> String {
    let mut out = String::from("epoch,step,lr,loss,ground,single\n");
    for s in log {
        out.push_str(&format!(
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e}\n",
            s.epoch, s.step, s.lr, s.loss, s.ground, s.single
        ));
    }
    out
}

/// SGD with momentum and weight decay under a one-cycle schedule.
///
/// Frames are reshuffled every epoch from `cfg.seed`; gradients of a batch
/// are averaged in frame order.
pub fn train(
    model: &mut Mvdet<f32>,
    source: &dyn FrameSource,
    ids: &[usize],
    geo: &RigGeometry,
    cfg: &TrainConfig,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let schedule = OneCycle::with_max_lr(cfg.max_lr);
    let steps_per_epoch = ids.len().div_ceil(cfg.batch);
    let total = cfg.epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SgdState::default();
    let mut order = ids.to_vec();
    let mut log = Vec::with_capacity(total);
    let alpha = cfg.alpha as f32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            let mut sum: Option<Vec<Vec<f32>>> = None;
            let (mut loss, mut ground, mut single) = (0.0, 0.0, 0.0);
            for &id in batch {
                let frame = source.load(id)?;
                let rig = rig_inputs(&frame, geo);
                let targets = frame_targets(&frame, geo, cfg.sigma)?;
                let out = forward_full(model, &rig)?;
                let (lb, grads) = backward_full(model, &rig, &out, &targets, alpha)?;
                loss += lb.total as f64;
                ground += lb.ground as f64;
                single += lb.single.iter().map(|&s| s as f64).sum::<f64>()
                    / lb.single.len().max(1) as f64;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            let mut grads = sum.expect("chunks are nonempty");
            let n = batch.len() as f32;
            if batch.len() > 1 {
                grads.iter_mut().flatten().for_each(|g| *g /= n);
            }
            let step = log.len();
            let lr = schedule.lr(step, total);
            let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            sgd_step(
                &mut model.params_mut(),
                &grad_refs,
                &mut state,
                lr as f32,
                cfg.momentum as f32,
                cfg.weight_decay as f32,
            )?;
            let k = batch.len() as f64;
            let entry = StepLog {
                epoch,
                step,
                lr,
                loss: loss / k,
                ground: ground / k,
                single: single / k,
            };
            if !entry.loss.is_finite() {
                return Err(Error::Config(format!(
                    "training diverged at step {step} (loss {})",
                    entry.loss
                )));
            }
            log.push(entry);
        }
    }
    Ok(log)
}

/// Predicted occupancy map of one frame.
pub fn predict(model: &Mvdet<f32>, frame: &Frame, geo: &RigGeometry) -> Result<OccupancyMap> {
    let out = forward_full(model, &rig_inputs(frame, geo))?;
    Ok(OccupancyMap::prediction(out.pom))
}

/// Decoded detections of every requested frame, in the given order.
pub fn infer(
    model: &Mvdet<f32>,
    source: &dyn FrameSource,
    ids: &[usize],
    geo: &RigGeometry,
    dc: &DecodeConfig,
) -> Result<Vec<(usize, DetectionSet)>> {
    ids.iter()
        .map(|&id| {
            let frame = source.load(id)?;
            let pom = predict(model, &frame, geo)?;
            Ok((id, decode(&pom, &geo.grid, dc.threshold, dc.nms_radius)?))
        })
        .collect()
}

/// Metrics of `detections` against each frame's ground truth.
pub fn score(
    detections: &[(usize, DetectionSet)],
    gt: impl Fn(usize) -> Vec<[f64; 2]>,
    match_threshold: f64,
) -> Result<MetricsReport> {
    let matches: Vec<_> = detections
        .iter()
        .map(|(id, d)| match_frame(&d.positions(), &gt(*id), match_threshold))
        .collect();
    compute_metrics(&matches)
}

/// Inference followed by scoring.
pub fn evaluate(
    model: &Mvdet<f32>,
    source: &dyn FrameSource,
    ids: &[usize],
    geo: &RigGeometry,
    dc: &DecodeConfig,
) -> Result<(Vec<(usize, DetectionSet)>, MetricsReport)> {
    let dets = infer(model, source, ids, geo, dc)?;
    let gts: Vec<_> = ids
        .iter()
        .map(|&id| source.load(id).map(|f| (id, f.gt)))
        .collect::<Result<_>>()?;
    let report = score(
        &dets,
        |id| {
            gts.iter()
                .find(|(k, _)| *k == id)
                .map(|(_, g)| g.clone())
                .unwrap_or_default()
        },
        dc.match_threshold,
    )?;
    Ok((dets, report))
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// A train/test experiment on freshly generated synthetic frames.
///
/// The default is the reference desk-scale experiment: 4 cameras over a
/// 16 x 25 m area, 10 persons per frame, 200 training and 40 test frames,
/// on a 0.2 m grid with a larger step size than the general defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticRun {
    /// `scene.frames` is ignored; the scene holds `train_frames + test_frames`.
    pub scene: crate::synth::SceneConfig,
    pub train_frames: usize,
    pub test_frames: usize,
    pub cell_size: f64,
    pub mode: crate::warp::ProjectionMode,
    pub large_kernel: bool,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl Default for SyntheticRun {
    fn default() -> Self {
        Self {
            scene: crate::synth::SceneConfig::default(),
            train_frames: 200,
            test_frames: 40,
            cell_size: 0.2,
            mode: crate::warp::ProjectionMode::Features,
            large_kernel: true,
            train: TrainConfig {
                max_lr: 1.5,
                sigma: 1.5,
                n_hid: 16,
                ..TrainConfig::default()
            },
            decode: DecodeConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: Mvdet<f32>,
    pub log: Vec<StepLog>,
    pub detections: Vec<(usize, DetectionSet)>,
    pub report: MetricsReport,
    pub seconds: f64,
}

impl SyntheticRun {
    pub fn model_config(&self) -> crate::net::ModelConfig {
        crate::net::ModelConfig {
            n_views: self.scene.n_cameras,
            mode: self.mode,
            large_kernel: self.large_kernel,
            n_hid: self.train.n_hid,
            feature_channels: crate::synth::FEATURE_CHANNELS,
            image_channels: crate::synth::IMAGE_CHANNELS,
        }
    }

    /// Preset for the ablation and crowdedness comparisons.
    ///
    /// Same budget as the reference run. Dense crowds raise the curvature
    /// of the single-view loss, so its weight is lowered to keep that head
    /// stable at this step size. The occupancy map does not depend on it.
    pub fn trend() -> Self {
        let base = Self::default();
        Self {
            train: TrainConfig {
                alpha: 0.1,
                ..base.train.clone()
            },
            ..base
        }
    }

    pub fn execute(&self) -> Result<RunOutcome> {
        let start = std::time::Instant::now();
        let scene = crate::synth::generate_scene(&crate::synth::SceneConfig {
            frames: self.train_frames + self.test_frames,
            ..self.scene.clone()
        })?;
        let grid = GroundGrid::covering(self.scene.area[0], self.scene.area[1], self.cell_size)?;
        let geo = RigGeometry::new(&scene.rig, &grid, self.scene.feat_size)?;
        let mut model = Mvdet::new(self.model_config(), self.train.seed)?;
        let train_ids: Vec<_> = (0..self.train_frames).collect();
        let test_ids: Vec<_> = (self.train_frames..self.train_frames + self.test_frames).collect();
        let log = train(&mut model, &scene, &train_ids, &geo, &self.train)?;
        let (detections, report) = evaluate(&model, &scene, &test_ids, &geo, &self.decode)?;
        Ok(RunOutcome {
            model,
            log,
            detections,
            report,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}
