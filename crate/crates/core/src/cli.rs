//! Command-line front end.
//!
//! Every command reads one JSON [`ExperimentConfig`] (missing keys take
//! their defaults) with optional `--set dotted.key=value` overrides, and
//! writes its outputs atomically.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::{compute_metrics, match_frame};
use crate::grid::GroundGrid;
use crate::io::{read_to_string, write_atomic, write_pgm, write_ppm};
use crate::net::{load_checkpoint, save_checkpoint, ModelConfig, Mvdet};
use crate::pipeline::{
    infer, loss_curve_csv, predict, train, DecodeConfig, FrameSource, RigGeometry, TrainConfig,
};
use crate::synth::{
    export_dataset, generate_scene, Dataset, SceneConfig, FEATURE_CHANNELS, FOOT_CHANNEL,
    IMAGE_CHANNELS,
};
use crate::targets::{detections_to_csv, read_detections, read_ground_truth};
use crate::tensor::Tensor;
use crate::warp::{warp_features, ProjectionMode};

#[derive(Debug, Parser)]
#[command(
    name = "mvdet",
    version,
    about = "Multiview pedestrian detection on a ground-plane grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(Options),
    /// Train a model on the training split.
    Train(Options),
    /// Detect people on a split and write a detections CSV.
    Infer(Options),
    /// Score a detections CSV against ground truth.
    Eval(Options),
    /// Warp one frame onto the ground plane and dump images.
    WarpDemo(Options),
}

#[derive(Debug, clap::Args)]
struct Options {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set train.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub checkpoint: PathBuf,
    /// Detections CSV read by `eval`; defaults to `<output>/detections.csv`.
    pub detections: Option<PathBuf>,
    /// Ground-truth CSV read by `eval`; defaults to `<dataset>/gt.csv`.
    pub ground_truth: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            output: "out".into(),
            checkpoint: "out/model.mvdw".into(),
            detections: None,
            ground_truth: None,
        }
    }
}

/// Ground grid over the dataset area; explicit fields override the fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub cell_size: f64,
    pub origin: Option<[f64; 2]>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cell_size: 0.1,
            origin: None,
            rows: None,
            cols: None,
        }
    }
}

impl GridSpec {
    pub fn resolve(&self, area: [f64; 2]) -> Result<GroundGrid> {
        let fit = GroundGrid::covering(area[0], area[1], self.cell_size)?;
        GroundGrid::new(
            self.origin.unwrap_or(fit.origin),
            self.cell_size,
            self.rows.unwrap_or(fit.rows),
            self.cols.unwrap_or(fit.cols),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub scene: SceneConfig,
    pub grid: GridSpec,
    pub train: TrainConfig,
    pub mode: ProjectionMode,
    pub large_kernel: bool,
    pub decode: DecodeConfig,
    /// Leading frames used for training; the rest form the test split.
    /// Defaults to 80% of the dataset.
    pub train_frames: Option<usize>,
    /// Split used by `infer` and `eval`.
    pub split: Split,
    /// Also write each predicted occupancy map as a PGM.
    pub dump_pom: bool,
    /// Frame shown by `warp-demo`.
    pub demo_frame: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            scene: SceneConfig::default(),
            grid: GridSpec::default(),
            train: TrainConfig::default(),
            mode: ProjectionMode::Features,
            large_kernel: true,
            decode: DecodeConfig::default(),
            train_frames: None,
            split: Split::Test,
            dump_pom: false,
            demo_frame: 0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults, overlaid with `file`, overlaid with `KEY=VALUE` overrides.
    pub fn load(file: &Path, overrides: &[String]) -> Result<Self> {
        let text = read_to_string(file)?;
        let user: Value = serde_json::from_str(&text)?;
        Self::from_value(user, overrides)
    }

    pub fn from_value(user: Value, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        merge(&mut value, user, "")?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, n_views: usize) -> ModelConfig {
        ModelConfig {
            n_views,
            mode: self.mode,
            large_kernel: self.large_kernel,
            n_hid: self.train.n_hid,
            feature_channels: FEATURE_CHANNELS,
            image_channels: IMAGE_CHANNELS,
        }
    }

    fn split_ids(&self, n: usize, split: Split) -> Result<Vec<usize>> {
        let n_train = self.train_frames.unwrap_or(n * 4 / 5);
        if n_train > n {
            return Err(Error::Config(format!(
                "train_frames {n_train} exceeds the {n} frames available"
            )));
        }
        Ok(match split {
            Split::Train => (0..n_train).collect(),
            Split::Test => (n_train..n).collect(),
            Split::All => (0..n).collect(),
        })
    }
}

/// Recursive object merge; unknown keys are errors.
fn merge(base: &mut Value, user: Value, path: &str) -> Result<()> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let full = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &full)?,
                    None if is_open_object(path) => {
                        b.insert(k, v);
                    }
                    None => return Err(Error::Config(format!("unknown config key {full:?}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Objects whose keys depend on a variant (the rig spec).
fn is_open_object(path: &str) -> bool {
    path == "scene.rig"
}

fn apply_override(value: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not KEY=VALUE")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut nested = parsed;
    for part in key.split('.').rev() {
        let mut m = serde_json::Map::new();
        m.insert(part.to_string(), nested);
        nested = Value::Object(m);
    }
    merge(value, nested, "")
}

/// Parses arguments and runs one command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::Config(e.to_string())),
    };
    let (opts, f): (_, fn(&ExperimentConfig) -> Result<()>) = match &cli.command {
        Command::Synth(o) => (o, cmd_synth),
        Command::Train(o) => (o, cmd_train),
        Command::Infer(o) => (o, cmd_infer),
        Command::Eval(o) => (o, cmd_eval),
        Command::WarpDemo(o) => (o, cmd_warp_demo),
    };
    f(&ExperimentConfig::load(&opts.config, &opts.overrides)?)
}

fn output_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.paths.output.join(name)
}

fn geometry(cfg: &ExperimentConfig, ds: &Dataset) -> Result<RigGeometry> {
    let grid = cfg.grid.resolve(ds.manifest.area)?;
    RigGeometry::new(&ds.rig, &grid, ds.manifest.feat_size)
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let scene = generate_scene(&cfg.scene)?;
    let manifest = export_dataset(&scene, &cfg.paths.dataset)?;
    Dataset::open(&cfg.paths.dataset)?;
    println!(
        "wrote {} frames from {} cameras to {} (avg coverage {:.2} cameras)",
        manifest.frames,
        manifest.n_cameras,
        cfg.paths.dataset.display(),
        manifest.avg_coverage
    );
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let geo = geometry(cfg, &ds)?;
    let ids = cfg.split_ids(ds.len(), Split::Train)?;
    let mut model = Mvdet::new(cfg.model_config(ds.rig.len()), cfg.train.seed)?;
    let log = train(&mut model, &ds, &ids, &geo, &cfg.train)?;
    let echo = serde_json::to_value(cfg)?;
    save_checkpoint(&cfg.paths.checkpoint, &model, &echo)?;
    let (reloaded, _) = load_checkpoint(&cfg.paths.checkpoint)?;
    if reloaded != model {
        return Err(Error::Format(
            "checkpoint did not read back identically".into(),
        ));
    }
    write_atomic(
        &output_path(cfg, "loss_curve.csv"),
        loss_curve_csv(&log).as_bytes(),
    )?;
    let last = log.last().map_or(f64::NAN, |s| s.loss);
    println!(
        "trained {} steps on {} frames, final loss {last:.6}; checkpoint {}",
        log.len(),
        ids.len(),
        cfg.paths.checkpoint.display()
    );
    Ok(())
}

pub fn cmd_infer(cfg: &ExperimentConfig) -> Result<()> {
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let geo = geometry(cfg, &ds)?;
    let (model, _) = load_checkpoint(&cfg.paths.checkpoint)?;
    if model.config.n_views != ds.rig.len() {
        return Err(Error::Config(format!(
            "checkpoint expects {} cameras, dataset has {}",
            model.config.n_views,
            ds.rig.len()
        )));
    }
    let ids = cfg.split_ids(ds.len(), cfg.split)?;
    let dets = infer(&model, &ds, &ids, &geo, &cfg.decode)?;
    let path = cfg
        .paths
        .detections
        .clone()
        .unwrap_or_else(|| output_path(cfg, "detections.csv"));
    write_atomic(&path, detections_to_csv(&dets).as_bytes())?;
    if cfg.dump_pom {
        for &id in &ids {
            let pom = predict(&model, &ds.load(id)?, &geo)?;
            let (_, h, w) = pom.map.shape();
            write_pgm(
                &output_path(cfg, &format!("pom/{id}.pgm")),
                w,
                h,
                pom.map.data(),
                1.0,
            )?;
        }
    }
    let total: usize = dets.iter().map(|(_, d)| d.len()).sum();
    println!(
        "{total} detections over {} frames -> {}",
        ids.len(),
        path.display()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let det_path = cfg
        .paths
        .detections
        .clone()
        .unwrap_or_else(|| output_path(cfg, "detections.csv"));
    let gt_path = cfg
        .paths
        .ground_truth
        .clone()
        .unwrap_or_else(|| cfg.paths.dataset.join("gt.csv"));
    let dets = read_detections(&det_path)?;
    let gts = read_ground_truth(&gt_path)?;
    let ids = match Dataset::open(&cfg.paths.dataset) {
        Ok(ds) => cfg.split_ids(ds.len(), cfg.split)?,
        // Without a dataset, score every frame either file mentions.
        Err(_) => {
            let mut ids: Vec<usize> = dets.keys().chain(gts.keys()).copied().collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
    };
    let matches: Vec<_> = ids
        .iter()
        .map(|id| {
            let d = dets.get(id).map(|d| d.positions()).unwrap_or_default();
            let g = gts.get(id).cloned().unwrap_or_default();
            match_frame(&d, &g, cfg.decode.match_threshold)
        })
        .collect();
    let report = compute_metrics(&matches)?;
    let json = serde_json::to_string_pretty(&report)?;
    write_atomic(&output_path(cfg, "report.json"), json.as_bytes())?;
    println!("{json}");
    Ok(())
}

pub fn cmd_warp_demo(cfg: &ExperimentConfig) -> Result<()> {
    let ds = Dataset::open(&cfg.paths.dataset)?;
    let geo = geometry(cfg, &ds)?;
    let frame = ds.load(cfg.demo_frame)?;
    let dir = output_path(cfg, "warp");
    let (rows, cols) = (geo.grid.rows, geo.grid.cols);
    let mut foot_sum = vec![0.0f32; rows * cols];
    let mut coverage = vec![0.0f32; rows * cols];
    for (n, (view, s)) in frame.views.iter().zip(&geo.sampling).enumerate() {
        let (_, hf, wf) = view.image.shape();
        write_ppm(
            &dir.join(format!("cam{n}_image.ppm")),
            wf,
            hf,
            view.image.data(),
        )?;
        let ground = warp_features(&view.image, s)?;
        write_ppm(
            &dir.join(format!("cam{n}_ground.ppm")),
            cols,
            rows,
            ground.data(),
        )?;
        let foot = warp_features(
            &view
                .features
                .slice_channels(FOOT_CHANNEL..FOOT_CHANNEL + 1)?,
            s,
        )?;
        let gain = ds.manifest.scene.feature_gain as f32;
        write_pgm(
            &dir.join(format!("cam{n}_foot_ground.pgm")),
            cols,
            rows,
            foot.data(),
            gain,
        )?;
        for (acc, v) in foot_sum.iter_mut().zip(foot.data()) {
            *acc += v / gain;
        }
        for (k, e) in s.entries.iter().enumerate() {
            coverage[k] += f32::from(e.is_some());
        }
    }
    let n = frame.views.len().max(1) as f32;
    write_pgm(&dir.join("coverage.pgm"), cols, rows, &coverage, n)?;
    // Summed foot evidence with ground-truth cells marked at full intensity.
    for p in &frame.gt {
        if let Some((i, j)) = geo.grid.world_to_cell(p) {
            foot_sum[i * cols + j] = n;
        }
    }
    let sum = Tensor::from_vec(1, rows, cols, foot_sum)?;
    write_pgm(&dir.join("foot_sum.pgm"), cols, rows, sum.data(), n)?;
    println!(
        "wrote ground-plane views of frame {} to {}",
        cfg.demo_frame,
        dir.display()
    );
    Ok(())
}
