//! Two-stage optimization driver: depth-guided pre-training followed by
//! pose-guided fine-tuning of a radiance grid.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::UnitQuaternion;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balloon::{build_shape, BalloonError, BalloonShape, BodyPartConfig};
use crate::control::{project_pose, rasterize_pose, render_depth, PoseStyle};
use crate::field::{render, render_gradient, FieldError, GridInit, Jitter, RadianceGrid};
use crate::geometry::{sample_camera, Aabb, Camera, CameraSamplingConfig, GeometryError, SphericalSample, Vec3};
use crate::image::Image;
use crate::optim::{Adam, AdamConfig};
use crate::sds::{
    sds_gradient, AnnealConfig, FixedTarget, GuidanceModel, NoiseSchedule, OracleGuidance, ReferenceTarget,
    DepthCache, ScheduleState, SdsError, SdsRequest, SilhouetteTarget, TargetRegistry, ViewContext,
};
use crate::skeleton::{classify_view, default_skeleton, Skeleton, SkeletonError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Balloon(#[from] BalloonError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Sds(#[from] SdsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parameters became non-finite at iteration {iter} of stage {stage}")]
    Diverged { stage: u8, iter: usize, report: Box<RunReport> },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub iters: usize,
    pub lr: f64,
    pub prompt: String,
    pub anneal: AnnealConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { iters: 10_000, lr: 1e-3, prompt: "a photo of an animal".into(), anneal: AnnealConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Nodes per axis.
    pub resolution: [usize; 3],
    /// Explicit bounds; when absent the balloon bounds padded by `padding`.
    pub bounds: Option<Aabb>,
    pub padding: f64,
    pub channels: usize,
    pub init: GridInit,
    pub background: Vec<f64>,
    /// Factor applied to softplus density. The default makes a unit of raw
    /// density roughly one voxel spacing of optical depth at 32 nodes.
    pub density_scale: f64,
    pub n_samples: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: [32; 3],
            bounds: None,
            padding: 0.05,
            channels: 3,
            init: GridInit::default(),
            background: vec![0.0; 3],
            density_scale: 30.0,
            n_samples: 64,
        }
    }
}

/// Target images for the analytic guidance oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuidanceConfig {
    /// Flat-colored silhouette of the balloon shape from the sampled camera.
    Silhouette { foreground: Vec<f64>, background: Vec<f64> },
    /// Midpoint renders of a stored grid checkpoint.
    Reference { checkpoint: PathBuf, n_samples: usize },
    /// Images keyed by prompt and view description.
    Manifest { path: PathBuf },
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig::Silhouette { foreground: vec![1.0; 3], background: vec![0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Skeleton document; the built-in quadruped when absent.
    pub skeleton: Option<PathBuf>,
    pub body: BodyPartConfig,
    pub camera: CameraSamplingConfig,
    /// Aim cameras at the skeleton's bounding-box center instead of
    /// `camera.look_at`.
    pub center_on_skeleton: bool,
    pub grid: GridConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub guidance: GuidanceConfig,
    pub adam: AdamConfig,
    pub omit_jacobian: bool,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Dump the conditioning image and render every this many iterations;
    /// 0 disables dumps.
    pub dump_every: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            skeleton: None,
            body: BodyPartConfig::default(),
            camera: CameraSamplingConfig::default(),
            center_on_skeleton: true,
            grid: GridConfig::default(),
            stage1: StageConfig::default(),
            stage2: StageConfig::default(),
            guidance: GuidanceConfig::default(),
            adam: AdamConfig::default(),
            omit_jacobian: false,
            seed: 0,
            output_dir: None,
            dump_every: 500,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.body.validate()?;
        self.camera.validate()?;
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(PipelineError::Config(format!("{name}.lr must be positive")));
            }
            ScheduleState::new(0, 1, s.anneal)?;
        }
        let g = &self.grid;
        if g.n_samples == 0 {
            return Err(PipelineError::Config("grid.n_samples must be at least 1".into()));
        }
        if !(g.density_scale > 0.0 && g.density_scale.is_finite()) {
            return Err(PipelineError::Config("grid.density_scale must be positive".into()));
        }
        if g.background.len() != g.channels {
            return Err(PipelineError::Config("grid.background must have one value per channel".into()));
        }
        if let GuidanceConfig::Silhouette { foreground, background } = &self.guidance {
            if foreground.len() != g.channels || background.len() != g.channels {
                return Err(PipelineError::Config("guidance colors must have one value per channel".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stages {
    First,
    Second,
    Both,
}

/// Scalars logged for one completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: u8,
    pub iter: usize,
    pub t: f64,
    pub step: usize,
    pub guidance_scale: f64,
    pub control_scale: f64,
    pub grad_norm: f64,
    pub opacity_mean: f64,
    pub view: String,
    pub camera: SphericalSample,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<IterationRecord>,
    /// Iterations skipped because guidance produced non-finite values.
    pub skipped: Vec<usize>,
    pub wall_seconds: f64,
    pub checkpoint: Option<PathBuf>,
}

impl RunReport {
    /// One JSON record per line, followed by a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "iterations": self.records.len(),
                "skipped": self.skipped,
                "wall_seconds": self.wall_seconds,
                "checkpoint": self.checkpoint,
            }
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

/// Intersection over union of two opacity masks thresholded at 0.5.
pub fn silhouette_iou(opacity: &[f64], mask: &[f64]) -> f64 {
    assert_eq!(opacity.len(), mask.len());
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, b) in opacity.iter().zip(mask) {
        let (a, b) = (*a >= 0.5, *b >= 0.5);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Seed of the evaluation camera stream.
pub const HELD_OUT_SEED: u64 = 12345;

fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything derived from a validated config.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub skeleton: Skeleton,
    pub shape: BalloonShape,
    pub cameras: CameraSamplingConfig,
    pub bounds: Aabb,
    pub schedule: NoiseSchedule,
    depth: Arc<DepthCache>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let skeleton = match &config.skeleton {
            Some(path) => Skeleton::from_json(&fs::read_to_string(path).map_err(io_err(path))?)?,
            None => default_skeleton(),
        };
        Self::with_skeleton(config, skeleton)
    }

    pub fn with_skeleton(config: PipelineConfig, skeleton: Skeleton) -> Result<Self, PipelineError> {
        config.validate()?;
        let shape = build_shape(&skeleton, &config.body)?;
        let bounds = config.grid.bounds.unwrap_or_else(|| shape.bounds().padded(config.grid.padding));
        let skel_box = skeleton.bounding_box();
        if !bounds.contains_box(&skel_box) || bounds.lo() == skel_box.lo() || bounds.hi() == skel_box.hi() {
            return Err(PipelineError::Config("grid bounds must strictly contain the skeleton".into()));
        }
        let mut cameras = config.camera;
        if config.center_on_skeleton {
            cameras.look_at = skel_box.center().into();
        }
        cameras.validate()?;
        let depth = Arc::new(DepthCache::new(shape.clone()));
        Ok(Self { config, skeleton, shape, cameras, bounds, schedule: NoiseSchedule::default(), depth })
    }

    pub fn init_grid(&self) -> Result<RadianceGrid, PipelineError> {
        let g = &self.config.grid;
        let mut grid = RadianceGrid::new(g.resolution, self.bounds, g.channels, g.init)?;
        grid.background = g.background.clone();
        grid.density_scale = g.density_scale;
        Ok(grid)
    }

    /// Oracle guidance built from the config.
    pub fn guidance(&self) -> Result<OracleGuidance, PipelineError> {
        let schedule = self.schedule.clone();
        Ok(match &self.config.guidance {
            GuidanceConfig::Silhouette { foreground, background } => OracleGuidance::new(
                schedule,
                SilhouetteTarget::new(self.depth.clone(), foreground.clone(), background.clone()),
            ),
            GuidanceConfig::Reference { checkpoint, n_samples } => {
                let file = fs::File::open(checkpoint).map_err(io_err(checkpoint))?;
                let grid = RadianceGrid::read_checkpoint(std::io::BufReader::new(file))?;
                OracleGuidance::new(schedule, ReferenceTarget::new(grid, *n_samples))
            }
            GuidanceConfig::Manifest { path } => {
                OracleGuidance::new(schedule, TargetRegistry::load_manifest(path, self.config.grid.channels)?)
            }
        })
    }

    /// Oracle that always returns `image`; mainly for experiments.
    pub fn fixed_guidance(&self, image: Image) -> OracleGuidance {
        OracleGuidance::new(self.schedule.clone(), FixedTarget(Arc::new(image)))
    }

    /// Ground-truth silhouette mask of the balloon shape.
    pub fn silhouette(&self, camera: &Camera) -> Vec<f64> {
        render_depth(&self.shape, camera).silhouette()
    }

    /// Mean silhouette IoU of midpoint renders against the balloon shape.
    pub fn mean_iou(&self, grid: &RadianceGrid, cameras: &[Camera]) -> Result<f64, PipelineError> {
        let mut total = 0.0;
        for cam in cameras {
            let (img, _) = render(grid, cam, self.config.grid.n_samples, crate::field::NoJitter::Midpoint)?;
            total += silhouette_iou(&img.opacity, &self.silhouette(cam));
        }
        Ok(total / cameras.len().max(1) as f64)
    }

    /// `n` evaluation cameras from a fixed stream that training never draws from.
    pub fn held_out_cameras(&self, n: usize) -> Result<Vec<Camera>, PipelineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(HELD_OUT_SEED);
        (0..n).map(|_| Ok(sample_camera(&mut rng, &self.cameras)?)).collect()
    }

    /// Conditioning image for one stage and camera.
    pub fn control_image(&self, stage: u8, camera: &Camera) -> Image {
        if stage == 1 {
            self.depth.depth(camera).to_control()
        } else {
            let pose = project_pose(&self.skeleton, camera);
            rasterize_pose(&pose, &PoseStyle::for_width(camera.width as usize)).to_float()
        }
    }

    pub fn stage1_pretrain(&self, grid: RadianceGrid, guidance: &dyn GuidanceModel) -> Result<(RadianceGrid, RunReport), PipelineError> {
        self.run_stage(1, grid, guidance)
    }

    pub fn stage2_finetune(&self, grid: RadianceGrid, guidance: &dyn GuidanceModel) -> Result<(RadianceGrid, RunReport), PipelineError> {
        self.run_stage(2, grid, guidance)
    }

    fn run_stage(&self, stage: u8, mut grid: RadianceGrid, guidance: &dyn GuidanceModel) -> Result<(RadianceGrid, RunReport), PipelineError> {
        let cfg = if stage == 1 { &self.config.stage1 } else { &self.config.stage2 };
        let started = Instant::now();
        let mut report = RunReport::default();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, stage as u64));
        let adam_cfg = AdamConfig { lr: cfg.lr, ..self.config.adam };
        let mut adam_density = Adam::new(grid.density.len(), adam_cfg);
        let mut adam_color = Adam::new(grid.color.len(), adam_cfg);
        let dump_dir = self.config.output_dir.as_ref().map(|d| d.join(format!("stage{stage}")));
        let frame = UnitQuaternion::identity();

        for iter in 0..cfg.iters {
            let camera = sample_camera(&mut rng, &self.cameras)?;
            let view = classify_view(&camera, &frame);
            let control = self.control_image(stage, &camera);
            let (rendered, trace) = render(&grid, &camera, self.config.grid.n_samples, Jitter::Stratified(&mut rng))?;
            let state = ScheduleState::new(iter, cfg.iters, cfg.anneal)?;
            let ctx = ViewContext { camera, view };
            let request = SdsRequest { prompt: &cfg.prompt, control: Some(&control), view: &ctx, omit_jacobian: self.config.omit_jacobian };
            let sds = match sds_gradient(&rendered.image, guidance, &request, &state, &self.schedule, &mut rng) {
                Ok(s) => s,
                Err(SdsError::NonFinite) => {
                    tracing::warn!(stage, iter, "guidance returned non-finite values; skipping iteration");
                    report.skipped.push(iter);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let grad = render_gradient(&grid, &trace, &sds.gradient)?;
            adam_density.step(&mut grid.density, &grad.density);
            adam_color.step(&mut grid.color, &grad.color);
            if !grid.is_finite() {
                report.wall_seconds = started.elapsed().as_secs_f64();
                return Err(PipelineError::Diverged { stage, iter, report: Box::new(report) });
            }
            if let Some(dir) = &dump_dir {
                if self.config.dump_every > 0 && iter % self.config.dump_every == 0 {
                    fs::create_dir_all(dir).map_err(io_err(dir))?;
                    let c = dir.join(format!("iter_{iter:05}_control.png"));
                    fs::write(&c, control.to_png()).map_err(io_err(&c))?;
                    let r = dir.join(format!("iter_{iter:05}_render.png"));
                    fs::write(&r, rendered.image.to_png()).map_err(io_err(&r))?;
                }
            }
            let offset = camera.position() - Vec3::from(self.cameras.look_at);
            report.records.push(IterationRecord {
                stage,
                iter,
                t: sds.t,
                step: sds.step,
                guidance_scale: sds.guidance_scale,
                control_scale: sds.control_scale,
                grad_norm: grad.norm(),
                opacity_mean: rendered.mean_opacity(),
                view: view.as_str().to_string(),
                camera: SphericalSample::from_offset(&offset),
            });
        }
        report.wall_seconds = started.elapsed().as_secs_f64();
        Ok((grid, report))
    }

    /// Runs the requested stages, writing checkpoints and reports to the
    /// output directory when one is configured.
    pub fn run(&self, stages: Stages, initial: Option<RadianceGrid>) -> Result<(RadianceGrid, Vec<RunReport>), PipelineError> {
        let guidance = self.guidance()?;
        let mut grid = match initial {
            Some(g) => g,
            None => self.init_grid()?,
        };
        let mut reports = Vec::new();
        let wanted: &[u8] = match stages {
            Stages::First => &[1],
            Stages::Second => &[2],
            Stages::Both => &[1, 2],
        };
        for &stage in wanted {
            let (g, mut report) = self.run_stage(stage, grid, &guidance)?;
            grid = g;
            if let Some(dir) = &self.config.output_dir {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let ckpt = dir.join(format!("stage{stage}.grid"));
                let mut f = fs::File::create(&ckpt).map_err(io_err(&ckpt))?;
                f.write_all(&grid.to_checkpoint_bytes()).map_err(io_err(&ckpt))?;
                report.checkpoint = Some(ckpt);
                let rpath = dir.join(format!("stage{stage}_report.jsonl"));
                fs::write(&rpath, report.to_jsonl()).map_err(io_err(&rpath))?;
            }
            reports.push(report);
        }
        Ok((grid, reports))
    }
}

/// Stage 1 from a fresh grid with the configured guidance.
pub fn stage1_pretrain(config: &PipelineConfig) -> Result<(RadianceGrid, RunReport), PipelineError> {
    let p = Pipeline::new(config.clone())?;
    let guidance = p.guidance()?;
    p.stage1_pretrain(p.init_grid()?, &guidance)
}

/// Stage 2 from `pretrained` with the configured guidance.
pub fn stage2_finetune(config: &PipelineConfig, pretrained: RadianceGrid) -> Result<(RadianceGrid, RunReport), PipelineError> {
    let p = Pipeline::new(config.clone())?;
    let guidance = p.guidance()?;
    p.stage2_finetune(pretrained, &guidance)
}
