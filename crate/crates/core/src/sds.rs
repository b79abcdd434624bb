//! Noise schedule, guidance models and the score-distillation gradient.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balloon::BalloonShape;
use crate::control::{render_depth, DepthMap};
use crate::field::{render, NoJitter, RadianceGrid};
use crate::geometry::Camera;
use crate::image::Image;
use crate::skeleton::ViewDescription;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdsError {
    #[error("timestep {0} outside 1..={1}")]
    Timestep(usize, usize),
    #[error("invalid noise schedule: {0}")]
    Schedule(String),
    #[error("invalid schedule state: {0}")]
    State(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("guidance returned non-finite values")]
    NonFinite,
    #[error("no guidance target for prompt {prompt:?} and view {view}")]
    MissingTarget { prompt: Option<String>, view: ViewDescription },
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Discrete variance-preserving schedule with steps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub const DEFAULT_STEPS: usize = 1000;

    /// Linear β from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, SdsError> {
        if steps < 2 {
            return Err(SdsError::Schedule(format!("need at least 2 steps, got {steps}")));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(SdsError::Schedule(format!("betas must satisfy 0 < {beta_start} <= {beta_end} < 1")));
        }
        let alphas: Vec<f64> = (0..steps)
            .map(|i| 1.0 - (beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64))
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(Self { alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    fn slot(&self, t: usize) -> Result<usize, SdsError> {
        if t == 0 || t > self.steps() {
            return Err(SdsError::Timestep(t, self.steps()));
        }
        Ok(t - 1)
    }

    pub fn alpha(&self, t: usize) -> Result<f64, SdsError> {
        Ok(self.alphas[self.slot(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, SdsError> {
        Ok(self.alpha_bars[self.slot(t)?])
    }

    /// Variance of the forward marginal, `1 − ᾱ_t`.
    pub fn sigma2(&self, t: usize) -> Result<f64, SdsError> {
        Ok(1.0 - self.alpha_bar(t)?)
    }

    /// Nearest discrete step for a continuous `t ∈ [0, 1]`.
    pub fn step_for(&self, t: f64) -> usize {
        ((t * self.steps() as f64).round() as i64).clamp(1, self.steps() as i64) as usize
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(Self::DEFAULT_STEPS, 1e-4, 2e-2).expect("default schedule is valid")
    }
}

/// `z_t = √ᾱ_t x + √(1 − ᾱ_t) ε`.
pub fn forward_diffuse(x: &Image, t: usize, eps: &Image, schedule: &NoiseSchedule) -> Result<Image, SdsError> {
    if !x.same_shape(eps) {
        return Err(SdsError::Shape("image and noise differ".into()));
    }
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x.data.iter().zip(&eps.data).map(|(x, e)| a * x + b * e).collect();
    Ok(Image::from_data(x.width, x.height, x.channels, data))
}

/// Squared-error denoising objective for one sample.
pub fn diffusion_loss(eps: &Image, eps_pred: &Image) -> Result<f64, SdsError> {
    if !eps.same_shape(eps_pred) {
        return Err(SdsError::Shape("noise and prediction differ".into()));
    }
    Ok(eps.data.iter().zip(&eps_pred.data).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Annealing endpoints shared by every schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealConfig {
    pub t_max: f64,
    pub t_min: f64,
    pub guidance_init: f64,
    pub control_start: f64,
    pub control_end: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self { t_max: 0.98, t_min: 0.4, guidance_init: 50.0, control_start: 1.0, control_end: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub iter: usize,
    pub total_iters: usize,
    pub anneal: AnnealConfig,
}

impl ScheduleState {
    pub fn new(iter: usize, total_iters: usize, anneal: AnnealConfig) -> Result<Self, SdsError> {
        let s = Self { iter, total_iters, anneal };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SdsError> {
        let a = &self.anneal;
        if !(0.0 < a.t_min && a.t_min < a.t_max && a.t_max <= 1.0) {
            return Err(SdsError::State(format!("need 0 < t_min < t_max <= 1, got {} and {}", a.t_min, a.t_max)));
        }
        if self.total_iters == 0 || self.iter > self.total_iters {
            return Err(SdsError::State(format!("iteration {} of {}", self.iter, self.total_iters)));
        }
        if !(a.guidance_init > 0.0) {
            return Err(SdsError::State("guidance_init must be positive".into()));
        }
        for s in [a.control_start, a.control_end] {
            if !(0.0..=1.0).contains(&s) {
                return Err(SdsError::State(format!("control scale {s} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn progress(&self) -> f64 {
        self.iter as f64 / self.total_iters as f64
    }
}

pub fn anneal_timestep(state: &ScheduleState) -> f64 {
    let a = &state.anneal;
    a.t_max - (a.t_max - a.t_min) * state.progress().sqrt()
}

pub fn guidance_scale(state: &ScheduleState) -> f64 {
    state.anneal.guidance_init * (1.0 + state.progress())
}

pub fn control_scale(state: &ScheduleState) -> f64 {
    let a = &state.anneal;
    a.control_end + (a.control_start - a.control_end) * (1.0 + (std::f64::consts::PI * state.progress()).cos()) / 2.0
}

/// Blends the control branch by `s`, then applies classifier-free guidance
/// with scale `omega`.
pub fn mix_guidance(
    uncond: &Image,
    cond_nocontrol: &Image,
    cond_control: &Image,
    omega: f64,
    s: f64,
) -> Result<Image, SdsError> {
    if !uncond.same_shape(cond_nocontrol) || !uncond.same_shape(cond_control) {
        return Err(SdsError::Shape("guidance predictions differ in shape".into()));
    }
    let data = uncond
        .data
        .iter()
        .zip(&cond_nocontrol.data)
        .zip(&cond_control.data)
        .map(|((u, nc), cc)| {
            let c = nc + s * (cc - nc);
            u + omega * (c - u)
        })
        .collect();
    Ok(Image::from_data(uncond.width, uncond.height, uncond.channels, data))
}

/// Camera of the render being guided, for guidance models that are view aware.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewContext {
    pub camera: Camera,
    pub view: ViewDescription,
}

pub trait GuidanceModel: Send + Sync {
    /// Noise prediction for `z_t` at step `t`. `prompt` and `control` are
    /// `None` for the unconditional branches.
    fn predict_noise(
        &self,
        z_t: &Image,
        t: usize,
        prompt: Option<&str>,
        control: Option<&Image>,
        ctx: &ViewContext,
    ) -> Result<Image, SdsError>;
}

/// Where an oracle finds its target image for a request.
pub trait TargetSource: Send + Sync {
    fn target(&self, prompt: Option<&str>, ctx: &ViewContext, channels: usize) -> Result<Arc<Image>, SdsError>;
}

/// Exact denoiser for a point-mass data distribution at the target image.
/// The prediction depends on the prompt and the conditioning only through
/// the target lookup.
pub struct OracleGuidance {
    schedule: NoiseSchedule,
    source: Box<dyn TargetSource>,
}

impl OracleGuidance {
    pub fn new(schedule: NoiseSchedule, source: impl TargetSource + 'static) -> Self {
        Self { schedule, source: Box::new(source) }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl GuidanceModel for OracleGuidance {
    fn predict_noise(
        &self,
        z_t: &Image,
        t: usize,
        prompt: Option<&str>,
        _control: Option<&Image>,
        ctx: &ViewContext,
    ) -> Result<Image, SdsError> {
        let target = self.source.target(prompt, ctx, z_t.channels)?;
        if !target.same_shape(z_t) {
            return Err(SdsError::Shape(format!(
                "target is {}x{}x{}, input is {}x{}x{}",
                target.width, target.height, target.channels, z_t.width, z_t.height, z_t.channels
            )));
        }
        let ab = self.schedule.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = z_t.data.iter().zip(&target.data).map(|(z, x)| (z - a * x) / b).collect();
        Ok(Image::from_data(z_t.width, z_t.height, z_t.channels, data))
    }
}

/// The same image for every request.
pub struct FixedTarget(pub Arc<Image>);

impl TargetSource for FixedTarget {
    fn target(&self, _: Option<&str>, _: &ViewContext, _: usize) -> Result<Arc<Image>, SdsError> {
        Ok(self.0.clone())
    }
}

/// Targets keyed by prompt tag and view description. Unconditional requests
/// use `unconditional_prompt`.
#[derive(Default)]
pub struct TargetRegistry {
    pub unconditional_prompt: String,
    targets: BTreeMap<(String, ViewDescription), Arc<Image>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDocument {
    #[serde(default)]
    pub unconditional_prompt: String,
    pub targets: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub prompt: String,
    pub view: ViewDescription,
    /// PNG path, relative to the manifest file.
    pub image: String,
}

impl TargetRegistry {
    pub fn new(unconditional_prompt: impl Into<String>) -> Self {
        Self { unconditional_prompt: unconditional_prompt.into(), targets: BTreeMap::new() }
    }

    pub fn insert(&mut self, prompt: impl Into<String>, view: ViewDescription, image: Image) {
        self.targets.insert((prompt.into(), view), Arc::new(image));
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn load_manifest(path: &Path, channels: usize) -> Result<Self, SdsError> {
        let text = std::fs::read_to_string(path).map_err(|e| SdsError::Manifest(format!("{}: {e}", path.display())))?;
        let doc: ManifestDocument = serde_json::from_str(&text).map_err(|e| SdsError::Manifest(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut reg = Self::new(doc.unconditional_prompt);
        for entry in doc.targets {
            let file = dir.join(&entry.image);
            let bytes = std::fs::read(&file).map_err(|e| SdsError::Manifest(format!("{}: {e}", file.display())))?;
            let img = Image::from_png(&bytes, channels).map_err(|e| SdsError::Manifest(format!("{}: {e}", file.display())))?;
            reg.insert(entry.prompt, entry.view, img);
        }
        Ok(reg)
    }
}

impl TargetSource for TargetRegistry {
    fn target(&self, prompt: Option<&str>, ctx: &ViewContext, _: usize) -> Result<Arc<Image>, SdsError> {
        let key = prompt.unwrap_or(&self.unconditional_prompt).to_string();
        self.targets
            .get(&(key, ctx.view))
            .cloned()
            .ok_or_else(|| SdsError::MissingTarget { prompt: prompt.map(str::to_string), view: ctx.view })
    }
}

/// Depth renders of one shape, remembering the most recent camera so that
/// several consumers in one iteration share a single trace.
pub struct DepthCache {
    shape: BalloonShape,
    last: Mutex<Option<(Camera, Arc<DepthMap>)>>,
}

impl DepthCache {
    pub fn new(shape: BalloonShape) -> Self {
        Self { shape, last: Mutex::new(None) }
    }

    pub fn shape(&self) -> &BalloonShape {
        &self.shape
    }

    pub fn depth(&self, camera: &Camera) -> Arc<DepthMap> {
        let mut last = self.last.lock();
        if let Some((cam, depth)) = last.as_ref() {
            if cam == camera {
                return depth.clone();
            }
        }
        let depth = Arc::new(render_depth(&self.shape, camera));
        *last = Some((*camera, depth.clone()));
        depth
    }
}

/// Flat-colored silhouette of a balloon shape, seen from the request camera.
pub struct SilhouetteTarget {
    depth: Arc<DepthCache>,
    foreground: Vec<f64>,
    background: Vec<f64>,
}

impl SilhouetteTarget {
    pub fn new(depth: Arc<DepthCache>, foreground: Vec<f64>, background: Vec<f64>) -> Self {
        Self { depth, foreground, background }
    }

    pub fn render(&self, camera: &Camera) -> Image {
        let depth = self.depth.depth(camera);
        let (w, h) = (camera.width as usize, camera.height as usize);
        let c = self.foreground.len();
        let mut img = Image::new(w, h, c);
        for y in 0..h {
            for x in 0..w {
                let src = if depth.is_hit(x, y) { &self.foreground } else { &self.background };
                img.pixel_mut(x, y).copy_from_slice(src);
            }
        }
        img
    }
}

impl TargetSource for SilhouetteTarget {
    fn target(&self, _: Option<&str>, ctx: &ViewContext, channels: usize) -> Result<Arc<Image>, SdsError> {
        if channels != self.foreground.len() {
            return Err(SdsError::Shape(format!("silhouette has {} channels", self.foreground.len())));
        }
        Ok(Arc::new(self.render(&ctx.camera)))
    }
}

/// Midpoint renders of a known grid, consistent across views.
pub struct ReferenceTarget {
    grid: RadianceGrid,
    n_samples: usize,
    last: Mutex<Option<(Camera, Arc<Image>)>>,
}

impl ReferenceTarget {
    pub fn new(grid: RadianceGrid, n_samples: usize) -> Self {
        Self { grid, n_samples, last: Mutex::new(None) }
    }

    pub fn render(&self, camera: &Camera) -> Result<Image, SdsError> {
        render(&self.grid, camera, self.n_samples, NoJitter::Midpoint)
            .map(|(r, _)| r.image)
            .map_err(|e| SdsError::Shape(e.to_string()))
    }
}

impl TargetSource for ReferenceTarget {
    fn target(&self, _: Option<&str>, ctx: &ViewContext, _: usize) -> Result<Arc<Image>, SdsError> {
        let mut last = self.last.lock();
        if let Some((cam, img)) = last.as_ref() {
            if *cam == ctx.camera {
                return Ok(img.clone());
            }
        }
        let img = Arc::new(self.render(&ctx.camera)?);
        *last = Some((ctx.camera, img.clone()));
        Ok(img)
    }
}

/// One score-distillation estimate.
#[derive(Debug, Clone)]
pub struct SdsStep {
    /// `∂L/∂x`, to be chained with the render gradient.
    pub gradient: Image,
    pub t: f64,
    pub step: usize,
    pub guidance_scale: f64,
    pub control_scale: f64,
}

/// Per-run inputs to the guidance calls.
#[derive(Debug, Clone, Copy)]
pub struct SdsRequest<'a> {
    pub prompt: &'a str,
    pub control: Option<&'a Image>,
    pub view: &'a ViewContext,
    /// Drop the `√ᾱ_t` factor of `∂z_t/∂x`.
    pub omit_jacobian: bool,
}

/// Single-sample score-distillation gradient `w(t)(ε̂ − ε)√ᾱ_t` with
/// `w(t) = 1 − ᾱ_t`.
pub fn sds_gradient<R: Rng + ?Sized>(
    x: &Image,
    guidance: &dyn GuidanceModel,
    request: &SdsRequest<'_>,
    state: &ScheduleState,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<SdsStep, SdsError> {
    state.validate()?;
    if !x.is_finite() {
        return Err(SdsError::Shape("rendered image is not finite".into()));
    }
    let t = anneal_timestep(state);
    let step = schedule.step_for(t);
    let omega = guidance_scale(state);
    let s = control_scale(state);
    let eps_data: Vec<f64> = (0..x.data.len()).map(|_| rng.sample(StandardNormal)).collect();
    let eps = Image::from_data(x.width, x.height, x.channels, eps_data);
    let z = forward_diffuse(x, step, &eps, schedule)?;

    let ctx = request.view;
    let uncond = guidance.predict_noise(&z, step, None, None, ctx)?;
    let cond = guidance.predict_noise(&z, step, Some(request.prompt), None, ctx)?;
    let controlled = guidance.predict_noise(&z, step, Some(request.prompt), request.control, ctx)?;
    for p in [&uncond, &cond, &controlled] {
        if !p.same_shape(x) {
            return Err(SdsError::Shape("guidance output differs from input".into()));
        }
        if !p.is_finite() {
            return Err(SdsError::NonFinite);
        }
    }
    let eps_hat = mix_guidance(&uncond, &cond, &controlled, omega, s)?;

    let ab = schedule.alpha_bar(step)?;
    let jac = if request.omit_jacobian { 1.0 } else { ab.sqrt() };
    let scale = (1.0 - ab) * jac;
    let data = eps_hat.data.iter().zip(&eps.data).map(|(p, e)| scale * (p - e)).collect();
    Ok(SdsStep {
        gradient: Image::from_data(x.width, x.height, x.channels, data),
        t,
        step,
        guidance_scale: omega,
        control_scale: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(iter: usize, total: usize) -> ScheduleState {
        ScheduleState::new(iter, total, AnnealConfig::default()).unwrap()
    }

    fn ctx() -> ViewContext {
        let camera = Camera::new(Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), 45.0, 4, 4).unwrap();
        ViewContext { camera, view: ViewDescription::Front }
    }

    #[test]
    fn schedule_table_is_a_running_product() {
        let s = NoiseSchedule::default();
        let mut prod = 1.0;
        for t in 1..=s.steps() {
            prod *= s.alpha(t).unwrap();
            assert!((s.alpha_bar(t).unwrap() - prod).abs() < 1e-12);
            if t > 1 {
                assert!(s.alpha_bar(t).unwrap() < s.alpha_bar(t - 1).unwrap());
            }
        }
        assert!(s.alpha_bar(1).unwrap() > 0.999);
        assert!(s.alpha_bar(0).is_err());
        assert!(s.alpha_bar(1001).is_err());
    }

    #[test]
    fn step_mapping_rounds_and_clamps() {
        let s = NoiseSchedule::default();
        assert_eq!(s.step_for(0.98), 980);
        assert_eq!(s.step_for(0.0), 1);
        assert_eq!(s.step_for(1.2), 1000);
        assert_eq!(s.step_for(0.4004), 400);
    }

    #[test]
    fn forward_diffusion_scalar() {
        // A one-step schedule whose ᾱ is 0.64.
        let s = NoiseSchedule { alphas: vec![0.64, 0.5], alpha_bars: vec![0.64, 0.32] };
        let x = Image::filled(1, 1, 1, 1.0);
        let e = Image::filled(1, 1, 1, 0.5);
        let z = forward_diffuse(&x, 1, &e, &s).unwrap();
        assert!((z.data[0] - 1.1).abs() < 1e-12);
        let zero = Image::new(1, 1, 1);
        assert!((forward_diffuse(&x, 2, &zero, &s).unwrap().data[0] - 0.32f64.sqrt()).abs() < 1e-12);
        assert!(forward_diffuse(&x, 3, &e, &s).is_err());
    }

    #[test]
    fn closed_form_schedules() {
        assert_eq!(anneal_timestep(&state(0, 100)), 0.98);
        assert!((anneal_timestep(&state(100, 100)) - 0.4).abs() < 1e-12);
        assert!((anneal_timestep(&state(25, 100)) - 0.69).abs() < 1e-12);
        assert_eq!(guidance_scale(&state(0, 100)), 50.0);
        assert_eq!(guidance_scale(&state(50, 100)), 75.0);
        assert_eq!(guidance_scale(&state(100, 100)), 100.0);
        assert_eq!(control_scale(&state(0, 100)), 1.0);
        assert!((control_scale(&state(50, 100)) - 0.625).abs() < 1e-12);
        assert!((control_scale(&state(100, 100)) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn invalid_states() {
        assert!(ScheduleState::new(11, 10, AnnealConfig::default()).is_err());
        let bad = AnnealConfig { t_min: 0.99, ..Default::default() };
        assert!(ScheduleState::new(0, 10, bad).is_err());
    }

    #[test]
    fn mixing_endpoints() {
        let u = Image::filled(2, 1, 1, 1.0);
        let nc = Image::filled(2, 1, 1, 2.0);
        let cc = Image::filled(2, 1, 1, 5.0);
        let m = mix_guidance(&u, &nc, &cc, 1.0, 1.0).unwrap();
        assert_eq!(m.data, cc.data);
        let a = mix_guidance(&u, &nc, &cc, 7.5, 0.0).unwrap();
        let b = mix_guidance(&u, &nc, &Image::filled(2, 1, 1, -3.0), 7.5, 0.0).unwrap();
        assert_eq!(a, b);
        let same = mix_guidance(&u, &u, &u, 80.0, 0.3).unwrap();
        assert!(same.max_abs_diff(&u) < 1e-12);
    }

    struct Echo(Image);

    impl GuidanceModel for Echo {
        fn predict_noise(&self, _: &Image, _: usize, _: Option<&str>, _: Option<&Image>, _: &ViewContext) -> Result<Image, SdsError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn exact_noise_gives_zero_gradient() {
        let schedule = NoiseSchedule::default();
        let x = Image::filled(3, 3, 3, 0.4);
        let view = ctx();
        let req = SdsRequest { prompt: "a dog", control: None, view: &view, omit_jacobian: false };
        // Reproduce the draw the gradient call will make.
        let mut probe = ChaCha8Rng::seed_from_u64(3);
        let eps: Vec<f64> = (0..27).map(|_| probe.sample(StandardNormal)).collect();
        let echo = Echo(Image::from_data(3, 3, 3, eps));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let anneal = AnnealConfig { guidance_init: 1.0, ..Default::default() };
        let st = ScheduleState::new(0, 10, anneal).unwrap();
        // ω = 1 at iteration 0 with guidance_init = 1.
        let out = sds_gradient(&x, &echo, &req, &st, &schedule, &mut rng).unwrap();
        assert!(out.gradient.data.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn oracle_gradient_points_to_target() {
        let schedule = NoiseSchedule::default();
        let target = Image::filled(4, 4, 3, 0.25);
        let oracle = OracleGuidance::new(schedule.clone(), FixedTarget(Arc::new(target.clone())));
        let view = ctx();
        let req = SdsRequest { prompt: "p", control: None, view: &view, omit_jacobian: false };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let st = state(30, 100);
        let at = sds_gradient(&target, &oracle, &req, &st, &schedule, &mut rng).unwrap();
        assert!(at.gradient.data.iter().all(|g| g.abs() < 1e-9));
        let x = Image::filled(4, 4, 3, 0.75);
        let g = sds_gradient(&x, &oracle, &req, &st, &schedule, &mut rng).unwrap();
        let ab = schedule.alpha_bar(g.step).unwrap();
        let coeff = (1.0 - ab) * ab / (1.0 - ab).sqrt();
        for v in &g.gradient.data {
            assert!((v - coeff * 0.5).abs() < 1e-9 * coeff.max(1.0));
        }
    }

    #[test]
    fn diffusion_loss_vanishes_for_oracle() {
        let schedule = NoiseSchedule::default();
        let target = Image::filled(2, 2, 3, 0.6);
        let oracle = OracleGuidance::new(schedule.clone(), FixedTarget(Arc::new(target.clone())));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = Image::from_data(2, 2, 3, (0..12).map(|_| rng.sample(StandardNormal)).collect());
        let z = forward_diffuse(&target, 500, &eps, &schedule).unwrap();
        let pred = oracle.predict_noise(&z, 500, None, None, &ctx()).unwrap();
        assert!(diffusion_loss(&eps, &pred).unwrap() < 1e-20);
    }

    #[test]
    fn registry_falls_back_to_unconditional_prompt() {
        let mut reg = TargetRegistry::new("");
        reg.insert("", ViewDescription::Front, Image::filled(1, 1, 1, 0.1));
        reg.insert("a cat", ViewDescription::Front, Image::filled(1, 1, 1, 0.9));
        let c = ctx();
        assert_eq!(reg.target(None, &c, 1).unwrap().data[0], 0.1);
        assert_eq!(reg.target(Some("a cat"), &c, 1).unwrap().data[0], 0.9);
        let back = ViewContext { view: ViewDescription::Back, ..c };
        assert!(matches!(reg.target(Some("a cat"), &back, 1), Err(SdsError::MissingTarget { .. })));
    }
}
