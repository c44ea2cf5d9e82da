//! Training loop: schedules, the adaptive update, error-driven
//! densification and contribution pruning.

use glam::{DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraModel};
use crate::error::FoamError;
use crate::geometry::{cech_complex, Aabb, PowerSite};
use crate::optim::backward::{backward, CellGradient, DetailGradient, LossBreakdown, ParamGradient, TermWeights};
use crate::render::Image;
use crate::scene::{Cell, DetailSite, Dipole, Scene, SvBasis};

/// Geometric interpolation from `initial` at step 0 to `final` at the last
/// step. Endpoints are returned verbatim.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Schedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
}

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule { initial: v, final_value: v }
    }

    pub fn at(&self, i: usize, total: usize) -> f64 {
        if total <= 1 || i == 0 {
            return self.initial;
        }
        if i >= total - 1 {
            return self.final_value;
        }
        let t = i as f64 / (total - 1) as f64;
        if self.initial > 0.0 && self.final_value > 0.0 {
            self.initial * (self.final_value / self.initial).powf(t)
        } else {
            // A zero endpoint has no geometric path; fall back to linear.
            self.initial + (self.final_value - self.initial) * t
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub ssim: Schedule,
    pub normal: Schedule,
    pub sparse: Schedule,
    pub connect: Schedule,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ssim: Schedule::constant(0.2),
            normal: Schedule { initial: 0.1, final_value: 0.01 },
            sparse: Schedule { initial: 0.1, final_value: 0.0001 },
            connect: Schedule { initial: 1e-4, final_value: 1e-7 },
        }
    }
}

impl LossWeights {
    pub fn at(&self, i: usize, total: usize) -> TermWeights {
        TermWeights {
            ssim: self.ssim.at(i, total),
            normal: self.normal.at(i, total),
            sparse: self.sparse.at(i, total),
            connect: self.connect.at(i, total),
        }
    }

    fn validate(&self) -> Result<(), FoamError> {
        for (name, s) in [
            ("ssim", self.ssim),
            ("normal", self.normal),
            ("sparse", self.sparse),
            ("connect", self.connect),
        ] {
            if !(s.initial >= 0.0 && s.final_value >= 0.0)
                || !s.initial.is_finite()
                || !s.final_value.is_finite()
            {
                return Err(FoamError::InvalidConfig(format!(
                    "loss weight '{name}' must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Step size for detail values, uv, displacements, density and gamma.
    pub lr_appearance: f64,
    /// Step size for positions, radii and normals.
    pub lr_geometry: f64,
    /// Separate step size for density; defaults to the appearance rate.
    pub lr_density: f64,
    pub weights: LossWeights,
    /// Children spawned per densification event, as a fraction of live
    /// (non-Steiner) cells.
    pub densify_fraction: f64,
    /// Densification window as fractions of the total iteration count.
    pub densify_start: f64,
    pub densify_end: f64,
    pub densify_interval: usize,
    pub prune_threshold: f64,
    pub ema_decay: f64,
    /// Leading fraction of iterations rendered at half resolution.
    pub downsample_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            seed: 0,
            lr_appearance: 1e-3,
            lr_geometry: 1e-4,
            lr_density: 1e-3,
            weights: LossWeights::default(),
            densify_fraction: 0.05,
            densify_start: 0.1,
            densify_end: 0.8,
            densify_interval: 100,
            prune_threshold: 0.01,
            ema_decay: 0.9,
            downsample_frac: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FoamError> {
        self.weights.validate()?;
        let frac = |name: &str, v: f64| -> Result<(), FoamError> {
            if !(0.0..=1.0).contains(&v) {
                return Err(FoamError::InvalidConfig(format!("'{name}' must be in [0, 1]")));
            }
            Ok(())
        };
        frac("densify_fraction", self.densify_fraction)?;
        frac("densify_start", self.densify_start)?;
        frac("densify_end", self.densify_end)?;
        frac("downsample_frac", self.downsample_frac)?;
        if !(self.lr_appearance > 0.0 && self.lr_geometry > 0.0 && self.lr_density > 0.0) {
            return Err(FoamError::InvalidConfig("learning rates must be positive".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(FoamError::InvalidConfig("'ema_decay' must be in (0, 1)".into()));
        }
        if !(self.prune_threshold >= 0.0) {
            return Err(FoamError::InvalidConfig("'prune_threshold' must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-cell running statistics driving densification and pruning.
#[derive(Debug, Clone)]
pub struct PrimitiveStats {
    pub error_ema: Vec<f64>,
    pub contribution_ema: Vec<f64>,
    pub decay: f64,
}

impl PrimitiveStats {
    pub fn new(cells: usize, decay: f64) -> Self {
        PrimitiveStats {
            error_ema: vec![0.0; cells],
            contribution_ema: vec![0.0; cells],
            decay,
        }
    }

    /// Folds one step's per-cell accumulators into the running averages.
    pub fn update(&mut self, error: &[f64], contribution: &[f64]) {
        let d = self.decay;
        for (e, v) in self.error_ema.iter_mut().zip(error) {
            *e = d * *e + (1.0 - d) * *v;
        }
        for (c, v) in self.contribution_ema.iter_mut().zip(contribution) {
            *c = d * *c + (1.0 - d) * *v;
        }
    }
}

/// Samples `count` parents (with replacement) from the multinomial over
/// error_ema and appends one child per draw. Parents keep their parameters
/// and stats; a child starts at half the parent's error so it is not the
/// immediate next densification target. Steiner cells never reproduce.
pub fn densify(
    scene: &Scene,
    stats: &mut PrimitiveStats,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Scene {
    let mut out = scene.clone();
    if count == 0 {
        return out;
    }
    let weights: Vec<f64> = scene
        .cells
        .iter()
        .zip(&stats.error_ema)
        .map(|(c, e)| if c.is_steiner { 0.0 } else { *e })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return out;
    }
    let mut cum = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cum.push(acc);
    }
    for _ in 0..count {
        let u = rng.gen_range(0.0..total);
        let parent = cum.partition_point(|&c| c <= u).min(scene.cells.len() - 1);
        let p = &scene.cells[parent];
        let r = p.site.radius;
        // Uniform in the ball of radius r/2 around the parent site.
        let dir = loop {
            let v = DVec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let l = v.length();
            if l > 1e-9 && l <= 1.0 {
                break v / l;
            }
        };
        let dist = (r / 2.0) * rng.gen_range(0.0..1.0_f64).cbrt();
        let mut child = p.clone();
        child.site.position = p.site.position + dist * dir;
        child.site.radius = 0.7 * r;
        out.cells.push(child);
        stats.error_ema.push(stats.error_ema[parent] / 2.0);
        stats.contribution_ema.push(stats.contribution_ema[parent]);
    }
    out.refresh_world_box();
    out
}

/// True for cells that survive pruning at this threshold.
pub fn prune_mask(scene: &Scene, stats: &PrimitiveStats, threshold: f64) -> Vec<bool> {
    scene
        .cells
        .iter()
        .zip(&stats.contribution_ema)
        .map(|(c, ema)| c.is_steiner || *ema >= threshold)
        .collect()
}

/// Drops non-Steiner cells whose contribution average fell below the
/// threshold (strictly). Survivors are untouched. A scene that would lose
/// every cell is returned unchanged.
pub fn prune(scene: &Scene, stats: &mut PrimitiveStats, threshold: f64) -> Scene {
    let keep = prune_mask(scene, stats, threshold);
    if !keep.iter().any(|k| *k) {
        return scene.clone();
    }
    let cells: Vec<Cell> = scene
        .cells
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(c, _)| c.clone())
        .collect();
    retain_by_mask(&mut stats.error_ema, &keep);
    retain_by_mask(&mut stats.contribution_ema, &keep);
    let mut out = scene.clone();
    out.cells = cells;
    out.refresh_world_box();
    out
}

fn retain_by_mask<T>(v: &mut Vec<T>, keep: &[bool]) {
    let mut i = 0;
    v.retain(|_| {
        let k = keep[i];
        i += 1;
        k
    });
}

/// A posed training image.
#[derive(Debug, Clone)]
pub struct FitView {
    pub camera: Camera,
    pub target: Image,
}

/// One line of training progress.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitRecord {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub psnr: f64,
    pub cells: usize,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Radii optimize as `r = R_FLOOR + softplus(raw)`.
const R_FLOOR: f64 = 1e-4;

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moments, shaped like the gradients.
struct AdamState {
    m: ParamGradient,
    v: ParamGradient,
    t: usize,
}

impl AdamState {
    fn new(scene: &Scene) -> Self {
        AdamState {
            m: ParamGradient::zeros_like(scene),
            v: ParamGradient::zeros_like(scene),
            t: 0,
        }
    }

    fn push_cell(&mut self, details: usize) {
        let z = CellGradient {
            details: vec![DetailGradient::default(); details],
            ..Default::default()
        };
        self.m.cells.push(z.clone());
        self.v.cells.push(z);
    }

    fn retain(&mut self, keep: &[bool]) {
        retain_by_mask(&mut self.m.cells, keep);
        retain_by_mask(&mut self.v.cells, keep);
    }
}

/// One Adam coordinate step; returns the parameter delta.
fn adam_step(m: &mut f64, v: &mut f64, g: f64, lr: f64, bc1: f64, bc2: f64) -> f64 {
    *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * g;
    *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * g * g;
    let mh = *m / bc1;
    let vh = *v / bc2;
    -lr * mh / (vh.sqrt() + ADAM_EPS)
}

fn apply_update(
    scene: &mut Scene,
    grad: &ParamGradient,
    opt: &mut AdamState,
    cfg: &TrainConfig,
) {
    opt.t += 1;
    let bc1 = 1.0 - ADAM_B1.powi(opt.t as i32);
    let bc2 = 1.0 - ADAM_B2.powi(opt.t as i32);
    for ((cell, g), (m, v)) in scene
        .cells
        .iter_mut()
        .zip(&grad.cells)
        .zip(opt.m.cells.iter_mut().zip(opt.v.cells.iter_mut()))
    {
        if cell.is_steiner {
            continue;
        }
        for k in 0..3 {
            cell.site.position[k] +=
                adam_step(&mut m.position[k], &mut v.position[k], g.position[k], cfg.lr_geometry, bc1, bc2);
        }
        if cell.site.radius > R_FLOOR {
            let raw = inv_softplus(cell.site.radius - R_FLOOR);
            let graw = g.radius * sigmoid(raw);
            let d = adam_step(&mut m.radius, &mut v.radius, graw, cfg.lr_geometry, bc1, bc2);
            cell.site.radius = R_FLOOR + softplus(raw + d);
        }
        let mut n = cell.dipole.normal;
        for k in 0..3 {
            n[k] += adam_step(&mut m.normal[k], &mut v.normal[k], g.normal[k], cfg.lr_geometry, bc1, bc2);
        }
        if n.length() > 1e-12 {
            cell.dipole.normal = n.normalize();
        }
        if cell.dipole.density > 0.0 {
            let raw = inv_softplus(cell.dipole.density);
            let d = adam_step(&mut m.density, &mut v.density, g.density, cfg.lr_density, bc1, bc2);
            cell.dipole.density = softplus(raw + d);
        }
        for (det, (gd, (md, vd))) in cell
            .details
            .iter_mut()
            .zip(g.details.iter().zip(m.details.iter_mut().zip(v.details.iter_mut())))
        {
            for k in 0..2 {
                det.uv[k] +=
                    adam_step(&mut md.uv[k], &mut vd.uv[k], gd.uv[k], cfg.lr_appearance, bc1, bc2);
            }
            det.displacement += adam_step(
                &mut md.displacement,
                &mut vd.displacement,
                gd.displacement,
                cfg.lr_appearance,
                bc1,
                bc2,
            );
            for a in 0..det.values.len() {
                for ch in 0..3 {
                    let d = adam_step(
                        &mut md.values[a][ch],
                        &mut vd.values[a][ch],
                        gd.values[a][ch],
                        cfg.lr_appearance,
                        bc1,
                        bc2,
                    );
                    det.values[a][ch] = (det.values[a][ch] + d).max(0.0);
                }
            }
        }
    }
    let d = adam_step(&mut opt.m.gamma, &mut opt.v.gamma, grad.gamma, cfg.lr_appearance, bc1, bc2);
    // Keep the sharpness strictly positive so the scene stays savable.
    scene.sv.gamma = (scene.sv.gamma + d).max(1e-6);
}

fn half_camera(cam: &Camera) -> Camera {
    let model = match cam.model {
        CameraModel::Pinhole { fx, fy, cx, cy } => {
            CameraModel::Pinhole { fx: fx / 2.0, fy: fy / 2.0, cx: cx / 2.0, cy: cy / 2.0 }
        }
        CameraModel::Fisheye { f, cx, cy } => {
            CameraModel::Fisheye { f: f / 2.0, cx: cx / 2.0, cy: cy / 2.0 }
        }
    };
    Camera {
        model,
        rotation: cam.rotation,
        translation: cam.translation,
        width: cam.width / 2,
        height: cam.height / 2,
        near: cam.near,
        far: cam.far,
    }
}

/// Optimizes a copy of `scene0` against the posed targets. Deterministic
/// for a fixed seed and thread-count independent. `on_step` sees every
/// iteration's losses.
pub fn fit(
    scene0: &Scene,
    views: &[FitView],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&FitRecord),
) -> Result<Scene, FoamError> {
    cfg.validate()?;
    if views.len() < 2 {
        return Err(FoamError::InvalidConfig(format!(
            "need at least 2 views, got {}",
            views.len()
        )));
    }
    for (i, v) in views.iter().enumerate() {
        v.camera.validate()?;
        if v.camera.width != v.target.width || v.camera.height != v.target.height {
            return Err(FoamError::InvalidConfig(format!(
                "view {i}: camera {}x{} vs target {}x{}",
                v.camera.width, v.camera.height, v.target.width, v.target.height
            )));
        }
    }
    if cfg.iterations == 0 {
        return Ok(scene0.clone());
    }

    let total = cfg.iterations;
    let mut scene = scene0.clone();
    let mut stats = PrimitiveStats::new(scene.cells.len(), cfg.ema_decay);
    let mut opt = AdamState::new(&scene);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Half-resolution copies for the warmup, where dimensions allow.
    let lowres: Vec<Option<(Camera, Image)>> = views
        .iter()
        .map(|v| {
            (v.target.width % 2 == 0 && v.target.height % 2 == 0 && v.target.width >= 22 && v.target.height >= 22)
                .then(|| (half_camera(&v.camera), v.target.downsample2()))
        })
        .collect();
    let warmup = (total as f64 * cfg.downsample_frac).floor() as usize;

    let start = (total as f64 * cfg.densify_start).ceil() as usize;
    let end = (total as f64 * cfg.densify_end).floor() as usize;

    for i in 0..total {
        let lw = cfg.weights.at(i, total);
        let vi = rng.gen_range(0..views.len());
        let cech = cech_complex(&scene.sites());
        let out = match (i < warmup, &lowres[vi]) {
            (true, Some((cam, target))) => backward(&scene, &cech, cam, target, &lw)?,
            _ => backward(&scene, &cech, &views[vi].camera, &views[vi].target, &lw)?,
        };
        if !out.loss.total.is_finite() || !out.grad.is_finite() {
            return Err(FoamError::NonFiniteLoss { iteration: i });
        }

        apply_update(&mut scene, &out.grad, &mut opt, cfg);
        scene.refresh_world_box();
        stats.update(&out.error_accum, &out.contribution_accum);

        if cfg.densify_interval > 0
            && i > 0
            && i % cfg.densify_interval == 0
            && i >= start
            && i <= end
        {
            let keep = prune_mask(&scene, &stats, cfg.prune_threshold);
            if keep.iter().any(|k| *k) {
                scene = prune(&scene, &mut stats, cfg.prune_threshold);
                opt.retain(&keep);
            }
            let live = scene.cells.iter().filter(|c| !c.is_steiner).count();
            let count = ((live as f64 * cfg.densify_fraction).round() as usize).max(1);
            let before = scene.cells.len();
            scene = densify(&scene, &mut stats, count, &mut rng);
            for c in scene.cells.iter().skip(before) {
                opt.push_cell(c.details.len());
            }
        }

        let psnr = if out.loss.rgb > 0.0 { -10.0 * out.loss.rgb.log10() } else { f64::INFINITY };
        on_step(&FitRecord { iteration: i, loss: out.loss, psnr, cells: scene.cells.len() });
    }
    Ok(scene)
}

/// A fitting start point when nothing is known about the scene: sites
/// uniform in the box, radius the nearest-neighbor distance, gray details,
/// random orientations, low density.
pub fn init_scene(
    world_box: &Aabb,
    count: usize,
    details_per_cell: usize,
    background: DVec3,
    seed: u64,
) -> Result<Scene, FoamError> {
    if count == 0 {
        return Err(FoamError::EmptyScene);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = world_box.min;
    let hi = world_box.max;
    if !(hi.x > lo.x && hi.y > lo.y && hi.z > lo.z) {
        return Err(FoamError::InvalidConfig("initialization box is degenerate".into()));
    }
    let positions: Vec<DVec3> = (0..count)
        .map(|_| {
            DVec3::new(
                rng.gen_range(lo.x..hi.x),
                rng.gen_range(lo.y..hi.y),
                rng.gen_range(lo.z..hi.z),
            )
        })
        .collect();
    let cells: Vec<Cell> = positions
        .iter()
        .map(|&p| {
            let nn = positions
                .iter()
                .map(|&q| (q - p).length())
                .filter(|d| *d > 0.0)
                .fold(f64::INFINITY, f64::min);
            let radius = if nn.is_finite() { nn } else { world_box.diagonal() / 4.0 };
            let normal = loop {
                let v = DVec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.length() > 1e-3 {
                    break v.normalize();
                }
            };
            let details = (0..details_per_cell)
                .map(|_| DetailSite {
                    uv: DVec2::new(
                        rng.gen_range(-0.4..0.4) * radius,
                        rng.gen_range(-0.4..0.4) * radius,
                    ),
                    displacement: 0.0,
                    values: [DVec3::splat(0.5); crate::scene::SV_AXES],
                })
                .collect();
            Cell {
                site: PowerSite::new(p, radius),
                dipole: Dipole { normal, density: 0.1 },
                details,
                is_steiner: false,
            }
        })
        .collect();
    let temperature = Scene::default_temperature(&cells);
    Scene::new(cells, temperature, background, SvBasis::standard())
}
