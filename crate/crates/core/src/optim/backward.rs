//! Reverse-mode gradients of the fitting objective through the tile
//! rasterizer.
//!
//! One forward render produces the image; the image-space losses collapse
//! into a single adjoint color per pixel. Each pixel's segment stream is
//! then replayed with endpoint provenance and the adjoint is pushed back
//! through compositing, the occupied interval, the displaced surface
//! crossing and the radiance charts. Work is blocked by image rows and the
//! blocks are folded in a fixed order, so gradients are bitwise
//! reproducible regardless of thread count.

use glam::{DVec2, DVec3};
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::Camera;
use crate::error::FoamError;
use crate::geometry::{AdjacencyGraph, PowerSite, Ray};
use crate::optim::losses::{
    loss_connect, loss_connect_backward, loss_rgb, loss_rgb_backward, loss_ssim,
    loss_ssim_backward,
};
use crate::rasterizer::{cull_to_tiles, rasterize_with_grid};
use crate::render::{shade_cell_traced, EndpointSource, Image, Shaded, TRANSMITTANCE_EPS};
use crate::scene::{
    chart_coords, displacement_at, soft_voronoi_weights, tangent_frame, Scene, PARALLEL_EPS,
    SV_AXES,
};

/// Multipliers of the non-photometric loss terms. The color term always
/// has weight one.
#[derive(Debug, Clone, Copy)]
pub struct TermWeights {
    pub ssim: f64,
    pub normal: f64,
    pub sparse: f64,
    pub connect: f64,
}

#[derive(Debug, Clone)]
pub struct DetailGradient {
    pub uv: DVec2,
    pub displacement: f64,
    pub values: [DVec3; SV_AXES],
}

impl Default for DetailGradient {
    fn default() -> Self {
        DetailGradient { uv: DVec2::ZERO, displacement: 0.0, values: [DVec3::ZERO; SV_AXES] }
    }
}

/// Gradients with respect to a cell's parameters. The normal gradient is
/// reported in the plane orthogonal to the current normal (the radial
/// component is meaningless under renormalization) and the density
/// gradient lives in the optimizer's unconstrained space, i.e. it already
/// carries the softplus chain factor `1 - exp(-density)`.
#[derive(Debug, Clone, Default)]
pub struct CellGradient {
    pub position: DVec3,
    pub radius: f64,
    pub normal: DVec3,
    pub density: f64,
    pub details: Vec<DetailGradient>,
}

#[derive(Debug, Clone)]
pub struct ParamGradient {
    pub cells: Vec<CellGradient>,
    pub gamma: f64,
}

impl ParamGradient {
    pub fn zeros_like(scene: &Scene) -> Self {
        let cells = scene
            .cells
            .iter()
            .map(|c| CellGradient {
                details: vec![DetailGradient::default(); c.details.len()],
                ..Default::default()
            })
            .collect();
        ParamGradient { cells, gamma: 0.0 }
    }

    fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.position += b.position;
            a.radius += b.radius;
            a.normal += b.normal;
            a.density += b.density;
            for (da, db) in a.details.iter_mut().zip(&b.details) {
                da.uv += db.uv;
                da.displacement += db.displacement;
                for (va, vb) in da.values.iter_mut().zip(&db.values) {
                    *va += *vb;
                }
            }
        }
        self.gamma += other.gamma;
    }

    pub fn is_finite(&self) -> bool {
        self.gamma.is_finite()
            && self.cells.iter().all(|c| {
                c.position.is_finite()
                    && c.radius.is_finite()
                    && c.normal.is_finite()
                    && c.density.is_finite()
                    && c.details.iter().all(|d| {
                        d.uv.is_finite()
                            && d.displacement.is_finite()
                            && d.values.iter().all(|v| v.is_finite())
                    })
            })
    }
}

/// Loss terms before weighting, plus the weighted total.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub ssim: f64,
    pub normal: f64,
    pub sparse: f64,
    pub connect: f64,
    pub total: f64,
}

pub struct BackwardOutput {
    pub image: Image,
    pub loss: LossBreakdown,
    pub grad: ParamGradient,
    /// Per cell, sum over rays of contribution times pixel error.
    pub error_accum: Vec<f64>,
    /// Per cell, sum over rays of `T * alpha`.
    pub contribution_accum: Vec<f64>,
}

struct SegRecord {
    shaded: Shaded,
    /// Transmittance in front of this segment.
    trans: f64,
    in_src: EndpointSource,
    out_src: EndpointSource,
}

struct BlockAccum {
    grad: ParamGradient,
    err: Vec<f64>,
    contrib: Vec<f64>,
    normal_sum: f64,
    sparse_sum: f64,
}

impl BlockAccum {
    fn new(scene: &Scene) -> Self {
        BlockAccum {
            grad: ParamGradient::zeros_like(scene),
            err: vec![0.0; scene.cells.len()],
            contrib: vec![0.0; scene.cells.len()],
            normal_sum: 0.0,
            sparse_sum: 0.0,
        }
    }
}

/// Rows per accumulation block; fixed so the reduction order never depends
/// on the thread count.
const BLOCK_ROWS: u32 = 8;

pub fn backward(
    scene: &Scene,
    cech: &AdjacencyGraph,
    cam: &Camera,
    target: &Image,
    w: &TermWeights,
) -> Result<BackwardOutput, FoamError> {
    let sites = scene.sites();
    let grid = cull_to_tiles(cam, &sites);
    let image = rasterize_with_grid(scene, &sites, cech, cam, &grid)?;
    let rgb = loss_rgb(&image, target)?;
    let mut pixel_adjoint = loss_rgb_backward(&image, target)?;
    let ssim = if w.ssim != 0.0 {
        let v = loss_ssim(&image, target)?;
        for (a, g) in pixel_adjoint.iter_mut().zip(loss_ssim_backward(&image, target)?) {
            *a += w.ssim * g;
        }
        v
    } else {
        0.0
    };
    let pix_err: Vec<f64> = image
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(a, b)| (*a - *b).abs().element_sum() / 3.0)
        .collect();
    let rays = cam.width as u64 * cam.height as u64;
    let inv_rays = 1.0 / rays as f64;

    let nblocks = cam.height.div_ceil(BLOCK_ROWS);
    let blocks: Result<Vec<BlockAccum>, FoamError> = (0..nblocks)
        .into_par_iter()
        .map(|bi| {
            let y0 = bi * BLOCK_ROWS;
            let y1 = (y0 + BLOCK_ROWS).min(cam.height);
            let mut acc = BlockAccum::new(scene);
            let mut records = Vec::new();
            for y in y0..y1 {
                for x in 0..cam.width {
                    let px = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let ray = cam
                        .ray_for_pixel(px)
                        .map_err(|e| FoamError::AtPixel { x, y, source: Box::new(e) })?;
                    let pi = (y * cam.width + x) as usize;
                    pixel_backward(
                        scene,
                        &sites,
                        cech,
                        grid.list_for_pixel(x, y),
                        &ray,
                        cam.near,
                        cam.far,
                        pixel_adjoint[pi],
                        pix_err[pi],
                        w,
                        inv_rays,
                        &mut records,
                        &mut acc,
                    );
                }
            }
            Ok(acc)
        })
        .collect();
    let blocks = blocks?;

    let mut grad = ParamGradient::zeros_like(scene);
    let mut error_accum = vec![0.0; scene.cells.len()];
    let mut contribution_accum = vec![0.0; scene.cells.len()];
    let mut normal_sum = 0.0;
    let mut sparse_sum = 0.0;
    for b in &blocks {
        grad.add_assign(&b.grad);
        for (a, v) in error_accum.iter_mut().zip(&b.err) {
            *a += *v;
        }
        for (a, v) in contribution_accum.iter_mut().zip(&b.contrib) {
            *a += *v;
        }
        normal_sum += b.normal_sum;
        sparse_sum += b.sparse_sum;
    }
    let normal = normal_sum * inv_rays;
    let sparse = sparse_sum * inv_rays;

    let connect = loss_connect(scene, cech);
    {
        let mut pos = vec![DVec3::ZERO; scene.cells.len()];
        let mut rad = vec![0.0; scene.cells.len()];
        loss_connect_backward(scene, cech, w.connect, &mut pos, &mut rad);
        for ((g, p), r) in grad.cells.iter_mut().zip(pos).zip(rad) {
            g.position += p;
            g.radius += r;
        }
    }

    for (g, c) in grad.cells.iter_mut().zip(&scene.cells) {
        let n = c.dipole.normal;
        g.normal -= g.normal.dot(n) * n;
    }

    let total = rgb + w.ssim * ssim + w.normal * normal + w.sparse * sparse + w.connect * connect;
    Ok(BackwardOutput {
        image,
        loss: LossBreakdown { rgb, ssim, normal, sparse, connect, total },
        grad,
        error_accum,
        contribution_accum,
    })
}

/// The weighted objective without gradients, summed in the same blocked
/// order as `backward`. This is what finite differences must probe.
pub fn forward_loss(
    scene: &Scene,
    cech: &AdjacencyGraph,
    cam: &Camera,
    target: &Image,
    w: &TermWeights,
) -> Result<LossBreakdown, FoamError> {
    let sites = scene.sites();
    let grid = cull_to_tiles(cam, &sites);
    let image = rasterize_with_grid(scene, &sites, cech, cam, &grid)?;
    let rgb = loss_rgb(&image, target)?;
    let ssim = if w.ssim != 0.0 { loss_ssim(&image, target)? } else { 0.0 };
    let rays = cam.width as u64 * cam.height as u64;
    let inv_rays = 1.0 / rays as f64;

    let nblocks = cam.height.div_ceil(BLOCK_ROWS);
    let sums: Result<Vec<(f64, f64)>, FoamError> = (0..nblocks)
        .into_par_iter()
        .map(|bi| {
            let y0 = bi * BLOCK_ROWS;
            let y1 = (y0 + BLOCK_ROWS).min(cam.height);
            let mut normal_sum = 0.0;
            let mut sparse_sum = 0.0;
            for y in y0..y1 {
                for x in 0..cam.width {
                    let px = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let ray = cam
                        .ray_for_pixel(px)
                        .map_err(|e| FoamError::AtPixel { x, y, source: Box::new(e) })?;
                    let mut trans = 1.0;
                    for &idx in grid.list_for_pixel(x, y) {
                        if trans < TRANSMITTANCE_EPS {
                            break;
                        }
                        let Some((sh, _, _)) = shade_cell_traced(
                            scene,
                            &sites,
                            idx as usize,
                            cech.neighbors(idx as usize),
                            &ray,
                            cam.near,
                            cam.far,
                        ) else {
                            continue;
                        };
                        let alpha = 1.0 - (-sh.density * sh.occupied.length()).exp();
                        let contrib = trans * alpha;
                        let cell = &scene.cells[sh.cell as usize];
                        let m = cell.dipole.normal.dot(ray.dir).max(0.0);
                        normal_sum += contrib * m * m;
                        sparse_sum += contrib;
                        trans *= 1.0 - alpha;
                    }
                }
            }
            Ok((normal_sum, sparse_sum))
        })
        .collect();
    let mut normal_sum = 0.0;
    let mut sparse_sum = 0.0;
    for (n, s) in sums? {
        normal_sum += n;
        sparse_sum += s;
    }
    let normal = normal_sum * inv_rays;
    let sparse = sparse_sum * inv_rays;
    let connect = loss_connect(scene, cech);
    let total = rgb + w.ssim * ssim + w.normal * normal + w.sparse * sparse + w.connect * connect;
    Ok(LossBreakdown { rgb, ssim, normal, sparse, connect, total })
}

#[allow(clippy::too_many_arguments)]
fn pixel_backward(
    scene: &Scene,
    sites: &[PowerSite],
    cech: &AdjacencyGraph,
    list: &[u32],
    ray: &Ray,
    near: f64,
    far: f64,
    gbar: DVec3,
    pix_err: f64,
    w: &TermWeights,
    inv_rays: f64,
    records: &mut Vec<SegRecord>,
    acc: &mut BlockAccum,
) {
    // Forward replay; must mirror the rasterizer's compositing loop.
    records.clear();
    let mut trans = 1.0;
    for &idx in list {
        if trans < TRANSMITTANCE_EPS {
            break;
        }
        if let Some((sh, in_src, out_src)) = shade_cell_traced(
            scene,
            sites,
            idx as usize,
            cech.neighbors(idx as usize),
            ray,
            near,
            far,
        ) {
            let alpha = 1.0 - (-sh.density * sh.occupied.length()).exp();
            records.push(SegRecord { shaded: sh, trans, in_src, out_src });
            trans *= 1.0 - alpha;
        }
    }

    // Back-to-front: u is the composited adjoint value behind the current
    // segment at unit transmittance, so d(pixel)/d(alpha_k) = T_k (g_k - u)
    // without dividing by (1 - alpha).
    let mut u = gbar.dot(scene.background);
    for rec in records.iter().rev() {
        let sh = &rec.shaded;
        let ci = sh.cell as usize;
        let cell = &scene.cells[ci];
        let ell = sh.occupied.length();
        let sigma = sh.density;
        let alpha = 1.0 - (-sigma * ell).exp();
        let t_k = rec.trans;
        let m = cell.dipole.normal.dot(ray.dir).max(0.0);
        let aux = (w.normal * m * m + w.sparse) * inv_rays;
        let g = gbar.dot(sh.color) + aux;
        let alpha_bar = t_k * (g - u);
        let contrib = t_k * alpha;
        let cbar = contrib * gbar;

        acc.normal_sum += contrib * m * m;
        acc.sparse_sum += contrib;
        acc.err[ci] += contrib * pix_err;
        acc.contrib[ci] += contrib;

        if m > 0.0 {
            acc.grad.cells[ci].normal += (contrib * w.normal * inv_rays * 2.0 * m) * ray.dir;
        }
        acc.grad.cells[ci].density += alpha_bar * ell * (1.0 - alpha) * (1.0 - (-sigma).exp());
        let ell_bar = alpha_bar * sigma * (1.0 - alpha);
        let mut t_in_bar = -ell_bar;
        let mut t_out_bar = ell_bar;
        let mut t_surf_bar = 0.0;

        let xbar = radiance_pullback(scene, ci, ray, sh, cbar, &mut acc.grad);
        let xdot = xbar.dot(ray.dir);
        match sh.surface_t {
            Some(_) => t_surf_bar += xdot,
            None => {
                t_in_bar += 0.5 * xdot;
                t_out_bar += 0.5 * xdot;
            }
        }

        scatter_endpoint(
            sites,
            ci,
            ray,
            rec.in_src,
            sh.occupied.t_in,
            t_in_bar,
            &mut t_surf_bar,
            &mut acc.grad,
        );
        scatter_endpoint(
            sites,
            ci,
            ray,
            rec.out_src,
            sh.occupied.t_out,
            t_out_bar,
            &mut t_surf_bar,
            &mut acc.grad,
        );
        if t_surf_bar != 0.0 {
            surface_pullback(scene, ci, ray, t_surf_bar, &mut acc.grad);
        }

        u = alpha * g + (1.0 - alpha) * u;
    }
}

/// Routes an interval endpoint's adjoint to whichever constraint produced
/// it: the cell sphere, a radical plane (which also moves the neighbor),
/// or the displaced surface. Start and clip endpoints are constants.
#[allow(clippy::too_many_arguments)]
fn scatter_endpoint(
    sites: &[PowerSite],
    ci: usize,
    ray: &Ray,
    src: EndpointSource,
    t: f64,
    tbar: f64,
    t_surf_bar: &mut f64,
    grad: &mut ParamGradient,
) {
    if tbar == 0.0 {
        return;
    }
    match src {
        EndpointSource::Start | EndpointSource::Clip => {}
        EndpointSource::Surface => *t_surf_bar += tbar,
        EndpointSource::Sphere => {
            let s = &sites[ci];
            let rel = ray.at(t) - s.position;
            let den = rel.dot(ray.dir);
            // Tangential hit: the intersection is not differentiable.
            if den.abs() < 1e-12 {
                return;
            }
            grad.cells[ci].position += (tbar / den) * rel;
            grad.cells[ci].radius += tbar * s.radius / den;
        }
        EndpointSource::Neighbor(j) => {
            let j = j as usize;
            let si = &sites[ci];
            let sj = &sites[j];
            let den = ray.dir.dot(sj.position - si.position);
            if den.abs() < 1e-12 {
                return;
            }
            let x = ray.at(t);
            grad.cells[ci].position += (tbar / den) * (x - si.position);
            grad.cells[j].position -= (tbar / den) * (x - sj.position);
            grad.cells[ci].radius += tbar * si.radius / den;
            grad.cells[j].radius -= tbar * sj.radius / den;
        }
    }
}

/// Pulls the eval-point color adjoint back onto the detail values, the
/// directional sharpness, the chart sites and (through the chart) the cell
/// pose. Returns the adjoint of the eval point itself.
fn radiance_pullback(
    scene: &Scene,
    ci: usize,
    ray: &Ray,
    sh: &Shaded,
    cbar: DVec3,
    grad: &mut ParamGradient,
) -> DVec3 {
    let cell = &scene.cells[ci];
    if cell.details.is_empty() {
        return DVec3::ZERO;
    }
    let x = match sh.surface_t {
        Some(ts) => ray.at(ts),
        None => ray.at(0.5 * (sh.occupied.t_in + sh.occupied.t_out)),
    };
    let q = chart_coords(cell, x);
    let uvs: Vec<DVec2> = cell.details.iter().map(|d| d.uv).collect();
    let wv = soft_voronoi_weights(q, &uvs, scene.temperature);
    let s = scene.sv.direction_weights(ray.dir);

    let mut sbar = [0.0; SV_AXES];
    let mut wbar = vec![0.0; wv.len()];
    for (mi, d) in cell.details.iter().enumerate() {
        let mut cm = DVec3::ZERO;
        for k in 0..SV_AXES {
            cm += s[k] * d.values[k];
            grad.cells[ci].details[mi].values[k] += wv[mi] * s[k] * cbar;
            sbar[k] += wv[mi] * cbar.dot(d.values[k]);
        }
        wbar[mi] = cbar.dot(cm);
    }

    let s_dot: f64 = (0..SV_AXES).map(|k| s[k] * sbar[k]).sum();
    let mut gamma_bar = 0.0;
    for k in 0..SV_AXES {
        let zbar = s[k] * (sbar[k] - s_dot);
        gamma_bar += zbar * ray.dir.dot(scene.sv.axes[k]);
    }
    grad.gamma += gamma_bar;

    let qbar = chart_softmax_pullback(q, &uvs, scene.temperature, &wv, &wbar, ci, grad);
    chart_pullback(cell, ci, x, qbar, grad)
}

/// Softmax over `-tau * |q - uv_m|`: distributes the weight adjoints onto
/// the query point (returned) and the chart sites. Coincident site and
/// query give a kink; that term is skipped.
fn chart_softmax_pullback(
    q: DVec2,
    uvs: &[DVec2],
    tau: f64,
    wv: &[f64],
    wbar: &[f64],
    ci: usize,
    grad: &mut ParamGradient,
) -> DVec2 {
    let s_dot: f64 = wv.iter().zip(wbar).map(|(a, b)| a * b).sum();
    let mut qbar = DVec2::ZERO;
    for (mi, uv) in uvs.iter().enumerate() {
        let ybar = wv[mi] * (wbar[mi] - s_dot);
        let rel = q - *uv;
        let dist = rel.length();
        if dist < 1e-12 {
            continue;
        }
        let g = -tau * ybar / dist;
        qbar += g * rel;
        grad.cells[ci].details[mi].uv -= g * rel;
    }
    qbar
}

/// Adjoint of `q = ((x - p) . u, (x - p) . v)` with the frame tied to the
/// normal. Returns the adjoint of `x`.
fn chart_pullback(
    cell: &crate::scene::Cell,
    ci: usize,
    x: DVec3,
    qbar: DVec2,
    grad: &mut ParamGradient,
) -> DVec3 {
    let n = cell.dipole.normal;
    let (u, v) = tangent_frame(n);
    let rel = x - cell.site.position;
    let xbar = qbar.x * u + qbar.y * v;
    grad.cells[ci].position -= xbar;
    let ubar = qbar.x * rel;
    let vbar = qbar.y * rel;
    grad.cells[ci].normal += frame_pullback(n, u, ubar, vbar);
    xbar
}

/// Adjoint of `tangent_frame`: v = n x u and u is the smallest-component
/// axis projected off n and normalized.
fn frame_pullback(n: DVec3, u: DVec3, ubar: DVec3, vbar: DVec3) -> DVec3 {
    let mut nbar = u.cross(vbar);
    let ubar = ubar + vbar.cross(n);
    let a = n.abs();
    let k = if a.x <= a.y && a.x <= a.z {
        0
    } else if a.y <= a.z {
        1
    } else {
        2
    };
    let mut e = DVec3::ZERO;
    e[k] = 1.0;
    let wt = e - e.dot(n) * n;
    let len = wt.length();
    if len < 1e-12 {
        return nbar;
    }
    let wtbar = (ubar - ubar.dot(u) * u) / len;
    nbar += -wtbar.dot(n) * e - e.dot(n) * wtbar;
    nbar
}

/// Adjoint of the displaced surface parameter
/// `t_surf = t_bar + dv(x(t_bar)) / (d . n)`.
fn surface_pullback(scene: &Scene, ci: usize, ray: &Ray, tbar_s: f64, grad: &mut ParamGradient) {
    let cell = &scene.cells[ci];
    let n = cell.dipole.normal;
    let denom = ray.dir.dot(n);
    if denom.abs() <= PARALLEL_EPS {
        return;
    }
    let p = cell.site.position;
    let t_bar = (p - ray.origin).dot(n) / denom;
    let xb = ray.at(t_bar);
    let dv = displacement_at(cell, xb, scene.temperature);

    let dvbar = tbar_s / denom;
    let mut nbar = (-tbar_s * dv / (denom * denom)) * ray.dir;
    let mut tbarbar = tbar_s;

    if !cell.details.is_empty() {
        let q = chart_coords(cell, xb);
        let uvs: Vec<DVec2> = cell.details.iter().map(|d| d.uv).collect();
        let wv = soft_voronoi_weights(q, &uvs, scene.temperature);
        let raw: f64 = wv.iter().zip(&cell.details).map(|(w, d)| w * d.displacement).sum();
        if raw.abs() > cell.site.radius {
            // Clamp active: dv = +-radius, nothing flows into the blend.
            grad.cells[ci].radius += dvbar * raw.signum();
        } else {
            let mut wbar = vec![0.0; wv.len()];
            for (mi, d) in cell.details.iter().enumerate() {
                grad.cells[ci].details[mi].displacement += dvbar * wv[mi];
                wbar[mi] = dvbar * d.displacement;
            }
            let qbar = chart_softmax_pullback(q, &uvs, scene.temperature, &wv, &wbar, ci, grad);
            let xbbar = chart_pullback(cell, ci, xb, qbar, grad);
            tbarbar += xbbar.dot(ray.dir);
        }
    }

    grad.cells[ci].position += (tbarbar / denom) * n;
    nbar += (tbarbar / denom) * (p - xb);
    grad.cells[ci].normal += nbar;
}
