//! Loss terms for fitting: photometric (MSE, SSIM), the orientation and
//! sparsity regularizers over per-segment contribution records, and the
//! overlap (connectivity) penalty on the Čech graph.

use glam::DVec3;

use crate::error::FoamError;
use crate::geometry::AdjacencyGraph;
use crate::render::Image;
use crate::scene::Scene;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean squared error over linear RGB.
pub fn loss_rgb(render: &Image, target: &Image) -> Result<f64, FoamError> {
    check_shape(render, target)?;
    let n = (render.pixels().len() * 3) as f64;
    let sum: f64 = render
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(a, b)| (*a - *b).length_squared())
        .sum();
    Ok(sum / n)
}

/// d(loss_rgb)/d(render pixel).
pub fn loss_rgb_backward(render: &Image, target: &Image) -> Result<Vec<DVec3>, FoamError> {
    check_shape(render, target)?;
    let n = (render.pixels().len() * 3) as f64;
    Ok(render
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(a, b)| 2.0 * (*a - *b) / n)
        .collect())
}

pub fn psnr(render: &Image, target: &Image) -> Result<f64, FoamError> {
    let mse = loss_rgb(render, target)?;
    Ok(if mse <= 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn check_shape(a: &Image, b: &Image) -> Result<(), FoamError> {
    if a.width != b.width || a.height != b.height {
        return Err(FoamError::InvalidConfig(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable 11-tap Gaussian, valid region only: output is
/// (w-10) x (h-10), indexed by window top-left corner.
fn blur_valid(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; vw * h];
    for y in 0..h {
        for x in 0..vw {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * plane[y * w + x + i];
            }
            horiz[y * vw + x] = s;
        }
    }
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * horiz[(y + i) * vw + x];
            }
            out[y * vw + x] = s;
        }
    }
    out
}

/// Adjoint of `blur_valid`: spreads window-center values back over pixels
/// with the same weights (the kernel is symmetric).
fn spread_valid(valid: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; vw * h];
    for y in 0..vh {
        for x in 0..vw {
            let v = valid[y * vw + x];
            if v != 0.0 {
                for (i, kv) in k.iter().enumerate() {
                    horiz[(y + i) * vw + x] += kv * v;
                }
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..vw {
            let v = horiz[y * vw + x];
            if v != 0.0 {
                for (i, kv) in k.iter().enumerate() {
                    out[y * w + x + i] += kv * v;
                }
            }
        }
    }
    out
}

fn channel_plane(img: &Image, ch: usize) -> Vec<f64> {
    img.pixels().iter().map(|p| p[ch]).collect()
}

struct SsimMoments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    e_xx: Vec<f64>,
    e_xy: Vec<f64>,
    e_yy: Vec<f64>,
}

fn ssim_moments(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimMoments {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    SsimMoments {
        mu_x: blur_valid(x, w, h),
        mu_y: blur_valid(y, w, h),
        e_xx: blur_valid(&xx, w, h),
        e_xy: blur_valid(&xy, w, h),
        e_yy: blur_valid(&yy, w, h),
    }
}

/// 1 - mean SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1),
/// averaged over channels and fully-interior windows.
pub fn loss_ssim(render: &Image, target: &Image) -> Result<f64, FoamError> {
    check_shape(render, target)?;
    let (w, h) = (render.width as usize, render.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(FoamError::InvalidConfig(format!(
            "image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x = channel_plane(render, ch);
        let y = channel_plane(target, ch);
        let m = ssim_moments(&x, &y, w, h);
        for i in 0..m.mu_x.len() {
            total += ssim_window_value(&m, i).0;
            count += 1;
        }
    }
    Ok(1.0 - total / count as f64)
}

struct WindowTerms {
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
}

fn ssim_window_value(m: &SsimMoments, i: usize) -> (f64, WindowTerms) {
    let (mx, my) = (m.mu_x[i], m.mu_y[i]);
    let sxx = m.e_xx[i] - mx * mx;
    let syy = m.e_yy[i] - my * my;
    let sxy = m.e_xy[i] - mx * my;
    let t = WindowTerms {
        a1: 2.0 * mx * my + SSIM_C1,
        a2: 2.0 * sxy + SSIM_C2,
        b1: mx * mx + my * my + SSIM_C1,
        b2: sxx + syy + SSIM_C2,
    };
    ((t.a1 * t.a2) / (t.b1 * t.b2), t)
}

/// d(loss_ssim)/d(render pixel), per channel.
pub fn loss_ssim_backward(render: &Image, target: &Image) -> Result<Vec<DVec3>, FoamError> {
    check_shape(render, target)?;
    let (w, h) = (render.width as usize, render.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(FoamError::InvalidConfig(format!(
            "image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let count = (vw * vh * 3) as f64;
    let mut grad = vec![DVec3::ZERO; w * h];
    for ch in 0..3 {
        let x = channel_plane(render, ch);
        let y = channel_plane(target, ch);
        let m = ssim_moments(&x, &y, w, h);
        // Per-window partials w.r.t. mu_x, E[x^2], E[xy]; pulled back to
        // pixels through the same (symmetric) kernel.
        let mut k_mu = vec![0.0; vw * vh];
        let mut k_e2 = vec![0.0; vw * vh];
        let mut k_exy = vec![0.0; vw * vh];
        for i in 0..vw * vh {
            let (s, t) = ssim_window_value(&m, i);
            let (mx, my) = (m.mu_x[i], m.mu_y[i]);
            let inv = 1.0 / (t.b1 * t.b2);
            k_mu[i] = 2.0 * my * (t.a2 - t.a1) * inv - s * (2.0 * mx / t.b1 - 2.0 * mx / t.b2);
            k_e2[i] = -s / t.b2;
            k_exy[i] = 2.0 * t.a1 * inv;
        }
        let g_mu = spread_valid(&k_mu, w, h);
        let g_e2 = spread_valid(&k_e2, w, h);
        let g_exy = spread_valid(&k_exy, w, h);
        for (q, g) in grad.iter_mut().enumerate() {
            // d(1 - mean s)/dx = -(1/count) * ds/dx
            g[ch] = -(g_mu[q] + 2.0 * x[q] * g_e2[q] + y[q] * g_exy[q]) / count;
        }
    }
    Ok(grad)
}

/// One composited segment: enough to evaluate the orientation and
/// sparsity penalties.
#[derive(Debug, Clone, Copy)]
pub struct ContribRecord {
    pub transmittance: f64,
    pub alpha: f64,
    pub normal: DVec3,
    pub dir: DVec3,
}

/// Sum of T·α·max(n·d, 0)² over records, averaged over `rays`.
pub fn loss_normal(records: &[ContribRecord], rays: usize) -> f64 {
    let s: f64 = records
        .iter()
        .map(|r| {
            let m = r.normal.dot(r.dir).max(0.0);
            r.transmittance * r.alpha * m * m
        })
        .sum();
    s / rays.max(1) as f64
}

/// Sum of T·α over records, averaged over `rays`.
pub fn loss_sparse(records: &[ContribRecord], rays: usize) -> f64 {
    let s: f64 = records.iter().map(|r| r.transmittance * r.alpha).sum();
    s / rays.max(1) as f64
}

/// Squared overlap depth summed over Čech edges (each unordered edge once).
pub fn loss_connect(scene: &Scene, cech: &AdjacencyGraph) -> f64 {
    cech.edges()
        .map(|(i, j)| {
            let a = &scene.cells[i as usize].site;
            let b = &scene.cells[j as usize].site;
            let d = (a.position - b.position).length();
            let overlap = (a.radius + b.radius - d).max(0.0);
            overlap * overlap
        })
        .sum()
}

/// Gradient of `loss_connect` into per-cell (position, radius) slots.
pub fn loss_connect_backward(
    scene: &Scene,
    cech: &AdjacencyGraph,
    scale: f64,
    pos_grad: &mut [DVec3],
    radius_grad: &mut [f64],
) {
    for (i, j) in cech.edges() {
        let (i, j) = (i as usize, j as usize);
        let a = &scene.cells[i].site;
        let b = &scene.cells[j].site;
        let delta = a.position - b.position;
        let d = delta.length();
        let overlap = a.radius + b.radius - d;
        if overlap <= 0.0 || d < 1e-12 {
            continue;
        }
        let g = 2.0 * overlap * scale;
        radius_grad[i] += g;
        radius_grad[j] += g;
        let dir = delta / d;
        pos_grad[i] += -g * dir;
        pos_grad[j] += g * dir;
    }
}
