//! Scene representation: power cells carrying an oriented dipole plane and
//! a chart of detail sites with soft-Voronoi blended displacement and
//! radiance.

use glam::{DVec2, DVec3};

use crate::error::FoamError;
use crate::geometry::{Aabb, PowerSite, Ray, RayInterval};

/// Number of spherical basis directions for view-dependent radiance.
pub const SV_AXES: usize = 8;

/// Default sharpness of the directional softmax.
pub const DEFAULT_GAMMA: f64 = 4.0;

/// Oriented plane through the cell's site. The side the normal points away
/// from is occupied: `(y - p) . n <= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dipole {
    /// Unit length.
    pub normal: DVec3,
    /// Extinction coefficient of the occupied half, >= 0.
    pub density: f64,
}

/// Sample point in the cell's tangent chart. Carries a displacement of the
/// dipole plane and one radiance triple per spherical basis axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailSite {
    pub uv: DVec2,
    pub displacement: f64,
    pub values: [DVec3; SV_AXES],
}

/// Directional radiance basis shared by every cell of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SvBasis {
    pub axes: [DVec3; SV_AXES],
    pub gamma: f64,
}

impl SvBasis {
    pub fn standard() -> Self {
        SvBasis { axes: fibonacci_axes(), gamma: DEFAULT_GAMMA }
    }

    /// Softmax over `gamma * (dir . axis_k)`; `dir` unit length.
    pub fn direction_weights(&self, dir: DVec3) -> [f64; SV_AXES] {
        let mut logits = [0.0; SV_AXES];
        let mut max = f64::NEG_INFINITY;
        for (l, a) in logits.iter_mut().zip(self.axes.iter()) {
            *l = self.gamma * dir.dot(*a);
            max = max.max(*l);
        }
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in logits.iter_mut() {
            *l /= sum;
        }
        logits
    }
}

/// Spherical Fibonacci directions; fixed, reasonably uniform.
pub fn fibonacci_axes() -> [DVec3; SV_AXES] {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    std::array::from_fn(|i| {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / SV_AXES as f64;
        let rho = (1.0 - z * z).max(0.0).sqrt();
        let phi = golden * i as f64;
        DVec3::new(rho * phi.cos(), rho * phi.sin(), z)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub site: PowerSite,
    pub dipole: Dipole,
    pub details: Vec<DetailSite>,
    /// Steiner cells subdivide empty space: density zero, no details.
    pub is_steiner: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cells: Vec<Cell>,
    /// Sharpness of the chart softmax (tau).
    pub temperature: f64,
    /// Linear background color.
    pub background: DVec3,
    pub sv: SvBasis,
    /// Clipping region of the diagram; derived from the spheres.
    pub world_box: Aabb,
}

impl Scene {
    pub fn new(
        cells: Vec<Cell>,
        temperature: f64,
        background: DVec3,
        sv: SvBasis,
    ) -> Result<Self, FoamError> {
        if cells.is_empty() {
            return Err(FoamError::EmptyScene);
        }
        let mut scene = Scene { cells, temperature, background, sv, world_box: Aabb::new(DVec3::ZERO, DVec3::ZERO) };
        scene.refresh_world_box();
        Ok(scene)
    }

    pub fn sites(&self) -> Vec<PowerSite> {
        self.cells.iter().map(|c| c.site).collect()
    }

    /// Sphere bounds expanded threefold, padded so no axis degenerates.
    pub fn refresh_world_box(&mut self) {
        let sites = self.sites();
        let mut bb = Aabb::from_spheres(&sites).expanded(3.0);
        let pad = 1e-6_f64.max(1e-9 * bb.diagonal());
        for axis in 0..3 {
            if bb.max[axis] - bb.min[axis] < pad {
                bb.min[axis] -= pad;
                bb.max[axis] += pad;
            }
        }
        self.world_box = bb;
    }

    /// tau = 8 / median initial radius; the scale that makes charts about
    /// as sharp across scenes of different size.
    pub fn default_temperature(cells: &[Cell]) -> f64 {
        let mut radii: Vec<f64> = cells.iter().map(|c| c.site.radius).collect();
        if radii.is_empty() {
            return 8.0;
        }
        radii.sort_by(f64::total_cmp);
        let median = radii[radii.len() / 2];
        if median > 0.0 {
            8.0 / median
        } else {
            8.0
        }
    }
}

/// Right-handed orthonormal frame of the plane with unit normal `n`:
/// the coordinate axis of smallest absolute normal component (lowest index
/// on ties) is projected off `n` and normalized, then `v = n x u`.
pub fn tangent_frame(n: DVec3) -> (DVec3, DVec3) {
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
    let u = (e - e.dot(n) * n).normalize();
    let v = n.cross(u);
    (u, v)
}

/// Normalized soft-Voronoi weights `softmax(-tau * |q - s_m|)` over the
/// detail sites' chart positions.
pub fn soft_voronoi_weights(q: DVec2, sites_uv: &[DVec2], tau: f64) -> Vec<f64> {
    let mut w = vec![0.0; sites_uv.len()];
    soft_voronoi_weights_into(q, sites_uv, tau, &mut w);
    w
}

pub(crate) fn soft_voronoi_weights_into(q: DVec2, sites_uv: &[DVec2], tau: f64, out: &mut [f64]) {
    debug_assert_eq!(sites_uv.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for (o, s) in out.iter_mut().zip(sites_uv.iter()) {
        *o = -tau * (q - *s).length();
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Chart coordinates of `x` in the cell's tangent frame.
pub fn chart_coords(cell: &Cell, x: DVec3) -> DVec2 {
    let (u, v) = tangent_frame(cell.dipole.normal);
    let rel = x - cell.site.position;
    DVec2::new(rel.dot(u), rel.dot(v))
}

/// Blended displacement of the dipole plane at base point `x_bar`, clamped
/// to the sphere radius. Zero when the cell has no detail sites.
pub fn displacement_at(cell: &Cell, x_bar: DVec3, tau: f64) -> f64 {
    if cell.details.is_empty() {
        return 0.0;
    }
    let q = chart_coords(cell, x_bar);
    let mut w = [0.0; SV_AXES];
    let k = cell.details.len();
    let mut buf;
    let w: &mut [f64] = if k <= SV_AXES {
        &mut w[..k]
    } else {
        buf = vec![0.0; k];
        &mut buf
    };
    let uvs: Vec<DVec2> = cell.details.iter().map(|d| d.uv).collect();
    soft_voronoi_weights_into(q, &uvs, tau, w);
    let mut dv = 0.0;
    for (wm, d) in w.iter().zip(cell.details.iter()) {
        dv += wm * d.displacement;
    }
    dv.clamp(-cell.site.radius, cell.site.radius)
}

/// View-dependent radiance at `x` for propagation direction `dir` (unit).
/// Chart weights blend the detail sites; the directional softmax blends
/// each site's per-axis values. Componentwise >= 0 when the stored values
/// are.
pub fn radiance_at(cell: &Cell, x: DVec3, dir: DVec3, tau: f64, sv: &SvBasis) -> DVec3 {
    if cell.details.is_empty() {
        return DVec3::ZERO;
    }
    let q = chart_coords(cell, x);
    let uvs: Vec<DVec2> = cell.details.iter().map(|d| d.uv).collect();
    let w = soft_voronoi_weights(q, &uvs, tau);
    let s = sv.direction_weights(dir);
    let mut c = DVec3::ZERO;
    for (wm, d) in w.iter().zip(cell.details.iter()) {
        let mut cm = DVec3::ZERO;
        for (sk, val) in s.iter().zip(d.values.iter()) {
            cm += *sk * *val;
        }
        c += *wm * cm;
    }
    c
}

/// Rays closer than this to the dipole plane are treated as parallel.
pub const PARALLEL_EPS: f64 = 1e-12;

/// Result of restricting a cell interval to the dipole's occupied side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleClip {
    pub occupied: RayInterval,
    /// Ray parameter of the displaced surface crossing; absent for rays
    /// parallel to the plane.
    pub surface_t: Option<f64>,
}

impl DipoleClip {
    pub fn length(&self) -> f64 {
        self.occupied.length()
    }
}

/// Clips `interval` to the occupied half of the cell's displaced dipole
/// plane. For rays parallel to the plane the whole interval is kept or
/// dropped by the side of its entry point and no surface parameter exists.
pub fn dipole_clip(cell: &Cell, ray: &Ray, interval: RayInterval, tau: f64) -> DipoleClip {
    if interval.is_empty() {
        return DipoleClip { occupied: RayInterval::EMPTY, surface_t: None };
    }
    let n = cell.dipole.normal;
    let denom = ray.dir.dot(n);
    if denom.abs() <= PARALLEL_EPS {
        let side = (ray.at(interval.t_in) - cell.site.position).dot(n);
        let occupied = if side <= 0.0 { interval } else { RayInterval::EMPTY };
        return DipoleClip { occupied, surface_t: None };
    }
    let t_bar = (cell.site.position - ray.origin).dot(n) / denom;
    let dv = displacement_at(cell, ray.at(t_bar), tau);
    let t_surf = t_bar + dv / denom;
    let occupied = if denom > 0.0 {
        RayInterval::new(interval.t_in, interval.t_out.min(t_surf))
    } else {
        RayInterval::new(interval.t_in.max(t_surf), interval.t_out)
    };
    let occupied = if occupied.is_empty() { RayInterval::EMPTY } else { occupied };
    DipoleClip { occupied, surface_t: Some(t_surf) }
}
