//! Shared pieces for the acceptance suite: random scenes, cameras and rays,
//! plus a brute-force marching renderer that decides occupancy by global
//! argmin power distance at every sample point. The marcher shares the
//! model formulas (displacement, radiance) with the library but none of the
//! traversal machinery: no adjacency graphs, no radical-plane walks, no
//! tile lists.

#![allow(dead_code)]

use glam::{DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use powerfoam::camera::CameraModel;
use powerfoam::render::Image;
use powerfoam::scene::{displacement_at, radiance_at, PARALLEL_EPS, SV_AXES};
use powerfoam::{Aabb, Camera, Cell, DetailSite, Dipole, PowerSite, Ray, Scene, SvBasis};

pub const MARCH_STEP: f64 = 1e-4;

pub fn random_unit(rng: &mut ChaCha8Rng) -> DVec3 {
    loop {
        let v = DVec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let l = v.length();
        if l > 1e-6 && l <= 1.0 {
            return v / l;
        }
    }
}

/// Unstructured scene: sites in a 4-unit box, a spread of densities from
/// glassy to near opaque, randomly oriented dipoles with displaced detail.
///
/// Sites are kept in general position: no center may be power-dominated by
/// another site, so every cell owns at least its own center. A cell whose
/// whole ball is conquered would render as nothing yet keep a nonempty
/// chord, and only a superset neighbor list could clip that phantom away.
pub fn random_scene(seed: u64, n: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<Cell> = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, radius) = loop {
            let p = DVec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let radius = rng.gen_range(0.2..0.6);
            let generic = cells.iter().all(|c| {
                let d2 = (c.site.position - p).length_squared();
                d2 > (c.site.radius * c.site.radius - radius * radius).abs() + 1e-9
            });
            if generic {
                break (p, radius);
            }
        };
        let normal = random_unit(&mut rng);
        let density = 10f64.powf(rng.gen_range(-0.5..1.3));
        let details = (0..3)
            .map(|_| {
                let mut values = [DVec3::ZERO; SV_AXES];
                for v in values.iter_mut() {
                    *v = DVec3::new(rng.gen(), rng.gen(), rng.gen());
                }
                DetailSite {
                    uv: DVec2::new(
                        rng.gen_range(-0.4..0.4) * radius,
                        rng.gen_range(-0.4..0.4) * radius,
                    ),
                    displacement: rng.gen_range(-0.25..0.25) * radius,
                    values,
                }
            })
            .collect();
        cells.push(Cell {
            site: PowerSite::new(p, radius),
            dipole: Dipole { normal, density },
            details,
            is_steiner: false,
        });
    }
    let tau = Scene::default_temperature(&cells);
    Scene::new(cells, tau, DVec3::new(0.05, 0.06, 0.08), SvBasis::standard()).unwrap()
}

pub fn random_camera(scene: &Scene, rng: &mut ChaCha8Rng, width: u32, height: u32) -> Camera {
    let c = scene.world_box.center();
    let diag = scene.world_box.diagonal();
    let dir = random_unit(rng);
    let eye = c + dir * diag * rng.gen_range(0.32..0.48);
    let up = if dir.y.abs() > 0.9 { DVec3::X } else { DVec3::Y };
    let fx = 0.8 * width as f64;
    Camera::look_at(
        eye,
        c,
        up,
        CameraModel::Pinhole { fx, fy: fx, cx: width as f64 / 2.0, cy: height as f64 / 2.0 },
        width,
        height,
        1e-3 * diag,
        10.0 * diag,
    )
}

/// Origins spread through and around the box, directions uniform.
pub fn random_ray(world: &Aabb, rng: &mut ChaCha8Rng) -> Ray {
    let pad = 0.25 * world.diagonal();
    let origin = DVec3::new(
        rng.gen_range(world.min.x - pad..world.max.x + pad),
        rng.gen_range(world.min.y - pad..world.max.y + pad),
        rng.gen_range(world.min.z - pad..world.max.z + pad),
    );
    Ray::new(origin, random_unit(rng))
}

pub fn max_channel_diff(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| (*p - *q).abs().max_element())
        .fold(0.0, f64::max)
}

/// How a cell's dipole splits its stretch of the ray.
#[derive(Clone, Copy)]
enum Side {
    /// Parallel ray on the occupied side: the whole stretch counts.
    All,
    /// Parallel ray on the empty side, or the ball is missed entirely.
    Empty,
    /// Occupied iff t <= ts.
    Before(f64),
    /// Occupied iff t >= ts.
    After(f64),
}

struct Track {
    /// Chord of the ball on the full line; (inf, -inf) on a miss.
    a: f64,
    b: f64,
    side: Side,
}

/// Along a ray, pow_k(o + t d) = t^2 + m_k t + c_k. The t^2 term is shared
/// by every site, so the argmin is the lower envelope of n lines. Segments
/// are stored left to right; slopes strictly decrease along the hull.
struct Envelope {
    hull: Vec<u32>,
    breaks: Vec<f64>,
}

impl Envelope {
    fn build(ray: &Ray, cells: &[Cell]) -> Envelope {
        let mut lines: Vec<(f64, f64, u32)> = cells
            .iter()
            .enumerate()
            .map(|(k, cell)| {
                let rel = ray.origin - cell.site.position;
                let m = 2.0 * ray.dir.dot(rel);
                let c = rel.length_squared() - cell.site.radius * cell.site.radius;
                (m, c, k as u32)
            })
            .collect();
        lines.sort_by(|x, y| {
            y.0.total_cmp(&x.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2))
        });
        // Of equal-slope lines only the lowest one can attain the minimum;
        // on full ties the lowest index stays, matching cell location.
        lines.dedup_by(|later, kept| kept.0 == later.0);
        let mut hull: Vec<usize> = Vec::new();
        for (i, &(m, c, _)) in lines.iter().enumerate() {
            while hull.len() >= 2 {
                let (m1, c1, _) = lines[hull[hull.len() - 1]];
                let (m0, c0, _) = lines[hull[hull.len() - 2]];
                // The top line never reaches the minimum once the new one
                // overtakes the second no later than the top did.
                if (c - c0) / (m0 - m) <= (c1 - c0) / (m0 - m1) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        let breaks = hull
            .windows(2)
            .map(|w| {
                let (m0, c0, _) = lines[w[0]];
                let (m1, c1, _) = lines[w[1]];
                (c1 - c0) / (m0 - m1)
            })
            .collect();
        Envelope { hull: hull.into_iter().map(|i| lines[i].2).collect(), breaks }
    }

    fn winner(&self, t: f64) -> u32 {
        self.hull[self.breaks.partition_point(|&x| x < t)]
    }
}

fn chord(ray: &Ray, site: &PowerSite) -> Option<(f64, f64)> {
    let oc = ray.origin - site.position;
    let b = ray.dir.dot(oc);
    let c = oc.length_squared() - site.radius * site.radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let root = disc.sqrt();
    Some((-b - root, -b + root))
}

/// The occupying cell at ray parameter t, if any: the global power argmin
/// must also hold the point inside its ball and on the occupied side of its
/// displaced dipole.
fn state(tracks: &[Track], env: &Envelope, t: f64) -> Option<u32> {
    let w = env.winner(t);
    let tr = &tracks[w as usize];
    if t < tr.a || t > tr.b {
        return None;
    }
    let occupied = match tr.side {
        Side::All => true,
        Side::Empty => false,
        Side::Before(ts) => t <= ts,
        Side::After(ts) => t >= ts,
    };
    occupied.then_some(w)
}

/// Marches the ray at a fixed step, refines every state change by
/// bisection, then composites the occupied runs front to back. Unlike the
/// production tracer it never stops early on saturation; that difference is
/// bounded by the saturation threshold.
pub fn oracle_trace(scene: &Scene, ray: &Ray, near: f64, far: f64) -> DVec3 {
    let lo = near.max(0.0);
    let mut tracks = Vec::with_capacity(scene.cells.len());
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for cell in &scene.cells {
        let Some((a, b)) = chord(ray, &cell.site) else {
            tracks.push(Track { a: f64::INFINITY, b: f64::NEG_INFINITY, side: Side::Empty });
            continue;
        };
        let n = cell.dipole.normal;
        let denom = ray.dir.dot(n);
        let side = if denom.abs() <= PARALLEL_EPS {
            let probe = ray.at(0.5 * (a + b));
            if (probe - cell.site.position).dot(n) <= 0.0 {
                Side::All
            } else {
                Side::Empty
            }
        } else {
            // The displacement is sampled where the ray meets the flat
            // plane; the crossing then shifts by dv along the normal.
            let t_bar = (cell.site.position - ray.origin).dot(n) / denom;
            let dv = displacement_at(cell, ray.at(t_bar), scene.temperature);
            let ts = t_bar + dv / denom;
            if denom > 0.0 {
                Side::Before(ts)
            } else {
                Side::After(ts)
            }
        };
        tracks.push(Track { a, b, side });
        let (u, v) = (a.max(lo), b.min(far));
        if u < v {
            spans.push((u, v));
        }
    }
    spans.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for s in spans {
        match merged.last_mut() {
            Some(last) if s.0 <= last.1 + MARCH_STEP => last.1 = last.1.max(s.1),
            _ => merged.push(s),
        }
    }

    let env = Envelope::build(ray, &scene.cells);
    let refine = |mut a: f64, mut b: f64, sa: Option<u32>| {
        while b - a > 1e-13 {
            let m = 0.5 * (a + b);
            if state(&tracks, &env, m) == sa {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };

    // Everything outside the merged spans is outside every ball, so the
    // march can skip it; one extra step on each flank brackets the
    // entry and exit boundaries.
    let mut runs: Vec<(u32, f64, f64)> = Vec::new();
    for (s, e) in merged {
        let t0 = (s - MARCH_STEP).max(lo);
        let t1 = (e + MARCH_STEP).min(far);
        let steps = ((t1 - t0) / MARCH_STEP).ceil().max(1.0) as usize;
        let mut prev_t = t0;
        let mut prev_s = state(&tracks, &env, t0);
        let mut open = prev_s.map(|w| (w, t0));
        for k in 1..=steps {
            let t = if k == steps { t1 } else { t0 + k as f64 * MARCH_STEP };
            let st = state(&tracks, &env, t);
            if st != prev_s {
                let tb = refine(prev_t, t, prev_s);
                if let Some((w, u)) = open.take() {
                    runs.push((w, u, tb));
                }
                if let Some(w) = st {
                    open = Some((w, tb));
                }
            }
            prev_t = t;
            prev_s = st;
        }
        if let Some((w, u)) = open.take() {
            runs.push((w, u, t1));
        }
    }

    let mut color = DVec3::ZERO;
    let mut trans = 1.0;
    for (w, u, v) in runs {
        let cell = &scene.cells[w as usize];
        if cell.dipole.density <= 0.0 || v <= u {
            continue;
        }
        // Radiance sits at the displaced crossing when one exists, at the
        // run midpoint for rays parallel to the plane.
        let point = match tracks[w as usize].side {
            Side::Before(ts) | Side::After(ts) => ray.at(ts),
            Side::All => ray.at(0.5 * (u + v)),
            Side::Empty => unreachable!(),
        };
        let c = radiance_at(cell, point, ray.dir, scene.temperature, &scene.sv);
        let alpha = 1.0 - (-cell.dipole.density * (v - u)).exp();
        color += trans * alpha * c;
        trans *= 1.0 - alpha;
    }
    color + trans * scene.background
}
