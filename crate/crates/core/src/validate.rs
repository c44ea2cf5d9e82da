//! Scene-level invariant checks behind the `validate` command, and the
//! traversal-cost probe used to judge Steiner insertion.

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{Camera, CameraModel};
use crate::error::FoamError;
use crate::geometry::{alpha_complex, cech_complex, cell_interval, power_distance, power_dual, Ray};
use crate::rasterizer::rasterize;
use crate::raytracer::{trace_image, TraversalStats};
use crate::scene::Scene;

/// Outcome of one named invariant check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Deterministic pseudo-random viewpoints on a band around the scene,
/// aimed at its center.
pub fn random_orbit_cameras(scene: &Scene, count: usize, w: u32, h: u32, seed: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = scene.world_box.center();
    let diag = scene.world_box.diagonal();
    (0..count)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let y: f64 = rng.gen_range(-0.6..0.6);
            let rho = (1.0 - y * y).sqrt();
            let dir = DVec3::new(rho * theta.cos(), y, rho * theta.sin());
            let eye = c + dir * diag * rng.gen_range(0.30..0.45);
            Camera::look_at(
                eye,
                c,
                DVec3::Y,
                CameraModel::Pinhole {
                    fx: w as f64 * 0.8,
                    fy: w as f64 * 0.8,
                    cx: w as f64 / 2.0,
                    cy: h as f64 / 2.0,
                },
                w,
                h,
                1e-3 * diag,
                10.0 * diag,
            )
        })
        .collect()
}

/// Mean number of cells the ray tracer visits per camera ray, summed over
/// `cams`. This is the traversal cost Steiner insertion is meant to lower.
pub fn mean_intersections(scene: &Scene, cams: &[Camera]) -> Result<f64, FoamError> {
    let sites = scene.sites();
    let dual = power_dual(&sites, &scene.world_box);
    let mut total = TraversalStats::default();
    for cam in cams {
        let (_, stats) = trace_image(scene, &dual, cam)?;
        total.rays += stats.rays;
        total.cells_visited += stats.cells_visited;
    }
    Ok(total.mean_cells_per_ray())
}

#[derive(Debug, Clone, Copy)]
pub struct PopFreeSample {
    pub evaluated: usize,
    /// Rays with no two cells within 1e-9 of an entry or power tie.
    pub clean: usize,
    pub violations: usize,
}

/// Shoots random rays from random origins and checks that cells are first
/// entered in ascending order of power distance from the origin.
pub fn pop_free_sample(scene: &Scene, count: usize, seed: u64) -> PopFreeSample {
    let sites = scene.sites();
    let cech = cech_complex(&sites);
    let bb = &scene.world_box;
    let (clean, violations) = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let origin = DVec3::new(
                rng.gen_range(bb.min.x..bb.max.x),
                rng.gen_range(bb.min.y..bb.max.y),
                rng.gen_range(bb.min.z..bb.max.z),
            );
            let dir = loop {
                let v = DVec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let l = v.length();
                if l > 1e-6 && l <= 1.0 {
                    break v / l;
                }
            };
            let ray = Ray { origin, dir };
            let mut entries: Vec<(f64, f64)> = Vec::new();
            for ci in 0..sites.len() {
                let iv = cell_interval(&ray, ci, &sites, cech.neighbors(ci));
                if !iv.is_empty() {
                    entries.push((iv.t_in, power_distance(origin, &sites[ci])));
                }
            }
            entries.sort_by(|a, b| a.0.total_cmp(&b.0));
            let tie = entries
                .windows(2)
                .any(|w| (w[1].0 - w[0].0).abs() < 1e-9 || (w[1].1 - w[0].1).abs() < 1e-9);
            if tie {
                return (0u64, 0u64);
            }
            let bad = entries.windows(2).any(|w| w[1].1 < w[0].1);
            (1, bad as u64)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    PopFreeSample { evaluated: count, clean: clean as usize, violations: violations as usize }
}

/// Runs every scene invariant and reports one row per check. The caller
/// decides what a failure is worth.
pub fn run_invariant_suite(scene: &Scene, seed: u64) -> Vec<CheckResult> {
    let mut rows = Vec::new();
    let sites = scene.sites();
    let cech = cech_complex(&sites);
    let dual = power_dual(&sites, &scene.world_box);
    let alpha = alpha_complex(&sites, &scene.world_box, &dual);

    rows.push(CheckResult {
        name: "alpha subset of cech",
        pass: alpha.is_subgraph_of(&cech),
        detail: format!("{} alpha edges, {} cech edges", alpha.edge_count(), cech.edge_count()),
    });
    rows.push(CheckResult {
        name: "alpha subset of power dual",
        pass: alpha.is_subgraph_of(&dual),
        detail: format!("{} alpha edges, {} dual edges", alpha.edge_count(), dual.edge_count()),
    });

    let cams = random_orbit_cameras(scene, 8, 64, 64, seed);
    let mut worst: f64 = 0.0;
    let mut render_err = None;
    for cam in &cams {
        let raster = rasterize(scene, &cech, cam);
        let traced = trace_image(scene, &dual, cam);
        match (raster, traced) {
            (Ok(a), Ok((b, _))) => {
                for (pa, pb) in a.pixels().iter().zip(b.pixels()) {
                    worst = worst.max((*pa - *pb).abs().max_element());
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                render_err = Some(e.to_string());
                break;
            }
        }
    }
    rows.push(match render_err {
        None => CheckResult {
            name: "raster matches trace",
            pass: worst <= 1e-4,
            detail: format!("worst channel diff {worst:.3e} over {} cameras", cams.len()),
        },
        Some(e) => CheckResult {
            name: "raster matches trace",
            pass: false,
            detail: format!("render failed: {e}"),
        },
    });

    let sample = pop_free_sample(scene, 20_000, seed.wrapping_add(1));
    rows.push(CheckResult {
        name: "pop-free entry order",
        pass: sample.violations == 0,
        detail: format!(
            "{} violations on {} clean rays ({} near ties skipped)",
            sample.violations,
            sample.clean,
            sample.evaluated - sample.clean
        ),
    });

    rows
}
