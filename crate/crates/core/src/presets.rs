//! Synthetic scene generators and canned camera paths.
//!
//! These are the ground-truth sources for the test and benchmark suites:
//! "boxes" for fitting, "shell" for surface coverage, "sparse" for the
//! Steiner-insertion benchmark. All generation is driven by a single
//! seeded stream, so equal seeds give equal scenes.

use std::str::FromStr;

use glam::{DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{Camera, CameraModel};
use crate::error::FoamError;
use crate::geometry::PowerSite;
use crate::scene::{Cell, DetailSite, Dipole, Scene, SvBasis, SV_AXES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Boxes,
    Shell,
    Sparse,
}

impl FromStr for Preset {
    type Err = FoamError;

    fn from_str(s: &str) -> Result<Self, FoamError> {
        match s {
            "boxes" => Ok(Preset::Boxes),
            "shell" => Ok(Preset::Shell),
            "sparse" => Ok(Preset::Sparse),
            other => Err(FoamError::InvalidConfig(format!(
                "unknown preset '{other}' (expected boxes|shell|sparse)"
            ))),
        }
    }
}

pub const PRESET_BACKGROUND: DVec3 = DVec3::new(0.02, 0.02, 0.035);

pub fn generate(preset: Preset, seed: u64) -> Scene {
    match preset {
        Preset::Boxes => boxes(seed),
        Preset::Shell => shell(seed),
        Preset::Sparse => sparse(seed),
    }
}

fn finish(cells: Vec<Cell>) -> Scene {
    let mut scene = Scene::new(cells, 1.0, PRESET_BACKGROUND, SvBasis::standard())
        .expect("presets always produce at least one cell");
    scene.temperature = Scene::default_temperature(&scene.cells);
    scene
}

fn detail_sites(rng: &mut ChaCha8Rng, color: DVec3, r: f64, bump: f64) -> Vec<DetailSite> {
    (0..3)
        .map(|_| {
            let mut values = [DVec3::ZERO; SV_AXES];
            for v in values.iter_mut() {
                let shade = 0.8 + 0.4 * rng.gen::<f64>();
                *v = (color * shade).clamp(DVec3::ZERO, DVec3::ONE);
            }
            DetailSite {
                uv: DVec2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)) * r,
                displacement: rng.gen_range(-bump..bump) * r,
                values,
            }
        })
        .collect()
}

/// Three axis-aligned colored slabs meeting at a corner, each a grid of
/// overlapping dipole cells facing away from its wall.
fn boxes(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slabs: [(DVec3, DVec3); 3] = [
        (DVec3::X, DVec3::new(0.9, 0.25, 0.2)),
        (DVec3::Y, DVec3::new(0.2, 0.8, 0.25)),
        (DVec3::Z, DVec3::new(0.25, 0.3, 0.9)),
    ];
    let n = 7;
    let half = 1.0;
    let spacing = 2.0 * half / (n - 1) as f64;
    let radius = spacing * 0.75;
    let mut cells = Vec::new();
    for (normal, color) in slabs {
        // In-plane axes: cycle x -> y -> z.
        let u = DVec3::new(normal.z, normal.x, normal.y);
        let w = normal.cross(u);
        for a in 0..n {
            for b in 0..n {
                let jitter = DVec3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                ) * spacing;
                let p = normal * -half
                    + u * (a as f64 * spacing - half)
                    + w * (b as f64 * spacing - half)
                    + jitter;
                cells.push(Cell {
                    site: PowerSite::new(p, radius * rng.gen_range(0.95..1.05)),
                    dipole: Dipole { normal, density: 30.0 },
                    details: detail_sites(&mut rng, color, radius, 0.1),
                    is_steiner: false,
                });
            }
        }
    }
    finish(cells)
}

/// Cells tiling a sphere surface on a Fibonacci lattice, normals outward.
fn shell(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 150usize;
    let shell_r = 1.0;
    // Neighbor spacing of a Fibonacci lattice is about sqrt(4π/N)·R.
    let spacing = (4.0 * std::f64::consts::PI / n as f64).sqrt() * shell_r;
    let radius = spacing * 0.8;
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let cells = (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = std::f64::consts::TAU * (i as f64 / golden).fract();
            let dir = DVec3::new(rho * phi.cos(), rho * phi.sin(), z);
            let color = (dir * 0.5 + 0.5).clamp(DVec3::ZERO, DVec3::ONE);
            Cell {
                site: PowerSite::new(dir * shell_r, radius * rng.gen_range(0.95..1.05)),
                dipole: Dipole { normal: dir, density: 25.0 },
                details: detail_sites(&mut rng, color, radius, 0.08),
                is_steiner: false,
            }
        })
        .collect();
    finish(cells)
}

/// A patchy hollow shell: surface cells with gaps, nothing inside. Rays
/// slipping through a gap cross a long run of sliver cells in the empty
/// interior, which is what Steiner insertion is meant to collapse.
fn sparse(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 260usize;
    let shell_r = 2.2;
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut cells = Vec::new();
    for i in 0..n {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
        let rho = (1.0 - z * z).sqrt();
        let phi = std::f64::consts::TAU * (i as f64 / golden).fract();
        let dir = DVec3::new(rho * phi.cos(), rho * phi.sin(), z);
        if rng.gen::<f64>() > 0.55 {
            continue;
        }
        let radius = rng.gen_range(0.36..0.44);
        let color = DVec3::new(rng.gen(), rng.gen(), rng.gen());
        cells.push(Cell {
            site: PowerSite::new(dir * shell_r, radius),
            dipole: Dipole { normal: dir, density: 30.0 },
            details: detail_sites(&mut rng, color, radius, 0.08),
            is_steiner: false,
        });
    }
    finish(cells)
}

/// Pinhole cameras on a ring around the scene, looking at its center.
pub fn orbit_cameras(scene: &Scene, count: usize, width: u32, height: u32) -> Vec<Camera> {
    let c = scene.world_box.center();
    let diag = scene.world_box.diagonal();
    let radius = 0.35 * diag;
    (0..count)
        .map(|k| {
            let ang = std::f64::consts::TAU * k as f64 / count as f64;
            let eye = c + radius * DVec3::new(ang.cos(), 0.35, ang.sin());
            Camera::look_at(
                eye,
                c,
                DVec3::Y,
                CameraModel::Pinhole {
                    fx: 0.8 * width as f64,
                    fy: 0.8 * width as f64,
                    cx: width as f64 / 2.0,
                    cy: height as f64 / 2.0,
                },
                width,
                height,
                1e-3 * diag,
                10.0 * diag,
            )
        })
        .collect()
}

/// Fisheye cameras on the same ring; focal length keeps every pixel of the
/// image inside the valid (theta <= pi) region.
pub fn fisheye_orbit(scene: &Scene, count: usize, width: u32, height: u32) -> Vec<Camera> {
    let c = scene.world_box.center();
    let diag = scene.world_box.diagonal();
    let radius = 0.35 * diag;
    let corner = 0.5 * ((width * width + height * height) as f64).sqrt();
    let f = (corner / std::f64::consts::PI) * 1.05 + 0.35 * width as f64;
    (0..count)
        .map(|k| {
            let ang = std::f64::consts::TAU * k as f64 / count as f64;
            let eye = c + radius * DVec3::new(ang.cos(), 0.35, ang.sin());
            Camera::look_at(
                eye,
                c,
                DVec3::Y,
                CameraModel::Fisheye {
                    f,
                    cx: width as f64 / 2.0,
                    cy: height as f64 / 2.0,
                },
                width,
                height,
                1e-3 * diag,
                10.0 * diag,
            )
        })
        .collect()
}
