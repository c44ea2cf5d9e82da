//! Cell-to-cell ray traversal through the power diagram, and Steiner point
//! insertion to regularize it.

use glam::{DVec2, DVec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::FoamError;
use crate::geometry::{locate_cell, AdjacencyGraph, PowerSite, Ray};
use crate::render::{shade_cell, Image, RayAccumulator, Shaded};
use crate::scene::{Cell, Dipole, Scene};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraversalStats {
    pub rays: u64,
    pub cells_visited: u64,
}

impl TraversalStats {
    pub fn mean_cells_per_ray(&self) -> f64 {
        if self.rays == 0 {
            0.0
        } else {
            self.cells_visited as f64 / self.rays as f64
        }
    }
}

/// Walk budget per ray; generous enough for any sane diagram, small enough
/// to catch cycling on degenerate input.
pub fn step_budget(n_cells: usize) -> u64 {
    (10.0 * (n_cells as f64).cbrt()).ceil() as u64 + 1000
}

/// Walks the diagram along `ray`, invoking `emit` for each cell that
/// contributes a segment, in entry order. Returns the number of cells
/// visited. `emit` returns false to stop the walk (saturation).
pub(crate) fn walk_ray(
    scene: &Scene,
    sites: &[PowerSite],
    dual: &AdjacencyGraph,
    ray: &Ray,
    near: f64,
    far: f64,
    emit: &mut dyn FnMut(&Shaded) -> bool,
) -> Result<u64, FoamError> {
    let Some((t0, t1)) = scene.world_box.ray_range(ray) else {
        return Ok(0);
    };
    if t1 <= 0.0 {
        return Ok(0);
    }
    let t_start = t0.max(0.0);
    let mut current = locate_cell(ray.at(t_start), sites)?;
    let mut t_cur = t_start;
    let eps_t = 1e-9 * scene.world_box.diagonal();
    let budget = step_budget(sites.len());
    let t_stop = t1.min(far);
    let mut visited = 0u64;
    loop {
        visited += 1;
        if visited > budget {
            return Err(FoamError::TraversalDiverged { budget });
        }
        if let Some(sh) = shade_cell(scene, sites, current, dual.neighbors(current), ray, near, far)
        {
            if !emit(&sh) {
                break;
            }
        }
        // Exit: minimum crossing over outward radical planes not behind us.
        // Ascending neighbor order plus strict < breaks exact ties toward
        // the lowest index.
        let mut t_exit = f64::INFINITY;
        let mut next = usize::MAX;
        let p_i = sites[current].position;
        let r_i = sites[current].radius;
        for &j in dual.neighbors(current) {
            let other = &sites[j as usize];
            let delta = other.position - p_i;
            let a_t = 2.0 * ray.dir.dot(delta);
            if a_t <= 0.0 {
                continue;
            }
            let rhs = (p_i + other.position).dot(delta) + r_i * r_i - other.radius * other.radius;
            let t_j = (rhs - 2.0 * ray.origin.dot(delta)) / a_t;
            if t_j >= t_cur - eps_t && t_j < t_exit {
                t_exit = t_j;
                next = j as usize;
            }
        }
        if next == usize::MAX || t_exit >= t_stop {
            break;
        }
        t_cur = t_exit.max(t_cur);
        current = next;
    }
    Ok(visited)
}

/// Traces one ray to a final color. Returns the number of cells visited
/// alongside the color. `sites` must be `scene.sites()`.
pub fn trace_ray(
    scene: &Scene,
    sites: &[PowerSite],
    dual: &AdjacencyGraph,
    ray: &Ray,
    near: f64,
    far: f64,
) -> Result<(DVec3, u64), FoamError> {
    let mut acc = RayAccumulator::new();
    let visited = walk_ray(scene, sites, dual, ray, near, far, &mut |sh| {
        if acc.saturated() {
            return false;
        }
        acc.add(sh.density, sh.occupied.length(), sh.color);
        true
    })?;
    Ok((acc.finish(scene.background).0, visited))
}

pub fn trace_image(
    scene: &Scene,
    dual: &AdjacencyGraph,
    cam: &Camera,
) -> Result<(Image, TraversalStats), FoamError> {
    let sites = scene.sites();
    let rows: Result<Vec<(Vec<DVec3>, u64)>, FoamError> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(cam.width as usize);
            let mut visited = 0u64;
            for x in 0..cam.width {
                let px = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let wrap = |e: FoamError| FoamError::AtPixel { x, y, source: Box::new(e) };
                let ray = cam.ray_for_pixel(px).map_err(&wrap)?;
                let (color, v) =
                    trace_ray(scene, &sites, dual, &ray, cam.near, cam.far).map_err(&wrap)?;
                row.push(color);
                visited += v;
            }
            Ok((row, visited))
        })
        .collect();
    let rows = rows?;
    let mut img = Image::new(cam.width, cam.height);
    let mut stats = TraversalStats { rays: (cam.width as u64) * (cam.height as u64), cells_visited: 0 };
    for (y, (row, visited)) in rows.into_iter().enumerate() {
        stats.cells_visited += visited;
        for (x, c) in row.into_iter().enumerate() {
            img.set_pixel(x as u32, y as u32, c);
        }
    }
    Ok((img, stats))
}

pub const STEINER_ITERATIONS: usize = 6;
pub const STEINER_LOWER: f64 = 2.0;
pub const STEINER_UPPER: f64 = 6.0;

/// Acceptance test for one Steiner candidate against the current sites:
/// outside every sphere, and its gap radius within [2, 6] times the radius
/// of the power-nearest site (bounds inclusive).
pub fn steiner_candidate(sites: &[PowerSite], p_hat: DVec3) -> Option<PowerSite> {
    if sites.is_empty() {
        return None;
    }
    for s in sites {
        if (p_hat - s.position).length_squared() - s.radius * s.radius <= 0.0 {
            return None;
        }
    }
    let near = &sites[locate_cell(p_hat, sites).ok()?];
    let d = (p_hat - near.position).length();
    let r_hat = d - near.radius;
    if STEINER_LOWER * near.radius <= r_hat && r_hat <= STEINER_UPPER * near.radius {
        Some(PowerSite::new(p_hat, r_hat))
    } else {
        None
    }
}

/// Fills empty space with zero-density cells. Six iterations; each samples
/// one candidate per existing cell from a normal distribution fit to the
/// current cell positions (per-axis), testing candidates sequentially so
/// earlier acceptances of the same iteration reject later overlaps.
pub fn insert_steiner(scene: &Scene, seed: u64) -> Scene {
    let mut out = scene.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..STEINER_ITERATIONS {
        let m = out.cells.len();
        let (mean, std) = position_moments(&out.cells);
        let dists: [Normal<f64>; 3] =
            std::array::from_fn(|a| Normal::new(mean[a], std[a]).unwrap_or(Normal::new(mean[a], 0.0).unwrap()));
        let mut sites: Vec<PowerSite> = out.cells.iter().map(|c| c.site).collect();
        for _ in 0..m {
            let p_hat = DVec3::new(
                dists[0].sample(&mut rng),
                dists[1].sample(&mut rng),
                dists[2].sample(&mut rng),
            );
            if let Some(site) = steiner_candidate(&sites, p_hat) {
                sites.push(site);
                out.cells.push(Cell {
                    site,
                    dipole: Dipole { normal: DVec3::Z, density: 0.0 },
                    details: Vec::new(),
                    is_steiner: true,
                });
            }
        }
    }
    out.refresh_world_box();
    out
}

/// Mean and population standard deviation of cell positions, per axis.
fn position_moments(cells: &[Cell]) -> (DVec3, DVec3) {
    let n = cells.len() as f64;
    let mut mean = DVec3::ZERO;
    for c in cells {
        mean += c.site.position;
    }
    mean /= n;
    let mut var = DVec3::ZERO;
    for c in cells {
        let d = c.site.position - mean;
        var += d * d;
    }
    var /= n;
    (mean, DVec3::new(var.x.sqrt(), var.y.sqrt(), var.z.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::power_dual;
    use crate::scene::{DetailSite, SvBasis, SV_AXES};
    use rand::Rng;

    fn one_cell_scene(density: f64, color: DVec3) -> Scene {
        let cell = Cell {
            site: PowerSite::new(DVec3::ZERO, 1.0),
            dipole: Dipole { normal: DVec3::Z, density },
            details: vec![DetailSite { uv: DVec2::ZERO, displacement: 0.0, values: [color; SV_AXES] }],
            is_steiner: false,
        };
        Scene::new(vec![cell], 8.0, DVec3::ZERO, SvBasis::standard()).unwrap()
    }

    #[test]
    fn single_cell_closed_form() {
        // Ray along -n through the center: occupied length is half the
        // chord, color follows the single-segment compositing formula.
        let c = DVec3::new(0.7, 0.4, 0.1);
        let scene = one_cell_scene(2.0, c);
        let sites = scene.sites();
        let dual = power_dual(&sites, &scene.world_box);
        let ray = Ray::new(DVec3::new(0.0, 0.0, 3.0), DVec3::NEG_Z);
        let (color, visited) = trace_ray(&scene, &sites, &dual, &ray, 1e-3, 1e3).unwrap();
        let expect = (1.0 - (-2.0_f64).exp()) * c;
        assert!((color - expect).length() < 1e-12, "{color} vs {expect}");
        assert!(visited >= 1);
    }

    #[test]
    fn ray_outside_spheres_sees_background() {
        let mut scene = one_cell_scene(5.0, DVec3::ONE);
        scene.background = DVec3::new(0.1, 0.2, 0.3);
        let sites = scene.sites();
        let dual = power_dual(&sites, &scene.world_box);
        let ray = Ray::new(DVec3::new(-5.0, 2.5, 0.0), DVec3::X);
        let (color, _) = trace_ray(&scene, &sites, &dual, &ray, 1e-3, 1e3).unwrap();
        assert_eq!(color, scene.background);
    }

    #[test]
    fn budget_formula() {
        assert_eq!(step_budget(1000), 1100);
        assert_eq!(step_budget(1), 1010);
    }

    #[test]
    fn segments_are_ordered_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let cells: Vec<Cell> = (0..30)
                .map(|_| {
                    let p = DVec3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    );
                    let n = DVec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                    .normalize();
                    Cell {
                        site: PowerSite::new(p, rng.gen_range(0.2..0.8)),
                        dipole: Dipole { normal: n, density: rng.gen_range(0.5..3.0) },
                        details: vec![DetailSite {
                            uv: DVec2::ZERO,
                            displacement: rng.gen_range(-0.1..0.1),
                            values: [DVec3::splat(0.5); SV_AXES],
                        }],
                        is_steiner: false,
                    }
                })
                .collect();
            let scene = Scene::new(cells, 8.0, DVec3::ZERO, SvBasis::standard()).unwrap();
            let sites = scene.sites();
            let dual = power_dual(&sites, &scene.world_box);
            let eps = 1e-9 * scene.world_box.diagonal();
            for _ in 0..200 {
                let ray = Ray::new(
                    DVec3::new(
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(-4.0..4.0),
                    ),
                    DVec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                    .normalize(),
                );
                let mut segs: Vec<Shaded> = Vec::new();
                walk_ray(&scene, &sites, &dual, &ray, 1e-3, 1e3, &mut |sh| {
                    segs.push(*sh);
                    true
                })
                .unwrap();
                for w in segs.windows(2) {
                    assert!(w[1].occupied.t_in > w[0].occupied.t_in - eps);
                    assert!(w[1].occupied.t_in >= w[0].occupied.t_out - eps, "overlapping segments");
                }
            }
        }
    }

    #[test]
    fn steiner_candidate_window_is_inclusive() {
        let sites = [PowerSite::new(DVec3::ZERO, 1.0)];
        let at = |d: f64| steiner_candidate(&sites, DVec3::new(d, 0.0, 0.0));
        assert!(at(0.5).is_none(), "inside the sphere");
        assert!(at(2.5).is_none(), "gap 1.5 below 2x");
        let lo = at(3.0).expect("gap exactly 2x accepted");
        assert_eq!(lo.radius, 2.0);
        assert!(at(5.0).is_some());
        let hi = at(7.0).expect("gap exactly 6x accepted");
        assert_eq!(hi.radius, 6.0);
        assert!(at(7.5).is_none(), "gap beyond 6x");
    }

    #[test]
    fn steiner_constants() {
        assert_eq!(STEINER_ITERATIONS, 6);
        assert_eq!(STEINER_LOWER, 2.0);
        assert_eq!(STEINER_UPPER, 6.0);
    }

    #[test]
    fn steiner_single_cell_scene_gets_no_insertions() {
        // One cell: zero positional spread, every candidate lands at the
        // center and is rejected as inside.
        let scene = one_cell_scene(1.0, DVec3::ONE);
        let out = insert_steiner(&scene, 7);
        assert_eq!(out.cells.len(), 1);
    }

    #[test]
    fn steiner_is_deterministic_and_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let cells: Vec<Cell> = (0..40)
            .map(|_| {
                let cluster = if rng.gen_bool(0.5) { -3.0 } else { 3.0 };
                Cell {
                    site: PowerSite::new(
                        DVec3::new(
                            cluster + rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        ),
                        rng.gen_range(0.1..0.3),
                    ),
                    dipole: Dipole { normal: DVec3::Z, density: 1.0 },
                    details: Vec::new(),
                    is_steiner: false,
                }
            })
            .collect();
        let scene = Scene::new(cells, 8.0, DVec3::ZERO, SvBasis::standard()).unwrap();
        let a = insert_steiner(&scene, 99);
        let b = insert_steiner(&scene, 99);
        assert_eq!(a, b);
        assert!(a.cells.len() > scene.cells.len(), "two separated clusters leave gaps");
        // Replay: every insertion was valid against the state before it.
        let mut sites: Vec<PowerSite> = scene.sites();
        for cell in &a.cells[scene.cells.len()..] {
            assert!(cell.is_steiner);
            assert_eq!(cell.dipole.density, 0.0);
            assert!(cell.details.is_empty());
            let accepted = steiner_candidate(&sites, cell.site.position)
                .expect("insertion must have been acceptable at its time");
            assert_eq!(accepted.radius, cell.site.radius);
            sites.push(cell.site);
        }
        let c = insert_steiner(&scene, 100);
        assert_ne!(a, c, "different seeds should place different Steiner cells");
    }
}
