//! Tile-based depth-sorted rasterizer.
//!
//! Cells are sorted once per frame by power distance from the camera
//! center (the ordering the pop-free theorem licenses; Euclidean depth
//! would not be safe for mixed radii) and binned into screen tiles via
//! conservative projected bounds. Each pixel then walks its tile's sorted
//! list through the same shade path and accumulator as the ray tracer.

use glam::{DVec2, DVec3};
use rayon::prelude::*;

use crate::camera::{Camera, CameraModel};
use crate::error::FoamError;
use crate::geometry::{power_distance, AdjacencyGraph, PowerSite};
use crate::render::{shade_cell, Image, RayAccumulator};
use crate::scene::Scene;

pub const DEFAULT_TILE_SIZE: u32 = 16;

/// Ascending order of this key is a valid painter's ordering for rays from
/// `camera_origin`.
pub fn sort_key(camera_origin: DVec3, s: &PowerSite) -> f64 {
    power_distance(camera_origin, s)
}

#[derive(Debug, Clone)]
pub struct TileGrid {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub(crate) lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn tile_list(&self, tx: u32, ty: u32) -> &[u32] {
        &self.lists[(ty * self.tiles_x + tx) as usize]
    }

    pub fn list_for_pixel(&self, x: u32, y: u32) -> &[u32] {
        self.tile_list(x / self.tile_size, y / self.tile_size)
    }

    pub fn total_entries(&self) -> usize {
        self.lists.iter().map(|l| l.len()).sum()
    }
}

/// Cell indices sorted by key ascending, ties by index.
fn sorted_order(cam: &Camera, sites: &[PowerSite]) -> Vec<u32> {
    let q = cam.center();
    let mut order: Vec<u32> = (0..sites.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        sort_key(q, &sites[a as usize])
            .total_cmp(&sort_key(q, &sites[b as usize]))
            .then(a.cmp(&b))
    });
    order
}

pub fn cull_to_tiles(cam: &Camera, sites: &[PowerSite]) -> TileGrid {
    cull_to_tiles_sized(cam, sites, DEFAULT_TILE_SIZE)
}

pub fn cull_to_tiles_sized(cam: &Camera, sites: &[PowerSite], tile_size: u32) -> TileGrid {
    let tiles_x = cam.width.div_ceil(tile_size);
    let tiles_y = cam.height.div_ceil(tile_size);
    let mut grid = TileGrid {
        tile_size,
        tiles_x,
        tiles_y,
        lists: vec![Vec::new(); (tiles_x * tiles_y) as usize],
    };
    // Pushing in global sort order keeps every tile list sorted.
    for idx in sorted_order(cam, sites) {
        match tile_span(cam, &sites[idx as usize], &grid) {
            Span::None => {}
            Span::All => {
                for list in grid.lists.iter_mut() {
                    list.push(idx);
                }
            }
            Span::Rect { tx0, tx1, ty0, ty1 } => {
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        grid.lists[(ty * tiles_x + tx) as usize].push(idx);
                    }
                }
            }
            Span::Tiles(ref mask) => {
                for (i, hit) in mask.iter().enumerate() {
                    if *hit {
                        grid.lists[i].push(idx);
                    }
                }
            }
        }
    }
    grid
}

enum Span {
    None,
    All,
    Rect { tx0: u32, tx1: u32, ty0: u32, ty1: u32 },
    Tiles(Vec<bool>),
}

fn tile_span(cam: &Camera, site: &PowerSite, grid: &TileGrid) -> Span {
    let c = cam.to_camera(site.position);
    let dist = c.length();
    let r = site.radius;
    if r <= 0.0 {
        return Span::None;
    }
    if dist <= r {
        return Span::All;
    }
    if dist + r <= cam.near || dist - r >= cam.far {
        return Span::None;
    }
    let sinb = r / dist;
    let a = c / dist;
    match cam.model {
        CameraModel::Pinhole { fx, fy, cx, cy } => {
            if a.z < -sinb {
                return Span::None;
            }
            if a.z <= sinb {
                // Cone reaches the image plane at infinity; give up precision.
                return Span::All;
            }
            // Extremes of the cone's perspective projection, per axis.
            let denom = a.z * a.z - sinb * sinb;
            let ext = |ax: f64| -> (f64, f64) {
                let root = sinb * (ax * ax + a.z * a.z - sinb * sinb).sqrt();
                ((ax * a.z - root) / denom, (ax * a.z + root) / denom)
            };
            let (u0, u1) = ext(a.x);
            let (v0, v1) = ext(a.y);
            let px0 = fx * u0 + cx - 1.0;
            let px1 = fx * u1 + cx + 1.0;
            let py0 = fy * v0 + cy - 1.0;
            let py1 = fy * v1 + cy + 1.0;
            if px1 < 0.0 || py1 < 0.0 || px0 > cam.width as f64 || py0 > cam.height as f64 {
                return Span::None;
            }
            let ts = grid.tile_size as f64;
            let tx0 = ((px0 / ts).floor().max(0.0)) as u32;
            let ty0 = ((py0 / ts).floor().max(0.0)) as u32;
            let tx1 = ((px1 / ts).floor() as i64).clamp(0, grid.tiles_x as i64 - 1) as u32;
            let ty1 = ((py1 / ts).floor() as i64).clamp(0, grid.tiles_y as i64 - 1) as u32;
            if tx0 > tx1 || ty0 > ty1 {
                return Span::None;
            }
            Span::Rect { tx0, tx1, ty0, ty1 }
        }
        CameraModel::Fisheye { f, cx, cy } => {
            // Equidistant mapping is (1/f)-Lipschitz from pixels to angles,
            // so a tile is covered only if the cone comes within the tile's
            // angular radius of the tile center direction.
            let beta = sinb.asin();
            let mut mask = vec![false; grid.lists.len()];
            for ty in 0..grid.tiles_y {
                for tx in 0..grid.tiles_x {
                    let x0 = (tx * grid.tile_size) as f64;
                    let y0 = (ty * grid.tile_size) as f64;
                    let x1 = (((tx + 1) * grid.tile_size).min(cam.width)) as f64;
                    let y1 = (((ty + 1) * grid.tile_size).min(cam.height)) as f64;
                    let center = DVec2::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
                    let corner = DVec2::new(x1, y1);
                    let tile_ang = (corner - center).length() / f;
                    let dx = (center.x - cx) / f;
                    let dy = (center.y - cy) / f;
                    let theta = (dx * dx + dy * dy).sqrt().min(std::f64::consts::PI);
                    let dir = if theta < 1e-12 {
                        DVec3::Z
                    } else {
                        let s = theta.sin() / (dx * dx + dy * dy).sqrt();
                        DVec3::new(s * dx, s * dy, theta.cos())
                    };
                    let ang = dir.dot(a).clamp(-1.0, 1.0).acos();
                    if ang <= beta + tile_ang + 1e-12 {
                        mask[(ty * grid.tiles_x + tx) as usize] = true;
                    }
                }
            }
            Span::Tiles(mask)
        }
    }
}

pub fn rasterize(scene: &Scene, cech: &AdjacencyGraph, cam: &Camera) -> Result<Image, FoamError> {
    rasterize_with_tile_size(scene, cech, cam, DEFAULT_TILE_SIZE)
}

pub fn rasterize_with_tile_size(
    scene: &Scene,
    cech: &AdjacencyGraph,
    cam: &Camera,
    tile_size: u32,
) -> Result<Image, FoamError> {
    let sites = scene.sites();
    let grid = cull_to_tiles_sized(cam, &sites, tile_size);
    rasterize_with_grid(scene, &sites, cech, cam, &grid)
}

pub(crate) fn rasterize_with_grid(
    scene: &Scene,
    sites: &[PowerSite],
    cech: &AdjacencyGraph,
    cam: &Camera,
    grid: &TileGrid,
) -> Result<Image, FoamError> {
    let rows: Result<Vec<Vec<DVec3>>, FoamError> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(cam.width as usize);
            for x in 0..cam.width {
                let px = DVec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let ray = cam
                    .ray_for_pixel(px)
                    .map_err(|e| FoamError::AtPixel { x, y, source: Box::new(e) })?;
                let mut acc = RayAccumulator::new();
                for &idx in grid.list_for_pixel(x, y) {
                    if acc.saturated() {
                        break;
                    }
                    if let Some(sh) = shade_cell(
                        scene,
                        sites,
                        idx as usize,
                        cech.neighbors(idx as usize),
                        &ray,
                        cam.near,
                        cam.far,
                    ) {
                        acc.add(sh.density, sh.occupied.length(), sh.color);
                    }
                }
                row.push(acc.finish(scene.background).0);
            }
            Ok(row)
        })
        .collect();
    let rows = rows?;
    let mut img = Image::new(cam.width, cam.height);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, c) in row.into_iter().enumerate() {
            img.set_pixel(x as u32, y as u32, c);
        }
    }
    Ok(img)
}
