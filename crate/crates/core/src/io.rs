//! Scene and camera files.
//!
//! JSON throughout: human-inspectable, and serde's shortest round-trip
//! float encoding makes load(save(s)) bit-exact. Images use binary PPM
//! (see `render`).

use std::path::Path;

use glam::{DMat3, DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraModel};
use crate::error::FoamError;
use crate::geometry::PowerSite;
use crate::scene::{Cell, DetailSite, Dipole, Scene, SvBasis, SV_AXES};

pub const FORMAT_VERSION: u32 = 1;

/// Minimum pairwise site distance, as a fraction of the world box diagonal.
/// Closer pairs are separated by a deterministic jitter on load.
pub const MIN_SITE_SEPARATION: f64 = 1e-7;

#[derive(Serialize, Deserialize)]
struct SceneFile {
    format_version: u32,
    temperature: f64,
    background: [f64; 3],
    sv_gamma: f64,
    axes: [[f64; 3]; SV_AXES],
    cells: Vec<CellFile>,
}

#[derive(Serialize, Deserialize)]
struct CellFile {
    position: [f64; 3],
    radius: f64,
    normal: [f64; 3],
    density: f64,
    is_steiner: bool,
    details: Vec<DetailFile>,
}

#[derive(Serialize, Deserialize)]
struct DetailFile {
    uv: [f64; 2],
    displacement: f64,
    values: [[f64; 3]; SV_AXES],
}

fn v3(a: [f64; 3]) -> DVec3 {
    DVec3::from_array(a)
}

pub fn scene_to_json(scene: &Scene) -> String {
    let file = SceneFile {
        format_version: FORMAT_VERSION,
        temperature: scene.temperature,
        background: scene.background.to_array(),
        sv_gamma: scene.sv.gamma,
        axes: scene.sv.axes.map(|a| a.to_array()),
        cells: scene
            .cells
            .iter()
            .map(|c| CellFile {
                position: c.site.position.to_array(),
                radius: c.site.radius,
                normal: c.dipole.normal.to_array(),
                density: c.dipole.density,
                is_steiner: c.is_steiner,
                details: c
                    .details
                    .iter()
                    .map(|d| DetailFile {
                        uv: d.uv.to_array(),
                        displacement: d.displacement,
                        values: d.values.map(|v| v.to_array()),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("scene serialization cannot fail");
    s.push('\n');
    s
}

/// Keeps already-unit vectors bit-identical (round-trip guarantee), fixes
/// sloppy hand-written input, rejects degenerate input.
fn renormalize(v: DVec3, what: &str, origin: &str) -> Result<DVec3, FoamError> {
    let len = v.length();
    if !len.is_finite() || len < 1e-12 {
        return Err(FoamError::parse(origin, format!("{what} has zero or non-finite length")));
    }
    if (len - 1.0).abs() <= 1e-12 {
        Ok(v)
    } else {
        Ok(v / len)
    }
}

pub fn scene_from_json(text: &str, origin: &str) -> Result<Scene, FoamError> {
    let file: SceneFile =
        serde_json::from_str(text).map_err(|e| FoamError::parse(origin, e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(FoamError::parse(
            origin,
            format!("unsupported format_version {} (expected {FORMAT_VERSION})", file.format_version),
        ));
    }
    if !(file.temperature.is_finite() && file.temperature > 0.0) {
        return Err(FoamError::parse(origin, "temperature must be finite and > 0"));
    }
    if !(file.sv_gamma.is_finite() && file.sv_gamma > 0.0) {
        return Err(FoamError::parse(origin, "sv_gamma must be finite and > 0"));
    }
    let background = v3(file.background);
    if !background.is_finite() || background.min_element() < 0.0 {
        return Err(FoamError::parse(origin, "background must be finite and non-negative"));
    }
    let mut axes = [DVec3::ZERO; SV_AXES];
    for (k, a) in file.axes.iter().enumerate() {
        axes[k] = renormalize(v3(*a), &format!("axis {k}"), origin)?;
    }
    let sv = SvBasis { axes, gamma: file.sv_gamma };

    let mut cells = Vec::with_capacity(file.cells.len());
    for (i, c) in file.cells.iter().enumerate() {
        let position = v3(c.position);
        if !position.is_finite() {
            return Err(FoamError::parse(origin, format!("cell {i}: non-finite position")));
        }
        if !c.radius.is_finite() || c.radius < 0.0 {
            return Err(FoamError::parse(origin, format!("cell {i}: radius must be finite and >= 0")));
        }
        if !c.density.is_finite() || c.density < 0.0 {
            return Err(FoamError::parse(origin, format!("cell {i}: density must be finite and >= 0")));
        }
        let normal = renormalize(v3(c.normal), &format!("cell {i} normal"), origin)?;
        let mut details = Vec::with_capacity(c.details.len());
        for (j, d) in c.details.iter().enumerate() {
            let mut uv = DVec2::from_array(d.uv);
            if !uv.is_finite() || !d.displacement.is_finite() {
                return Err(FoamError::parse(origin, format!("cell {i} detail {j}: non-finite fields")));
            }
            let mut values = [DVec3::ZERO; SV_AXES];
            for (k, val) in d.values.iter().enumerate() {
                let v = v3(*val);
                if !v.is_finite() || v.min_element() < 0.0 {
                    return Err(FoamError::parse(
                        origin,
                        format!("cell {i} detail {j}: value {k} must be finite and non-negative"),
                    ));
                }
                values[k] = v;
            }
            // Chart coordinates and displacement live inside the sphere.
            let uv_len = uv.length();
            if uv_len > c.radius {
                uv *= c.radius / uv_len;
            }
            let displacement = d.displacement.clamp(-c.radius, c.radius);
            details.push(DetailSite { uv, displacement, values });
        }
        cells.push(Cell {
            site: PowerSite::new(position, c.radius),
            dipole: Dipole { normal, density: c.density },
            details,
            is_steiner: c.is_steiner,
        });
    }

    let mut scene = Scene::new(cells, file.temperature, background, sv)?;
    separate_coincident_sites(&mut scene);
    Ok(scene)
}

/// Enforces the minimum pairwise site distance with a deterministic jitter.
fn separate_coincident_sites(scene: &mut Scene) {
    let eps = MIN_SITE_SEPARATION * scene.world_box.diagonal();
    let n = scene.cells.len();
    let mut moved = false;
    for i in 1..n {
        let mut attempt = 0u64;
        loop {
            let p = scene.cells[i].site.position;
            let clash = (0..i).any(|j| (scene.cells[j].site.position - p).length() < eps);
            if !clash {
                break;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(
                0x6a71_7474u64 ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ attempt,
            );
            let dir = loop {
                let v = DVec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.length_squared() > 1e-6 && v.length_squared() <= 1.0 {
                    break v.normalize();
                }
            };
            scene.cells[i].site.position += dir * eps * 2.0 * (attempt + 1) as f64;
            moved = true;
            attempt += 1;
        }
    }
    if moved {
        scene.refresh_world_box();
    }
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), FoamError> {
    std::fs::write(path, scene_to_json(scene)).map_err(|e| FoamError::io(path, e))
}

pub fn load_scene(path: &Path) -> Result<Scene, FoamError> {
    let text = std::fs::read_to_string(path).map_err(|e| FoamError::io(path, e))?;
    scene_from_json(&text, &path.display().to_string())
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    model: String,
    intrinsics: Intrinsics,
    world_from_camera: [[f64; 4]; 4],
    resolution: [u32; 2],
    near: f64,
    far: f64,
}

#[derive(Serialize, Deserialize, Default)]
struct Intrinsics {
    #[serde(skip_serializing_if = "Option::is_none")]
    fx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<f64>,
    cx: f64,
    cy: f64,
}

pub fn camera_to_json(cam: &Camera) -> String {
    let (model, intrinsics) = match cam.model {
        CameraModel::Pinhole { fx, fy, cx, cy } => (
            "pinhole",
            Intrinsics { fx: Some(fx), fy: Some(fy), f: None, cx, cy },
        ),
        CameraModel::Fisheye { f, cx, cy } => {
            ("fisheye", Intrinsics { fx: None, fy: None, f: Some(f), cx, cy })
        }
    };
    let r = cam.rotation;
    let t = cam.translation;
    let world_from_camera = [
        [r.x_axis.x, r.y_axis.x, r.z_axis.x, t.x],
        [r.x_axis.y, r.y_axis.y, r.z_axis.y, t.y],
        [r.x_axis.z, r.y_axis.z, r.z_axis.z, t.z],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let file = CameraFile {
        model: model.into(),
        intrinsics,
        world_from_camera,
        resolution: [cam.width, cam.height],
        near: cam.near,
        far: cam.far,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("camera serialization cannot fail");
    s.push('\n');
    s
}

pub fn camera_from_json(text: &str, origin: &str) -> Result<Camera, FoamError> {
    let file: CameraFile =
        serde_json::from_str(text).map_err(|e| FoamError::parse(origin, e.to_string()))?;
    let need = |o: Option<f64>, name: &str| {
        o.ok_or_else(|| FoamError::parse(origin, format!("missing intrinsic '{name}'")))
    };
    let model = match file.model.as_str() {
        "pinhole" => CameraModel::Pinhole {
            fx: need(file.intrinsics.fx, "fx")?,
            fy: need(file.intrinsics.fy, "fy")?,
            cx: file.intrinsics.cx,
            cy: file.intrinsics.cy,
        },
        "fisheye" => CameraModel::Fisheye {
            f: need(file.intrinsics.f, "f")?,
            cx: file.intrinsics.cx,
            cy: file.intrinsics.cy,
        },
        other => {
            return Err(FoamError::parse(origin, format!("unknown camera model '{other}'")));
        }
    };
    let m = file.world_from_camera;
    for (k, expect) in m[3].iter().zip([0.0, 0.0, 0.0, 1.0]) {
        if (k - expect).abs() > 1e-12 {
            return Err(FoamError::parse(origin, "bottom matrix row must be [0, 0, 0, 1]"));
        }
    }
    let rotation = DMat3::from_cols(
        DVec3::new(m[0][0], m[1][0], m[2][0]),
        DVec3::new(m[0][1], m[1][1], m[2][1]),
        DVec3::new(m[0][2], m[1][2], m[2][2]),
    );
    let translation = DVec3::new(m[0][3], m[1][3], m[2][3]);
    let cam = Camera {
        model,
        rotation,
        translation,
        width: file.resolution[0],
        height: file.resolution[1],
        near: file.near,
        far: file.far,
    };
    cam.validate().map_err(|e| FoamError::parse(origin, e.to_string()))?;
    Ok(cam)
}

pub fn save_camera(cam: &Camera, path: &Path) -> Result<(), FoamError> {
    std::fs::write(path, camera_to_json(cam)).map_err(|e| FoamError::io(path, e))
}

pub fn load_camera(path: &Path) -> Result<Camera, FoamError> {
    let text = std::fs::read_to_string(path).map_err(|e| FoamError::io(path, e))?;
    camera_from_json(&text, &path.display().to_string())
}

/// Generic JSON helpers for auxiliary files (training configs, logs).
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FoamError> {
    let text = std::fs::read_to_string(path).map_err(|e| FoamError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FoamError::parse(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FoamError> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| FoamError::parse(path, e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| FoamError::io(path, e))
}
