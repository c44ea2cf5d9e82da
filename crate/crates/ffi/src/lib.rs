//! C ABI for scene loading, generation, rendering, Steiner insertion and
//! validation.
//!
//! Scenes travel as opaque `PfScene` handles owned by this library; every
//! fallible call returns a `PfStatus` and leaves a message for
//! `pf_last_error` on failure. Strings are NUL-terminated UTF-8. The header
//! `include/powerfoam.h` is generated from this file at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use powerfoam::error::FoamError;
use powerfoam::geometry::{cech_complex, power_dual};
use powerfoam::io::{load_camera, load_scene, save_scene};
use powerfoam::presets::generate;
use powerfoam::rasterizer::rasterize;
use powerfoam::raytracer::{insert_steiner, trace_image};
use powerfoam::render::write_ppm;
use powerfoam::validate::run_invariant_suite;
use powerfoam::Scene;

/// An owned scene. Create through `pf_scene_load` or `pf_scene_generate`,
/// release with `pf_scene_free`.
pub struct PfScene {
    inner: Scene,
}

/// Result of every fallible call. Matches the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8, unreadable or malformed input.
    InvalidArgument = 1,
    RenderFailure = 2,
    NonFiniteLoss = 3,
    InvariantViolation = 4,
}

/// Renderer selection for `pf_render_to_file`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfRenderMode {
    Raytrace = 0,
    Raster = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: PfStatus, message: &str) -> PfStatus {
    let sanitized: String = message.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
    status
}

fn status_of(e: &FoamError) -> PfStatus {
    match e {
        FoamError::NonFiniteLoss { .. } => PfStatus::NonFiniteLoss,
        FoamError::TraversalDiverged { .. } | FoamError::InvalidPixel { .. } => {
            PfStatus::RenderFailure
        }
        FoamError::AtPixel { source, .. } => status_of(source),
        _ => PfStatus::InvalidArgument,
    }
}

fn fail_foam(e: &FoamError) -> PfStatus {
    fail(status_of(e), &e.to_string())
}

/// Runs `f`, converting a panic into an error status instead of unwinding
/// across the C boundary.
fn guarded(f: impl FnOnce() -> PfStatus) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(PfStatus::InvalidArgument, "internal panic"),
    }
}

/// NULL-checks and decodes a path argument.
fn path_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a Path, PfStatus> {
    if ptr.is_null() {
        return Err(fail(PfStatus::InvalidArgument, &format!("{name} is null")));
    }
    let s = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(PfStatus::InvalidArgument, &format!("{name} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

fn scene_arg<'a>(ptr: *const PfScene, name: &str) -> Result<&'a Scene, PfStatus> {
    if ptr.is_null() {
        return Err(fail(PfStatus::InvalidArgument, &format!("{name} is null")));
    }
    Ok(unsafe { &(*ptr).inner })
}

fn emit(out: *mut *mut PfScene, scene: Scene) -> PfStatus {
    if out.is_null() {
        return fail(PfStatus::InvalidArgument, "out is null");
    }
    unsafe { *out = Box::into_raw(Box::new(PfScene { inner: scene })) };
    PfStatus::Ok
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a scene file written by this library or the CLI.
#[no_mangle]
pub extern "C" fn pf_scene_load(path: *const c_char, out: *mut *mut PfScene) -> PfStatus {
    guarded(|| {
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_scene(path) {
            Ok(scene) => emit(out, scene),
            Err(e) => fail_foam(&e),
        }
    })
}

/// Writes a scene; the file re-loads bit-exactly.
#[no_mangle]
pub extern "C" fn pf_scene_save(scene: *const PfScene, path: *const c_char) -> PfStatus {
    guarded(|| {
        let (scene, path) = match (scene_arg(scene, "scene"), path_arg(path, "path")) {
            (Ok(s), Ok(p)) => (s, p),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match save_scene(scene, path) {
            Ok(()) => PfStatus::Ok,
            Err(e) => fail_foam(&e),
        }
    })
}

/// Builds a synthetic scene; `preset` is "boxes", "shell" or "sparse".
#[no_mangle]
pub extern "C" fn pf_scene_generate(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut PfScene,
) -> PfStatus {
    guarded(|| {
        let preset = match path_arg(preset, "preset") {
            Ok(p) => p.to_str().unwrap(),
            Err(s) => return s,
        };
        match preset.parse() {
            Ok(p) => emit(out, generate(p, seed)),
            Err(e) => fail_foam(&e),
        }
    })
}

#[no_mangle]
pub extern "C" fn pf_scene_free(scene: *mut PfScene) {
    if !scene.is_null() {
        drop(unsafe { Box::from_raw(scene) });
    }
}

/// Number of cells, Steiner cells included. Zero for a null handle.
#[no_mangle]
pub extern "C" fn pf_scene_cell_count(scene: *const PfScene) -> usize {
    if scene.is_null() {
        0
    } else {
        unsafe { &*scene }.inner.cells.len()
    }
}

/// Renders through the camera file and writes a binary PPM.
#[no_mangle]
pub extern "C" fn pf_render_to_file(
    scene: *const PfScene,
    camera_path: *const c_char,
    mode: PfRenderMode,
    out_path: *const c_char,
) -> PfStatus {
    guarded(|| {
        let (scene, camera_path, out_path) = match (
            scene_arg(scene, "scene"),
            path_arg(camera_path, "camera_path"),
            path_arg(out_path, "out_path"),
        ) {
            (Ok(s), Ok(c), Ok(o)) => (s, c, o),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let cam = match load_camera(camera_path) {
            Ok(c) => c,
            Err(e) => return fail_foam(&e),
        };
        let sites = scene.sites();
        let image = match mode {
            PfRenderMode::Raytrace => {
                let dual = power_dual(&sites, &scene.world_box);
                match trace_image(scene, &dual, &cam) {
                    Ok((img, _)) => img,
                    Err(e) => return fail_foam(&e),
                }
            }
            PfRenderMode::Raster => {
                let cech = cech_complex(&sites);
                match rasterize(scene, &cech, &cam) {
                    Ok(img) => img,
                    Err(e) => return fail_foam(&e),
                }
            }
        };
        match write_ppm(&image, out_path) {
            Ok(()) => PfStatus::Ok,
            Err(e) => fail_foam(&e),
        }
    })
}

/// Fills empty space with zero-density Steiner cells; the input is left
/// untouched and a new handle is returned.
#[no_mangle]
pub extern "C" fn pf_scene_steiner(
    scene: *const PfScene,
    seed: u64,
    out: *mut *mut PfScene,
) -> PfStatus {
    guarded(|| match scene_arg(scene, "scene") {
        Ok(s) => emit(out, insert_steiner(s, seed)),
        Err(s) => s,
    })
}

/// Runs the scene invariant suite. On violation the first failing check is
/// named in `pf_last_error`.
#[no_mangle]
pub extern "C" fn pf_scene_validate(scene: *const PfScene, seed: u64) -> PfStatus {
    guarded(|| {
        let scene = match scene_arg(scene, "scene") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let rows = run_invariant_suite(scene, seed);
        match rows.iter().find(|r| !r.pass) {
            None => PfStatus::Ok,
            Some(first) => fail(
                PfStatus::InvariantViolation,
                &format!("invariant '{}' failed: {}", first.name, first.detail),
            ),
        }
    })
}
