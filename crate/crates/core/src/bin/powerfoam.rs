//! Command-line front end.
//!
//! Exit codes: 0 success, 1 malformed input, 2 render failure, 3 non-finite
//! loss, 4 invariant violation. Diagnostics go to standard error; command
//! output is deterministic for fixed inputs, seeds and thread counts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use powerfoam::error::FoamError;
use powerfoam::geometry::{alpha_complex, cech_complex, power_dual};
use powerfoam::io::{load_camera, load_scene, read_json, save_scene};
use powerfoam::optim::{fit, FitRecord, FitView, TrainConfig};
use powerfoam::presets::{generate, orbit_cameras, Preset};
use powerfoam::rasterizer::{cull_to_tiles, rasterize};
use powerfoam::raytracer::{insert_steiner, trace_image};
use powerfoam::render::{read_ppm, write_ppm};
use powerfoam::validate::{mean_intersections, run_invariant_suite};

#[derive(Parser)]
#[command(name = "powerfoam", about = "Bounded power diagram renderer and fitter")]
struct Cli {
    /// Worker thread cap; falls back to POWERFOAM_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a scene to a binary PPM image.
    Render {
        scene: PathBuf,
        camera: PathBuf,
        /// raytrace | raster
        #[arg(long, default_value = "raytrace")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic scene (boxes | shell | sparse).
    Gen {
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a scene to posed images: each <name>.ppm in the target directory
    /// needs a camera file <name>.json beside it.
    Fit {
        targets: PathBuf,
        init: PathBuf,
        /// Training configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill empty space with zero-density Steiner cells.
    Steiner {
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the scene invariant suite and print a pass/fail table.
    Validate {
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a scene summary.
    Stats { scene: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<FoamError> for Failure {
    fn from(e: FoamError) -> Self {
        Failure { code: exit_code(&e), message: e.to_string() }
    }
}

fn exit_code(e: &FoamError) -> u8 {
    match e {
        FoamError::NonFiniteLoss { .. } => 3,
        FoamError::TraversalDiverged { .. } | FoamError::InvalidPixel { .. } => 2,
        FoamError::AtPixel { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let threads = cli.threads.or_else(|| {
        std::env::var("POWERFOAM_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        // Ignore the error: the pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Render { scene, camera, mode, out } => cmd_render(&scene, &camera, &mode, &out),
        Cmd::Gen { preset, seed, out } => cmd_gen(&preset, seed, &out),
        Cmd::Fit { targets, init, config, out } => cmd_fit(&targets, &init, config.as_deref(), &out),
        Cmd::Steiner { scene, seed, out } => cmd_steiner(&scene, seed, &out),
        Cmd::Validate { scene, seed } => cmd_validate(&scene, seed),
        Cmd::Stats { scene } => cmd_stats(&scene),
    }
}

fn cmd_render(scene: &Path, camera: &Path, mode: &str, out: &Path) -> Result<(), Failure> {
    let scene = load_scene(scene)?;
    let cam = load_camera(camera)?;
    let sites = scene.sites();
    let img = match mode {
        "raytrace" => {
            let dual = power_dual(&sites, &scene.world_box);
            let (img, stats) = trace_image(&scene, &dual, &cam)?;
            println!(
                "raytrace: {} rays, {} cells visited, {:.3} mean per ray",
                stats.rays,
                stats.cells_visited,
                stats.mean_cells_per_ray()
            );
            img
        }
        "raster" => {
            let cech = cech_complex(&sites);
            let grid = cull_to_tiles(&cam, &sites);
            println!(
                "raster: {}x{} tiles, {} tile entries, {} cells",
                grid.tiles_x,
                grid.tiles_y,
                grid.total_entries(),
                sites.len()
            );
            rasterize(&scene, &cech, &cam)?
        }
        other => {
            return Err(Failure {
                code: 1,
                message: format!(
                    "unknown mode '{other}'\nusage: powerfoam render <SCENE> <CAMERA> --mode <raytrace|raster> --out <FILE>"
                ),
            })
        }
    };
    write_ppm(&img, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_gen(preset: &str, seed: u64, out: &Path) -> Result<(), Failure> {
    let preset: Preset = preset.parse()?;
    let scene = generate(preset, seed);
    save_scene(&scene, out)?;
    println!("wrote {} ({} cells)", out.display(), scene.cells.len());
    Ok(())
}

fn cmd_fit(
    targets: &Path,
    init: &Path,
    config: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let mut images: Vec<PathBuf> = std::fs::read_dir(targets)
        .map_err(|e| FoamError::io(targets, e))?
        .filter_map(|entry| entry.ok().map(|d| d.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(Failure {
            code: 1,
            message: format!("no target images (*.ppm) in {}", targets.display()),
        });
    }
    let mut views = Vec::with_capacity(images.len());
    for img_path in &images {
        let cam_path = img_path.with_extension("json");
        if !cam_path.is_file() {
            return Err(Failure {
                code: 1,
                message: format!(
                    "missing camera file {} for image {}",
                    cam_path.display(),
                    img_path.display()
                ),
            });
        }
        let camera = load_camera(&cam_path)?;
        let target = read_ppm(img_path)?;
        views.push(FitView { camera, target });
    }
    let scene0 = load_scene(init)?;
    let cfg: TrainConfig = match config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };

    let log_path = out.with_extension("log.jsonl");
    let log_file = File::create(&log_path).map_err(|e| FoamError::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let mut last: Option<FitRecord> = None;
    let mut log_err: Option<std::io::Error> = None;
    let fitted = fit(&scene0, &views, &cfg, |rec| {
        if log_err.is_none() {
            let line = serde_json::to_string(rec).expect("records always serialize");
            if let Err(e) = writeln!(log, "{line}") {
                log_err = Some(e);
            }
        }
        if rec.iteration % 100 == 0 || rec.iteration + 1 == cfg.iterations {
            eprintln!(
                "iter {:>5}  loss {:.6}  psnr {:.2}  cells {}",
                rec.iteration, rec.loss.total, rec.psnr, rec.cells
            );
        }
        last = Some(*rec);
    })?;
    if let Some(e) = log_err {
        return Err(FoamError::io(&log_path, e).into());
    }
    log.flush().map_err(|e| FoamError::io(&log_path, e))?;
    save_scene(&fitted, out)?;
    if let Some(rec) = last {
        println!(
            "fit {} iterations, final loss {:.6}, psnr {:.2} dB, {} cells",
            rec.iteration + 1,
            rec.loss.total,
            rec.psnr,
            rec.cells
        );
    }
    println!("wrote {} and {}", out.display(), log_path.display());
    Ok(())
}

fn cmd_steiner(scene: &Path, seed: u64, out: &Path) -> Result<(), Failure> {
    let scene = load_scene(scene)?;
    let cams = orbit_cameras(&scene, 8, 64, 64);
    let before = mean_intersections(&scene, &cams)?;
    let filled = insert_steiner(&scene, seed);
    let after = mean_intersections(&filled, &cams)?;
    save_scene(&filled, out)?;
    println!("inserted {} steiner cells", filled.cells.len() - scene.cells.len());
    println!(
        "mean ray-cell intersections {before:.3} -> {after:.3} over {} cameras at 64x64",
        cams.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_validate(scene: &Path, seed: u64) -> Result<(), Failure> {
    let scene = load_scene(scene)?;
    let rows = run_invariant_suite(&scene, seed);
    for r in &rows {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!("{status}  {:<26}  {}", r.name, r.detail);
    }
    match rows.iter().find(|r| !r.pass) {
        None => Ok(()),
        Some(first) => Err(Failure {
            code: 4,
            message: format!("invariant '{}' failed: {}", first.name, first.detail),
        }),
    }
}

fn cmd_stats(scene: &Path) -> Result<(), Failure> {
    let scene = load_scene(scene)?;
    let sites = scene.sites();
    let steiner = scene.cells.iter().filter(|c| c.is_steiner).count();
    let details = scene.cells.iter().find(|c| !c.is_steiner).map_or(0, |c| c.details.len());
    let mean_r = sites.iter().map(|s| s.radius).sum::<f64>() / sites.len() as f64;
    let cech = cech_complex(&sites);
    let dual = power_dual(&sites, &scene.world_box);
    let alpha = alpha_complex(&sites, &scene.world_box, &dual);
    let bb = &scene.world_box;
    println!("cells: {} ({} steiner), {} detail sites per cell", sites.len(), steiner, details);
    println!("mean radius: {mean_r:.4}");
    println!("temperature: {:.4}", scene.temperature);
    println!("background: {:.4} {:.4} {:.4}", scene.background.x, scene.background.y, scene.background.z);
    println!("sv gamma: {:.4}, {} axes", scene.sv.gamma, scene.sv.axes.len());
    println!(
        "world box: [{:.3} {:.3} {:.3}] .. [{:.3} {:.3} {:.3}]",
        bb.min.x, bb.min.y, bb.min.z, bb.max.x, bb.max.y, bb.max.z
    );
    println!(
        "edges: {} cech, {} power dual, {} alpha",
        cech.edge_count(),
        dual.edge_count(),
        alpha.edge_count()
    );
    Ok(())
}
