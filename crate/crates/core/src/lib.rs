//! Bounded power diagrams as a renderable scene representation.
//!
//! A scene is a set of weighted sites (spheres). The power diagram of the
//! sites partitions space into convex cells; each cell carries an oriented
//! plane (a dipole) that splits it into an occupied and an empty half, plus
//! a small set of detail sites that displace that plane and store
//! direction-dependent radiance. Two renderers are provided, a ray tracer
//! that walks the diagram cell by cell and a tile rasterizer that splats
//! cells in power order, and they produce matching images by construction:
//! both feed the same per-cell clipping and shading path into the same
//! front-to-back accumulator.

pub mod error;
pub mod geometry;
pub mod scene;
pub mod camera;
pub mod render;
pub mod raytracer;
pub mod rasterizer;
pub mod optim;
pub mod io;
pub mod presets;
pub mod validate;

pub use error::FoamError;
pub use geometry::{
    alpha_complex, cech_complex, cell_interval, locate_cell, power_dual, radical_plane,
    AdjacencyGraph, Aabb, PowerSite, RadicalPlane, Ray, RayInterval,
};
pub use scene::{Cell, DetailSite, Dipole, Scene, SvBasis};
pub use camera::{Camera, CameraModel};
pub use render::Image;
pub use validate::{mean_intersections, pop_free_sample, run_invariant_suite, CheckResult};
