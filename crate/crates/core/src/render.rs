//! Front-to-back compositing, the shared per-cell shading path, and image
//! output.
//!
//! Both renderers must feed this module's accumulator with identical
//! segment streams for the same ray; everything that can influence a
//! pixel's value lives here, not in the renderer loops.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use glam::DVec3;

use crate::error::FoamError;
use crate::geometry::{cell_interval_traced, IntervalSource, PowerSite, Ray, RayInterval};
use crate::scene::{dipole_clip, radiance_at, Scene};

/// Rays stop once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;

/// One homogeneous stretch of occupied cell along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSample {
    pub cell: u32,
    pub length: f64,
    pub density: f64,
    pub color: DVec3,
}

/// Front-to-back alpha compositor. The saturation test happens before a
/// segment is added, so the segment that crosses the threshold still
/// contributes and the background is always weighted by the final
/// transmittance.
#[derive(Debug, Clone, Copy)]
pub struct RayAccumulator {
    pub color: DVec3,
    pub transmittance: f64,
}

impl RayAccumulator {
    pub fn new() -> Self {
        RayAccumulator { color: DVec3::ZERO, transmittance: 1.0 }
    }

    pub fn saturated(&self) -> bool {
        self.transmittance < TRANSMITTANCE_EPS
    }

    pub fn add(&mut self, density: f64, length: f64, color: DVec3) {
        let alpha = 1.0 - (-density * length).exp();
        self.color += self.transmittance * alpha * color;
        self.transmittance *= 1.0 - alpha;
    }

    pub fn finish(self, background: DVec3) -> (DVec3, f64) {
        (self.color + self.transmittance * background, self.transmittance)
    }
}

impl Default for RayAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

/// Composites an ordered segment stream over a background.
pub fn integrate_segments(samples: &[SegmentSample], background: DVec3) -> (DVec3, f64) {
    let mut acc = RayAccumulator::new();
    for s in samples {
        if acc.saturated() {
            break;
        }
        acc.add(s.density, s.length, s.color);
    }
    acc.finish(background)
}

/// A cell's contribution to one ray: the occupied sub-interval plus the
/// values the accumulator needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shaded {
    pub cell: u32,
    pub occupied: RayInterval,
    pub density: f64,
    pub color: DVec3,
    pub surface_t: Option<f64>,
}

impl Shaded {
    pub fn sample(&self) -> SegmentSample {
        SegmentSample {
            cell: self.cell,
            length: self.occupied.length(),
            density: self.density,
            color: self.color,
        }
    }
}

/// The one shading path: cell interval, near/far clip, dipole clip, then
/// radiance at the surface crossing (or at the segment midpoint for rays
/// parallel to the dipole plane). Returns None when the cell contributes
/// nothing to this ray.
pub fn shade_cell(
    scene: &Scene,
    sites: &[PowerSite],
    cell: usize,
    neighbors: &[u32],
    ray: &Ray,
    near: f64,
    far: f64,
) -> Option<Shaded> {
    shade_cell_traced(scene, sites, cell, neighbors, ray, near, far).map(|(s, _, _)| s)
}

/// Provenance of an occupied-interval endpoint, for backpropagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointSource {
    /// The cell's bounding sphere.
    Sphere,
    /// The radical plane against this neighbor.
    Neighbor(u32),
    /// The t >= 0 clamp at the ray origin.
    Start,
    /// The camera near/far clip.
    Clip,
    /// The displaced dipole crossing.
    Surface,
}

impl From<IntervalSource> for EndpointSource {
    fn from(s: IntervalSource) -> Self {
        match s {
            IntervalSource::Sphere => EndpointSource::Sphere,
            IntervalSource::Neighbor(j) => EndpointSource::Neighbor(j),
            IntervalSource::Start => EndpointSource::Start,
        }
    }
}

/// `shade_cell` plus the provenance of both occupied endpoints.
pub fn shade_cell_traced(
    scene: &Scene,
    sites: &[PowerSite],
    cell: usize,
    neighbors: &[u32],
    ray: &Ray,
    near: f64,
    far: f64,
) -> Option<(Shaded, EndpointSource, EndpointSource)> {
    let (iv, lo_src, hi_src) = cell_interval_traced(ray, cell, sites, neighbors);
    if iv.is_empty() {
        return None;
    }
    let mut in_src = EndpointSource::from(lo_src);
    let mut out_src = EndpointSource::from(hi_src);
    if near > iv.t_in {
        in_src = EndpointSource::Clip;
    }
    if far < iv.t_out {
        out_src = EndpointSource::Clip;
    }
    let iv = RayInterval::new(iv.t_in.max(near), iv.t_out.min(far));
    if iv.is_empty() {
        return None;
    }
    let c = &scene.cells[cell];
    if c.dipole.density <= 0.0 {
        return None;
    }
    let clip = dipole_clip(c, ray, iv, scene.temperature);
    if clip.occupied.is_empty() {
        return None;
    }
    if let Some(ts) = clip.surface_t {
        if clip.occupied.t_out == ts && iv.t_out != ts {
            out_src = EndpointSource::Surface;
        } else if clip.occupied.t_in == ts && iv.t_in != ts {
            in_src = EndpointSource::Surface;
        }
    }
    let eval_point = match clip.surface_t {
        Some(ts) => ray.at(ts),
        None => ray.at(0.5 * (clip.occupied.t_in + clip.occupied.t_out)),
    };
    let color = radiance_at(c, eval_point, ray.dir, scene.temperature, &scene.sv);
    let shaded = Shaded {
        cell: cell as u32,
        occupied: clip.occupied,
        density: c.dipole.density,
        color,
        surface_t: clip.surface_t,
    };
    Some((shaded, in_src, out_src))
}

/// Linear RGB framebuffer, row major, top left origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pixels: Vec<DVec3>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Image { width, height, pixels: vec![DVec3::ZERO; (width * height) as usize] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> DVec3 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: DVec3) {
        self.pixels[(y * self.width + x) as usize] = c;
    }

    pub fn pixels(&self) -> &[DVec3] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [DVec3] {
        &mut self.pixels
    }

    /// Rows owned disjointly, for parallel fills.
    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, DVec3> {
        self.pixels.chunks_mut(self.width as usize)
    }

    pub fn to_srgb_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            out.push(encode_channel(p.x));
            out.push(encode_channel(p.y));
            out.push(encode_channel(p.z));
        }
        out
    }

    /// 2x2 box average; dimensions must be even.
    pub fn downsample2(&self) -> Image {
        assert!(self.width % 2 == 0 && self.height % 2 == 0);
        let mut out = Image::new(self.width / 2, self.height / 2);
        for y in 0..out.height {
            for x in 0..out.width {
                let s = self.pixel(2 * x, 2 * y)
                    + self.pixel(2 * x + 1, 2 * y)
                    + self.pixel(2 * x, 2 * y + 1)
                    + self.pixel(2 * x + 1, 2 * y + 1);
                out.set_pixel(x, y, 0.25 * s);
            }
        }
        out
    }
}

pub fn srgb_encode(linear: f64) -> f64 {
    let l = linear.max(0.0).min(1.0);
    if l <= 0.0031308 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(s: f64) -> f64 {
    if s <= 0.04045 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

/// Quantization happens here and only here: floor(s * 255 + 0.5).
pub fn encode_channel(linear: f64) -> u8 {
    (srgb_encode(linear) * 255.0 + 0.5).floor() as u8
}

pub fn write_ppm(image: &Image, path: &Path) -> Result<(), FoamError> {
    let file = std::fs::File::create(path).map_err(|e| FoamError::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| {
        write!(w, "P6\n{} {}\n255\n", image.width, image.height)?;
        w.write_all(&image.to_srgb_bytes())?;
        w.flush()
    })()
    .map_err(|e| FoamError::io(path, e))
}

/// Reads a binary PPM back into linear RGB. Accepts comments and arbitrary
/// whitespace in the header; requires maxval 255.
pub fn read_ppm(path: &Path) -> Result<Image, FoamError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| FoamError::io(path, e))?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, FoamError> {
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FoamError::parse(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P6" {
        return Err(FoamError::parse(path, "not a binary PPM (expected P6)"));
    }
    let width: u32 = token(&bytes)?.parse().map_err(|_| FoamError::parse(path, "bad width"))?;
    let height: u32 = token(&bytes)?.parse().map_err(|_| FoamError::parse(path, "bad height"))?;
    let maxval: u32 = token(&bytes)?.parse().map_err(|_| FoamError::parse(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(FoamError::parse(path, "only maxval 255 is supported"));
    }
    let data_start = pos + 1; // single whitespace byte after maxval
    let need = (width as usize) * (height as usize) * 3;
    if bytes.len() < data_start + need {
        return Err(FoamError::parse(path, "pixel data truncated"));
    }
    let mut img = Image::new(width, height);
    for (i, px) in img.pixels_mut().iter_mut().enumerate() {
        let o = data_start + 3 * i;
        *px = DVec3::new(
            srgb_decode(bytes[o] as f64 / 255.0),
            srgb_decode(bytes[o + 1] as f64 / 255.0),
            srgb_decode(bytes[o + 2] as f64 / 255.0),
        );
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(density: f64, length: f64, color: DVec3) -> SegmentSample {
        SegmentSample { cell: 0, density, length, color }
    }

    #[test]
    fn single_half_opaque_segment() {
        // density * length = ln 2 gives alpha one half.
        let c = DVec3::new(1.0, 0.0, 0.0);
        let (out, t) = integrate_segments(&[seg(1.0, std::f64::consts::LN_2, c)], DVec3::ZERO);
        assert!((out - 0.5 * c).length() < 1e-12);
        assert!((t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn front_to_back_order_matters() {
        let c1 = DVec3::new(1.0, 0.0, 0.0);
        let c2 = DVec3::new(0.0, 1.0, 0.0);
        let bg = DVec3::new(0.0, 0.0, 1.0);
        let l = std::f64::consts::LN_2;
        let (out, t) = integrate_segments(&[seg(1.0, l, c1), seg(1.0, l, c2)], bg);
        assert!((out - (0.5 * c1 + 0.25 * c2 + 0.25 * bg)).length() < 1e-12);
        assert!((t - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_shows_background() {
        let bg = DVec3::new(0.2, 0.4, 0.6);
        let (out, t) = integrate_segments(&[], bg);
        assert_eq!(out, bg);
        assert_eq!(t, 1.0);
    }

    #[test]
    fn early_stop_skips_tail_but_keeps_background() {
        let white = DVec3::ONE;
        let red = DVec3::X;
        let bg = DVec3::new(0.0, 0.0, 1.0);
        // First segment drives transmittance to 1e-5 < 1e-4.
        let (out, t) = integrate_segments(&[seg(5.0 * std::f64::consts::LN_10, 1.0, white), seg(100.0, 1.0, red)], bg);
        assert!((t - 1e-5).abs() < 1e-12);
        // The red segment was never added; the background still shines through.
        assert!((out.x - (1.0 - 1e-5)).abs() < 1e-12);
        assert!((out.z - ((1.0 - 1e-5) + t * bg.z)).abs() < 1e-12);
    }

    #[test]
    fn splitting_a_segment_changes_nothing() {
        let c = DVec3::new(0.3, 0.6, 0.9);
        let bg = DVec3::new(0.1, 0.1, 0.1);
        for (a, b) in [(0.25, 0.75), (0.5, 0.5), (0.9, 0.1)] {
            let whole = integrate_segments(&[seg(1.3, a + b, c)], bg);
            let split = integrate_segments(&[seg(1.3, a, c), seg(1.3, b, c)], bg);
            assert!((whole.0 - split.0).length() < 1e-12);
            assert!((whole.1 - split.1).abs() < 1e-12);
        }
    }

    #[test]
    fn srgb_bytes() {
        assert_eq!(encode_channel(0.0), 0);
        assert_eq!(encode_channel(1.0), 255);
        assert_eq!(encode_channel(0.5), 188);
        assert_eq!(encode_channel(-1.0), 0);
        assert_eq!(encode_channel(2.0), 255);
        assert_eq!(encode_channel(f64::NAN), 0);
    }

    #[test]
    fn srgb_round_trip() {
        for i in 0..=255u32 {
            let s = i as f64 / 255.0;
            let l = srgb_decode(s);
            assert!((srgb_encode(l) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let mut img = Image::new(3, 2);
        img.set_pixel(0, 0, DVec3::new(0.0, 0.5, 1.0));
        img.set_pixel(2, 1, DVec3::new(0.25, 0.125, 0.75));
        write_ppm(&img, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            // Quantization bound: half a byte step through the transfer curve.
            for k in 0..3 {
                assert!((srgb_encode(a[k]) - srgb_encode(b[k])).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn downsample_averages_quads() {
        let mut img = Image::new(2, 2);
        img.set_pixel(0, 0, DVec3::splat(1.0));
        img.set_pixel(1, 0, DVec3::splat(0.0));
        img.set_pixel(0, 1, DVec3::splat(0.5));
        img.set_pixel(1, 1, DVec3::splat(0.5));
        let d = img.downsample2();
        assert_eq!(d.pixel(0, 0), DVec3::splat(0.5));
    }
}
