//! Pinhole and equidistant fisheye cameras.
//!
//! Camera space: +x right, +y down (matching pixel rows), +z forward.
//! `rotation`/`translation` map camera space to world space.

use glam::{DMat3, DVec2, DVec3};

use crate::error::FoamError;
use crate::geometry::Ray;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraModel {
    Pinhole { fx: f64, fy: f64, cx: f64, cy: f64 },
    /// Equidistant mapping: radial pixel distance = f * angle from axis.
    Fisheye { f: f64, cx: f64, cy: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub model: CameraModel,
    pub rotation: DMat3,
    pub translation: DVec3,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn center(&self) -> DVec3 {
        self.translation
    }

    /// World point into camera space.
    pub fn to_camera(&self, x: DVec3) -> DVec3 {
        self.rotation.transpose() * (x - self.translation)
    }

    /// Ray through a pixel position (pass the pixel center, e.g. x + 0.5).
    /// Fisheye pixels beyond the angle-pi circle have no direction.
    pub fn ray_for_pixel(&self, px: DVec2) -> Result<Ray, FoamError> {
        let dir_cam = match self.model {
            CameraModel::Pinhole { fx, fy, cx, cy } => {
                DVec3::new((px.x - cx) / fx, (px.y - cy) / fy, 1.0).normalize()
            }
            CameraModel::Fisheye { f, cx, cy } => {
                let dx = (px.x - cx) / f;
                let dy = (px.y - cy) / f;
                let theta = (dx * dx + dy * dy).sqrt();
                if theta > std::f64::consts::PI {
                    return Err(FoamError::InvalidPixel { x: px.x, y: px.y });
                }
                if theta < 1e-12 {
                    DVec3::Z
                } else {
                    let s = theta.sin() / theta;
                    DVec3::new(s * dx, s * dy, theta.cos())
                }
            }
        };
        Ok(Ray { origin: self.translation, dir: (self.rotation * dir_cam).normalize() })
    }

    /// Places the camera at `eye` looking toward `target`; `up` is the
    /// world direction that maps to image-up.
    pub fn look_at(
        eye: DVec3,
        target: DVec3,
        up: DVec3,
        model: CameraModel,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(up).normalize();
        let down = forward.cross(right);
        Camera {
            model,
            rotation: DMat3::from_cols(right, down, forward),
            translation: eye,
            width,
            height,
            near,
            far,
        }
    }

    pub fn validate(&self) -> Result<(), FoamError> {
        if self.width == 0 || self.height == 0 {
            return Err(FoamError::InvalidCamera("resolution must be positive".into()));
        }
        match self.model {
            CameraModel::Pinhole { fx, fy, .. } => {
                if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
                    return Err(FoamError::InvalidCamera("pinhole focal lengths must be positive".into()));
                }
            }
            CameraModel::Fisheye { f, .. } => {
                if !(f > 0.0) || !f.is_finite() {
                    return Err(FoamError::InvalidCamera("fisheye focal length must be positive".into()));
                }
            }
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(FoamError::InvalidCamera("need 0 < near < far".into()));
        }
        let r = self.rotation;
        let rtr = r.transpose() * r;
        let mut dev: f64 = 0.0;
        for c in 0..3 {
            for rw in 0..3 {
                let expect = if c == rw { 1.0 } else { 0.0 };
                dev = dev.max((rtr.col(c)[rw] - expect).abs());
            }
        }
        if dev > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(FoamError::InvalidCamera("rotation is not orthonormal".into()));
        }
        if !self.translation.is_finite() {
            return Err(FoamError::InvalidCamera("translation is not finite".into()));
        }
        Ok(())
    }
}
