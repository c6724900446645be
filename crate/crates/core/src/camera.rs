//! Pinhole cameras in person-centric space.
//!
//! A camera maps a world point `x` to the camera frame as `R x + t`; the
//! camera looks along +Z, image u grows with +X and image v grows with +Y
//! (downward in the raster). Pixel `(col, row)` covers `[col, col + 1) ×
//! [row, row + 1)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub mod entropy;
pub mod fit;

pub use entropy::{camera_entropy, camera_entropy_of_directions, fibonacci_sphere};
pub use fit::{
    fit_perspective, fit_perspective_from, initial_camera, CalibrationSample, FitConfig, FitParams,
    FitResult, ReprojectionProblem,
};

/// Minimum depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspectiveCam {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraRecord", try_from = "CameraRecord")]
pub struct PerspectiveCam {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

/// On-disk camera layout: `R` row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    f: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    width: usize,
    height: usize,
}

impl From<PerspectiveCam> for CameraRecord {
    fn from(c: PerspectiveCam) -> Self {
        let m = c.rotation;
        CameraRecord {
            f: c.f,
            cx: c.cx,
            cy: c.cy,
            r: [
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
            ],
            t: [c.translation.x, c.translation.y, c.translation.z],
            width: c.width,
            height: c.height,
        }
    }
}

impl TryFrom<CameraRecord> for PerspectiveCam {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let cam = PerspectiveCam {
            f: r.f,
            cx: r.cx,
            cy: r.cy,
            rotation: Matrix3::from_row_slice(&r.r),
            translation: Vec3::from(r.t),
            width: r.width,
            height: r.height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Pixel containing the projection, if inside the image.
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        if self.u >= 0.0 && self.v >= 0.0 && self.u < width as f64 && self.v < height as f64 {
            Some((self.u as usize, self.v as usize))
        } else {
            None
        }
    }
}

/// Focal length in pixels for a horizontal field of view over `width` pixels.
pub fn focal_from_fov(fov_deg: f64, width: usize) -> f64 {
    (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan()
}

impl PerspectiveCam {
    pub fn validate(&self) -> Result<()> {
        if !(self.f > 0.0) || !self.f.is_finite() {
            return Err(Error::InvalidCamera(format!("focal {}", self.f)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("empty image".into()));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(ortho < 1e-6) || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidCamera("rotation is not proper orthonormal".into()));
        }
        if !self.translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidCamera("translation not finite".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with image-up along `up`.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        f: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye equals target".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up is parallel to the view direction".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Ok(Self {
            f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation,
            width,
            height,
        })
    }

    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Projection without the depth check.
    #[inline]
    pub fn project_unchecked(&self, x: &Vec3) -> Projection {
        let p = self.to_camera(x);
        Projection {
            u: self.f * p.x / p.z + self.cx,
            v: self.f * p.y / p.z + self.cy,
            depth: p.z,
        }
    }

    /// Back-projected viewing ray direction (camera frame, unnormalized) of a pixel.
    pub fn pixel_ray_camera(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.f, (v - self.cy) / self.f, 1.0)
    }
}

/// `u = f X/Z + c_x`, `v = f Y/Z + c_y` with `(X, Y, Z) = R x + t`.
pub fn project(cam: &PerspectiveCam, x: &Vec3) -> Result<Projection> {
    let p = cam.project_unchecked(x);
    if p.depth > MIN_DEPTH {
        Ok(p)
    } else {
        Err(Error::BehindCamera(p.depth))
    }
}

/// Azimuth of the camera position about the vertical axis, in `[0, 2π)`;
/// 0 in front of the body (+z), π/2 on its left (+x).
pub fn azimuth_of(cam: &PerspectiveCam) -> Result<f64> {
    azimuth_of_position(&cam.position())
}

pub fn azimuth_of_position(c: &Vec3) -> Result<f64> {
    if c.x.hypot(c.z) < 1e-9 {
        return Err(Error::DegenerateAzimuth);
    }
    let a = c.x.atan2(c.z);
    let a = if a < 0.0 { a + 2.0 * PI } else { a };
    // atan2 can return -0.0 or round up to exactly 2π after the shift
    Ok(if a >= 2.0 * PI { 0.0 } else { a.abs() })
}

/// Rodrigues rotation matrix.
pub fn rodrigues(v: &Vec3) -> Matrix3<f64> {
    *Rotation3::new(*v).matrix()
}
