//! Weak-perspective to perspective conversion by joint reprojection.
//!
//! Weak-perspective convention: normalized image coordinates span `[-1, 1]`
//! across the longer image side `L`, and a camera-frame point projects to
//! `s · (X + t_x, Y + t_y)`. Writing the focal length relative to the long
//! side, `f̂ = f / L`, the matching perspective camera sits at depth `2 f̂ / s`,
//! so the initial translation is `[t_x, t_y, 2 f̂ / s]` in meters.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{focal_from_fov, rodrigues, PerspectiveCam, WeakPerspectiveCam, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    /// Person-centric joints (zero root orientation), meters.
    pub joints3d: Vec<Vec3>,
    /// Detected 2D joints, pixels. Off-image joints are kept.
    pub joints2d: Vec<[f64; 2]>,
    pub weak_cam: WeakPerspectiveCam,
    /// Camera-centric root orientation (axis-angle).
    pub global_orient: Vec3,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the RMS reprojection error (pixels) drops below this.
    pub early_stop_rms: f64,
    /// Fail the fit if the final RMS error exceeds this.
    pub reject_rms: Option<f64>,
    pub fov_deg: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub divergence_loss: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iters: 2400,
            early_stop_rms: 0.7,
            reject_rms: None,
            fov_deg: 46.4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            divergence_loss: 1e8,
        }
    }
}

impl FitConfig {
    /// Stricter settings used when calibrating evaluation images.
    pub fn eval_profile() -> Self {
        Self {
            max_iters: 3000,
            early_stop_rms: 0.5,
            reject_rms: Some(1.0),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub camera: PerspectiveCam,
    /// RMS reprojection error of the returned camera, pixels.
    pub rms: f64,
    /// Mean squared reprojection error of the returned camera.
    pub loss: f64,
    pub iterations: usize,
    pub early_stopped: bool,
}

/// Camera from the weak-perspective estimate: focal from the default field of
/// view, principal point at the image center, `R = Rodrigues(φ)`,
/// `t = [t_x, t_y, 2 f̂ / s]`.
pub fn initial_camera(sample: &CalibrationSample, cfg: &FitConfig) -> Result<PerspectiveCam> {
    if !(sample.weak_cam.s > 0.0) {
        return Err(Error::Calibration(format!(
            "weak-perspective scale {} must be positive",
            sample.weak_cam.s
        )));
    }
    let f = focal_from_fov(cfg.fov_deg, sample.width);
    let long_side = sample.width.max(sample.height) as f64;
    let depth = 2.0 * (f / long_side) / sample.weak_cam.s;
    Ok(PerspectiveCam {
        f,
        cx: sample.width as f64 / 2.0,
        cy: sample.height as f64 / 2.0,
        rotation: rodrigues(&sample.global_orient),
        translation: Vec3::new(sample.weak_cam.tx, sample.weak_cam.ty, depth),
        width: sample.width,
        height: sample.height,
    })
}

/// Optimized variables: rotation increment `δ` (axis-angle, left-multiplied
/// onto the initial rotation), translation, and log focal length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    pub delta: Vec3,
    pub translation: Vec3,
    pub log_f: f64,
}

impl FitParams {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.delta.x,
            self.delta.y,
            self.delta.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
            self.log_f,
        ]
    }

    pub fn from_array(a: &[f64; 7]) -> Self {
        Self {
            delta: Vec3::new(a[0], a[1], a[2]),
            translation: Vec3::new(a[3], a[4], a[5]),
            log_f: a[6],
        }
    }
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `∂R/∂v_i` for `R = exp([v]×)`.
pub fn rotation_jacobian(v: &Vec3) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let r = rodrigues(v);
    let n2 = v.norm_squared();
    let mut d = [Matrix3::zeros(); 3];
    if n2 < 1e-20 {
        for (i, di) in d.iter_mut().enumerate() {
            *di = skew(&Vec3::ith(i, 1.0));
        }
    } else {
        let vx = skew(v);
        let i_minus_r = Matrix3::identity() - r;
        for (i, di) in d.iter_mut().enumerate() {
            let e = Vec3::ith(i, 1.0);
            let term = v.cross(&(i_minus_r * e));
            *di = (vx * v[i] + skew(&term)) * r / n2;
        }
    }
    (r, d)
}

/// Reprojection objective over fixed correspondences.
pub struct ReprojectionProblem<'a> {
    pub joints3d: &'a [Vec3],
    pub joints2d: &'a [[f64; 2]],
    pub base_rotation: Matrix3<f64>,
    pub cx: f64,
    pub cy: f64,
}

impl ReprojectionProblem<'_> {
    pub fn camera(&self, p: &FitParams, width: usize, height: usize) -> PerspectiveCam {
        PerspectiveCam {
            f: p.log_f.exp(),
            cx: self.cx,
            cy: self.cy,
            rotation: rodrigues(&p.delta) * self.base_rotation,
            translation: p.translation,
            width,
            height,
        }
    }

    /// Mean squared pixel error; infinite if any joint falls behind the camera.
    pub fn loss(&self, p: &FitParams) -> f64 {
        self.loss_and_gradient(p).0
    }

    /// Loss and analytic gradient in `FitParams::to_array` order.
    pub fn loss_and_gradient(&self, p: &FitParams) -> (f64, [f64; 7]) {
        let (r_delta, d_r) = rotation_jacobian(&p.delta);
        let f = p.log_f.exp();
        let n = self.joints3d.len() as f64;
        let mut loss = 0.0;
        let mut grad = [0.0; 7];
        for (x, j) in self.joints3d.iter().zip(self.joints2d) {
            let y = self.base_rotation * x;
            let pc = r_delta * y + p.translation;
            if pc.z <= MIN_DEPTH {
                return (f64::INFINITY, [f64::NAN; 7]);
            }
            let inv_z = 1.0 / pc.z;
            let u = f * pc.x * inv_z + self.cx;
            let v = f * pc.y * inv_z + self.cy;
            let (ru, rv) = (u - j[0], v - j[1]);
            loss += ru * ru + rv * rv;
            // dL/dpc through u and v
            let gu = 2.0 * ru / n;
            let gv = 2.0 * rv / n;
            let dpc = Vec3::new(
                gu * f * inv_z,
                gv * f * inv_z,
                -(gu * f * pc.x + gv * f * pc.y) * inv_z * inv_z,
            );
            for i in 0..3 {
                grad[i] += dpc.dot(&(d_r[i] * y));
                grad[3 + i] += dpc[i];
            }
            grad[6] += gu * (u - self.cx) + gv * (v - self.cy);
        }
        (loss / n, grad)
    }
}

/// Fits a perspective camera to the 2D joints with Adam, starting from the
/// weak-perspective initialization. Returns the best iterate seen.
pub fn fit_perspective(sample: &CalibrationSample, cfg: &FitConfig) -> Result<FitResult> {
    let init = initial_camera(sample, cfg)?;
    fit_perspective_from(sample, &init, cfg)
}

/// As [`fit_perspective`], from an explicit starting camera. The principal
/// point of `init` stays fixed.
pub fn fit_perspective_from(
    sample: &CalibrationSample,
    init: &PerspectiveCam,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let n = sample.joints3d.len();
    if n != sample.joints2d.len() {
        return Err(Error::Calibration(format!(
            "{n} 3D joints vs {} 2D joints",
            sample.joints2d.len()
        )));
    }
    let (joints3d, joints2d): (Vec<Vec3>, Vec<[f64; 2]>) = sample
        .joints3d
        .iter()
        .zip(&sample.joints2d)
        .filter(|(x, j)| j[0].is_finite() && j[1].is_finite() && x.iter().all(|c| c.is_finite()))
        .map(|(x, j)| (*x, *j))
        .unzip();
    if joints3d.len() < 6 {
        return Err(Error::Calibration(format!(
            "need at least 6 joints with finite 2D targets, got {} of {n}",
            joints3d.len()
        )));
    }
    let problem = ReprojectionProblem {
        joints3d: &joints3d,
        joints2d: &joints2d,
        base_rotation: init.rotation,
        cx: init.cx,
        cy: init.cy,
    };
    let mut params = FitParams {
        delta: Vec3::zeros(),
        translation: init.translation,
        log_f: init.f.ln(),
    };

    let mut m = [0.0; 7];
    let mut v = [0.0; 7];
    let mut best = (f64::INFINITY, params);
    let mut iterations = 0;
    let mut early_stopped = false;
    let stop_loss = cfg.early_stop_rms * cfg.early_stop_rms;

    for it in 0..=cfg.max_iters {
        let (loss, grad) = problem.loss_and_gradient(&params);
        if !loss.is_finite() || loss > cfg.divergence_loss {
            if best.0.is_finite() && it > 0 {
                // a step overshot; keep what we had
                break;
            }
            return Err(Error::Calibration(format!(
                "reprojection loss {loss} at iteration {it}"
            )));
        }
        if loss < best.0 {
            best = (loss, params);
        }
        iterations = it;
        if loss < stop_loss {
            early_stopped = true;
            break;
        }
        if it == cfg.max_iters {
            break;
        }
        let t = (it + 1) as i32;
        let mut x = params.to_array();
        for i in 0..7 {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - cfg.beta1.powi(t));
            let v_hat = v[i] / (1.0 - cfg.beta2.powi(t));
            x[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        params = FitParams::from_array(&x);
    }

    let (loss, p) = best;
    let rms = loss.sqrt();
    if let Some(limit) = cfg.reject_rms {
        if rms > limit {
            return Err(Error::Calibration(format!(
                "final RMS {rms:.3} px exceeds {limit} px"
            )));
        }
    }
    Ok(FitResult {
        camera: problem.camera(&p, sample.width, sample.height),
        rms,
        loss,
        iterations,
        early_stopped,
    })
}
