//! Spread of a camera distribution over viewing directions.

use std::f64::consts::PI;

use super::PerspectiveCam;
use crate::Vec3;

pub const DEFAULT_SIGMA: f64 = 0.01;
pub const SPHERE_GRID_POINTS: usize = 4096;

/// Near-uniform points on the unit sphere (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = i as f64 * golden_angle;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Shannon entropy (bits) of a geodesic-Gaussian kernel density of camera
/// directions, discretized on a 4096-point sphere grid.
pub fn camera_entropy(cams: &[PerspectiveCam], sigma: f64) -> f64 {
    let dirs: Vec<Vec3> = cams
        .iter()
        .filter_map(|c| c.position().try_normalize(1e-12))
        .collect();
    camera_entropy_of_directions(&dirs, sigma)
}

/// As [`camera_entropy`], from unit direction vectors.
///
/// Each kernel is normalized over the grid before mixing, so every camera
/// carries equal mass even when the kernel is narrower than the grid spacing.
pub fn camera_entropy_of_directions(dirs: &[Vec3], sigma: f64) -> f64 {
    if dirs.is_empty() {
        return 0.0;
    }
    let grid = fibonacci_sphere(SPHERE_GRID_POINTS);
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut density = vec![0.0; grid.len()];
    let mut log_k = vec![0.0; grid.len()];
    for d in dirs {
        for (lk, g) in log_k.iter_mut().zip(&grid) {
            let angle = g.dot(d).clamp(-1.0, 1.0).acos();
            *lk = -angle * angle * inv_two_var;
        }
        let log_z = log_sum_exp(&log_k);
        for (p, lk) in density.iter_mut().zip(&log_k) {
            *p += (lk - log_z).exp();
        }
    }
    let n = dirs.len() as f64;
    let h: f64 = density
        .iter()
        .map(|&p| p / n)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum();
    h
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_gives_twelve_bits() {
        let dirs = fibonacci_sphere(SPHERE_GRID_POINTS);
        let h = camera_entropy_of_directions(&dirs, DEFAULT_SIGMA);
        assert!((h - 12.0).abs() < 0.01, "{h}");
    }

    #[test]
    fn single_direction_near_zero() {
        let d = Vec3::new(0.3, 0.1, 1.0).normalize();
        let h = camera_entropy_of_directions(&[d, d, d], DEFAULT_SIGMA);
        assert!(h < 1.5, "{h}");
    }

    #[test]
    fn permutation_invariant_and_spread_increases() {
        let a = Vec3::new(0.0, 0.0, 1.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 0.2, -1.0).normalize();
        let h1 = camera_entropy_of_directions(&[a, b, c], DEFAULT_SIGMA);
        let h2 = camera_entropy_of_directions(&[c, a, b], DEFAULT_SIGMA);
        assert!((h1 - h2).abs() < 1e-12);
        let h_ab = camera_entropy_of_directions(&[a, b], DEFAULT_SIGMA);
        assert!(h1 > h_ab);
        let h_aa = camera_entropy_of_directions(&[a, a], DEFAULT_SIGMA);
        assert!(h_ab > h_aa);
    }
}
