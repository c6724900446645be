//! Skinning weight fields over voxel grids and the warps they induce.
//!
//! Weights at a voxel are the inverse-distance average of the k nearest body
//! vertices' weights, blended toward the pelvis basis vector `e_1` as the
//! voxel moves away from the body, then Laplace-smoothed. Because the pelvis
//! bone is the identity in person-centric space, `e_1` means "no deformation".

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{basis_weights, BodyMesh, BoneTransforms, Weights, JOINT_COUNT, PELVIS};
use crate::error::{Error, Result};
use crate::grid::{FieldKind, GridSpec};
use crate::Vec3;

pub const DEFAULT_K: usize = 30;
pub const DEFAULT_TAU: f64 = 0.8;
pub const DEFAULT_SHARPNESS: f64 = 0.25;
pub const DEFAULT_SMOOTH_ITERATIONS: usize = 30;
/// Distances below this count as coincident with a vertex.
pub const COINCIDENCE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceTag {
    Canonical,
    Posed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub spec: GridSpec,
    pub weights: Vec<Weights>,
    pub space: SpaceTag,
}

impl WeightField {
    pub fn uniform(spec: GridSpec, w: Weights, space: SpaceTag) -> Self {
        Self {
            spec,
            weights: vec![w; spec.cell_count()],
            space,
        }
    }

    /// Weight vector at an arbitrary point: trilinear interpolation of the
    /// cell vectors, re-normalized. `None` outside the grid box.
    pub fn lookup(&self, p: &Vec3) -> Option<Weights> {
        let stencil = self.spec.trilinear_stencil(p)?;
        let mut w = [0.0; JOINT_COUNT];
        for (idx, t) in stencil {
            if t == 0.0 {
                continue;
            }
            for (acc, x) in w.iter_mut().zip(&self.weights[idx]) {
                *acc += t * x;
            }
        }
        normalize(&mut w);
        Some(w)
    }

    pub fn to_chor_payload(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.iter().copied()).collect()
    }

    pub fn write_chor(&self, path: &std::path::Path) -> Result<()> {
        crate::grid::write_chor(path, &self.spec, FieldKind::Weight24, &self.to_chor_payload())
    }

    pub fn read_chor(path: &std::path::Path, space: SpaceTag) -> Result<Self> {
        let (spec, kind, data) = crate::grid::read_chor(path)?;
        if kind != FieldKind::Weight24 {
            return Err(Error::Format(format!(
                "{}: expected a weight field",
                path.display()
            )));
        }
        let weights = data
            .chunks_exact(JOINT_COUNT)
            .map(|c| {
                let mut w: Weights = c.try_into().unwrap();
                normalize(&mut w);
                w
            })
            .collect();
        Ok(Self {
            spec,
            weights,
            space,
        })
    }
}

fn normalize(w: &mut Weights) {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        *w = basis_weights(PELVIS);
    }
}

/// Structure-of-arrays copy of a point cloud for the brute-force scans.
struct PointsSoa {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl PointsSoa {
    fn new(points: &[Vec3]) -> Self {
        Self {
            x: points.iter().map(|p| p.x).collect(),
            y: points.iter().map(|p| p.y).collect(),
            z: points.iter().map(|p| p.z).collect(),
        }
    }

    /// k nearest as (squared distance, index), ascending; ties keep the lower index.
    fn knn(&self, q: &Vec3, k: usize, out: &mut Vec<(f64, usize)>) {
        out.clear();
        let mut worst = f64::INFINITY;
        for i in 0..self.x.len() {
            let dx = self.x[i] - q.x;
            let dy = self.y[i] - q.y;
            let dz = self.z[i] - q.z;
            let d2 = dx * dx + dy * dy + dz * dz;
            if out.len() == k && d2 >= worst {
                continue;
            }
            let pos = out.partition_point(|&(d, _)| d <= d2);
            if out.len() == k {
                out.pop();
            }
            out.insert(pos, (d2, i));
            if out.len() == k {
                worst = out[k - 1].0;
            }
        }
    }

    fn nearest_sq(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.x.len() {
            let dx = self.x[i] - q.x;
            let dy = self.y[i] - q.y;
            let dz = self.z[i] - q.z;
            best = best.min(dx * dx + dy * dy + dz * dz);
        }
        best
    }
}

fn check_inputs(body: &BodyMesh, vertices: &[Vec3], k: usize) -> Result<()> {
    if vertices.is_empty() {
        return Err(Error::EmptyVertices);
    }
    if vertices.len() != body.skin_weights.len() {
        return Err(Error::InvalidBody(format!(
            "{} positions for {} weight rows",
            vertices.len(),
            body.skin_weights.len()
        )));
    }
    if k == 0 || k > vertices.len() {
        return Err(Error::NeighborCount {
            k,
            n: vertices.len(),
        });
    }
    Ok(())
}

/// Inverse-distance k-NN weights at every voxel center, plus the distance to
/// the nearest vertex (which is the first neighbor).
fn knn_weights(
    body: &BodyMesh,
    vertices: &[Vec3],
    spec: &GridSpec,
    k: usize,
) -> (Vec<Weights>, Vec<f64>) {
    let soa = PointsSoa::new(vertices);
    let rows: Vec<(Weights, f64)> = (0..spec.cell_count())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(k + 1),
            |nn, idx| {
                let x = spec.center_of_index(idx);
                soa.knn(&x, k, nn);
                let d_min = nn[0].0.sqrt();
                if d_min < COINCIDENCE_EPS {
                    return (body.skin_weights[nn[0].1], d_min);
                }
                let mut w = [0.0; JOINT_COUNT];
                let mut norm = 0.0;
                for &(d2, i) in nn.iter() {
                    let inv = 1.0 / d2.sqrt();
                    norm += inv;
                    for (acc, x) in w.iter_mut().zip(&body.skin_weights[i]) {
                        *acc += inv * x;
                    }
                }
                w.iter_mut().for_each(|x| *x /= norm);
                (w, d_min)
            },
        )
        .collect();
    rows.into_iter().unzip()
}

/// Inverse-distance weighted k-NN skinning weights at every voxel center.
pub fn compute_lbs_field(
    body: &BodyMesh,
    vertices: &[Vec3],
    spec: &GridSpec,
    k: usize,
    space: SpaceTag,
) -> Result<WeightField> {
    spec.validate()?;
    check_inputs(body, vertices, k)?;
    let (weights, _) = knn_weights(body, vertices, spec, k);
    Ok(WeightField {
        spec: *spec,
        weights,
        space,
    })
}

/// Distance from every voxel center to the nearest vertex.
pub fn nearest_distances(spec: &GridSpec, vertices: &[Vec3]) -> Vec<f64> {
    let soa = PointsSoa::new(vertices);
    (0..spec.cell_count())
        .into_par_iter()
        .map(|idx| soa.nearest_sq(&spec.center_of_index(idx)).sqrt())
        .collect()
}

/// Blend factor toward the body's own weights: 1 on the surface, 0 at `tau`
/// and beyond.
pub fn deweight_alpha(d_min: f64, tau: f64, sharpness: f64) -> f64 {
    let r = ((tau - d_min) / (tau + d_min)).max(0.0);
    r.abs().powf(sharpness)
}

fn deweight_rows(weights: &mut [Weights], d_min: &[f64], tau: f64, sharpness: f64) {
    weights
        .par_iter_mut()
        .zip(d_min.par_iter())
        .for_each(|(w, &d)| {
            let alpha = deweight_alpha(d, tau, sharpness);
            for (j, x) in w.iter_mut().enumerate() {
                let base = if j == PELVIS { 1.0 - alpha } else { 0.0 };
                *x = base + alpha * *x;
            }
        });
}

/// `ω' = (1 − α) e_1 + α ω` with α from the distance to the nearest vertex.
pub fn deweight(field: &WeightField, vertices: &[Vec3], tau: f64, sharpness: f64) -> WeightField {
    let d_min = nearest_distances(&field.spec, vertices);
    let mut out = field.clone();
    deweight_rows(&mut out.weights, &d_min, tau, sharpness);
    out
}

/// Replaces each cell by the mean of itself and its in-grid 6-neighbors,
/// re-normalizing rows after every pass.
pub fn laplace_smooth(field: &WeightField, iterations: usize) -> WeightField {
    laplace_smooth_pinned(field, iterations, None)
}

/// As [`laplace_smooth`], but cells flagged in `pinned` keep their values and
/// act as a fixed boundary for their neighbors.
pub fn laplace_smooth_pinned(
    field: &WeightField,
    iterations: usize,
    pinned: Option<&[bool]>,
) -> WeightField {
    let spec = field.spec;
    let r = spec.resolution;
    let mut cur = field.weights.clone();
    let mut next = cur.clone();
    for _ in 0..iterations {
        next.par_iter_mut().enumerate().for_each(|(idx, out)| {
            if pinned.is_some_and(|p| p[idx]) {
                *out = cur[idx];
                return;
            }
            let (i, j, k) = spec.coords(idx);
            let mut acc = cur[idx];
            let mut add = |n: usize| {
                for (a, x) in acc.iter_mut().zip(&cur[n]) {
                    *a += x;
                }
            };
            if i > 0 {
                add(idx - 1);
            }
            if i + 1 < r {
                add(idx + 1);
            }
            if j > 0 {
                add(idx - r);
            }
            if j + 1 < r {
                add(idx + r);
            }
            if k > 0 {
                add(idx - r * r);
            }
            if k + 1 < r {
                add(idx + r * r);
            }
            // the mean's denominator cancels in the re-normalization
            normalize(&mut acc);
            *out = acc;
        });
        std::mem::swap(&mut cur, &mut next);
    }
    WeightField {
        spec,
        weights: cur,
        space: field.space.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkinningParams {
    pub k: usize,
    pub tau: f64,
    pub sharpness: f64,
    pub smooth_iterations: usize,
    /// Hold cells at or beyond `tau` fixed at `e_1` while smoothing.
    pub pin_far_field: bool,
}

impl Default for SkinningParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            sharpness: DEFAULT_SHARPNESS,
            smooth_iterations: DEFAULT_SMOOTH_ITERATIONS,
            pin_far_field: true,
        }
    }
}

/// compute → deweight → smooth over the given vertex positions.
pub fn build_weight_field(
    body: &BodyMesh,
    vertices: &[Vec3],
    spec: &GridSpec,
    params: &SkinningParams,
    space: SpaceTag,
) -> Result<WeightField> {
    spec.validate()?;
    check_inputs(body, vertices, params.k)?;
    let (mut weights, d_min) = knn_weights(body, vertices, spec, params.k);
    deweight_rows(&mut weights, &d_min, params.tau, params.sharpness);
    let field = WeightField {
        spec: *spec,
        weights,
        space,
    };
    let pinned: Option<Vec<bool>> = params
        .pin_far_field
        .then(|| d_min.iter().map(|&d| d >= params.tau).collect());
    Ok(laplace_smooth_pinned(
        &field,
        params.smooth_iterations,
        pinned.as_deref(),
    ))
}

pub fn canonical_weight_field(
    body: &BodyMesh,
    spec: &GridSpec,
    params: &SkinningParams,
) -> Result<WeightField> {
    build_weight_field(body, &body.vertices, spec, params, SpaceTag::Canonical)
}

/// Inverse weight field of a posed body, used for backward skinning.
pub fn posed_weight_field(
    body: &BodyMesh,
    bones: &BoneTransforms,
    spec: &GridSpec,
    params: &SkinningParams,
    pose_id: &str,
) -> Result<WeightField> {
    let posed = body.pose_vertices(bones);
    build_weight_field(body, &posed, spec, params, SpaceTag::Posed(pose_id.into()))
}

/// Bones in the `R − I | t` layout used by [`blend_displacement`].
pub(crate) fn packed_deltas(bones: &BoneTransforms) -> Vec<[f64; 12]> {
    bones
        .packed()
        .into_iter()
        .map(|mut m| {
            m[0] -= 1.0;
            m[4] -= 1.0;
            m[8] -= 1.0;
            m
        })
        .collect()
}

/// `Σ_j ω_j (B_j x − x)` for normalized weights; adding it to `x` gives the
/// blended warp, exact whenever all active bones are the identity.
#[inline]
pub(crate) fn blend_displacement(w: &Weights, deltas: &[[f64; 12]], x: &Vec3) -> Vec3 {
    let mut m = [0.0; 12];
    for (wj, d) in w.iter().zip(deltas) {
        if *wj == 0.0 {
            continue;
        }
        for (a, b) in m.iter_mut().zip(d) {
            *a += wj * b;
        }
    }
    Vec3::new(
        m[0] * x.x + m[1] * x.y + m[2] * x.z + m[9],
        m[3] * x.x + m[4] * x.y + m[5] * x.z + m[10],
        m[6] * x.x + m[7] * x.y + m[8] * x.z + m[11],
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpResult {
    pub point: Vec3,
    /// The query fell outside the grid and was left undeformed.
    pub outside: bool,
}

/// Canonical → posed warp driven by a canonical weight field.
pub struct ForwardWarp<'a> {
    field: &'a WeightField,
    deltas: Vec<[f64; 12]>,
}

impl<'a> ForwardWarp<'a> {
    pub fn new(field: &'a WeightField, bones: &BoneTransforms) -> Self {
        Self {
            field,
            deltas: packed_deltas(bones),
        }
    }

    pub fn apply(&self, x_c: &Vec3) -> WarpResult {
        match self.field.lookup(x_c) {
            Some(w) => WarpResult {
                point: x_c + blend_displacement(&w, &self.deltas, x_c),
                outside: false,
            },
            None => WarpResult {
                point: *x_c,
                outside: true,
            },
        }
    }

    /// Warp of a voxel center using that cell's weights directly.
    pub fn apply_cell(&self, idx: usize, x_c: &Vec3) -> Vec3 {
        x_c + blend_displacement(&self.field.weights[idx], &self.deltas, x_c)
    }
}

/// Posed → canonical warp driven by a posed-space inverse weight field.
pub struct InverseWarp<'a> {
    field: &'a WeightField,
    deltas: Vec<[f64; 12]>,
}

impl<'a> InverseWarp<'a> {
    pub fn new(inv_field: &'a WeightField, bones: &BoneTransforms) -> Self {
        Self {
            field: inv_field,
            deltas: packed_deltas(&bones.inverse()),
        }
    }

    pub fn apply(&self, x: &Vec3) -> WarpResult {
        match self.field.lookup(x) {
            Some(w) => WarpResult {
                point: x + blend_displacement(&w, &self.deltas, x),
                outside: false,
            },
            None => WarpResult {
                point: *x,
                outside: true,
            },
        }
    }

    pub fn apply_cell(&self, idx: usize, x: &Vec3) -> Vec3 {
        x + blend_displacement(&self.field.weights[idx], &self.deltas, x)
    }
}

/// `x = Σ_j ω_j(x_c) B_j x_c`.
pub fn warp_forward(x_c: &Vec3, field: &WeightField, bones: &BoneTransforms) -> WarpResult {
    ForwardWarp::new(field, bones).apply(x_c)
}

/// `x_c = Σ_j ω^inv_j(x) B_j⁻¹ x`.
pub fn warp_inverse(x: &Vec3, inv_field: &WeightField, bones: &BoneTransforms) -> WarpResult {
    InverseWarp::new(inv_field, bones).apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Isometry;

    fn tiny_body(points: &[(Vec3, usize)]) -> BodyMesh {
        let mut body = BodyMesh {
            vertices: points.iter().map(|p| p.0).collect(),
            skin_weights: points.iter().map(|p| basis_weights(p.1)).collect(),
            ..BodyMesh::default()
        };
        body.part_labels.truncate(points.len());
        body
    }

    #[test]
    fn coincident_voxel_copies_weights() {
        let spec = GridSpec::new(4, Vec3::zeros(), 1.0).unwrap();
        let c = spec.voxel_center(1, 2, 3);
        let body = tiny_body(&[(c, 5), (Vec3::new(0.9, 0.9, 0.9), 2)]);
        let f = compute_lbs_field(&body, &body.vertices, &spec, 2, SpaceTag::Canonical).unwrap();
        assert_eq!(f.weights[spec.index(1, 2, 3)], basis_weights(5));
    }

    #[test]
    fn equidistant_pair_averages() {
        let spec = GridSpec::new(4, Vec3::zeros(), 1.0).unwrap();
        let c = spec.voxel_center(1, 1, 1);
        let body = tiny_body(&[
            (c + Vec3::new(0.1, 0.0, 0.0), 1),
            (c - Vec3::new(0.1, 0.0, 0.0), 2),
        ]);
        let f = compute_lbs_field(&body, &body.vertices, &spec, 2, SpaceTag::Canonical).unwrap();
        let w = f.weights[spec.index(1, 1, 1)];
        assert!((w[1] - 0.5).abs() < 1e-12 && (w[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let spec = GridSpec::new(4, Vec3::zeros(), 1.0).unwrap();
        let body = tiny_body(&[(Vec3::zeros(), 0)]);
        assert!(matches!(
            compute_lbs_field(&body, &[], &spec, 1, SpaceTag::Canonical),
            Err(Error::EmptyVertices)
        ));
        assert!(matches!(
            compute_lbs_field(&body, &body.vertices, &spec, 2, SpaceTag::Canonical),
            Err(Error::NeighborCount { .. })
        ));
    }

    #[test]
    fn knn_matches_sorting() {
        let pts: Vec<Vec3> = (0..200)
            .map(|i| {
                let t = i as f64;
                Vec3::new((t * 0.37).sin(), (t * 0.71).cos(), (t * 0.13).sin() * 0.5)
            })
            .collect();
        let soa = PointsSoa::new(&pts);
        let q = Vec3::new(0.1, -0.2, 0.05);
        let mut out = Vec::new();
        soa.knn(&q, 30, &mut out);
        let mut all: Vec<(f64, usize)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(out, all[..30].to_vec());
    }

    #[test]
    fn deweight_closed_form() {
        assert_eq!(deweight_alpha(0.0, 0.8, 0.25), 1.0);
        assert_eq!(deweight_alpha(0.8, 0.8, 0.25), 0.0);
        assert_eq!(deweight_alpha(2.0, 0.8, 0.25), 0.0);
        let a = deweight_alpha(0.4, 0.8, 0.25);
        assert!((a - (1.0f64 / 3.0).powf(0.25)).abs() < 1e-15);
        assert!((a - 0.75984).abs() < 1e-5);
    }

    #[test]
    fn deweight_far_cells_become_pelvis() {
        let spec = GridSpec::new(6, Vec3::zeros(), 1.5).unwrap();
        let body = tiny_body(&[(Vec3::zeros(), 7)]);
        let f = WeightField::uniform(spec, basis_weights(7), SpaceTag::Canonical);
        let d = deweight(&f, &body.vertices, 0.8, 0.25);
        for idx in 0..spec.cell_count() {
            let dist = spec.center_of_index(idx).norm();
            let w = d.weights[idx];
            if dist >= 0.8 {
                assert_eq!(w, basis_weights(PELVIS));
            } else {
                let a = deweight_alpha(dist, 0.8, 0.25);
                assert!((w[7] - a).abs() < 1e-15);
                assert!((w[0] - (1.0 - a)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn smoothing_stencil() {
        let spec = GridSpec::new(5, Vec3::zeros(), 1.0).unwrap();
        let mut f = WeightField::uniform(spec, basis_weights(0), SpaceTag::Canonical);
        let c = spec.index(2, 2, 2);
        f.weights[c] = basis_weights(1);
        assert_eq!(laplace_smooth(&f, 0), f);
        let s = laplace_smooth(&f, 1);
        assert!((s.weights[c][0] - 6.0 / 7.0).abs() < 1e-15);
        assert!((s.weights[c][1] - 1.0 / 7.0).abs() < 1e-15);
        // a face neighbor sees the spike once among its 7 terms
        let n = spec.index(3, 2, 2);
        assert!((s.weights[n][1] - 1.0 / 7.0).abs() < 1e-15);
        // a corner cell has only 3 in-grid neighbors
        let mut g = WeightField::uniform(spec, basis_weights(0), SpaceTag::Canonical);
        g.weights[spec.index(1, 0, 0)] = basis_weights(2);
        let s = laplace_smooth(&g, 1);
        assert!((s.weights[0][2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uniform_field_is_fixed_point() {
        let spec = GridSpec::new(4, Vec3::zeros(), 1.0).unwrap();
        let mut w = [0.0; JOINT_COUNT];
        w[0] = 0.25;
        w[3] = 0.75;
        let f = WeightField::uniform(spec, w, SpaceTag::Canonical);
        let s = laplace_smooth(&f, 7);
        for row in &s.weights {
            for (a, b) in row.iter().zip(&w) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pinned_cells_hold() {
        let spec = GridSpec::new(4, Vec3::zeros(), 1.0).unwrap();
        let mut f = WeightField::uniform(spec, basis_weights(0), SpaceTag::Canonical);
        f.weights[spec.index(1, 1, 1)] = basis_weights(4);
        let pinned: Vec<bool> = (0..spec.cell_count())
            .map(|i| i == spec.index(2, 1, 1))
            .collect();
        let s = laplace_smooth_pinned(&f, 5, Some(&pinned));
        assert_eq!(s.weights[spec.index(2, 1, 1)], basis_weights(0));
        assert!(s.weights[spec.index(1, 2, 1)][4] > 0.0);
    }

    #[test]
    fn pure_bone_translation_warp() {
        let spec = GridSpec::new(4, Vec3::zeros(), 1.0).unwrap();
        let f = WeightField::uniform(spec, basis_weights(5), SpaceTag::Canonical);
        let mut bones = vec![Isometry::identity(); JOINT_COUNT];
        bones[5] = Isometry::translation(0.1, -0.2, 0.3);
        let bones = BoneTransforms::from_vec(bones);
        let x = Vec3::new(0.2, 0.1, -0.4);
        let r = warp_forward(&x, &f, &bones);
        assert!(!r.outside);
        assert!((r.point - (x + Vec3::new(0.1, -0.2, 0.3))).norm() < 1e-12);
        let back = warp_inverse(&r.point, &f, &bones);
        assert!((back.point - x).norm() < 1e-12);
    }

    #[test]
    fn pelvis_weights_do_not_deform() {
        let spec = GridSpec::new(4, Vec3::zeros(), 1.0).unwrap();
        let f = WeightField::uniform(spec, basis_weights(PELVIS), SpaceTag::Canonical);
        let mut bones = vec![Isometry::rotation(Vec3::new(0.3, 0.2, 0.1)); JOINT_COUNT];
        bones[PELVIS] = Isometry::identity();
        let bones = BoneTransforms::from_vec(bones);
        let x = Vec3::new(0.31, -0.77, 0.12);
        assert_eq!(warp_forward(&x, &f, &bones).point, x);
        assert_eq!(warp_inverse(&x, &f, &bones).point, x);
    }

    #[test]
    fn outside_points_flagged() {
        let spec = GridSpec::new(4, Vec3::zeros(), 1.0).unwrap();
        let f = WeightField::uniform(spec, basis_weights(3), SpaceTag::Canonical);
        let mut bones = vec![Isometry::identity(); JOINT_COUNT];
        bones[3] = Isometry::translation(1.0, 0.0, 0.0);
        let bones = BoneTransforms::from_vec(bones);
        let x = Vec3::new(1.5, 0.0, 0.0);
        let r = warp_forward(&x, &f, &bones);
        assert!(r.outside);
        assert_eq!(r.point, x);
    }

    #[test]
    fn weight_field_chor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.chor");
        let spec = GridSpec::new(3, Vec3::zeros(), 1.0).unwrap();
        let mut w = [0.0; JOINT_COUNT];
        w[0] = 0.5;
        w[23] = 0.5;
        let f = WeightField::uniform(spec, w, SpaceTag::Canonical);
        f.write_chor(&path).unwrap();
        let back = WeightField::read_chor(&path, SpaceTag::Canonical).unwrap();
        assert_eq!(back, f);
    }
}
