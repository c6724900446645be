//! Canonical occupancy from calibrated views.
//!
//! Every voxel center `x_c` is warped into each view's pose, projected, and
//! tested against that view's object mask:
//!
//! ```text
//! Φ_c(x_c) = Σ_k r_k M_k(Π_k(W_k(x_c))) / Σ_k r_k I_k(Π_k(W_k(x_c)))
//! ```
//!
//! with `M_k` the nearest-pixel mask lookup and `I_k` the "in front of the
//! camera and inside the image" indicator. Voxels no view observes get 0.
//! Views are visited in ascending id order inside each voxel, so the result
//! does not depend on thread count.

use std::f64::consts::PI;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{forward_kinematics, BodyMesh, BodyPart, BoneTransforms, PoseParams};
use crate::camera::{azimuth_of, PerspectiveCam, MIN_DEPTH};
use crate::dataset::{Mask, ViewSample};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, OccupancyField, SemanticTag};
use crate::skinning::{
    blend_displacement, nearest_distances, packed_deltas, posed_weight_field, InverseWarp,
    SkinningParams, WeightField,
};
use crate::Vec3;

pub const DEFAULT_BINS: usize = 12;
pub const DEFAULT_EPSILON: f64 = 0.13;

pub fn azimuth_bin(azimuth: f64, bins: usize) -> usize {
    ((azimuth / (2.0 * PI) * bins as f64).floor() as usize).min(bins - 1)
}

/// Sets `r_k = 1 / |bin(k)|` over azimuth bins. Views whose azimuth is
/// undefined are removed; their ids are returned.
pub fn assign_accumulation_scores(views: &mut Vec<ViewSample>, bins: usize) -> Vec<u32> {
    let mut dropped = Vec::new();
    let mut assigned = Vec::with_capacity(views.len());
    for v in views.drain(..) {
        match azimuth_of(&v.camera) {
            Ok(a) => assigned.push((azimuth_bin(a, bins), v)),
            Err(_) => {
                warn!("view {} has no defined azimuth; dropped", v.id);
                dropped.push(v.id);
            }
        }
    }
    let mut counts = vec![0usize; bins];
    for (b, _) in &assigned {
        counts[*b] += 1;
    }
    views.extend(assigned.into_iter().map(|(b, mut v)| {
        v.score = 1.0 / counts[b] as f64;
        v
    }));
    dropped
}

/// Per-bin camera counts.
pub fn bin_counts(cams: &[PerspectiveCam], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for c in cams {
        if let Ok(a) = azimuth_of(c) {
            counts[azimuth_bin(a, bins)] += 1;
        }
    }
    counts
}

/// Bones of each view's pose with the root orientation zeroed.
pub fn view_bones(body: &BodyMesh, views: &[ViewSample]) -> Result<Vec<BoneTransforms>> {
    views
        .iter()
        .map(|v| forward_kinematics(&body.skeleton, &v.pose.person_centric()))
        .collect()
}

/// Camera-side data for the per-voxel inner loop.
struct ViewKernel<'a> {
    rot: [f64; 9],
    t: [f64; 3],
    f: f64,
    cx: f64,
    cy: f64,
    deltas: Vec<[f64; 12]>,
    mask: &'a Mask,
    score: f64,
}

impl<'a> ViewKernel<'a> {
    fn new(view: &'a ViewSample, bones: &BoneTransforms) -> Self {
        let c = &view.camera;
        let r = c.rotation;
        Self {
            rot: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [c.translation.x, c.translation.y, c.translation.z],
            f: c.f,
            cx: c.cx,
            cy: c.cy,
            deltas: packed_deltas(bones),
            mask: &view.object_mask,
            score: view.score,
        }
    }

    /// `(in image, in mask)` for a posed point.
    #[inline]
    fn test(&self, x: &Vec3) -> (bool, bool) {
        let r = &self.rot;
        let z = r[6] * x.x + r[7] * x.y + r[8] * x.z + self.t[2];
        if z <= MIN_DEPTH {
            return (false, false);
        }
        let px = r[0] * x.x + r[1] * x.y + r[2] * x.z + self.t[0];
        let py = r[3] * x.x + r[4] * x.y + r[5] * x.z + self.t[1];
        let u = self.f * px / z + self.cx;
        let v = self.f * py / z + self.cy;
        let m = self.mask;
        if !(u >= 0.0 && v >= 0.0 && u < m.width as f64 && v < m.height as f64) {
            return (false, false);
        }
        (true, m.get(u as usize, v as usize))
    }

    #[inline]
    fn warp(&self, w: &crate::body::Weights, x_c: &Vec3) -> Vec3 {
        x_c + blend_displacement(w, &self.deltas, x_c)
    }
}

fn check_inputs(
    views: &[ViewSample],
    weights: &WeightField,
    bones: &[BoneTransforms],
    spec: &GridSpec,
) -> Result<()> {
    spec.validate()?;
    if !weights.spec.approx_eq(spec) {
        return Err(Error::GridMismatch);
    }
    if bones.len() != views.len() {
        return Err(Error::Format(format!(
            "{} views but {} bone sets",
            views.len(),
            bones.len()
        )));
    }
    for v in views {
        v.validate()?;
    }
    Ok(())
}

/// Kernels in ascending view-id order, paired with their input index.
fn ordered<'a>(
    views: &'a [ViewSample],
    bones: &'a [BoneTransforms],
) -> Vec<(usize, ViewKernel<'a>)> {
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by_key(|&i| views[i].id);
    order
        .into_iter()
        .map(|i| (i, ViewKernel::new(&views[i], &bones[i])))
        .collect()
}

fn aggregate_kernels(kernels: &[ViewKernel], weights: &WeightField, spec: &GridSpec) -> Vec<f64> {
    (0..spec.cell_count())
        .into_par_iter()
        .map(|idx| {
            let x_c = spec.center_of_index(idx);
            let w = &weights.weights[idx];
            let mut num = 0.0;
            let mut den = 0.0;
            for k in kernels {
                let (in_image, in_mask) = k.test(&k.warp(w, &x_c));
                if in_image {
                    den += k.score;
                    if in_mask {
                        num += k.score;
                    }
                }
            }
            if den > 0.0 {
                (num / den).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Holistic canonical occupancy. `bones[k]` belongs to `views[k]`.
pub fn aggregate(
    views: &[ViewSample],
    weights: &WeightField,
    bones: &[BoneTransforms],
    spec: &GridSpec,
) -> Result<OccupancyField> {
    check_inputs(views, weights, bones, spec)?;
    let kernels: Vec<ViewKernel> = ordered(views, bones).into_iter().map(|(_, k)| k).collect();
    Ok(OccupancyField {
        spec: *spec,
        values: aggregate_kernels(&kernels, weights, spec),
        tag: SemanticTag::Holistic,
    })
}

/// Canonical voxel centers within `epsilon` of a body part.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRegion {
    pub part: BodyPart,
    pub epsilon: f64,
    pub indices: Vec<usize>,
}

impl InteractionRegion {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn points(&self, spec: &GridSpec) -> Vec<Vec3> {
        self.indices.iter().map(|&i| spec.center_of_index(i)).collect()
    }
}

pub fn interaction_region(
    body: &BodyMesh,
    part: BodyPart,
    epsilon: f64,
    spec: &GridSpec,
) -> Result<InteractionRegion> {
    spec.validate()?;
    let verts: Vec<Vec3> = body
        .vertices
        .iter()
        .zip(&body.part_labels)
        .filter(|(_, &p)| p == part)
        .map(|(v, _)| *v)
        .collect();
    if verts.is_empty() {
        return Err(Error::EmptyRegion(format!("{part} has no vertices")));
    }
    let d = nearest_distances(spec, &verts);
    let indices: Vec<usize> = d
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= epsilon)
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(Error::EmptyRegion(format!(
            "no voxel center within {epsilon} m of {part}"
        )));
    }
    Ok(InteractionRegion {
        part,
        epsilon,
        indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionStats {
    pub used: usize,
    pub other_prompt: usize,
    pub no_contact: usize,
}

/// Whether some point of the region, warped into the view's pose, projects
/// into the object mask.
fn contact_fires(k: &ViewKernel, region: &InteractionRegion, weights: &WeightField) -> bool {
    region.indices.iter().any(|&i| {
        let x_c = weights.spec.center_of_index(i);
        k.test(&k.warp(&weights.weights[i], &x_c)).1
    })
}

/// Occupancy of one semantic type: only views of `prompt` whose object mask
/// touches the warped interaction region contribute.
pub fn selective_aggregate(
    views: &[ViewSample],
    prompt: &str,
    region: &InteractionRegion,
    weights: &WeightField,
    bones: &[BoneTransforms],
    spec: &GridSpec,
) -> Result<(OccupancyField, SelectionStats)> {
    check_inputs(views, weights, bones, spec)?;
    let mut stats = SelectionStats::default();
    let kernels: Vec<ViewKernel> = ordered(views, bones)
        .into_iter()
        .filter(|(i, k)| {
            if views[*i].prompt != prompt {
                stats.other_prompt += 1;
                false
            } else if !contact_fires(k, region, weights) {
                stats.no_contact += 1;
                false
            } else {
                true
            }
        })
        .map(|(_, k)| k)
        .collect();
    stats.used = kernels.len();
    if kernels.is_empty() {
        warn!(
            "no view supports ({prompt}, {}); returning an empty field",
            region.part
        );
    }
    let tag = SemanticTag::Semantic {
        prompt: prompt.to_string(),
        part: region.part,
    };
    Ok((
        OccupancyField {
            spec: *spec,
            values: aggregate_kernels(&kernels, weights, spec),
            tag,
        },
        stats,
    ))
}

/// Carries a canonical field into `pose` by backward skinning: each posed
/// voxel center is pulled back with the posed-space inverse weights and the
/// canonical field is sampled there.
pub fn infer_posed(
    canonical: &OccupancyField,
    pose: &PoseParams,
    body: &BodyMesh,
    params: &SkinningParams,
) -> Result<OccupancyField> {
    let bones = forward_kinematics(&body.skeleton, &pose.person_centric())?;
    let inv = posed_weight_field(body, &bones, &canonical.spec, params, "target")?;
    Ok(infer_posed_with(canonical, &inv, &bones))
}

/// As [`infer_posed`] with a prebuilt inverse weight field.
pub fn infer_posed_with(
    canonical: &OccupancyField,
    inv_weights: &WeightField,
    bones: &BoneTransforms,
) -> OccupancyField {
    let spec = inv_weights.spec;
    let warp = InverseWarp::new(inv_weights, bones);
    let values = (0..spec.cell_count())
        .into_par_iter()
        .map(|idx| {
            let x = spec.center_of_index(idx);
            canonical.sample(&warp.apply_cell(idx, &x))
        })
        .collect();
    OccupancyField {
        spec,
        values,
        tag: canonical.tag.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{basis_weights, canonical_pose, JOINT_COUNT};
    use crate::skinning::SpaceTag;

    fn cam_at(eye: Vec3) -> PerspectiveCam {
        PerspectiveCam::look_at(eye, Vec3::zeros(), Vec3::y(), 50.0, 32, 32).unwrap()
    }

    fn view(id: u32, cam: PerspectiveCam, mask: Mask) -> ViewSample {
        ViewSample {
            id,
            camera: cam,
            pose: canonical_pose(),
            score: 1.0,
            prompt: "p".into(),
            object_mask: mask,
            human_mask: None,
        }
    }

    fn small_spec() -> GridSpec {
        GridSpec::new(8, Vec3::zeros(), 0.4).unwrap()
    }

    fn identity_setup(spec: GridSpec, n: usize) -> (WeightField, Vec<BoneTransforms>) {
        (
            WeightField::uniform(spec, basis_weights(0), SpaceTag::Canonical),
            vec![BoneTransforms::identity(JOINT_COUNT); n],
        )
    }

    #[test]
    fn scores_from_bins() {
        let mut views: Vec<ViewSample> = (0..3)
            .map(|i| {
                let a = 0.1 + 0.05 * i as f64;
                view(i, cam_at(Vec3::new(a.sin(), 0.0, a.cos()) * 3.0), Mask::new(32, 32))
            })
            .collect();
        views.push(view(9, cam_at(Vec3::new(-3.0, 0.0, 0.1)), Mask::new(32, 32)));
        let dropped = assign_accumulation_scores(&mut views, DEFAULT_BINS);
        assert!(dropped.is_empty());
        let s: Vec<f64> = views.iter().map(|v| v.score).collect();
        assert_eq!(s, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0]);
    }

    #[test]
    fn ratio_examples() {
        let spec = small_spec();
        let full = Mask::filled(32, 32);
        let empty = Mask::new(32, 32);
        let (w, bones) = identity_setup(spec, 2);
        let a = cam_at(Vec3::new(0.0, 0.0, 3.0));
        let b = cam_at(Vec3::new(3.0, 0.0, 0.0));

        let both = aggregate(
            &[view(0, a.clone(), full.clone()), view(1, b.clone(), full.clone())],
            &w,
            &bones,
            &spec,
        )
        .unwrap();
        assert!(both.values.iter().all(|&v| v == 1.0));

        let half = aggregate(
            &[view(0, a.clone(), full.clone()), view(1, b.clone(), empty)],
            &w,
            &bones,
            &spec,
        )
        .unwrap();
        assert!(half.values.iter().all(|&v| v == 0.5));

        // view B looks away from the grid, so it never counts
        let away = PerspectiveCam::look_at(
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.0),
            Vec3::y(),
            50.0,
            32,
            32,
        )
        .unwrap();
        let one = aggregate(
            &[view(0, a, full.clone()), view(1, away, Mask::new(32, 32))],
            &w,
            &bones,
            &spec,
        )
        .unwrap();
        assert!(one.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unobserved_is_zero() {
        let spec = small_spec();
        let (w, bones) = identity_setup(spec, 1);
        let away = PerspectiveCam::look_at(
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.0),
            Vec3::y(),
            50.0,
            32,
            32,
        )
        .unwrap();
        let f = aggregate(&[view(0, away, Mask::filled(32, 32))], &w, &bones, &spec).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let spec = small_spec();
        let (w, _) = identity_setup(GridSpec::new(6, Vec3::zeros(), 0.4).unwrap(), 0);
        let v = view(0, cam_at(Vec3::new(0.0, 0.0, 3.0)), Mask::new(32, 32));
        let bones = vec![BoneTransforms::identity(JOINT_COUNT)];
        assert!(matches!(
            aggregate(std::slice::from_ref(&v), &w, &bones, &spec),
            Err(Error::GridMismatch)
        ));
        let (w, _) = identity_setup(spec, 0);
        assert!(aggregate(std::slice::from_ref(&v), &w, &[], &spec).is_err());
        let mut bad = v;
        bad.object_mask = Mask::new(10, 10);
        assert!(matches!(
            aggregate(&[bad], &w, &bones, &spec),
            Err(Error::DimensionMismatch(..))
        ));
    }

    #[test]
    fn region_grows_with_epsilon() {
        let body = BodyMesh::default();
        let spec = GridSpec::new(24, Vec3::zeros(), 1.5).unwrap();
        let small = interaction_region(&body, BodyPart::RightHand, 0.08, &spec).unwrap();
        let big = interaction_region(&body, BodyPart::RightHand, 0.2, &spec).unwrap();
        assert!(small.indices.iter().all(|i| big.indices.contains(i)));
        assert!(big.len() > small.len());
        assert!(matches!(
            interaction_region(&body, BodyPart::RightHand, 0.0, &spec),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn hand_and_foot_regions_disjoint() {
        let body = BodyMesh::default();
        let spec = GridSpec::new(32, Vec3::zeros(), 1.5).unwrap();
        let hand = interaction_region(&body, BodyPart::RightHand, DEFAULT_EPSILON, &spec).unwrap();
        let foot = interaction_region(&body, BodyPart::LeftFoot, DEFAULT_EPSILON, &spec).unwrap();
        assert!(hand.indices.iter().all(|i| !foot.indices.contains(i)));
        let c: Vec3 = hand.points(&spec).iter().sum::<Vec3>() / hand.len() as f64;
        assert!(c.x < -0.5, "{c:?}");
    }

    #[test]
    fn canonical_target_pose_is_identity() {
        let body = BodyMesh::default();
        let spec = GridSpec::new(16, Vec3::zeros(), 1.5).unwrap();
        let field = OccupancyField::from_fn(spec, |p| (-(p - Vec3::new(0.4, 0.1, 0.0)).norm_squared() * 8.0).exp());
        let posed = infer_posed(&field, &canonical_pose(), &body, &SkinningParams::default()).unwrap();
        let diff = field
            .values
            .iter()
            .zip(&posed.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-3, "{diff}");
    }
}
