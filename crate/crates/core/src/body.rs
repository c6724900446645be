//! Procedural articulated body: a 24-joint skeleton with the usual SMPL joint
//! ordering, a capsule-sampled surface, per-vertex skinning weights and the
//! 12-part segmentation used for interaction regions.
//!
//! Axes: y up, z forward (the body faces +z), right-handed. The body's left
//! side is +x. Joint 0 (pelvis) sits at the origin.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{IsometryMatrix3, Rotation3, Translation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

pub const JOINT_COUNT: usize = 24;

pub const PELVIS: usize = 0;
pub const LEFT_HIP: usize = 1;
pub const RIGHT_HIP: usize = 2;
pub const SPINE1: usize = 3;
pub const LEFT_KNEE: usize = 4;
pub const RIGHT_KNEE: usize = 5;
pub const SPINE2: usize = 6;
pub const LEFT_ANKLE: usize = 7;
pub const RIGHT_ANKLE: usize = 8;
pub const SPINE3: usize = 9;
pub const LEFT_FOOT: usize = 10;
pub const RIGHT_FOOT: usize = 11;
pub const NECK: usize = 12;
pub const LEFT_COLLAR: usize = 13;
pub const RIGHT_COLLAR: usize = 14;
pub const HEAD: usize = 15;
pub const LEFT_SHOULDER: usize = 16;
pub const RIGHT_SHOULDER: usize = 17;
pub const LEFT_ELBOW: usize = 18;
pub const RIGHT_ELBOW: usize = 19;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;
pub const LEFT_HAND: usize = 22;
pub const RIGHT_HAND: usize = 23;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const STANDARD_PARENTS: [i32; JOINT_COUNT] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

// Rest (zero-pose) offsets from the parent joint, meters. Arms are horizontal.
const STANDARD_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.09, -0.08, 0.0],
    [-0.09, -0.08, 0.0],
    [0.0, 0.11, -0.01],
    [0.0, -0.38, 0.0],
    [0.0, -0.38, 0.0],
    [0.0, 0.13, 0.01],
    [0.0, -0.40, -0.01],
    [0.0, -0.40, -0.01],
    [0.0, 0.10, 0.0],
    [0.0, -0.05, 0.12],
    [0.0, -0.05, 0.12],
    [0.0, 0.20, -0.02],
    [0.07, 0.12, 0.0],
    [-0.07, 0.12, 0.0],
    [0.0, 0.09, 0.04],
    [0.11, 0.03, 0.0],
    [-0.11, 0.03, 0.0],
    [0.26, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
    [0.08, 0.0, 0.0],
    [-0.08, 0.0, 0.0],
];

// Capsule radius of the surface owned by each bone.
const BONE_RADII: [f64; JOINT_COUNT] = [
    0.12, 0.075, 0.075, 0.13, 0.055, 0.055, 0.14, 0.045, 0.045, 0.13, 0.04, 0.04, 0.055, 0.06,
    0.06, 0.10, 0.05, 0.05, 0.04, 0.04, 0.035, 0.035, 0.035, 0.035,
];

// Extra capsule for leaf joints (head, feet, hands), rest frame.
fn leaf_extension(joint: usize) -> Option<[f64; 3]> {
    match joint {
        HEAD => Some([0.0, 0.12, 0.0]),
        LEFT_FOOT | RIGHT_FOOT => Some([0.0, 0.0, 0.08]),
        LEFT_HAND => Some([0.08, 0.0, 0.0]),
        RIGHT_HAND => Some([-0.08, 0.0, 0.0]),
        _ => None,
    }
}

/// Width of the two-bone blend zone around each joint.
pub const JOINT_BLEND_RADIUS: f64 = 0.03;

pub type Isometry = IsometryMatrix3<f64>;

/// Rodrigues rotation from an axis-angle vector.
pub fn axis_angle_rotation(v: &Vec3) -> Rotation3<f64> {
    Rotation3::new(*v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub parent: Option<usize>,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidSkeleton("no joints".into()));
        }
        if joints[0].parent.is_some() {
            return Err(Error::InvalidSkeleton("joint 0 must be the root".into()));
        }
        for (j, joint) in joints.iter().enumerate().skip(1) {
            match joint.parent {
                Some(p) if p < j => {}
                Some(p) => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
                None => {
                    return Err(Error::InvalidSkeleton(format!(
                        "joint {j} has no parent; only joint 0 may be a root"
                    )))
                }
            }
            if joint.offset.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidSkeleton(format!("joint {j} offset not finite")));
            }
        }
        if joints[0].offset != [0.0; 3] {
            return Err(Error::InvalidSkeleton("root must sit at the origin".into()));
        }
        Ok(Self { joints })
    }

    /// The 24-joint body used throughout the crate.
    pub fn standard() -> Self {
        let joints = (0..JOINT_COUNT)
            .map(|j| Joint {
                parent: usize::try_from(STANDARD_PARENTS[j]).ok(),
                offset: STANDARD_OFFSETS[j],
            })
            .collect();
        Self { joints }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, joint)| joint.parent == Some(j))
            .map(|(c, _)| c)
    }

    /// Accumulated parent-chain transforms `G_j(pose)`.
    pub fn global_transforms(&self, pose: &PoseParams) -> Result<Vec<Isometry>> {
        pose.validate(self.joint_count())?;
        let mut out: Vec<Isometry> = Vec::with_capacity(self.joints.len());
        for (j, joint) in self.joints.iter().enumerate() {
            let rot = if j == 0 {
                axis_angle_rotation(&pose.global_orient)
            } else {
                axis_angle_rotation(&pose.joint_rots[j - 1])
            };
            let local = Isometry::from_parts(Translation3::from(Vec3::from(joint.offset)), rot);
            let g = match joint.parent {
                Some(p) => out[p] * local,
                None => local,
            };
            out.push(g);
        }
        Ok(out)
    }

    pub fn joint_positions(&self, pose: &PoseParams) -> Result<Vec<Vec3>> {
        Ok(self
            .global_transforms(pose)?
            .iter()
            .map(|g| g.translation.vector)
            .collect())
    }
}

/// Axis-angle pose: root orientation plus one rotation per non-root joint.
/// `shape` is carried along but ignored by the procedural body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub global_orient: Vec3,
    pub joint_rots: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[f64; 10]>,
}

impl PoseParams {
    pub fn zero(joint_count: usize) -> Self {
        Self {
            global_orient: Vec3::zeros(),
            joint_rots: vec![Vec3::zeros(); joint_count.saturating_sub(1)],
            shape: None,
        }
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.joint_rots.len() + 1 != joint_count {
            return Err(Error::InvalidPose(format!(
                "expected {} joint rotations, got {}",
                joint_count - 1,
                self.joint_rots.len()
            )));
        }
        let finite = self.global_orient.iter().all(|c| c.is_finite())
            && self.joint_rots.iter().flat_map(|r| r.iter()).all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidPose("non-finite axis-angle component".into()));
        }
        Ok(())
    }

    /// Same articulation with the root orientation zeroed.
    pub fn person_centric(&self) -> Self {
        Self {
            global_orient: Vec3::zeros(),
            ..self.clone()
        }
    }

    /// Rotation of joint `j` (j = 0 is the root).
    pub fn rotation_of(&self, j: usize) -> Vec3 {
        if j == 0 {
            self.global_orient
        } else {
            self.joint_rots[j - 1]
        }
    }

    pub fn set_rotation(&mut self, j: usize, v: Vec3) {
        if j == 0 {
            self.global_orient = v;
        } else {
            self.joint_rots[j - 1] = v;
        }
    }
}

/// Rest pose of the canonical space: zero rotations except ±π/6 about z at
/// the hips, which spreads the legs apart.
pub fn canonical_pose() -> PoseParams {
    let mut pose = PoseParams::zero(JOINT_COUNT);
    pose.set_rotation(LEFT_HIP, Vec3::new(0.0, 0.0, PI / 6.0));
    pose.set_rotation(RIGHT_HIP, Vec3::new(0.0, 0.0, -PI / 6.0));
    pose
}

/// Per-bone rigid transforms `B_j` mapping canonical space into a posed space.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTransforms {
    bones: Vec<Isometry>,
}

impl BoneTransforms {
    pub fn identity(n: usize) -> Self {
        Self {
            bones: vec![Isometry::identity(); n],
        }
    }

    pub fn from_vec(bones: Vec<Isometry>) -> Self {
        Self { bones }
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn get(&self, j: usize) -> &Isometry {
        &self.bones[j]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Isometry> {
        self.bones.iter()
    }

    pub fn inverse(&self) -> Self {
        Self {
            bones: self.bones.iter().map(|b| b.inverse()).collect(),
        }
    }

    /// Rotation matrices (row-major 3x3) and translations as flat arrays, the
    /// layout used by the hot warping loops.
    pub fn packed(&self) -> Vec<[f64; 12]> {
        self.bones
            .iter()
            .map(|b| {
                let r = b.rotation.matrix();
                let t = b.translation.vector;
                [
                    r[(0, 0)],
                    r[(0, 1)],
                    r[(0, 2)],
                    r[(1, 0)],
                    r[(1, 1)],
                    r[(1, 2)],
                    r[(2, 0)],
                    r[(2, 1)],
                    r[(2, 2)],
                    t.x,
                    t.y,
                    t.z,
                ]
            })
            .collect()
    }
}

/// `B_j = G_j(pose) · G_j(reference)⁻¹`.
pub fn forward_kinematics_relative(
    skel: &Skeleton,
    pose: &PoseParams,
    reference: &PoseParams,
) -> Result<BoneTransforms> {
    let posed = skel.global_transforms(pose)?;
    let rest = skel.global_transforms(reference)?;
    Ok(BoneTransforms {
        bones: posed
            .iter()
            .zip(&rest)
            .map(|(g, g0)| g * g0.inverse())
            .collect(),
    })
}

/// Bone transforms relative to the canonical pose.
pub fn forward_kinematics(skel: &Skeleton, pose: &PoseParams) -> Result<BoneTransforms> {
    forward_kinematics_relative(skel, pose, &canonical_pose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BodyPart {
    #[serde(rename = "rightHand")]
    RightHand,
    #[serde(rename = "leftHand")]
    LeftHand,
    #[serde(rename = "rightArm")]
    RightArm,
    #[serde(rename = "leftArm")]
    LeftArm,
    #[serde(rename = "rightLowerLeg")]
    RightLowerLeg,
    #[serde(rename = "leftLowerLeg")]
    LeftLowerLeg,
    #[serde(rename = "rightUpperLeg")]
    RightUpperLeg,
    #[serde(rename = "leftUpperLeg")]
    LeftUpperLeg,
    #[serde(rename = "rightFoot")]
    RightFoot,
    #[serde(rename = "leftFoot")]
    LeftFoot,
    #[serde(rename = "torso")]
    Torso,
    #[serde(rename = "face")]
    Face,
}

impl BodyPart {
    pub const ALL: [BodyPart; 12] = [
        BodyPart::RightHand,
        BodyPart::LeftHand,
        BodyPart::RightArm,
        BodyPart::LeftArm,
        BodyPart::RightLowerLeg,
        BodyPart::LeftLowerLeg,
        BodyPart::RightUpperLeg,
        BodyPart::LeftUpperLeg,
        BodyPart::RightFoot,
        BodyPart::LeftFoot,
        BodyPart::Torso,
        BodyPart::Face,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::RightHand => "rightHand",
            BodyPart::LeftHand => "leftHand",
            BodyPart::RightArm => "rightArm",
            BodyPart::LeftArm => "leftArm",
            BodyPart::RightLowerLeg => "rightLowerLeg",
            BodyPart::LeftLowerLeg => "leftLowerLeg",
            BodyPart::RightUpperLeg => "rightUpperLeg",
            BodyPart::LeftUpperLeg => "leftUpperLeg",
            BodyPart::RightFoot => "rightFoot",
            BodyPart::LeftFoot => "leftFoot",
            BodyPart::Torso => "torso",
            BodyPart::Face => "face",
        }
    }

    /// Part that owns the surface around bone `j` on the standard body.
    pub fn of_bone(j: usize) -> BodyPart {
        match j {
            LEFT_HIP => BodyPart::LeftUpperLeg,
            RIGHT_HIP => BodyPart::RightUpperLeg,
            LEFT_KNEE => BodyPart::LeftLowerLeg,
            RIGHT_KNEE => BodyPart::RightLowerLeg,
            LEFT_ANKLE | LEFT_FOOT => BodyPart::LeftFoot,
            RIGHT_ANKLE | RIGHT_FOOT => BodyPart::RightFoot,
            NECK | HEAD => BodyPart::Face,
            LEFT_SHOULDER | LEFT_ELBOW => BodyPart::LeftArm,
            RIGHT_SHOULDER | RIGHT_ELBOW => BodyPart::RightArm,
            LEFT_WRIST | LEFT_HAND => BodyPart::LeftHand,
            RIGHT_WRIST | RIGHT_HAND => BodyPart::RightHand,
            _ => BodyPart::Torso,
        }
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BodyPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BodyPart::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPart(s.to_string()))
    }
}

pub type Weights = [f64; JOINT_COUNT];

pub fn basis_weights(j: usize) -> Weights {
    let mut w = [0.0; JOINT_COUNT];
    w[j] = 1.0;
    w
}

/// A capsule of the surface in canonical space, kept for silhouette rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub bone: usize,
    pub start: Vec3,
    pub end: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BodyConfig {
    pub samples_per_bone: usize,
}

impl Default for BodyConfig {
    fn default() -> Self {
        Self {
            samples_per_bone: 64,
        }
    }
}

/// Canonical-space template surface with skinning weights and part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyMesh {
    pub skeleton: Skeleton,
    pub vertices: Vec<Vec3>,
    pub skin_weights: Vec<Weights>,
    pub part_labels: Vec<BodyPart>,
    pub capsules: Vec<Capsule>,
}

impl Default for BodyMesh {
    fn default() -> Self {
        Self::generate(&BodyConfig::default())
    }
}

impl BodyMesh {
    /// Builds the procedural body in the canonical pose.
    pub fn generate(cfg: &BodyConfig) -> Self {
        let skeleton = Skeleton::standard();
        let zero = PoseParams::zero(JOINT_COUNT);
        let rest = skeleton
            .global_transforms(&zero)
            .expect("standard skeleton accepts the zero pose");
        let canon = skeleton
            .global_transforms(&canonical_pose())
            .expect("standard skeleton accepts the canonical pose");
        let to_canonical: Vec<Isometry> = canon
            .iter()
            .zip(&rest)
            .map(|(c, r)| c * r.inverse())
            .collect();

        let mut vertices = Vec::new();
        let mut skin_weights = Vec::new();
        let mut part_labels = Vec::new();
        let mut capsules = Vec::new();
        let golden_angle = PI * (3.0 - 5f64.sqrt());

        for bone in 0..JOINT_COUNT {
            let start = rest[bone].translation.vector;
            // (end point, child joint if the segment ends at one)
            let mut segments: Vec<(Vec3, Option<usize>)> = skeleton
                .children(bone)
                .map(|c| (rest[c].translation.vector, Some(c)))
                .collect();
            if let Some(ext) = leaf_extension(bone) {
                segments.push((start + Vec3::from(ext), None));
            }
            let radius = BONE_RADII[bone];
            let n_seg = segments.len();
            for (si, (end, child)) in segments.iter().enumerate() {
                let n = cfg.samples_per_bone / n_seg
                    + usize::from(si < cfg.samples_per_bone % n_seg);
                let axis = end - start;
                let len = axis.norm();
                let dir = axis / len;
                let (u, v) = orthonormal_pair(&dir);
                let span = len + 2.0 * radius;
                for i in 0..n {
                    let s = -radius + (i as f64 + 0.5) / n as f64 * span;
                    let radial = if s < 0.0 {
                        (radius * radius - s * s).max(0.0).sqrt()
                    } else if s > len {
                        (radius * radius - (s - len) * (s - len)).max(0.0).sqrt()
                    } else {
                        radius
                    };
                    let angle = i as f64 * golden_angle;
                    let p_rest = start + dir * s + (u * angle.cos() + v * angle.sin()) * radial;
                    let p = to_canonical[bone].transform_point(&p_rest.into()).coords;

                    let mut w = [0.0; JOINT_COUNT];
                    match (child, skeleton.parent(bone)) {
                        (Some(c), _) if s > len - JOINT_BLEND_RADIUS => {
                            w[bone] = 0.5;
                            w[*c] = 0.5;
                        }
                        (_, Some(p)) if s < JOINT_BLEND_RADIUS => {
                            w[bone] = 0.5;
                            w[p] = 0.5;
                        }
                        _ => w[bone] = 1.0,
                    }
                    vertices.push(p);
                    skin_weights.push(w);
                    part_labels.push(BodyPart::of_bone(bone));
                }
                capsules.push(Capsule {
                    bone,
                    start: to_canonical[bone].transform_point(&start.into()).coords,
                    end: to_canonical[bone].transform_point(&(*end).into()).coords,
                    radius,
                });
            }
        }

        Self {
            skeleton,
            vertices,
            skin_weights,
            part_labels,
            capsules,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Linear blend skinning of the template: `v' = Σ_j w_ij B_j v_i`.
    pub fn pose_vertices(&self, bones: &BoneTransforms) -> Vec<Vec3> {
        pose_mesh(self, bones)
    }

    /// Canonical capsules carried rigidly by their owning bone.
    pub fn posed_capsules(&self, bones: &BoneTransforms) -> Vec<Capsule> {
        self.capsules
            .iter()
            .map(|c| {
                let b = bones.get(c.bone);
                Capsule {
                    bone: c.bone,
                    start: b.transform_point(&c.start.into()).coords,
                    end: b.transform_point(&c.end.into()).coords,
                    radius: c.radius,
                }
            })
            .collect()
    }

    pub fn to_template(&self) -> BodyTemplate {
        BodyTemplate {
            joints: self.skeleton.joints().to_vec(),
            vertices: self
                .vertices
                .iter()
                .zip(&self.skin_weights)
                .zip(&self.part_labels)
                .map(|((v, w), part)| TemplateVertex {
                    pos: [v.x, v.y, v.z],
                    weights: w
                        .iter()
                        .enumerate()
                        .filter(|(_, &x)| x != 0.0)
                        .map(|(j, &x)| (j, x))
                        .collect(),
                    part: *part,
                })
                .collect(),
        }
    }

    /// Loads a template; rows are re-normalized and negative weights rejected.
    /// Capsules are not part of the template and come back empty.
    pub fn from_template(t: &BodyTemplate) -> Result<Self> {
        let skeleton = Skeleton::new(t.joints.clone())?;
        if skeleton.joint_count() != JOINT_COUNT {
            return Err(Error::InvalidBody(format!(
                "expected {JOINT_COUNT} joints, got {}",
                skeleton.joint_count()
            )));
        }
        if t.vertices.is_empty() {
            return Err(Error::EmptyVertices);
        }
        let mut vertices = Vec::with_capacity(t.vertices.len());
        let mut skin_weights = Vec::with_capacity(t.vertices.len());
        let mut part_labels = Vec::with_capacity(t.vertices.len());
        for (i, tv) in t.vertices.iter().enumerate() {
            let mut w = [0.0; JOINT_COUNT];
            for &(j, x) in &tv.weights {
                if j >= JOINT_COUNT {
                    return Err(Error::InvalidBody(format!("vertex {i}: bone index {j}")));
                }
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(Error::InvalidBody(format!("vertex {i}: weight {x}")));
                }
                w[j] += x;
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidBody(format!("vertex {i}: all-zero weights")));
            }
            w.iter_mut().for_each(|x| *x /= total);
            vertices.push(Vec3::from(tv.pos));
            skin_weights.push(w);
            part_labels.push(tv.part);
        }
        Ok(Self {
            skeleton,
            vertices,
            skin_weights,
            part_labels,
            capsules: Vec::new(),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(&self.to_template()).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: BodyTemplate = serde_json::from_str(&s).map_err(|e| Error::json(path, e))?;
        Self::from_template(&t)
    }
}

/// `v' = Σ_j w_ij B_j v_i` for every template vertex.
pub fn pose_mesh(body: &BodyMesh, bones: &BoneTransforms) -> Vec<Vec3> {
    body.vertices
        .iter()
        .zip(&body.skin_weights)
        .map(|(v, w)| {
            let p = (*v).into();
            w.iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(j, &x)| bones.get(j).transform_point(&p).coords * x)
                .sum()
        })
        .collect()
}

/// Indices of the vertices labelled `part`.
pub fn part_vertices(body: &BodyMesh, part: BodyPart) -> Vec<usize> {
    body.part_labels
        .iter()
        .enumerate()
        .filter(|(_, &p)| p == part)
        .map(|(i, _)| i)
        .collect()
}

pub fn part_vertices_by_name(body: &BodyMesh, part: &str) -> Result<Vec<usize>> {
    Ok(part_vertices(body, part.parse()?))
}

fn orthonormal_pair(dir: &Vec3) -> (Vec3, Vec3) {
    let helper = if dir.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let u = dir.cross(&helper).normalize();
    let v = dir.cross(&u);
    (u, v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyTemplate {
    pub joints: Vec<Joint>,
    pub vertices: Vec<TemplateVertex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateVertex {
    pub pos: [f64; 3],
    pub weights: Vec<(usize, f64)>,
    pub part: BodyPart,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn max_abs_identity_error(b: &Isometry) -> f64 {
        let r = b.rotation.matrix() - nalgebra::Matrix3::identity();
        r.abs().max().max(b.translation.vector.abs().max())
    }

    #[test]
    fn canonical_pose_hips() {
        let p = canonical_pose();
        assert_eq!(p.rotation_of(LEFT_HIP), Vec3::new(0.0, 0.0, PI / 6.0));
        assert_eq!(p.rotation_of(RIGHT_HIP), Vec3::new(0.0, 0.0, -PI / 6.0));
        assert_eq!(p.global_orient, Vec3::zeros());
        let nonzero = (1..JOINT_COUNT)
            .filter(|&j| p.rotation_of(j) != Vec3::zeros())
            .count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn canonical_pose_is_identity_relative_to_itself() {
        let skel = Skeleton::standard();
        let b = forward_kinematics(&skel, &canonical_pose()).unwrap();
        assert_eq!(b.len(), JOINT_COUNT);
        for bone in b.iter() {
            assert!(max_abs_identity_error(bone) < 1e-12);
        }
    }

    #[test]
    fn two_bone_chain_composition() {
        let skel = Skeleton::new(vec![
            Joint {
                parent: None,
                offset: [0.0; 3],
            },
            Joint {
                parent: Some(0),
                offset: [0.0, -0.4, 0.0],
            },
        ])
        .unwrap();
        let mut pose = PoseParams::zero(2);
        pose.global_orient = Vec3::new(0.0, 0.0, PI / 2.0);
        let pos = skel.joint_positions(&pose).unwrap();
        assert_abs_diff_eq!(pos[1] - pos[0], Vec3::new(0.4, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn pelvis_bone_identity_without_global_orient() {
        let skel = Skeleton::standard();
        let mut pose = canonical_pose();
        for j in 1..JOINT_COUNT {
            pose.set_rotation(j, Vec3::new(0.1 * j as f64, -0.2, 0.05));
        }
        let b = forward_kinematics(&skel, &pose).unwrap();
        assert!(max_abs_identity_error(b.get(PELVIS)) < 1e-12);
    }

    #[test]
    fn rejects_bad_skeletons() {
        let bad = vec![
            Joint {
                parent: None,
                offset: [0.0; 3],
            },
            Joint {
                parent: Some(1),
                offset: [0.0; 3],
            },
        ];
        assert!(Skeleton::new(bad).is_err());
        let two_roots = vec![
            Joint {
                parent: None,
                offset: [0.0; 3],
            },
            Joint {
                parent: None,
                offset: [0.0; 3],
            },
        ];
        assert!(Skeleton::new(two_roots).is_err());
        assert!(Skeleton::new(Skeleton::standard().joints().to_vec()).is_ok());
    }

    #[test]
    fn pose_length_checked() {
        let skel = Skeleton::standard();
        assert!(matches!(
            skel.global_transforms(&PoseParams::zero(5)),
            Err(Error::InvalidPose(_))
        ));
    }

    #[test]
    fn default_body_layout() {
        let body = BodyMesh::default();
        assert_eq!(body.vertex_count(), 1536);
        for w in &body.skin_weights {
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ys: Vec<f64> = body.vertices.iter().map(|v| v.y).collect();
        let height = ys.iter().cloned().fold(f64::MIN, f64::max)
            - ys.iter().cloned().fold(f64::MAX, f64::min);
        assert!((1.55..1.85).contains(&height), "height {height}");
        // legs are spread apart by the canonical hips
        let left_ankle = body
            .skeleton
            .joint_positions(&canonical_pose())
            .unwrap()[LEFT_ANKLE];
        assert!(left_ankle.x > 0.4);
    }

    #[test]
    fn parts_partition_vertices() {
        let body = BodyMesh::default();
        let mut seen = vec![0usize; body.vertex_count()];
        for part in BodyPart::ALL {
            let idx = part_vertices(&body, part);
            assert!(!idx.is_empty(), "{part} empty");
            for i in idx {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        let torso = part_vertices(&body, BodyPart::Torso);
        let face = part_vertices(&body, BodyPart::Face);
        assert!(torso.iter().all(|i| !face.contains(i)));
    }

    #[test]
    fn right_hand_on_negative_x() {
        let body = BodyMesh::default();
        let idx = part_vertices_by_name(&body, "rightHand").unwrap();
        assert!(idx.iter().all(|&i| body.vertices[i].x < -0.5));
        let idx = part_vertices_by_name(&body, "leftHand").unwrap();
        assert!(idx.iter().all(|&i| body.vertices[i].x > 0.5));
        assert!(matches!(
            part_vertices_by_name(&body, "tail"),
            Err(Error::UnknownPart(_))
        ));
    }

    #[test]
    fn identity_bones_leave_vertices() {
        let body = BodyMesh::default();
        let posed = pose_mesh(&body, &BoneTransforms::identity(JOINT_COUNT));
        for (a, b) in posed.iter().zip(&body.vertices) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn blended_translation_skinning() {
        let mut body = BodyMesh::default();
        body.vertices.truncate(2);
        body.skin_weights.truncate(2);
        body.part_labels.truncate(2);
        let mut w = [0.0; JOINT_COUNT];
        w[3] = 0.5;
        w[5] = 0.5;
        body.skin_weights[0] = w;
        body.skin_weights[1] = basis_weights(7);
        let t1 = Vec3::new(0.2, 0.0, -0.1);
        let t2 = Vec3::new(0.0, 0.4, 0.3);
        let mut bones = vec![Isometry::identity(); JOINT_COUNT];
        bones[3] = Isometry::translation(t1.x, t1.y, t1.z);
        bones[5] = Isometry::translation(t2.x, t2.y, t2.z);
        bones[7] = Isometry::rotation(Vec3::new(0.0, 0.3, 0.0));
        let bones = BoneTransforms::from_vec(bones);
        let posed = pose_mesh(&body, &bones);
        assert_abs_diff_eq!(posed[0], body.vertices[0] + (t1 + t2) / 2.0, epsilon = 1e-12);
        let expected = bones.get(7).transform_point(&body.vertices[1].into()).coords;
        assert_abs_diff_eq!(posed[1], expected, epsilon = 1e-12);
    }

    #[test]
    fn template_round_trip_and_validation() {
        let body = BodyMesh::default();
        let t = body.to_template();
        let back = BodyMesh::from_template(&t).unwrap();
        assert_eq!(back.vertices, body.vertices);
        assert_eq!(back.part_labels, body.part_labels);
        for (a, b) in back.skin_weights.iter().zip(&body.skin_weights) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }

        let mut unnormalized = t.clone();
        unnormalized.vertices[0].weights = vec![(0, 2.0), (3, 6.0)];
        let b = BodyMesh::from_template(&unnormalized).unwrap();
        assert_eq!(b.skin_weights[0][0], 0.25);
        assert_eq!(b.skin_weights[0][3], 0.75);

        let mut negative = t;
        negative.vertices[0].weights = vec![(0, 1.5), (3, -0.5)];
        assert!(matches!(
            BodyMesh::from_template(&negative),
            Err(Error::InvalidBody(_))
        ));
    }
}
