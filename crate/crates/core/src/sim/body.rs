//! Fixed-proportion capsule body with forward kinematics.
//!
//! Joint indices: 0 pelvis, 1 spine, 2 neck, 3 head, 4/6 shoulders (L/R),
//! 5/7 elbows, 8/11 hips, 9/12 knees, 10/13 ankles. Each bone is a capsule
//! hanging off one joint; a bone's frame is exactly its joint's world
//! transform, so garment vertices bound to a bone follow it rigidly.

use crate::geom::{add, cross, euler_to_mat, normalize, scale, RigidTransform, Vec3};
use crate::sim::{BodyPose, JOINT_COUNT};

/// (parent, offset in parent frame) per joint; pelvis carries the rest base.
const JOINT_TREE: [(usize, [f64; 3]); JOINT_COUNT] = [
    (usize::MAX, [0.0, 0.95, 0.0]),  // 0 pelvis (offset = rest base position)
    (0, [0.0, 0.20, 0.0]),           // 1 spine
    (1, [0.0, 0.30, 0.0]),           // 2 neck
    (2, [0.0, 0.10, 0.0]),           // 3 head
    (1, [0.0, 0.26, 0.19]),          // 4 left shoulder
    (4, [0.0, -0.29, 0.03]),         // 5 left elbow
    (1, [0.0, 0.26, -0.19]),         // 6 right shoulder
    (6, [0.0, -0.29, -0.03]),        // 7 right elbow
    (0, [0.0, -0.04, 0.09]),         // 8 left hip
    (8, [0.0, -0.45, 0.0]),          // 9 left knee
    (9, [0.0, -0.41, 0.0]),          // 10 left ankle
    (0, [0.0, -0.04, -0.09]),        // 11 right hip
    (11, [0.0, -0.45, 0.0]),         // 12 right knee
    (12, [0.0, -0.41, 0.0]),         // 13 right ankle
];

/// (owning joint, capsule tip in joint frame, radius) per bone.
const BONES: [(usize, [f64; 3], f64); 14] = [
    (0, [0.0, 0.20, 0.0], 0.140),   // 0 lower torso
    (1, [0.0, 0.30, 0.0], 0.135),   // 1 upper torso
    (2, [0.0, 0.10, 0.0], 0.050),   // 2 neck
    (3, [0.0, 0.20, 0.0], 0.100),   // 3 head
    (4, [0.0, -0.29, 0.03], 0.045), // 4 left upper arm
    (5, [0.0, -0.27, 0.0], 0.040),  // 5 left forearm
    (6, [0.0, -0.29, -0.03], 0.045), // 6 right upper arm
    (7, [0.0, -0.27, 0.0], 0.040),  // 7 right forearm
    (8, [0.0, -0.45, 0.0], 0.075),  // 8 left thigh
    (9, [0.0, -0.41, 0.0], 0.055),  // 9 left shin
    (11, [0.0, -0.45, 0.0], 0.075), // 10 right thigh
    (12, [0.0, -0.41, 0.0], 0.055), // 11 right shin
    (10, [0.16, -0.03, 0.0], 0.040), // 12 left foot
    (13, [0.16, -0.03, 0.0], 0.040), // 13 right foot
];

pub const BONE_COUNT: usize = BONES.len();

/// World-space capsule: segment [a, b] with a radius.
#[derive(Debug, Clone, Copy)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

/// Plain triangle mesh (positions + faces); body surfaces carry no UVs.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

/// The standard-proportion body (≈1.75 m tall). Stateless apart from cached
/// per-bone capsule meshes in bone-local coordinates.
#[derive(Debug, Clone)]
pub struct BodyModel {
    local_meshes: Vec<TriMesh>,
}

impl Default for BodyModel {
    fn default() -> Self {
        Self::new()
    }
}

impl BodyModel {
    pub fn new() -> Self {
        let local_meshes = BONES
            .iter()
            .map(|&(_, tip, radius)| capsule_mesh(tip, radius, 6, 10))
            .collect();
        BodyModel { local_meshes }
    }

    /// World transform per joint.
    pub fn joint_frames(&self, pose: &BodyPose) -> [RigidTransform; JOINT_COUNT] {
        let mut frames = [RigidTransform::IDENTITY; JOINT_COUNT];
        for j in 0..JOINT_COUNT {
            let (parent, offset) = JOINT_TREE[j];
            let rot = euler_to_mat(pose.joint_angles[j]);
            frames[j] = if parent == usize::MAX {
                RigidTransform::new(rot, add(offset, pose.root))
            } else {
                frames[parent].compose(&RigidTransform::new(rot, offset))
            };
        }
        frames
    }

    /// World transform per bone (the owning joint's frame).
    pub fn bone_frames(&self, pose: &BodyPose) -> [RigidTransform; BONE_COUNT] {
        let joints = self.joint_frames(pose);
        let mut out = [RigidTransform::IDENTITY; BONE_COUNT];
        for (b, &(joint, _, _)) in BONES.iter().enumerate() {
            out[b] = joints[joint];
        }
        out
    }

    /// World-space capsules for one pose.
    pub fn capsules(&self, pose: &BodyPose) -> [Capsule; BONE_COUNT] {
        let joints = self.joint_frames(pose);
        let mut out = [Capsule {
            a: [0.0; 3],
            b: [0.0; 3],
            radius: 0.0,
        }; BONE_COUNT];
        for (b, &(joint, tip, radius)) in BONES.iter().enumerate() {
            out[b] = Capsule {
                a: joints[joint].apply([0.0; 3]),
                b: joints[joint].apply(tip),
                radius,
            };
        }
        out
    }

    /// Rest-pose capsules (used for garment binding).
    pub fn rest_capsules(&self) -> [Capsule; BONE_COUNT] {
        self.capsules(&BodyPose::neutral())
    }

    /// Bone-local capsule surface meshes, transformed into world space.
    pub fn surface_meshes(&self, pose: &BodyPose) -> Vec<TriMesh> {
        let frames = self.bone_frames(pose);
        self.local_meshes
            .iter()
            .zip(frames.iter())
            .map(|(mesh, frame)| TriMesh {
                vertices: mesh.vertices.iter().map(|&v| frame.apply(v)).collect(),
                faces: mesh.faces.clone(),
            })
            .collect()
    }

    /// Approximate standing height (head capsule top in the neutral pose).
    pub fn height(&self) -> f64 {
        let caps = self.rest_capsules();
        caps[3].b[1] + caps[3].radius
    }
}

/// Capsule mesh around the segment [origin, tip] in bone-local coordinates:
/// latitude bands sweep the bottom cap, cylinder and top cap.
fn capsule_mesh(tip: Vec3, radius: f64, cap_rings: usize, segments: usize) -> TriMesh {
    let axis = normalize(tip);
    // Orthonormal frame around the axis; the reference vector just needs to
    // be non-parallel.
    let reference = if axis[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = normalize(cross(reference, axis));
    let e2 = cross(axis, e1);

    let mut vertices = Vec::new();
    let mut rows = Vec::new();
    let total_rings = 2 * cap_rings + 1;
    for ring in 0..=total_rings {
        // Latitude from -π/2 (bottom pole) to +π/2 (top pole), with the
        // cylinder inserted at the equator crossing.
        let (center, lat) = if ring <= cap_rings {
            let lat = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::FRAC_PI_2 * ring as f64 / cap_rings as f64;
            ([0.0, 0.0, 0.0], lat)
        } else {
            let lat = std::f64::consts::FRAC_PI_2 * (ring - cap_rings - 1) as f64
                / cap_rings as f64;
            (tip, lat)
        };
        let ring_r = radius * lat.cos();
        let along = radius * lat.sin();
        let mut row = Vec::new();
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            let radial = add(scale(e1, phi.cos() * ring_r), scale(e2, phi.sin() * ring_r));
            row.push(vertices.len() as u32);
            vertices.push(add(add(center, scale(axis, along)), radial));
        }
        rows.push(row);
    }

    let mut faces = Vec::new();
    for r in 0..rows.len() - 1 {
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            let (a, b, c, d) = (rows[r][s], rows[r][s1], rows[r + 1][s1], rows[r + 1][s]);
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh { vertices, faces }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neutral_pose_measures_up() {
        let body = BodyModel::new();
        let h = body.height();
        assert!((1.6..1.9).contains(&h), "height {h}");
        let caps = body.rest_capsules();
        // Feet near the ground.
        assert!(caps[12].b[1] < 0.1 && caps[13].b[1] < 0.1);
        // Left/right symmetry across z.
        assert!((caps[8].a[2] + caps[10].a[2]).abs() < 1e-12);
    }

    #[test]
    fn root_translation_moves_everything() {
        let body = BodyModel::new();
        let mut pose = BodyPose::neutral();
        pose.root = [2.0, 0.1, -0.5];
        let moved = body.capsules(&pose);
        let rest = body.rest_capsules();
        for (m, r) in moved.iter().zip(rest.iter()) {
            assert!((m.a[0] - r.a[0] - 2.0).abs() < 1e-12);
            assert!((m.a[1] - r.a[1] - 0.1).abs() < 1e-12);
            assert!((m.a[2] - r.a[2] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn hip_swing_moves_knee_forward() {
        let body = BodyModel::new();
        let mut pose = BodyPose::neutral();
        pose.joint_angles[8][2] = 0.5; // left hip sagittal swing
        let caps = body.capsules(&pose);
        let rest = body.rest_capsules();
        // Left knee (= left thigh tip) moves toward +x and rises.
        assert!(caps[8].b[0] > rest[8].b[0] + 0.1);
        assert!(caps[8].b[1] > rest[8].b[1]);
        // Right side untouched.
        assert!((caps[10].b[0] - rest[10].b[0]).abs() < 1e-12);
    }

    #[test]
    fn surface_meshes_have_constant_topology() {
        let body = BodyModel::new();
        let a = body.surface_meshes(&BodyPose::neutral());
        let mut pose = BodyPose::neutral();
        pose.joint_angles[4][2] = -0.7;
        let b = body.surface_meshes(&pose);
        assert_eq!(a.len(), b.len());
        for (ma, mb) in a.iter().zip(b.iter()) {
            assert_eq!(ma.faces, mb.faces);
            assert_eq!(ma.vertices.len(), mb.vertices.len());
        }
    }
}
