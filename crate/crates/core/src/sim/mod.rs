//! Walking-body synthesis and a fast cloth surrogate.
//!
//! The subject is a 14-joint capsule body. Walk cycles are specified as a
//! small set of keyframes and expanded by linear interpolation
//! ([`synth_walk`]); garments are tube meshes rigidly skinned to the nearest
//! body capsule with a material-driven traveling wrinkle wave on top
//! ([`simulate_garment`]). The surrogate is deliberately cheap — it exists to
//! give the renderer plausible, material-sensitive garment motion, not to be
//! a physical cloth solver — but it honors the contracts the rest of the
//! pipeline relies on: anchored vertices track their body attachment points
//! exactly and mesh topology never changes across a sequence.

mod body;
mod garment;
mod io;
mod material;
mod walk;

pub use body::{BodyModel, Capsule, TriMesh, BONE_COUNT};
pub use garment::{build_garment, simulate_garment, GarmentMesh, GarmentSequence, MeshDensity};
pub use io::{write_obj, write_pose_csv};
pub use material::{
    sample_material, wrinkle_amplitude, wrinkle_frequency, wrinkle_lag_frames, MaterialParams,
    KAPPA_RANGE, LAMBDA_RANGE, MU_RANGE, RHO_RANGE,
};
pub use walk::{canonical_walk_cycle, canonical_walk_keyframes, synth_walk, MotionParams};

use crate::error::{Error, Result};

pub const JOINT_COUNT: usize = 14;

/// One body configuration: Euler angles (rx, ry, rz) per joint plus the root
/// translation in meters. The coordinate frame is x forward (walking
/// direction), y up, z to the subject's left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose {
    pub joint_angles: [[f64; 3]; JOINT_COUNT],
    pub root: [f64; 3],
}

impl BodyPose {
    pub fn neutral() -> Self {
        BodyPose {
            joint_angles: [[0.0; 3]; JOINT_COUNT],
            root: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (j, angles) in self.joint_angles.iter().enumerate() {
            for &a in angles {
                if !a.is_finite() || a.abs() > std::f64::consts::PI {
                    return Err(Error::InvalidInput(format!(
                        "joint {j} angle {a} outside ±π"
                    )));
                }
            }
        }
        if self.root.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("root translation must be finite".into()));
        }
        Ok(())
    }
}
