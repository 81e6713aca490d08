//! Procedural walk cycles: a small sinusoidal keyframe loop plus linear
//! in-betweening and constant forward root motion.

use crate::sim::{BodyPose, JOINT_COUNT};
use crate::{Error, Result};

/// Keyframes in one canonical gait loop (before closing the cycle).
const WALK_KEYFRAMES: usize = 9;

const HIP_SWING: f64 = 0.5;
const ARM_SWING: f64 = 0.35;
const KNEE_FLEX: f64 = 0.7;
const ELBOW_FLEX: f64 = 0.25;
const BOB_AMP: f64 = 0.03;
const SWAY_AMP: f64 = 0.02;

/// Root-motion parameters for [`synth_walk`].
#[derive(Debug, Clone, Copy)]
pub struct MotionParams {
    /// Forward speed along +x, metres per second.
    pub speed_mps: f64,
    /// Root x at frame zero (subject starts behind the origin).
    pub start_offset_m: f64,
    pub fps: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            speed_mps: 1.0,
            start_offset_m: -1.0,
            fps: 30.0,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidInput(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.speed_mps.is_finite() && self.speed_mps >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "speed_mps must be non-negative, got {}",
                self.speed_mps
            )));
        }
        if !self.start_offset_m.is_finite() {
            return Err(Error::InvalidInput("start_offset_m must be finite".into()));
        }
        Ok(())
    }
}

/// One gait pose at phase `phi` (radians through the stride). Left and right
/// limbs run half a cycle apart; knees flex only while their leg swings.
fn gait_pose(phi: f64) -> BodyPose {
    let mut pose = BodyPose::neutral();
    let (l, r) = (phi.sin(), (phi + std::f64::consts::PI).sin());

    // Hips swing the whole legs; +rz carries a hanging limb toward +x.
    pose.joint_angles[8][2] = HIP_SWING * l;
    pose.joint_angles[11][2] = HIP_SWING * r;
    // Knees flex (shin kicks back, -rz) only during that leg's swing.
    pose.joint_angles[9][2] = -KNEE_FLEX * l.max(0.0);
    pose.joint_angles[12][2] = -KNEE_FLEX * r.max(0.0);
    // Arms counter-swing relative to the same-side leg.
    pose.joint_angles[4][2] = -ARM_SWING * l;
    pose.joint_angles[6][2] = -ARM_SWING * r;
    pose.joint_angles[5][2] = ELBOW_FLEX;
    pose.joint_angles[7][2] = ELBOW_FLEX;
    // Vertical bob at twice the stride rate, lateral sway at the stride rate.
    pose.root = [0.0, BOB_AMP * (2.0 * phi).cos(), SWAY_AMP * phi.sin()];
    pose
}

/// The canonical loop, sampled at 9 evenly spaced phases.
pub fn canonical_walk_keyframes() -> Vec<BodyPose> {
    (0..WALK_KEYFRAMES)
        .map(|k| gait_pose(2.0 * std::f64::consts::PI * k as f64 / WALK_KEYFRAMES as f64))
        .collect()
}

/// The canonical loop closed into a cycle: the first keyframe is repeated at
/// the end, giving 10 keyframes and 9 interpolation intervals.
pub fn canonical_walk_cycle() -> Vec<BodyPose> {
    let mut frames = canonical_walk_keyframes();
    frames.push(frames[0]);
    frames
}

fn lerp_pose(a: &BodyPose, b: &BodyPose, s: f64) -> BodyPose {
    let mut out = BodyPose::neutral();
    for j in 0..JOINT_COUNT {
        for axis in 0..3 {
            out.joint_angles[j][axis] =
                (1.0 - s) * a.joint_angles[j][axis] + s * b.joint_angles[j][axis];
        }
    }
    for axis in 0..3 {
        out.root[axis] = (1.0 - s) * a.root[axis] + s * b.root[axis];
    }
    out
}

/// Expand keyframes into a dense pose track.
///
/// Every interval between consecutive keyframes is sampled at fractions
/// s/`steps_per_interval` for s = 0..steps_per_interval, and the final
/// keyframe is appended exactly, so `keyframes.len() - 1` intervals yield
/// `(keyframes.len() - 1) * steps_per_interval + 1` frames. On top of the
/// interpolated root offsets, frame t advances `speed_mps / fps` along +x
/// from `start_offset_m`.
pub fn synth_walk(
    keyframes: &[BodyPose],
    steps_per_interval: usize,
    params: &MotionParams,
) -> Result<Vec<BodyPose>> {
    if keyframes.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 keyframes to interpolate, got {}",
            keyframes.len()
        )));
    }
    if steps_per_interval == 0 {
        return Err(Error::InvalidInput("steps_per_interval must be positive".into()));
    }
    params.validate()?;
    for (i, kf) in keyframes.iter().enumerate() {
        kf.validate()
            .map_err(|e| Error::InvalidInput(format!("keyframe {i}: {e}")))?;
    }

    let intervals = keyframes.len() - 1;
    let mut frames = Vec::with_capacity(intervals * steps_per_interval + 1);
    for i in 0..intervals {
        for s in 0..steps_per_interval {
            frames.push(lerp_pose(
                &keyframes[i],
                &keyframes[i + 1],
                s as f64 / steps_per_interval as f64,
            ));
        }
    }
    frames.push(keyframes[intervals]);

    let per_frame = params.speed_mps / params.fps;
    for (t, pose) in frames.iter_mut().enumerate() {
        pose.root[0] += params.start_offset_m + per_frame * t as f64;
    }
    Ok(frames)
}
