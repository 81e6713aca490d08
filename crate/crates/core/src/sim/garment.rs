//! Garment meshes and the cheap cloth surrogate that animates them.
//!
//! Garments are unions of tube/dome pieces built around the rest-pose body.
//! Every vertex binds rigidly to the nearest allowed body capsule, and a
//! traveling wrinkle wave (amplitude, spatial frequency and temporal period
//! set by the material laws) displaces vertices radially, tapering to zero at
//! the anchor rings so they stay pinned exactly. The hat is fully rigid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{add, closest_on_segment, norm, normalize, scale, sub, Vec3};
use crate::sim::{
    wrinkle_amplitude, wrinkle_frequency, wrinkle_lag_frames, BodyModel, BodyPose, Capsule,
    MaterialParams, BONE_COUNT,
};
use crate::texture_param::GarmentId;
use crate::util::seeded_rng;
use crate::{Error, Result};

/// Base wrinkle amplitude (m) before the material response.
const BASE_AMP: f64 = 0.012;
/// Base wrinkle spatial frequency (cycles/m).
const BASE_FREQ: f64 = 6.0;
/// Base traveling-wave period (frames).
const BASE_PERIOD_FRAMES: f64 = 12.0;
/// Wrinkles fade in over this distance from an anchor ring (m).
const TAPER_LEN: f64 = 0.10;
/// Per-vertex phase jitter bound (rad).
const JITTER_MAX: f64 = 0.5;

/// Mesh resolution presets. `Smoke` keeps end-to-end tests fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshDensity {
    Standard,
    Smoke,
}

#[derive(Clone, Copy)]
enum Piece {
    Torso,
    Sleeve,
    Waist,
    Leg,
    Dome,
}

impl MeshDensity {
    /// (axial rings, angular segments) per piece.
    fn dims(self, piece: Piece) -> (usize, usize) {
        match (self, piece) {
            (MeshDensity::Standard, Piece::Torso) => (30, 44),
            (MeshDensity::Standard, Piece::Sleeve) => (12, 18),
            (MeshDensity::Standard, Piece::Waist) => (4, 44),
            (MeshDensity::Standard, Piece::Leg) => (34, 22),
            (MeshDensity::Standard, Piece::Dome) => (14, 28),
            (MeshDensity::Smoke, Piece::Torso) => (12, 20),
            (MeshDensity::Smoke, Piece::Sleeve) => (6, 10),
            (MeshDensity::Smoke, Piece::Waist) => (2, 20),
            (MeshDensity::Smoke, Piece::Leg) => (12, 10),
            (MeshDensity::Smoke, Piece::Dome) => (6, 14),
        }
    }
}

/// A garment in rest pose: geometry, UVs (seam columns are duplicated
/// vertices sharing a position but not a UV), rigid bindings and anchors.
#[derive(Debug, Clone)]
pub struct GarmentMesh {
    pub garment_id: GarmentId,
    pub vertices: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub faces: Vec<[u32; 3]>,
    /// Vertex indices whose motion is purely rigid (wrinkle taper is zero).
    pub anchors: Vec<u32>,
    bind_bone: Vec<usize>,
    bind_local: Vec<Vec3>,
    /// Axial distance from the piece's anchored end (m); drives the wave.
    wave_coord: Vec<f64>,
}

impl GarmentMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Rigid skinning only: every vertex follows its bound bone.
    pub fn skin(&self, body: &BodyModel, pose: &BodyPose) -> Vec<Vec3> {
        let frames = body.bone_frames(pose);
        self.bind_local
            .iter()
            .zip(self.bind_bone.iter())
            .map(|(&local, &bone)| frames[bone].apply(local))
            .collect()
    }
}

/// An animated garment: one vertex-position snapshot per frame over constant
/// topology.
#[derive(Debug, Clone)]
pub struct GarmentSequence {
    pub mesh: GarmentMesh,
    pub positions: Vec<Vec<Vec3>>,
    pub material: MaterialParams,
}

struct MeshBuf {
    rest_caps: [Capsule; BONE_COUNT],
    inv_frames: Vec<crate::geom::RigidTransform>,
    vertices: Vec<Vec3>,
    uvs: Vec<[f64; 2]>,
    faces: Vec<[u32; 3]>,
    anchors: Vec<u32>,
    bind_bone: Vec<usize>,
    bind_local: Vec<Vec3>,
    wave_coord: Vec<f64>,
}

impl MeshBuf {
    fn new(body: &BodyModel) -> Self {
        let rest = BodyPose::neutral();
        MeshBuf {
            rest_caps: body.capsules(&rest),
            inv_frames: body.bone_frames(&rest).iter().map(|f| f.inverse()).collect(),
            vertices: Vec::new(),
            uvs: Vec::new(),
            faces: Vec::new(),
            anchors: Vec::new(),
            bind_bone: Vec::new(),
            bind_local: Vec::new(),
            wave_coord: Vec::new(),
        }
    }

    fn push_vertex(&mut self, pos: Vec3, uv: [f64; 2], wave: f64, bones: &[usize]) -> u32 {
        let bone = nearest_bone(pos, &self.rest_caps, bones);
        let idx = self.vertices.len() as u32;
        self.vertices.push(pos);
        self.uvs.push(uv);
        self.wave_coord.push(wave);
        self.bind_bone.push(bone);
        self.bind_local.push(self.inv_frames[bone].apply(pos));
        idx
    }

    /// Connect two full vertex rows (equal length) with quads split in two.
    fn stitch_rows(&mut self, top: &[u32], bottom: &[u32]) {
        for s in 0..top.len() - 1 {
            let (a, b, c, d) = (top[s], top[s + 1], bottom[s + 1], bottom[s]);
            self.faces.push([a, b, c]);
            self.faces.push([a, c, d]);
        }
    }
}

fn nearest_bone(pos: Vec3, caps: &[Capsule; BONE_COUNT], allowed: &[usize]) -> usize {
    let mut best = allowed[0];
    let mut best_d = f64::INFINITY;
    for &b in allowed {
        let on = closest_on_segment(caps[b].a, caps[b].b, pos);
        let d = norm(sub(pos, on)) - caps[b].radius;
        if d < best_d {
            best_d = d;
            best = b;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn push_tube(
    buf: &mut MeshBuf,
    top: Vec3,
    bottom: Vec3,
    radius: f64,
    rings: usize,
    segments: usize,
    v_range: [f64; 2],
    bones: &[usize],
) {
    let axis = sub(bottom, top);
    let len = norm(axis);
    let dir = normalize(axis);
    // A radial frame perpendicular to the tube axis.
    let reference = if dir[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = normalize(crate::geom::cross(reference, dir));
    let e2 = crate::geom::cross(dir, e1);

    let mut prev_row: Option<Vec<u32>> = None;
    for r in 0..=rings {
        let t = r as f64 / rings as f64;
        let center = add(top, scale(dir, t * len));
        let v = v_range[0] + t * (v_range[1] - v_range[0]);
        let mut row = Vec::with_capacity(segments + 1);
        for s in 0..=segments {
            let phi = 2.0 * std::f64::consts::PI * (s % segments) as f64 / segments as f64;
            let radial = add(scale(e1, phi.cos() * radius), scale(e2, phi.sin() * radius));
            let u = s as f64 / segments as f64;
            row.push(buf.push_vertex(add(center, radial), [u, v], t * len, bones));
        }
        if r == 0 {
            buf.anchors.extend_from_slice(&row);
        }
        if let Some(prev) = prev_row {
            buf.stitch_rows(&prev, &row);
        }
        prev_row = Some(row);
    }
}

#[allow(clippy::too_many_arguments)]
fn push_dome(
    buf: &mut MeshBuf,
    center: Vec3,
    radius: f64,
    rings: usize,
    segments: usize,
    v_range: [f64; 2],
    bones: &[usize],
) {
    let mut prev_row: Option<Vec<u32>> = None;
    for r in 0..=rings {
        let t = r as f64 / rings as f64;
        // Rim (equator) at t = 0 up to the pole at t = 1.
        let polar = std::f64::consts::FRAC_PI_2 * (1.0 - t);
        let ring_r = radius * polar.sin();
        let y = center[1] + radius * polar.cos();
        let v = v_range[0] + t * (v_range[1] - v_range[0]);
        let mut row = Vec::with_capacity(segments + 1);
        for s in 0..=segments {
            let phi = 2.0 * std::f64::consts::PI * (s % segments) as f64 / segments as f64;
            let pos = [
                center[0] + ring_r * phi.cos(),
                y,
                center[2] + ring_r * phi.sin(),
            ];
            let u = s as f64 / segments as f64;
            let arc = radius * std::f64::consts::FRAC_PI_2 * t;
            row.push(buf.push_vertex(pos, [u, v], arc, bones));
        }
        if r == 0 {
            buf.anchors.extend_from_slice(&row);
        }
        if let Some(prev) = prev_row {
            buf.stitch_rows(&prev, &row);
        }
        prev_row = Some(row);
    }
}

/// Build one garment around the rest-pose body.
pub fn build_garment(
    garment_id: GarmentId,
    body: &BodyModel,
    density: MeshDensity,
) -> Result<GarmentMesh> {
    let mut buf = MeshBuf::new(body);
    match garment_id {
        GarmentId::Upper => {
            let (tr, ts) = density.dims(Piece::Torso);
            let (sr, ss) = density.dims(Piece::Sleeve);
            push_tube(
                &mut buf,
                [0.0, 1.42, 0.0],
                [0.0, 0.90, 0.0],
                0.17,
                tr,
                ts,
                [0.02, 0.58],
                &[0, 1],
            );
            push_tube(
                &mut buf,
                [0.0, 1.44, 0.19],
                [0.0, 1.08, 0.23],
                0.065,
                sr,
                ss,
                [0.62, 0.78],
                &[4],
            );
            push_tube(
                &mut buf,
                [0.0, 1.44, -0.19],
                [0.0, 1.08, -0.23],
                0.065,
                sr,
                ss,
                [0.82, 0.98],
                &[6],
            );
        }
        GarmentId::Lower => {
            let (wr, ws) = density.dims(Piece::Waist);
            let (lr, ls) = density.dims(Piece::Leg);
            push_tube(
                &mut buf,
                [0.0, 0.99, 0.0],
                [0.0, 0.90, 0.0],
                0.175,
                wr,
                ws,
                [0.02, 0.10],
                &[0],
            );
            push_tube(
                &mut buf,
                [0.0, 0.92, 0.09],
                [0.0, 0.07, 0.09],
                0.105,
                lr,
                ls,
                [0.14, 0.54],
                &[8, 9],
            );
            push_tube(
                &mut buf,
                [0.0, 0.92, -0.09],
                [0.0, 0.07, -0.09],
                0.105,
                lr,
                ls,
                [0.58, 0.98],
                &[10, 11],
            );
        }
        GarmentId::Hat => {
            let (dr, ds) = density.dims(Piece::Dome);
            push_dome(&mut buf, [0.0, 1.74, 0.0], 0.15, dr, ds, [0.05, 0.95], &[3]);
        }
    }
    if buf.vertices.is_empty() || buf.faces.is_empty() {
        return Err(Error::Contract("garment builder produced an empty mesh".into()));
    }
    Ok(GarmentMesh {
        garment_id,
        vertices: buf.vertices,
        uvs: buf.uvs,
        faces: buf.faces,
        anchors: buf.anchors,
        bind_bone: buf.bind_bone,
        bind_local: buf.bind_local,
        wave_coord: buf.wave_coord,
    })
}

/// Animate a garment over a pose track.
///
/// Every frame re-skins the mesh rigidly, then adds the traveling wrinkle
/// displacement along the local radial direction of the bound capsule. The
/// per-vertex phase jitter depends only on `seed` and the vertex order, so
/// the output is reproducible.
pub fn simulate_garment(
    mesh: &GarmentMesh,
    body: &BodyModel,
    poses: &[BodyPose],
    material: &MaterialParams,
    seed: u64,
) -> Result<GarmentSequence> {
    if poses.is_empty() {
        return Err(Error::InvalidInput("pose track is empty".into()));
    }
    material.validate()?;

    let amp = wrinkle_amplitude(BASE_AMP, material.mu);
    let freq = wrinkle_frequency(BASE_FREQ, material.kappa_b);
    let period = wrinkle_lag_frames(BASE_PERIOD_FRAMES, material.rho);
    let omega = 2.0 * std::f64::consts::PI / period;
    let rigid = mesh.garment_id == GarmentId::Hat;

    let mut rng = seeded_rng(seed);
    let jitter: Vec<f64> = (0..mesh.vertices.len())
        .map(|_| rng.random::<f64>() * JITTER_MAX)
        .collect();

    let mut positions = Vec::with_capacity(poses.len());
    for (t, pose) in poses.iter().enumerate() {
        let frames = body.bone_frames(pose);
        let caps = body.capsules(pose);
        let mut frame_pos = Vec::with_capacity(mesh.vertices.len());
        for i in 0..mesh.vertices.len() {
            let bone = mesh.bind_bone[i];
            let p = frames[bone].apply(mesh.bind_local[i]);
            if rigid {
                frame_pos.push(p);
                continue;
            }
            let taper = (mesh.wave_coord[i] / TAPER_LEN).min(1.0);
            if taper == 0.0 {
                frame_pos.push(p);
                continue;
            }
            let on_axis = closest_on_segment(caps[bone].a, caps[bone].b, p);
            let radial = sub(p, on_axis);
            let dir = if norm(radial) < 1e-9 {
                [1.0, 0.0, 0.0]
            } else {
                normalize(radial)
            };
            let phase = 2.0 * std::f64::consts::PI * freq * mesh.wave_coord[i]
                - omega * t as f64
                + jitter[i];
            frame_pos.push(add(p, scale(dir, amp * taper * phase.sin())));
        }
        positions.push(frame_pos);
    }
    Ok(GarmentSequence {
        mesh: mesh.clone(),
        positions,
        material: *material,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{canonical_walk_cycle, synth_walk, MotionParams};
    use crate::texture_param::GarmentId;

    fn walk_track(n: usize) -> Vec<BodyPose> {
        let frames = synth_walk(&canonical_walk_cycle(), 4, &MotionParams::default()).unwrap();
        frames.into_iter().take(n).collect()
    }

    #[test]
    fn garments_build_sane_meshes() {
        let body = BodyModel::new();
        for id in GarmentId::ALL {
            let mesh = build_garment(id, &body, MeshDensity::Standard).unwrap();
            assert!(!mesh.anchors.is_empty(), "{id}");
            assert!(mesh.vertex_count() > 100, "{id}");
            for uv in &mesh.uvs {
                assert!((0.0..=1.0).contains(&uv[0]) && (0.0..=1.0).contains(&uv[1]));
            }
            for face in &mesh.faces {
                for &v in face {
                    assert!((v as usize) < mesh.vertex_count());
                }
            }
            let smoke = build_garment(id, &body, MeshDensity::Smoke).unwrap();
            assert!(smoke.vertex_count() < mesh.vertex_count(), "{id}");
        }
    }

    #[test]
    fn seams_duplicate_positions_not_uvs() {
        let body = BodyModel::new();
        let mesh = build_garment(GarmentId::Upper, &body, MeshDensity::Smoke).unwrap();
        let mut seam_pairs = 0;
        for i in 0..mesh.vertex_count() {
            for j in i + 1..mesh.vertex_count() {
                let same_pos = crate::geom::norm(crate::geom::sub(
                    mesh.vertices[i],
                    mesh.vertices[j],
                )) < 1e-12;
                if same_pos && (mesh.uvs[i][0] - mesh.uvs[j][0]).abs() > 0.5 {
                    seam_pairs += 1;
                }
            }
        }
        assert!(seam_pairs > 0, "expected duplicated seam columns");
    }

    #[test]
    fn anchors_stay_rigid() {
        let body = BodyModel::new();
        let poses = walk_track(8);
        let mesh = build_garment(GarmentId::Upper, &body, MeshDensity::Smoke).unwrap();
        let seq =
            simulate_garment(&mesh, &body, &poses, &MaterialParams::midpoint(), 3).unwrap();
        for (t, pose) in poses.iter().enumerate() {
            let rigid = mesh.skin(&body, pose);
            for &a in &mesh.anchors {
                let d = crate::geom::norm(crate::geom::sub(
                    seq.positions[t][a as usize],
                    rigid[a as usize],
                ));
                assert!(d < 1e-12, "anchor {a} frame {t} drifted {d}");
            }
        }
    }

    #[test]
    fn hat_is_fully_rigid() {
        let body = BodyModel::new();
        let poses = walk_track(6);
        let mesh = build_garment(GarmentId::Hat, &body, MeshDensity::Smoke).unwrap();
        let seq =
            simulate_garment(&mesh, &body, &poses, &MaterialParams::midpoint(), 9).unwrap();
        for (t, pose) in poses.iter().enumerate() {
            let rigid = mesh.skin(&body, pose);
            for (p, r) in seq.positions[t].iter().zip(rigid.iter()) {
                assert_eq!(p, r);
            }
        }
    }

    #[test]
    fn softer_cloth_wrinkles_more() {
        let body = BodyModel::new();
        let poses = walk_track(6);
        let mesh = build_garment(GarmentId::Lower, &body, MeshDensity::Smoke).unwrap();
        let mut mid = MaterialParams::midpoint();
        mid.mu = super::super::MU_RANGE[0]; // soft
        let soft = simulate_garment(&mesh, &body, &poses, &mid, 5).unwrap();
        mid.mu = super::super::MU_RANGE[1]; // stiff
        let stiff = simulate_garment(&mesh, &body, &poses, &mid, 5).unwrap();

        let max_disp = |seq: &GarmentSequence| -> f64 {
            let mut m: f64 = 0.0;
            for (t, pose) in poses.iter().enumerate() {
                let rigid = mesh.skin(&body, pose);
                for (p, r) in seq.positions[t].iter().zip(rigid.iter()) {
                    m = m.max(crate::geom::norm(crate::geom::sub(*p, *r)));
                }
            }
            m
        };
        let (soft_d, stiff_d) = (max_disp(&soft), max_disp(&stiff));
        assert!(soft_d > stiff_d, "soft {soft_d} vs stiff {stiff_d}");
        assert!(soft_d > 0.005);
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let body = BodyModel::new();
        let poses = walk_track(4);
        let mesh = build_garment(GarmentId::Upper, &body, MeshDensity::Smoke).unwrap();
        let mat = MaterialParams::midpoint();
        let a = simulate_garment(&mesh, &body, &poses, &mat, 1).unwrap();
        let b = simulate_garment(&mesh, &body, &poses, &mat, 1).unwrap();
        assert_eq!(a.positions, b.positions);
        let c = simulate_garment(&mesh, &body, &poses, &mat, 2).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn sleeves_follow_their_arm() {
        let body = BodyModel::new();
        let mesh = build_garment(GarmentId::Upper, &body, MeshDensity::Smoke).unwrap();
        let rest = mesh.skin(&body, &BodyPose::neutral());
        let mut pose = BodyPose::neutral();
        pose.joint_angles[4][2] = 0.6; // left shoulder swing
        let moved = mesh.skin(&body, &pose);
        let mut sleeve_max: f64 = 0.0;
        let mut torso_max: f64 = 0.0;
        for i in 0..mesh.vertex_count() {
            let d = crate::geom::norm(crate::geom::sub(moved[i], rest[i]));
            let v = mesh.uvs[i][1];
            if (0.62..=0.78).contains(&v) {
                sleeve_max = sleeve_max.max(d);
            } else if v <= 0.58 {
                torso_max = torso_max.max(d);
            }
        }
        assert!(sleeve_max > 0.05, "sleeve moved {sleeve_max}");
        assert!(torso_max < 1e-12, "torso moved {torso_max}");
    }
}
