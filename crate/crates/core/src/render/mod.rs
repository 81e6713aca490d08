//! Scene-conditioned rendering of simulated garment sequences.
//!
//! The pipeline per frame: pose the body, place the camera on the sampled
//! sphere, rotate the subject to its sampled heading, rasterize garments and
//! body over the background, and record the exact sparse pixel→texel map for
//! the texture gradient. Frames are mutually independent and render in
//! parallel; outputs are bitwise deterministic for fixed inputs.

mod background;
mod raster;
mod scene;

pub use background::{load_background, procedural_background};
pub use raster::{Camera, Frame, JacobianEntry, LayerGeometry, RenderConfig, TexelJacobian};
pub use scene::{
    sample_scene, BackgroundPool, BackgroundRef, CameraSample, LightSample, MotionSample,
    SceneRanges, SceneSample, Split,
};

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{add, euler_to_mat, mat_apply, sub, Vec3};
use crate::sim::{BodyModel, BodyPose, GarmentSequence};
use crate::{Error, Result};

/// One garment to render: its simulated motion plus the texture to sample.
pub struct SequenceLayer<'a> {
    pub seq: &'a GarmentSequence,
    /// (H, W, 3) texel values in [0, 1].
    pub texture: &'a Array3<f64>,
}

/// Render a whole pose track. `layers` must be simulated over exactly these
/// poses; the subject heading from the scene rotates body and garments about
/// the vertical axis through the start position.
pub fn render_sequence(
    body: &BodyModel,
    poses: &[BodyPose],
    layers: &[SequenceLayer<'_>],
    scene: &SceneSample,
    cfg: &RenderConfig,
) -> Result<Vec<Frame>> {
    cfg.validate()?;
    scene.validate()?;
    if poses.is_empty() {
        return Err(Error::InvalidInput("pose track is empty".into()));
    }
    for (i, layer) in layers.iter().enumerate() {
        if layer.seq.positions.len() != poses.len() {
            return Err(Error::InvalidInput(format!(
                "layer {i} has {} simulated frames but the track has {}",
                layer.seq.positions.len(),
                poses.len()
            )));
        }
        let (h, w, c) = layer.texture.dim();
        if h < 2 || w < 2 || c != 3 {
            return Err(Error::InvalidInput(format!(
                "layer {i} texture shape ({h}, {w}, {c}) is not at least 2x2x3"
            )));
        }
    }

    let target = add(poses[0].root, [0.0, 0.95, 0.0]);
    let camera = Camera::from_scene(&scene.camera, target, cfg.resolution, cfg.fov_deg);
    let background = load_background(&scene.background, cfg.resolution)?;
    let heading = euler_to_mat([0.0, scene.motion.direction_deg.to_radians(), 0.0]);
    let pivot = [poses[0].root[0], 0.0, poses[0].root[2]];
    let spin = |v: Vec3| add(pivot, mat_apply(&heading, sub(v, pivot)));

    let frames: Result<Vec<Frame>> = poses
        .par_iter()
        .enumerate()
        .map(|(t, pose)| {
            let mut body_meshes = body.surface_meshes(pose);
            for mesh in &mut body_meshes {
                for v in &mut mesh.vertices {
                    *v = spin(*v);
                }
            }
            let layer_geo: Vec<LayerGeometry<'_>> = layers
                .iter()
                .map(|layer| LayerGeometry {
                    positions: layer.seq.positions[t].iter().map(|&v| spin(v)).collect(),
                    uvs: &layer.seq.mesh.uvs,
                    faces: &layer.seq.mesh.faces,
                    texture: layer.texture,
                })
                .collect();
            raster::rasterize_frame(&camera, &scene.light, cfg, &body_meshes, &layer_geo, &background)
        })
        .collect();
    frames
}

/// Sidecar metadata written next to dumped frames, enough to re-run
/// detection over the PNGs without the original scene objects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub scene: SceneSample,
    pub frame_count: usize,
    pub gt_boxes: Vec<[f64; 4]>,
    pub empty_frames: Vec<usize>,
}

impl VideoManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: Some(e.line()),
            msg: e.to_string(),
        })
    }
}

/// Dump a rendered sequence: one PNG per frame plus `manifest.json` with the
/// scene sample and ground-truth boxes. Returns the video directory.
pub fn dump_video(
    out_dir: &Path,
    video_id: &str,
    frames: &[Frame],
    scene: &SceneSample,
) -> Result<PathBuf> {
    let dir = out_dir.join(video_id);
    std::fs::create_dir_all(&dir)?;
    for (t, frame) in frames.iter().enumerate() {
        let r = frame.image.dim().0;
        let mut img = image::RgbImage::new(r as u32, r as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            for c in 0..3 {
                px.0[c] = (frame.image[[y as usize, x as usize, c]] * 255.0).round() as u8;
            }
        }
        img.save(dir.join(format!("frame_{t:04}.png")))?;
    }
    let manifest = VideoManifest {
        video_id: video_id.to_string(),
        scene: scene.clone(),
        frame_count: frames.len(),
        gt_boxes: frames.iter().map(|f| f.gt_box).collect(),
        empty_frames: frames
            .iter()
            .enumerate()
            .filter_map(|(t, f)| f.empty.then_some(t))
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(dir)
}
