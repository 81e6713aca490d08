//! Pinhole projection, painter's-algorithm rasterization and the exact
//! sparse pixel→texel Jacobian.
//!
//! Shading is flat Lambert per triangle, clamped to 1 *before* the texture
//! multiply, and the per-channel light gain never exceeds 1 — so every
//! garment pixel is an exactly linear function of its four bilinear texels
//! and the recorded Jacobian is exact, not approximate.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::geom::{add, cross, dot, norm, normalize, scale, sub, Vec3};
use crate::render::{CameraSample, LightSample};
use crate::sim::TriMesh;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub resolution: usize,
    pub fov_deg: f64,
    pub ambient: f64,
    pub skin_color: [f64; 3],
    /// Near-plane depth; triangles with any vertex closer are dropped.
    pub near: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            resolution: 416,
            fov_deg: 52.0,
            ambient: 0.30,
            skin_color: [0.86, 0.70, 0.58],
            near: 0.05,
        }
    }
}

impl RenderConfig {
    /// Low-resolution preset for end-to-end tests.
    pub fn smoke() -> Self {
        RenderConfig {
            resolution: 128,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 {
            return Err(Error::Config(format!(
                "render resolution {} is below the 16 px minimum",
                self.resolution
            )));
        }
        if !(10.0..=120.0).contains(&self.fov_deg) {
            return Err(Error::Config(format!("fov {} outside [10, 120]", self.fov_deg)));
        }
        if !(0.0..1.0).contains(&self.ambient) {
            return Err(Error::Config(format!("ambient {} outside [0, 1)", self.ambient)));
        }
        for c in self.skin_color {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Config("skin color must lie in [0, 1]".into()));
            }
        }
        if !(self.near > 0.0) {
            return Err(Error::Config("near plane must be positive".into()));
        }
        Ok(())
    }
}

/// A positioned pinhole camera.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    eye: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    focal: f64,
    half: f64,
}

impl Camera {
    pub fn look_at(eye: Vec3, target: Vec3, resolution: usize, fov_deg: f64) -> Camera {
        let forward = normalize(sub(target, eye));
        let right = normalize(cross(forward, [0.0, 1.0, 0.0]));
        let up = cross(right, forward);
        let half = resolution as f64 / 2.0;
        Camera {
            eye,
            right,
            up,
            forward,
            focal: half / (fov_deg.to_radians() / 2.0).tan(),
            half,
        }
    }

    /// Place the camera on the sampled sphere around `target`.
    pub fn from_scene(
        cam: &CameraSample,
        target: Vec3,
        resolution: usize,
        fov_deg: f64,
    ) -> Camera {
        let elev = cam.elevation_deg.to_radians();
        let azim = cam.azimuth_deg.to_radians();
        let offset = [
            cam.distance_m * elev.cos() * azim.cos(),
            cam.distance_m * elev.sin(),
            cam.distance_m * elev.cos() * azim.sin(),
        ];
        Camera::look_at(add(target, offset), target, resolution, fov_deg)
    }

    /// Screen position (x px, y px) and view depth, or None behind `near`.
    pub fn project(&self, p: Vec3, near: f64) -> Option<[f64; 3]> {
        let d = sub(p, self.eye);
        let z = dot(d, self.forward);
        if z <= near {
            return None;
        }
        let x = self.half + self.focal * dot(d, self.right) / z;
        let y = self.half - self.focal * dot(d, self.up) / z;
        Some([x, y, z])
    }
}

/// One garment layer's world-space geometry for a single frame.
pub struct LayerGeometry<'a> {
    pub positions: Vec<Vec3>,
    pub uvs: &'a [[f64; 2]],
    pub faces: &'a [[u32; 3]],
    pub texture: &'a Array3<f64>,
}

/// One garment-covered pixel's dependence on four bilinear texels.
/// `weights` already include the shading factor; the per-channel light gain
/// is applied during [`TexelJacobian::pullback`].
#[derive(Debug, Clone, Copy)]
pub struct JacobianEntry {
    /// (y, x) pixel.
    pub pixel: [u32; 2],
    pub layer: u16,
    /// (y, x) texels.
    pub texels: [[u32; 2]; 4],
    pub weights: [f64; 4],
}

/// The frame's exact linear map from texels to garment pixels.
#[derive(Debug, Clone)]
pub struct TexelJacobian {
    pub resolution: usize,
    pub layer_dims: Vec<(usize, usize)>,
    pub rgb_gain: [f64; 3],
    pub entries: Vec<JacobianEntry>,
}

impl TexelJacobian {
    /// Pull an image-space gradient back to per-layer texel gradients.
    pub fn pullback(&self, upstream: &Array3<f64>) -> Result<Vec<Array3<f64>>> {
        let r = self.resolution;
        if upstream.dim() != (r, r, 3) {
            return Err(Error::InvalidInput(format!(
                "upstream gradient shape {:?} does not match {r}x{r}x3 frames",
                upstream.dim()
            )));
        }
        let mut grads: Vec<Array3<f64>> = self
            .layer_dims
            .iter()
            .map(|&(h, w)| Array3::zeros((h, w, 3)))
            .collect();
        for e in &self.entries {
            let (py, px) = (e.pixel[0] as usize, e.pixel[1] as usize);
            let g = &mut grads[e.layer as usize];
            for c in 0..3 {
                let up = upstream[[py, px, c]] * self.rgb_gain[c];
                for i in 0..4 {
                    g[[e.texels[i][0] as usize, e.texels[i][1] as usize, c]] +=
                        e.weights[i] * up;
                }
            }
        }
        Ok(grads)
    }
}

/// One rendered frame.
#[derive(Debug, Clone)]
pub struct Frame {
    /// (R, R, 3) in [0, 1].
    pub image: Array3<f64>,
    /// [x1, y1, x2, y2] in pixels: the projection of every body and garment
    /// vertex, clipped to the image.
    pub gt_box: [f64; 4],
    /// Subject entirely out of frame; `gt_box` has zero area.
    pub empty: bool,
    pub jacobian: TexelJacobian,
}

enum TriKind {
    Body,
    Garment { layer: u16, uv: [[f64; 2]; 3] },
}

struct RasterTri {
    screen: [[f64; 3]; 3],
    shade: f64,
    depth: f64,
    kind: TriKind,
}

#[derive(Clone, Copy)]
struct PixelOwner {
    layer: i32,
    texels: [[u32; 2]; 4],
    weights: [f64; 4],
}

const NO_OWNER: PixelOwner = PixelOwner {
    layer: -1,
    texels: [[0, 0]; 4],
    weights: [0.0; 4],
};

fn shade_of(v: &[Vec3; 3], light: &LightSample, ambient: f64) -> f64 {
    let n = cross(sub(v[1], v[0]), sub(v[2], v[0]));
    let len = norm(n);
    if len < 1e-15 {
        return ambient;
    }
    // Two-sided Lambert: tube interiors keep consistent shading regardless
    // of winding.
    let diffuse = (dot(scale(n, 1.0 / len), light.direction)).abs();
    (ambient + (1.0 - ambient) * diffuse * light.intensity).min(1.0)
}

fn bilinear_taps(
    texture: &Array3<f64>,
    uv: [f64; 2],
) -> ([[u32; 2]; 4], [f64; 4], [f64; 3]) {
    let (th, tw, _) = texture.dim();
    let tx = uv[0] * tw as f64 - 0.5;
    let ty = uv[1] * th as f64 - 0.5;
    let x0 = tx.floor();
    let y0 = ty.floor();
    let (fx, fy) = (tx - x0, ty - y0);
    let cx = |v: f64| (v.max(0.0) as usize).min(tw - 1) as u32;
    let cy = |v: f64| (v.max(0.0) as usize).min(th - 1) as u32;
    let texels = [
        [cy(y0), cx(x0)],
        [cy(y0), cx(x0 + 1.0)],
        [cy(y0 + 1.0), cx(x0)],
        [cy(y0 + 1.0), cx(x0 + 1.0)],
    ];
    let weights = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    let mut color = [0.0; 3];
    for i in 0..4 {
        for (c, chan) in color.iter_mut().enumerate() {
            *chan += weights[i] * texture[[texels[i][0] as usize, texels[i][1] as usize, c]];
        }
    }
    (texels, weights, color)
}

/// Rasterize one frame: background, then all triangles far-to-near.
pub(crate) fn rasterize_frame(
    camera: &Camera,
    light: &LightSample,
    cfg: &RenderConfig,
    body: &[TriMesh],
    layers: &[LayerGeometry<'_>],
    background: &Array3<f64>,
) -> Result<Frame> {
    let r = cfg.resolution;
    if background.dim() != (r, r, 3) {
        return Err(Error::InvalidInput(format!(
            "background shape {:?} does not match resolution {r}",
            background.dim()
        )));
    }

    // Project every vertex once; meanwhile accumulate the ground-truth box.
    let mut gt = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut any_visible = false;
    let mut track = |p: Option<[f64; 3]>| -> Option<[f64; 3]> {
        if let Some([x, y, _]) = p {
            any_visible = true;
            gt[0] = gt[0].min(x);
            gt[1] = gt[1].min(y);
            gt[2] = gt[2].max(x);
            gt[3] = gt[3].max(y);
        }
        p
    };

    let mut tris: Vec<RasterTri> = Vec::new();
    let mut push_tri = |verts: [Vec3; 3], screen: [Option<[f64; 3]>; 3], kind: TriKind| {
        if let (Some(s0), Some(s1), Some(s2)) = (screen[0], screen[1], screen[2]) {
            tris.push(RasterTri {
                screen: [s0, s1, s2],
                shade: shade_of(&verts, light, cfg.ambient),
                depth: (s0[2] + s1[2] + s2[2]) / 3.0,
                kind,
            });
        }
    };

    for mesh in body {
        let projected: Vec<Option<[f64; 3]>> = mesh
            .vertices
            .iter()
            .map(|&v| track(camera.project(v, cfg.near)))
            .collect();
        for f in &mesh.faces {
            let [a, b, c] = [f[0] as usize, f[1] as usize, f[2] as usize];
            push_tri(
                [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]],
                [projected[a], projected[b], projected[c]],
                TriKind::Body,
            );
        }
    }
    for (li, layer) in layers.iter().enumerate() {
        let projected: Vec<Option<[f64; 3]>> = layer
            .positions
            .iter()
            .map(|&v| track(camera.project(v, cfg.near)))
            .collect();
        for f in layer.faces {
            let [a, b, c] = [f[0] as usize, f[1] as usize, f[2] as usize];
            push_tri(
                [layer.positions[a], layer.positions[b], layer.positions[c]],
                [projected[a], projected[b], projected[c]],
                TriKind::Garment {
                    layer: li as u16,
                    uv: [layer.uvs[a], layer.uvs[b], layer.uvs[c]],
                },
            );
        }
    }

    // Painter's algorithm: far to near, ties broken by submission order so
    // the result is deterministic.
    let mut order: Vec<usize> = (0..tris.len()).collect();
    order.sort_by(|&i, &j| {
        tris[j].depth
            .partial_cmp(&tris[i].depth)
            .expect("finite depths")
            .then(i.cmp(&j))
    });

    // Background, tinted by the light gain like everything else.
    let mut image = Array3::zeros((r, r, 3));
    for y in 0..r {
        for x in 0..r {
            for c in 0..3 {
                image[[y, x, c]] = light.rgb_gain[c] * background[[y, x, c]];
            }
        }
    }
    let mut owners = vec![NO_OWNER; r * r];

    for &ti in &order {
        let tri = &tris[ti];
        let [p0, p1, p2] = tri.screen;
        let area2 = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        if area2.abs() < 1e-12 {
            continue;
        }
        let min_x = p0[0].min(p1[0]).min(p2[0]);
        let max_x = p0[0].max(p1[0]).max(p2[0]);
        let min_y = p0[1].min(p1[1]).min(p2[1]);
        let max_y = p0[1].max(p1[1]).max(p2[1]);
        if max_x < 0.0 || max_y < 0.0 || min_x >= r as f64 || min_y >= r as f64 {
            continue;
        }
        let x_lo = (min_x - 0.5).floor().max(0.0) as usize;
        let x_hi = ((max_x - 0.5).ceil() as usize).min(r - 1);
        let y_lo = (min_y - 0.5).floor().max(0.0) as usize;
        let y_hi = ((max_y - 0.5).ceil() as usize).min(r - 1);

        for py in y_lo..=y_hi {
            let cy = py as f64 + 0.5;
            for px in x_lo..=x_hi {
                let cx = px as f64 + 0.5;
                let w0 = (p2[0] - p1[0]) * (cy - p1[1]) - (p2[1] - p1[1]) * (cx - p1[0]);
                let w1 = (p0[0] - p2[0]) * (cy - p2[1]) - (p0[1] - p2[1]) * (cx - p2[0]);
                let w2 = (p1[0] - p0[0]) * (cy - p0[1]) - (p1[1] - p0[1]) * (cx - p0[0]);
                let inside = if area2 > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                let owner = &mut owners[py * r + px];
                match &tri.kind {
                    TriKind::Body => {
                        for c in 0..3 {
                            image[[py, px, c]] =
                                tri.shade * light.rgb_gain[c] * cfg.skin_color[c];
                        }
                        owner.layer = -1;
                    }
                    TriKind::Garment { layer, uv } => {
                        // Perspective-correct barycentrics.
                        let l0 = w0 / area2;
                        let l1 = w1 / area2;
                        let l2 = w2 / area2;
                        let q0 = l0 / p0[2];
                        let q1 = l1 / p1[2];
                        let q2 = l2 / p2[2];
                        let qs = q0 + q1 + q2;
                        let uvp = [
                            (q0 * uv[0][0] + q1 * uv[1][0] + q2 * uv[2][0]) / qs,
                            (q0 * uv[0][1] + q1 * uv[1][1] + q2 * uv[2][1]) / qs,
                        ];
                        let (texels, weights, color) =
                            bilinear_taps(layers[*layer as usize].texture, uvp);
                        for c in 0..3 {
                            image[[py, px, c]] =
                                tri.shade * light.rgb_gain[c] * color[c];
                        }
                        owner.layer = *layer as i32;
                        owner.texels = texels;
                        for i in 0..4 {
                            owner.weights[i] = weights[i] * tri.shade;
                        }
                    }
                }
            }
        }
    }

    let mut entries = Vec::new();
    for py in 0..r {
        for px in 0..r {
            let o = owners[py * r + px];
            if o.layer >= 0 {
                entries.push(JacobianEntry {
                    pixel: [py as u32, px as u32],
                    layer: o.layer as u16,
                    texels: o.texels,
                    weights: o.weights,
                });
            }
        }
    }

    let (gt_box, empty) = if any_visible {
        let clipped = [
            gt[0].clamp(0.0, r as f64),
            gt[1].clamp(0.0, r as f64),
            gt[2].clamp(0.0, r as f64),
            gt[3].clamp(0.0, r as f64),
        ];
        let degenerate = clipped[2] <= clipped[0] || clipped[3] <= clipped[1];
        if degenerate {
            ([0.0; 4], true)
        } else {
            (clipped, false)
        }
    } else {
        ([0.0; 4], true)
    };

    Ok(Frame {
        image,
        gt_box,
        empty,
        jacobian: TexelJacobian {
            resolution: r,
            layer_dims: layers.iter().map(|l| {
                let (h, w, _) = l.texture.dim();
                (h, w)
            }).collect(),
            rgb_gain: light.rgb_gain,
            entries,
        },
    })
}
