//! Texture parameterization: from a source garment texture to a compact,
//! print-safe parameter set.
//!
//! The pipeline has three steps:
//!
//! 1. K-means over the sRGB values of valid (masked-in) pixels extracts a
//!    K-color palette ([`kmeans`]).
//! 2. The palette is locked to the print gamut and de-duplicated
//!    ([`lock_palette`]).
//! 3. Per palette color, K-means over the UV coordinates of that color's
//!    pixels places `p_max` spatial control points ([`extract_control_points`]),
//!    upsampling by midpoint insertion where a color owns fewer pixels.
//!
//! The result ([`TextureParams`]) is the full optimizable description of a
//! garment texture and round-trips through a JSON parameter file.

mod gamut;
mod kmeans;

pub use gamut::{lock_palette, GamutOperator, InkLimitGamut, LockedPalette, LutGamut};
pub use kmeans::{kmeans, KmeansFit, LLOYD_MAX_ITERS};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::util::{derive_seed, seeded_rng};

/// Which garment a texture belongs to. Determines the mesh it is mapped onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GarmentId {
    Upper,
    Lower,
    Hat,
}

impl GarmentId {
    pub const ALL: [GarmentId; 3] = [GarmentId::Upper, GarmentId::Lower, GarmentId::Hat];

    pub fn index(self) -> usize {
        match self {
            GarmentId::Upper => 0,
            GarmentId::Lower => 1,
            GarmentId::Hat => 2,
        }
    }
}

impl fmt::Display for GarmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GarmentId::Upper => "upper",
            GarmentId::Lower => "lower",
            GarmentId::Hat => "hat",
        };
        f.write_str(s)
    }
}

impl FromStr for GarmentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(GarmentId::Upper),
            "lower" => Ok(GarmentId::Lower),
            "hat" => Ok(GarmentId::Hat),
            other => Err(Error::InvalidInput(format!(
                "unknown garment id {other:?} (expected upper, lower or hat)"
            ))),
        }
    }
}

/// An 8-bit RGB texture in UV space plus a validity mask. Pixel (row y,
/// column x) covers UV [x/W, (x+1)/W] × [y/H, (y+1)/H]; its center is
/// ((x+0.5)/W, (y+0.5)/H).
#[derive(Debug, Clone)]
pub struct UvTexture {
    /// H × W × 3, sRGB.
    pub pixels: Array3<u8>,
    /// H × W; false marks pixels outside the printable/UV-mapped region.
    pub mask: Array2<bool>,
    pub garment_id: GarmentId,
}

impl UvTexture {
    pub fn new(pixels: Array3<u8>, mask: Array2<bool>, garment_id: GarmentId) -> Result<Self> {
        let tex = UvTexture {
            pixels,
            mask,
            garment_id,
        };
        tex.validate()?;
        Ok(tex)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.pixels.dim();
        if c != 3 {
            return Err(Error::InvalidInput(format!(
                "texture must have 3 channels, got {c}"
            )));
        }
        if h < 8 || w < 8 {
            return Err(Error::InvalidInput(format!(
                "texture must be at least 8x8, got {h}x{w}"
            )));
        }
        if self.mask.dim() != (h, w) {
            return Err(Error::InvalidInput(format!(
                "mask dimensions {:?} do not match texture {h}x{w}",
                self.mask.dim()
            )));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::InvalidInput(
                "texture mask is empty: no valid pixels".into(),
            ));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// Loads a texture PNG (8-bit RGB) and a mask PNG (grayscale; luma ≥ 128
    /// marks a pixel valid) of the same size.
    pub fn from_png_files(texture: &Path, mask: &Path, garment_id: GarmentId) -> Result<Self> {
        let tex_img = image::open(texture)?.to_rgb8();
        let mask_img = image::open(mask)?.to_luma8();
        if tex_img.dimensions() != mask_img.dimensions() {
            return Err(Error::InvalidInput(format!(
                "texture {:?} is {:?} but mask {:?} is {:?}",
                texture,
                tex_img.dimensions(),
                mask,
                mask_img.dimensions()
            )));
        }
        let (w, h) = tex_img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut pixels = Array3::zeros((h, w, 3));
        let mut mask_arr = Array2::from_elem((h, w), false);
        for y in 0..h {
            for x in 0..w {
                let p = tex_img.get_pixel(x as u32, y as u32);
                for ch in 0..3 {
                    pixels[[y, x, ch]] = p.0[ch];
                }
                mask_arr[[y, x]] = mask_img.get_pixel(x as u32, y as u32).0[0] >= 128;
            }
        }
        UvTexture::new(pixels, mask_arr, garment_id)
    }

    pub fn save_png(&self, texture: &Path, mask: Option<&Path>) -> Result<()> {
        let (h, w, _) = self.pixels.dim();
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(
                    x as u32,
                    y as u32,
                    image::Rgb([
                        self.pixels[[y, x, 0]],
                        self.pixels[[y, x, 1]],
                        self.pixels[[y, x, 2]],
                    ]),
                );
            }
        }
        img.save(texture)?;
        if let Some(mask_path) = mask {
            let mut m = image::GrayImage::new(w as u32, h as u32);
            for y in 0..h {
                for x in 0..w {
                    m.put_pixel(
                        x as u32,
                        y as u32,
                        image::Luma([if self.mask[[y, x]] { 255 } else { 0 }]),
                    );
                }
            }
            m.save(mask_path)?;
        }
        Ok(())
    }

    /// Content digest over dimensions, pixel data and mask. Independent of
    /// the PNG encoder, so procedurally built and file-loaded textures with
    /// identical content agree.
    pub fn content_sha256(&self) -> String {
        let (h, w, _) = self.pixels.dim();
        let mut hasher = Sha256::new();
        hasher.update((h as u64).to_le_bytes());
        hasher.update((w as u64).to_le_bytes());
        hasher.update(self.pixels.as_slice().unwrap());
        for &m in self.mask.iter() {
            hasher.update([m as u8]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// UV coordinates of the center of pixel (y, x).
    pub fn pixel_uv(&self, y: usize, x: usize) -> [f64; 2] {
        [
            (x as f64 + 0.5) / self.width() as f64,
            (y as f64 + 0.5) / self.height() as f64,
        ]
    }
}

/// `p_max` spatial control points per palette color, each in the unit UV
/// square. Shape: K × p_max × 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPointSet {
    pub points: Array3<f64>,
}

impl ControlPointSet {
    pub fn k(&self) -> usize {
        self.points.dim().0
    }

    pub fn p_max(&self) -> usize {
        self.points.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let (k, p, d) = self.points.dim();
        if k == 0 || p == 0 || d != 2 {
            return Err(Error::InvalidInput(format!(
                "control points must be K x P x 2 with K,P >= 1, got {k} x {p} x {d}"
            )));
        }
        for v in self.points.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidInput(format!(
                    "control points must lie in the unit square, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything needed to regenerate (and keep optimizing) a garment texture.
#[derive(Debug, Clone)]
pub struct TextureParams {
    pub garment_id: GarmentId,
    pub palette: LockedPalette,
    pub points: ControlPointSet,
    pub p_max: usize,
    pub seed: u64,
    pub source_texture_sha256: String,
}

/// Assigns each valid pixel to its nearest palette color (squared distance in
/// sRGB, ties toward the lowest palette index) and places `p_max` control
/// points per color.
///
/// Colors that own fewer pixels than `p_max` are upsampled by midpoint
/// insertion: two distinct existing points are drawn uniformly (seeded) and
/// their arithmetic midpoint is appended. Colors that own no pixels at all
/// get `p_max` points sampled uniformly over the mask support; this is
/// reported via `log::warn!` because it usually means the palette does not
/// describe the texture.
pub fn extract_control_points(
    tex: &UvTexture,
    palette: &LockedPalette,
    p_max: usize,
    seed: u64,
) -> Result<ControlPointSet> {
    tex.validate()?;
    if p_max == 0 {
        return Err(Error::InvalidInput("p_max must be at least 1".into()));
    }
    if palette.colors.is_empty() {
        return Err(Error::InvalidInput("palette has no colors".into()));
    }
    let k = palette.colors.len();
    let (h, w) = (tex.height(), tex.width());

    // Nearest-palette-color assignment over valid pixels.
    let mut member_uv: Vec<Vec<[f64; 2]>> = vec![Vec::new(); k];
    let mut valid_pixels: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !tex.mask[[y, x]] {
                continue;
            }
            valid_pixels.push((y, x));
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, col) in palette.colors.iter().enumerate() {
                let d: f64 = (0..3)
                    .map(|ch| {
                        let diff = tex.pixels[[y, x, ch]] as f64 - col[ch] as f64;
                        diff * diff
                    })
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            member_uv[best].push(tex.pixel_uv(y, x));
        }
    }

    let mut points = Array3::zeros((k, p_max, 2));
    for (c, uvs) in member_uv.iter().enumerate() {
        let cluster_seed = derive_seed(seed, &[c as u64]);
        let mut pts: Vec<[f64; 2]> = if uvs.is_empty() {
            log::warn!(
                "palette color {c} ({:?}) owns no pixels; sampling {p_max} control points \
                 uniformly over the mask support",
                palette.colors[c]
            );
            let mut rng = seeded_rng(cluster_seed);
            (0..p_max)
                .map(|_| {
                    let (y, x) = valid_pixels[rng.random_range(0..valid_pixels.len())];
                    let du: f64 = rng.random_range(0.0..1.0);
                    let dv: f64 = rng.random_range(0.0..1.0);
                    [(x as f64 + du) / w as f64, (y as f64 + dv) / h as f64]
                })
                .collect()
        } else if uvs.len() <= p_max {
            uvs.clone()
        } else {
            let mut data = Array2::zeros((uvs.len(), 2));
            for (i, uv) in uvs.iter().enumerate() {
                data[[i, 0]] = uv[0];
                data[[i, 1]] = uv[1];
            }
            let fit = kmeans(data.view(), p_max, cluster_seed)?;
            fit.centroids
                .outer_iter()
                .map(|r| [r[0], r[1]])
                .collect()
        };

        // Midpoint upsampling to exactly p_max points.
        let mut rng = seeded_rng(derive_seed(cluster_seed, &[1]));
        while pts.len() < p_max {
            let i = rng.random_range(0..pts.len());
            let j = if pts.len() == 1 {
                i
            } else {
                // Second index drawn uniformly among the remaining points.
                let mut j = rng.random_range(0..pts.len() - 1);
                if j >= i {
                    j += 1;
                }
                j
            };
            let mid = [
                0.5 * (pts[i][0] + pts[j][0]),
                0.5 * (pts[i][1] + pts[j][1]),
            ];
            pts.push(mid);
        }

        for (p, uv) in pts.iter().enumerate() {
            points[[c, p, 0]] = uv[0];
            points[[c, p, 1]] = uv[1];
        }
    }

    let set = ControlPointSet { points };
    set.validate()?;
    Ok(set)
}

/// Stage-1 K-means never sees more than this many pixels; larger textures
/// are subsampled with the run seed.
const PALETTE_SAMPLE_CAP: usize = 200_000;

/// Full parameterization pipeline: palette K-means → gamut lock → control
/// point extraction.
pub fn parameterize_texture(
    tex: &UvTexture,
    k: usize,
    p_max: usize,
    op: &dyn GamutOperator,
    seed: u64,
) -> Result<TextureParams> {
    parameterize_with_cap(tex, k, p_max, op, seed, PALETTE_SAMPLE_CAP)
}

pub(crate) fn parameterize_with_cap(
    tex: &UvTexture,
    k: usize,
    p_max: usize,
    op: &dyn GamutOperator,
    seed: u64,
    sample_cap: usize,
) -> Result<TextureParams> {
    tex.validate()?;
    let mut colors: Vec<[f64; 3]> = Vec::new();
    for y in 0..tex.height() {
        for x in 0..tex.width() {
            if tex.mask[[y, x]] {
                colors.push([
                    tex.pixels[[y, x, 0]] as f64,
                    tex.pixels[[y, x, 1]] as f64,
                    tex.pixels[[y, x, 2]] as f64,
                ]);
            }
        }
    }
    if colors.len() > sample_cap {
        let mut rng = seeded_rng(derive_seed(seed, &[0xCA9]));
        let idx = rand::seq::index::sample(&mut rng, colors.len(), sample_cap);
        let mut picked: Vec<usize> = idx.into_vec();
        picked.sort_unstable();
        colors = picked.into_iter().map(|i| colors[i]).collect();
    }
    let mut data = Array2::zeros((colors.len(), 3));
    for (i, c) in colors.iter().enumerate() {
        for ch in 0..3 {
            data[[i, ch]] = c[ch];
        }
    }
    let fit = kmeans(data.view(), k, derive_seed(seed, &[0]))?;
    let raw: Vec<[f64; 3]> = fit.centroids.outer_iter().map(|r| [r[0], r[1], r[2]]).collect();
    let palette = lock_palette(&raw, op)?;
    let points = extract_control_points(tex, &palette, p_max, derive_seed(seed, &[1]))?;
    Ok(TextureParams {
        garment_id: tex.garment_id,
        palette,
        points,
        p_max,
        seed,
        source_texture_sha256: tex.content_sha256(),
    })
}

/// On-disk JSON schema for [`TextureParams`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    garment_id: GarmentId,
    palette: Vec<[u8; 3]>,
    control_points: Vec<Vec<[f64; 2]>>,
    p_max: usize,
    gamut_id: String,
    seed: u64,
    source_texture_sha256: String,
}

impl TextureParams {
    pub fn validate(&self) -> Result<()> {
        self.palette.validate()?;
        self.points.validate()?;
        if self.points.k() != self.palette.k() {
            return Err(Error::InvalidInput(format!(
                "control point clusters ({}) do not match palette size ({})",
                self.points.k(),
                self.palette.k()
            )));
        }
        if self.points.p_max() != self.p_max {
            return Err(Error::InvalidInput(format!(
                "control point count per cluster ({}) does not match p_max ({})",
                self.points.p_max(),
                self.p_max
            )));
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let (k, p, _) = self.points.points.dim();
        let control_points: Vec<Vec<[f64; 2]>> = (0..k)
            .map(|c| {
                (0..p)
                    .map(|i| {
                        [
                            self.points.points[[c, i, 0]],
                            self.points.points[[c, i, 1]],
                        ]
                    })
                    .collect()
            })
            .collect();
        let file = ParamsFile {
            garment_id: self.garment_id,
            palette: self.palette.colors.clone(),
            control_points,
            p_max: self.p_max,
            gamut_id: self.palette.gamut_id.clone(),
            seed: self.seed,
            source_texture_sha256: self.source_texture_sha256.clone(),
        };
        let mut body = serde_json::to_string_pretty(&file)?;
        body.push('\n');
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let file: ParamsFile = serde_json::from_str(&body).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: Some(e.line()),
            msg: e.to_string(),
        })?;
        let k = file.control_points.len();
        if k == 0 {
            return Err(Error::InvalidInput(
                "parameter file has no control point clusters".into(),
            ));
        }
        let p = file.control_points[0].len();
        if file.control_points.iter().any(|c| c.len() != p) {
            return Err(Error::InvalidInput(
                "all control point clusters must have the same size".into(),
            ));
        }
        let mut points = Array3::zeros((k, p, 2));
        for (c, cluster) in file.control_points.iter().enumerate() {
            for (i, uv) in cluster.iter().enumerate() {
                points[[c, i, 0]] = uv[0];
                points[[c, i, 1]] = uv[1];
            }
        }
        let params = TextureParams {
            garment_id: file.garment_id,
            palette: LockedPalette {
                colors: file.palette,
                gamut_id: file.gamut_id,
            },
            points: ControlPointSet { points },
            p_max: file.p_max,
            seed: file.seed,
            source_texture_sha256: file.source_texture_sha256,
        };
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn solid_texture(h: usize, w: usize, rgb: [u8; 3]) -> UvTexture {
        let mut pixels = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    pixels[[y, x, ch]] = rgb[ch];
                }
            }
        }
        UvTexture::new(pixels, Array2::from_elem((h, w), true), GarmentId::Upper).unwrap()
    }

    fn palette(colors: &[[u8; 3]]) -> LockedPalette {
        LockedPalette {
            colors: colors.to_vec(),
            gamut_id: "test".into(),
        }
    }

    #[test]
    fn single_color_single_point_lands_on_mask_centroid() {
        let tex = solid_texture(8, 8, [10, 20, 30]);
        let set = extract_control_points(&tex, &palette(&[[10, 20, 30]]), 1, 0).unwrap();
        assert!((set.points[[0, 0, 0]] - 0.5).abs() < 1e-12);
        assert!((set.points[[0, 0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_pixel_cluster_upsamples_with_midpoint() {
        let mut tex = solid_texture(8, 8, [0, 0, 0]);
        tex.pixels[[0, 0, 0]] = 255;
        tex.pixels[[7, 7, 0]] = 255;
        let set =
            extract_control_points(&tex, &palette(&[[255, 0, 0], [0, 0, 0]]), 3, 9).unwrap();
        let a = [set.points[[0, 0, 0]], set.points[[0, 0, 1]]];
        let b = [set.points[[0, 1, 0]], set.points[[0, 1, 1]]];
        let mid = [set.points[[0, 2, 0]], set.points[[0, 2, 1]]];
        assert_eq!(a, tex.pixel_uv(0, 0));
        assert_eq!(b, tex.pixel_uv(7, 7));
        assert!((mid[0] - 0.5 * (a[0] + b[0])).abs() < 1e-12);
        assert!((mid[1] - 0.5 * (a[1] + b[1])).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_points_are_pixel_centers() {
        let h = 8;
        let mut tex = solid_texture(h, h, [0, 0, 255]);
        for y in 0..h {
            for x in 0..h {
                if (x + y) % 2 == 0 {
                    tex.pixels[[y, x, 0]] = 255;
                    tex.pixels[[y, x, 2]] = 0;
                }
            }
        }
        let p_max = h * h / 2;
        let set =
            extract_control_points(&tex, &palette(&[[255, 0, 0], [0, 0, 255]]), p_max, 3).unwrap();
        for c in 0..2 {
            let mut got: Vec<[f64; 2]> = (0..p_max)
                .map(|i| [set.points[[c, i, 0]], set.points[[c, i, 1]]])
                .collect();
            let mut want: Vec<[f64; 2]> = (0..h)
                .flat_map(|y| (0..h).map(move |x| (y, x)))
                .filter(|&(y, x)| (x + y) % 2 == c % 2)
                .map(|(y, x)| tex.pixel_uv(y, x))
                .collect();
            let key = |p: &[f64; 2]| (p[1] * 1e6 + p[0]) as i64;
            got.sort_by_key(key);
            want.sort_by_key(key);
            // Cluster 0 is red, which owns the (x+y) even cells.
            assert_eq!(got, want, "cluster {c}");
        }
    }

    #[test]
    fn empty_mask_is_rejected() {
        let mut tex = solid_texture(8, 8, [1, 2, 3]);
        tex.mask.fill(false);
        assert!(extract_control_points(&tex, &palette(&[[1, 2, 3], [9, 9, 9]]), 2, 0).is_err());
    }

    #[test]
    fn orphan_color_gets_uniform_points_in_support() {
        let tex = solid_texture(8, 8, [200, 10, 10]);
        let set =
            extract_control_points(&tex, &palette(&[[200, 10, 10], [0, 255, 0]]), 16, 5).unwrap();
        for i in 0..16 {
            let (u, v) = (set.points[[1, i, 0]], set.points[[1, i, 1]]);
            assert!((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v));
        }
        // The populated cluster keeps deterministic geometry.
        let again =
            extract_control_points(&tex, &palette(&[[200, 10, 10], [0, 255, 0]]), 16, 5).unwrap();
        assert_eq!(set.points, again.points);
    }

    #[test]
    fn pipeline_produces_exact_cluster_shape() {
        let mut tex = solid_texture(16, 16, [20, 40, 200]);
        for y in 0..16 {
            for x in 0..8 {
                tex.pixels[[y, x, 0]] = 220;
                tex.pixels[[y, x, 2]] = 30;
            }
        }
        let op = InkLimitGamut::default();
        let params = parameterize_texture(&tex, 2, 5, &op, 42).unwrap();
        params.validate().unwrap();
        assert_eq!(params.points.points.dim(), (2, 5, 2));
        assert_eq!(params.palette.gamut_id, "ink-limit-3");
        assert_eq!(params.source_texture_sha256, tex.content_sha256());
    }

    #[test]
    fn subsampling_is_deterministic() {
        let tex = solid_texture(32, 32, [5, 6, 7]);
        let op = InkLimitGamut::default();
        let a = parameterize_with_cap(&tex, 2, 3, &op, 1, 100).unwrap();
        let b = parameterize_with_cap(&tex, 2, 3, &op, 1, 100).unwrap();
        assert_eq!(a.points.points, b.points.points);
        assert_eq!(a.palette, b.palette);
    }

    #[test]
    fn params_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("upper.json");
        let tex = solid_texture(8, 8, [90, 120, 30]);
        let op = InkLimitGamut::default();
        let params = parameterize_texture(&tex, 2, 4, &op, 77).unwrap();
        params.save_json(&path).unwrap();
        let loaded = TextureParams::load_json(&path).unwrap();
        assert_eq!(loaded.garment_id, params.garment_id);
        assert_eq!(loaded.palette, params.palette);
        assert_eq!(loaded.points.points, params.points.points);
        assert_eq!(loaded.p_max, params.p_max);
        assert_eq!(loaded.seed, params.seed);
        assert_eq!(loaded.source_texture_sha256, params.source_texture_sha256);

        // Re-saving is byte-identical.
        let again = dir.path().join("again.json");
        loaded.save_json(&again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn params_json_rejects_bad_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"garment_id\": \"cape\"}").unwrap();
        let err = TextureParams::load_json(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "got {err}");

        // Control points outside the unit square fail validation.
        std::fs::write(
            &path,
            serde_json::json!({
                "garment_id": "upper",
                "palette": [[0, 0, 0], [255, 255, 255]],
                "control_points": [[[0.5, 1.5]], [[0.2, 0.2]]],
                "p_max": 1,
                "gamut_id": "ink-limit-3",
                "seed": 0,
                "source_texture_sha256": ""
            })
            .to_string(),
        )
        .unwrap();
        let err = TextureParams::load_json(&path).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "got {err}");
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tex_path = dir.path().join("t.png");
        let mask_path = dir.path().join("m.png");
        let mut tex = solid_texture(8, 12, [1, 2, 3]);
        tex.pixels[[3, 4, 1]] = 99;
        tex.mask[[0, 0]] = false;
        tex.save_png(&tex_path, Some(&mask_path)).unwrap();
        let loaded = UvTexture::from_png_files(&tex_path, &mask_path, GarmentId::Hat).unwrap();
        assert_eq!(loaded.pixels, tex.pixels);
        assert_eq!(loaded.mask, tex.mask);
        assert_eq!(loaded.content_sha256(), tex.content_sha256());
    }

    #[test]
    fn mismatched_mask_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let tex_path = dir.path().join("t.png");
        let mask_path = dir.path().join("m.png");
        solid_texture(8, 8, [0, 0, 0])
            .save_png(&tex_path, None)
            .unwrap();
        solid_texture(8, 16, [0, 0, 0])
            .save_png(&mask_path, None)
            .unwrap();
        assert!(UvTexture::from_png_files(&tex_path, &mask_path, GarmentId::Upper).is_err());
    }
}
