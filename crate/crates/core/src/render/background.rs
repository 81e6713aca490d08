//! Background plates: a seeded procedural generator (soft gradient plus two
//! octaves of Perlin noise over a light-gray base) and PNG loading.
//!
//! When `SEQCLOAK_CACHE` names a directory, resized file plates are cached
//! there keyed by source content hash, so repeated runs skip the decode and
//! resample. Cache hits are byte-identical to a fresh resize.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::render::BackgroundRef;
use crate::util::seeded_rng;
use crate::Result;

/// Sample one octave of 2-D Perlin gradient noise on a `cells`×`cells`
/// lattice at unit-square coordinates. Output roughly spans [-0.7, 0.7].
struct PerlinOctave {
    grads: Vec<[f64; 2]>,
    cells: usize,
}

impl PerlinOctave {
    fn new<R: Rng>(rng: &mut R, cells: usize) -> Self {
        let grads = (0..(cells + 1) * (cells + 1))
            .map(|_| {
                let theta = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
                [theta.cos(), theta.sin()]
            })
            .collect();
        PerlinOctave { grads, cells }
    }

    fn grad(&self, gx: usize, gy: usize) -> [f64; 2] {
        self.grads[gy * (self.cells + 1) + gx]
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        let fx = x * self.cells as f64;
        let fy = y * self.cells as f64;
        let gx = (fx as usize).min(self.cells - 1);
        let gy = (fy as usize).min(self.cells - 1);
        let (dx, dy) = (fx - gx as f64, fy - gy as f64);
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let dot = |cx: usize, cy: usize, ox: f64, oy: f64| {
            let g = self.grad(cx, cy);
            g[0] * (dx - ox) + g[1] * (dy - oy)
        };
        let (u, v) = (fade(dx), fade(dy));
        let top = dot(gx, gy, 0.0, 0.0) * (1.0 - u) + dot(gx + 1, gy, 1.0, 0.0) * u;
        let bot = dot(gx, gy + 1, 0.0, 1.0) * (1.0 - u) + dot(gx + 1, gy + 1, 1.0, 1.0) * u;
        top * (1.0 - v) + bot * v
    }
}

/// Generate a light-gray plate: base level, a directional gradient, two
/// Perlin octaves and a faint per-channel tint, clamped to [0.65, 0.95].
pub fn procedural_background(resolution: usize, seed: u64) -> Array3<f64> {
    let mut rng = seeded_rng(seed);
    let base = 0.74 + rng.random::<f64>() * 0.08;
    let grad_theta = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    let grad_amp = 0.02 + rng.random::<f64>() * 0.05;
    let tint: Vec<f64> = (0..3).map(|_| (rng.random::<f64>() - 0.5) * 0.03).collect();
    let coarse = PerlinOctave::new(&mut rng, 4);
    let fine = PerlinOctave::new(&mut rng, 9);

    let mut img = Array3::zeros((resolution, resolution, 3));
    for y in 0..resolution {
        for x in 0..resolution {
            let (u, v) = (
                (x as f64 + 0.5) / resolution as f64 - 0.5,
                (y as f64 + 0.5) / resolution as f64 - 0.5,
            );
            let g = grad_amp * (u * grad_theta.cos() + v * grad_theta.sin());
            let n = 0.05 * coarse.value(u + 0.5, v + 0.5) + 0.02 * fine.value(u + 0.5, v + 0.5);
            for c in 0..3 {
                img[[y, x, c]] = (base + g + n + tint[c]).clamp(0.65, 0.95);
            }
        }
    }
    img
}

/// Cache path for a file plate: content hash of the source bytes plus the
/// target resolution, so edits to the source can never serve a stale entry.
fn cache_entry(dir: &Path, bytes: &[u8], resolution: usize) -> PathBuf {
    let digest: String = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("bg_{digest}_{resolution}.png"))
}

/// Decode and resize a file plate, consulting the cache when enabled.
fn resize_plate(path: &Path, resolution: usize, cache: Option<&Path>) -> Result<image::RgbImage> {
    let bytes = std::fs::read(path)?;
    let entry = cache.map(|dir| cache_entry(dir, &bytes, resolution));
    if let Some(entry) = entry.as_deref() {
        if let Ok(img) = image::open(entry) {
            let img = img.to_rgb8();
            if img.width() as usize == resolution && img.height() as usize == resolution {
                return Ok(img);
            }
        }
    }
    let img = image::load_from_memory(&bytes)?.to_rgb8();
    let resized = image::imageops::resize(
        &img,
        resolution as u32,
        resolution as u32,
        image::imageops::FilterType::Triangle,
    );
    if let Some(entry) = entry.as_deref() {
        // Best effort: a failed cache write must not fail the render.
        if let Some(parent) = entry.parent() {
            let _ = std::fs::create_dir_all(parent);
        }
        let _ = resized.save(entry);
    }
    Ok(resized)
}

/// Materialize a background reference at the requested resolution.
pub fn load_background(bg: &BackgroundRef, resolution: usize) -> Result<Array3<f64>> {
    match bg {
        BackgroundRef::Procedural { seed } => Ok(procedural_background(resolution, *seed)),
        BackgroundRef::File { path } => {
            let cache = std::env::var_os("SEQCLOAK_CACHE").map(PathBuf::from);
            let resized = resize_plate(path, resolution, cache.as_deref())?;
            let mut out = Array3::zeros((resolution, resolution, 3));
            for (x, y, px) in resized.enumerate_pixels() {
                for c in 0..3 {
                    out[[y as usize, x as usize, c]] = px.0[c] as f64 / 255.0;
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plates_are_light_gray_and_seeded() {
        let a = procedural_background(64, 5);
        let b = procedural_background(64, 5);
        assert_eq!(a, b);
        let c = procedural_background(64, 6);
        assert_ne!(a, c);
        let mean = a.mean().unwrap();
        assert!((0.68..0.92).contains(&mean), "mean {mean}");
        for &v in a.iter() {
            assert!((0.65..=0.95).contains(&v));
        }
    }

    #[test]
    fn plates_have_texture() {
        let a = procedural_background(64, 5);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in a.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(hi - lo > 0.02, "plate is flat: {lo}..{hi}");
    }

    #[test]
    fn file_backgrounds_load_and_resize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bg.png");
        let img = image::RgbImage::from_fn(20, 10, |x, _| image::Rgb([x as u8 * 10, 128, 200]));
        img.save(&path).unwrap();
        let loaded = load_background(&BackgroundRef::File { path }, 16).unwrap();
        assert_eq!(loaded.dim(), (16, 16, 3));
        for &v in loaded.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
        // Green channel is constant in the source; it must survive resizing.
        for y in 0..16 {
            for x in 0..16 {
                assert!((loaded[[y, x, 1]] - 128.0 / 255.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn plate_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("bg.png");
        let cache = dir.path().join("cache");
        let img = image::RgbImage::from_fn(24, 24, |x, y| image::Rgb([x as u8 * 7, y as u8 * 9, 40]));
        img.save(&src).unwrap();

        let fresh = resize_plate(&src, 16, None).unwrap();
        let miss = resize_plate(&src, 16, Some(&cache)).unwrap();
        assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
        let hit = resize_plate(&src, 16, Some(&cache)).unwrap();
        assert_eq!(fresh, miss);
        assert_eq!(fresh, hit);

        // A mis-sized entry (e.g. from a truncated write) is regenerated.
        let entry = cache_entry(&cache, &std::fs::read(&src).unwrap(), 16);
        image::RgbImage::new(3, 3).save(&entry).unwrap();
        let recovered = resize_plate(&src, 16, Some(&cache)).unwrap();
        assert_eq!(fresh, recovered);
    }
}
