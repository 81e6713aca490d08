//! Print-gamut operators and palette locking.
//!
//! A gamut operator maps a requested sRGB color to the nearest color the
//! print process can actually reproduce. Two implementations ship here:
//!
//! * [`InkLimitGamut`] — an analytic sRGB→CMYK→sRGB round trip with a
//!   total-ink-limit projection. With the default limit of 3.0 the round trip
//!   is the identity up to 8-bit rounding; lower limits desaturate dark
//!   colors the way real presses do.
//! * [`LutGamut`] — a user-supplied 3D lookup table (`GLUT1` file format)
//!   sampled with trilinear interpolation.
//!
//! [`lock_palette`] pushes every palette color through an operator until it
//! is a fixed point (within one 8-bit unit per channel) and the palette is
//! pairwise distinct, so that downstream stages can treat palette colors as
//! printable by construction.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Projects real-valued sRGB (channels in [0, 255]) into the printable set.
pub trait GamutOperator {
    fn project(&self, rgb: [f64; 3]) -> [f64; 3];
    /// Stable identifier recorded in parameter files.
    fn id(&self) -> String;
}

/// Analytic CMYK round trip with a configurable total-ink limit.
#[derive(Debug, Clone)]
pub struct InkLimitGamut {
    limit: f64,
}

impl Default for InkLimitGamut {
    fn default() -> Self {
        InkLimitGamut { limit: 3.0 }
    }
}

impl InkLimitGamut {
    /// `limit` is the maximum allowed C+M+Y+K sum, in [1, 4].
    pub fn new(limit: f64) -> Result<Self> {
        if !(1.0..=4.0).contains(&limit) {
            return Err(Error::Config(format!(
                "ink limit must lie in [1, 4], got {limit}"
            )));
        }
        Ok(InkLimitGamut { limit })
    }
}

/// Naive sRGB→CMYK separation: K = 1 − max(R', G', B'), remaining channels
/// normalized by (1 − K). Pure black maps to K=1 with zero CMY.
pub(crate) fn cmyk_decompose(rgb: [f64; 3]) -> [f64; 4] {
    let r = (rgb[0] / 255.0).clamp(0.0, 1.0);
    let g = (rgb[1] / 255.0).clamp(0.0, 1.0);
    let b = (rgb[2] / 255.0).clamp(0.0, 1.0);
    let k = 1.0 - r.max(g).max(b);
    if k >= 1.0 {
        return [0.0, 0.0, 0.0, 1.0];
    }
    let c = (1.0 - r - k) / (1.0 - k);
    let m = (1.0 - g - k) / (1.0 - k);
    let y = (1.0 - b - k) / (1.0 - k);
    [c, m, y, k]
}

pub(crate) fn cmyk_compose(cmyk: [f64; 4]) -> [f64; 3] {
    let [c, m, y, k] = cmyk;
    [
        255.0 * (1.0 - c) * (1.0 - k),
        255.0 * (1.0 - m) * (1.0 - k),
        255.0 * (1.0 - y) * (1.0 - k),
    ]
}

impl GamutOperator for InkLimitGamut {
    fn project(&self, rgb: [f64; 3]) -> [f64; 3] {
        let [mut c, mut m, mut y, k] = cmyk_decompose(rgb);
        let total = c + m + y + k;
        if total > self.limit {
            // Remove the excess from the chromatic inks proportionally; K is
            // never reduced, which matches how rich blacks are limited.
            let chroma = c + m + y;
            if chroma > 0.0 {
                let scale = ((self.limit - k) / chroma).max(0.0);
                c *= scale;
                m *= scale;
                y *= scale;
            }
        }
        cmyk_compose([c, m, y, k])
    }

    fn id(&self) -> String {
        format!("ink-limit-{}", self.limit)
    }
}

const LUT_MAGIC: &[u8; 5] = b"GLUT1";

/// 3D RGB lookup table. Axis order is R, G, B; each axis spans [0, 255] with
/// `dims[axis]` uniformly spaced knots; entries are f32 sRGB triples in
/// [0, 255], row-major with the blue index fastest.
#[derive(Debug, Clone)]
pub struct LutGamut {
    dims: [usize; 3],
    data: Vec<[f32; 3]>,
    id: String,
}

impl LutGamut {
    pub fn new(dims: [usize; 3], data: Vec<[f32; 3]>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput(
                "gamut LUT needs at least 2 knots per axis".into(),
            ));
        }
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidInput(format!(
                "gamut LUT expects {} entries, got {}",
                dims[0] * dims[1] * dims[2],
                data.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "gamut LUT entries must be finite".into(),
            ));
        }
        let mut hasher = Sha256::new();
        for &[r, g, b] in &data {
            hasher.update(r.to_le_bytes());
            hasher.update(g.to_le_bytes());
            hasher.update(b.to_le_bytes());
        }
        let id = format!("lut-{:.12}", hex(&hasher.finalize()));
        Ok(LutGamut { dims, data, id })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::Parse {
                path: path.display().to_string(),
                line: None,
                msg,
            },
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut magic = [0u8; 5];
        cursor
            .read_exact(&mut magic)
            .map_err(|_| Error::InvalidInput("gamut LUT file is truncated".into()))?;
        if &magic != LUT_MAGIC {
            return Err(Error::InvalidInput(format!(
                "bad gamut LUT magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(LUT_MAGIC)
            )));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            let mut b = [0u8; 2];
            cursor
                .read_exact(&mut b)
                .map_err(|_| Error::InvalidInput("gamut LUT file is truncated".into()))?;
            *d = u16::from_le_bytes(b) as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 4];
        for _ in 0..n {
            let mut rgb = [0f32; 3];
            for v in rgb.iter_mut() {
                cursor
                    .read_exact(&mut b)
                    .map_err(|_| Error::InvalidInput("gamut LUT file is truncated".into()))?;
                *v = f32::from_le_bytes(b);
            }
            data.push(rgb);
        }
        LutGamut::new(dims, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(LUT_MAGIC)?;
        for &d in &self.dims {
            f.write_all(&(d as u16).to_le_bytes())?;
        }
        for &[r, g, b] in &self.data {
            f.write_all(&r.to_le_bytes())?;
            f.write_all(&g.to_le_bytes())?;
            f.write_all(&b.to_le_bytes())?;
        }
        Ok(())
    }

    fn entry(&self, ir: usize, ig: usize, ib: usize) -> [f32; 3] {
        self.data[(ir * self.dims[1] + ig) * self.dims[2] + ib]
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl GamutOperator for LutGamut {
    fn project(&self, rgb: [f64; 3]) -> [f64; 3] {
        // Trilinear interpolation over the knot grid.
        let mut idx = [0usize; 3];
        let mut frac = [0f64; 3];
        for axis in 0..3 {
            let knots = self.dims[axis];
            let t = (rgb[axis].clamp(0.0, 255.0) / 255.0) * (knots - 1) as f64;
            let i = (t.floor() as usize).min(knots - 2);
            idx[axis] = i;
            frac[axis] = t - i as f64;
        }
        let mut out = [0.0f64; 3];
        for corner in 0..8usize {
            let (dr, dg, db) = (corner >> 2 & 1, corner >> 1 & 1, corner & 1);
            let w = (if dr == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dg == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if db == 1 { frac[2] } else { 1.0 - frac[2] });
            let e = self.entry(idx[0] + dr, idx[1] + dg, idx[2] + db);
            for ch in 0..3 {
                out[ch] += w * e[ch] as f64;
            }
        }
        out
    }

    fn id(&self) -> String {
        self.id.clone()
    }
}

/// A gamut-locked, pairwise-distinct 8-bit palette.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockedPalette {
    pub colors: Vec<[u8; 3]>,
    pub gamut_id: String,
}

impl LockedPalette {
    pub fn k(&self) -> usize {
        self.colors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=32).contains(&self.colors.len()) {
            return Err(Error::InvalidInput(format!(
                "palette must have 2..=32 colors, got {}",
                self.colors.len()
            )));
        }
        for (i, a) in self.colors.iter().enumerate() {
            for b in &self.colors[i + 1..] {
                if a == b {
                    return Err(Error::InvalidInput(format!(
                        "palette colors must be pairwise distinct (duplicate {a:?})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Applies `op` until the color stops moving (at most this many rounds).
const LOCK_MAX_ROUNDS: usize = 8;

fn lock_color(op: &dyn GamutOperator, rgb: [f64; 3]) -> [u8; 3] {
    let mut cur = rgb;
    for _ in 0..LOCK_MAX_ROUNDS {
        let next = op.project(cur);
        let moved = (0..3).any(|ch| (next[ch] - cur[ch]).abs() > 0.5);
        cur = next;
        if !moved {
            break;
        }
    }
    let out = [
        cur[0].round().clamp(0.0, 255.0) as u8,
        cur[1].round().clamp(0.0, 255.0) as u8,
        cur[2].round().clamp(0.0, 255.0) as u8,
    ];
    let back = op.project([out[0] as f64, out[1] as f64, out[2] as f64]);
    if (0..3).any(|ch| (back[ch] - out[ch] as f64).abs() > 1.0) {
        log::warn!(
            "gamut operator {} did not settle within one 8-bit unit for {rgb:?}",
            op.id()
        );
    }
    out
}

/// Locks raw centroid colors to the gamut and makes them pairwise distinct.
///
/// Duplicates arising from the lock are nudged by +1 on the largest channel
/// that still has headroom (ties toward red), stepping blue down only in the
/// all-saturated corner case.
pub fn lock_palette(raw: &[[f64; 3]], op: &dyn GamutOperator) -> Result<LockedPalette> {
    if !(2..=32).contains(&raw.len()) {
        return Err(Error::InvalidInput(format!(
            "palette must have 2..=32 colors, got {}",
            raw.len()
        )));
    }
    let mut colors: Vec<[u8; 3]> = Vec::with_capacity(raw.len());
    for &rgb in raw {
        let mut c = lock_color(op, rgb);
        let mut guard = 0;
        while colors.contains(&c) {
            let headroom = (0..3)
                .filter(|&ch| c[ch] < 255)
                .max_by_key(|&ch| (c[ch], std::cmp::Reverse(ch)));
            match headroom {
                Some(ch) => c[ch] += 1,
                None => c[2] = c[2].wrapping_sub(1),
            }
            guard += 1;
            if guard > 1024 {
                return Err(Error::InvalidInput(
                    "could not de-duplicate locked palette".into(),
                ));
            }
        }
        colors.push(c);
    }
    let palette = LockedPalette {
        colors,
        gamut_id: op.id(),
    };
    palette.validate()?;
    Ok(palette)
}
