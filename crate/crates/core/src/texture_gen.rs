//! Differentiable texture generator.
//!
//! Control points induce a per-color logit field over the UV grid: the logit
//! of color `c` at a pixel is `ln(ε + Σ_j exp(−‖uv − p_cj‖² / σ_f²))`, a
//! soft "coverage" of that pixel by the color's points. The fields are
//! sharpness-blended with a blurred copy of themselves, perturbed with Gumbel
//! noise, pushed through a tempered softmax, clamped away from zero and
//! renormalized. The output pixel is the weight-convex combination of the
//! locked palette, so every generated pixel stays inside the palette's convex
//! hull (and therefore inside the print gamut up to rounding).
//!
//! [`TextureGenerator::backward`] computes the exact gradient of any scalar
//! loss (given as an upstream d loss / d pixel array) with respect to the
//! control points — and to the optional per-color logit gains — by walking
//! the same chain in reverse. Weight-clamping uses the pass-through
//! subgradient; every other step is smooth.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture_param::{ControlPointSet, GarmentId, TextureParams};
use crate::util::{reflect_index, seeded_rng};

/// Additive floor inside the field logarithm; keeps pixels with no nearby
/// control points at a large-but-finite negative logit.
pub const FIELD_EPS: f64 = 1e-12;

/// Kernel contributions beyond this many field sigmas are dropped. At six
/// sigmas the kernel is exp(−36) ≈ 2e−16, below f64 epsilon relative to any
/// retained term.
const FIELD_CUTOFF_SIGMAS: f64 = 6.0;

/// How fresh Gumbel noise is drawn across optimizer iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedMode {
    /// Same noise tensor every call (freezes the mixing pattern).
    Fixed,
    /// A fresh stream per optimizer iteration and scene sample.
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Softmax temperature; lower is closer to hard color assignment.
    pub tau_gumbel: f64,
    /// Gaussian blur sigma (pixels) for the smoothed field copy.
    pub blur_sigma: f64,
    /// Weight of the sharp field in the sharp/blurred blend.
    pub mix_ratio: f64,
    /// Lower clamp applied to softmax weights before renormalization.
    pub clamp_shift: f64,
    /// Field kernel sigma in UV units.
    pub field_sigma: f64,
    pub seed_mode: SeedMode,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            tau_gumbel: 0.3,
            blur_sigma: 1.0,
            mix_ratio: 0.7,
            clamp_shift: 0.01,
            field_sigma: 0.03,
            seed_mode: SeedMode::PerIteration,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_gumbel > 0.0) {
            return Err(Error::Config(format!(
                "tau_gumbel must be positive, got {}",
                self.tau_gumbel
            )));
        }
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "blur_sigma must be non-negative, got {}",
                self.blur_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::Config(format!(
                "mix_ratio must lie in [0, 1], got {}",
                self.mix_ratio
            )));
        }
        if !(0.0..0.5).contains(&self.clamp_shift) {
            return Err(Error::Config(format!(
                "clamp_shift must lie in [0, 0.5), got {}",
                self.clamp_shift
            )));
        }
        if !(self.field_sigma > 0.0) {
            return Err(Error::Config(format!(
                "field_sigma must be positive, got {}",
                self.field_sigma
            )));
        }
        Ok(())
    }
}

/// A generated texture plus the provenance needed to audit gradient calls.
#[derive(Debug, Clone)]
pub struct GarmentTexture {
    /// H × W × 3, each channel in [0, 1]. Masked-out pixels are zero.
    pub pixels: Array3<f64>,
    pub mask: Array2<bool>,
    pub garment_id: GarmentId,
    pub provenance: TextureProvenance,
}

/// Identifies the exact forward evaluation a texture came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextureProvenance {
    pub noise_seed: u64,
    /// Digest over control points, gains, config and grid shape.
    pub input_digest: u64,
}

/// Gradients returned by the backward pass.
#[derive(Debug, Clone)]
pub struct TextureGrad {
    /// d loss / d control point, K × P × 2.
    pub points: Array3<f64>,
    /// d loss / d per-color logit gain, length K.
    pub gains: Vec<f64>,
}

/// Intermediate state captured by [`TextureGenerator::forward`] so the
/// backward pass does not have to recompute the field and softmax.
#[derive(Debug, Clone)]
pub struct GenCache {
    /// Raw (pre-gain) logit fields, H × W × K.
    base: Array3<f64>,
    /// Softmax weights before clamping, H × W × K.
    soft: Array3<f64>,
}

/// Spatial bins over the unit square so field evaluation only visits points
/// within the kernel cutoff.
struct PointBins {
    cells: usize,
    cell_size: f64,
    /// Per cluster, per cell: point indices.
    bins: Vec<Vec<Vec<usize>>>,
}

impl PointBins {
    fn build(points: &Array3<f64>, cutoff: f64) -> PointBins {
        let (k, p, _) = points.dim();
        let cells = (1.0 / cutoff).ceil().max(1.0) as usize;
        let cell_size = 1.0 / cells as f64;
        let mut bins = vec![vec![Vec::new(); cells * cells]; k];
        for c in 0..k {
            for j in 0..p {
                let cu = ((points[[c, j, 0]] / cell_size) as usize).min(cells - 1);
                let cv = ((points[[c, j, 1]] / cell_size) as usize).min(cells - 1);
                bins[c][cv * cells + cu].push(j);
            }
        }
        PointBins {
            cells,
            cell_size,
            bins,
        }
    }

    /// Visits points of cluster `c` whose cell neighbors the cell of `uv`,
    /// in deterministic (cell-major, then insertion) order.
    fn visit(&self, c: usize, uv: [f64; 2], mut f: impl FnMut(usize)) {
        let cu = ((uv[0] / self.cell_size) as isize).clamp(0, self.cells as isize - 1);
        let cv = ((uv[1] / self.cell_size) as isize).clamp(0, self.cells as isize - 1);
        for dv in -1..=1isize {
            let v = cv + dv;
            if v < 0 || v >= self.cells as isize {
                continue;
            }
            for du in -1..=1isize {
                let u = cu + du;
                if u < 0 || u >= self.cells as isize {
                    continue;
                }
                for &j in &self.bins[c][(v as usize) * self.cells + u as usize] {
                    f(j);
                }
            }
        }
    }
}

/// UV coordinates of the center of pixel (y, x) on an H × W grid.
fn grid_uv(y: usize, x: usize, h: usize, w: usize) -> [f64; 2] {
    [(x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64]
}

/// Tempered softmax with max subtraction, written into `out`.
pub(crate) fn softmax_tempered(vals: &[f64], tau: f64, out: &mut [f64]) {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(vals) {
        *o = ((v - m) / tau).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Lower-clamps the weights and renormalizes them to sum one.
pub(crate) fn clamp_renorm(weights: &[f64], clamp_shift: f64, out: &mut [f64]) {
    let mut sum = 0.0;
    for (o, &w) in out.iter_mut().zip(weights) {
        *o = w.max(clamp_shift);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Raw logit fields: `z_c(y, x) = ln(ε + Σ_j exp(−‖uv − p_cj‖²/σ_f²))`.
pub fn logit_field(points: &ControlPointSet, h: usize, w: usize, field_sigma: f64) -> Array3<f64> {
    let (k, _, _) = points.points.dim();
    let inv_s2 = 1.0 / (field_sigma * field_sigma);
    let cutoff = FIELD_CUTOFF_SIGMAS * field_sigma;
    let cutoff2 = cutoff * cutoff;
    let bins = PointBins::build(&points.points, cutoff);
    let mut z = Array3::zeros((h, w, k));
    for y in 0..h {
        for x in 0..w {
            let uv = grid_uv(y, x, h, w);
            for c in 0..k {
                let mut s = 0.0;
                bins.visit(c, uv, |j| {
                    let du = uv[0] - points.points[[c, j, 0]];
                    let dv = uv[1] - points.points[[c, j, 1]];
                    let d2 = du * du + dv * dv;
                    if d2 <= cutoff2 {
                        s += (-d2 * inv_s2).exp();
                    }
                });
                z[[y, x, c]] = (FIELD_EPS + s).ln();
            }
        }
    }
    z
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable truncated-Gaussian blur with mirrored (reflect-101) borders.
pub fn gaussian_blur(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return field.clone();
    }
    let (h, w) = field.dim();
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kw) in kernel.iter().enumerate() {
                let sx = reflect_index(x as isize + ki as isize - r, w);
                acc += kw * field[[y, sx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kw) in kernel.iter().enumerate() {
                let sy = reflect_index(y as isize + ki as isize - r, h);
                acc += kw * tmp[[sy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Exact adjoint of [`gaussian_blur`]: scatters with the same taps, in the
/// reverse pass order (columns first, then rows).
fn gaussian_blur_adjoint(grad: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return grad.clone();
    }
    let (h, w) = grad.dim();
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let g = grad[[y, x]];
            for (ki, &kw) in kernel.iter().enumerate() {
                let sy = reflect_index(y as isize + ki as isize - r, h);
                tmp[[sy, x]] += kw * g;
            }
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let g = tmp[[y, x]];
            for (ki, &kw) in kernel.iter().enumerate() {
                let sx = reflect_index(x as isize + ki as isize - r, w);
                out[[y, sx]] += kw * g;
            }
        }
    }
    out
}

/// Standard Gumbel(0, 1) noise, filled in (y, x, c) order from a dedicated
/// stream, so the tensor depends only on `seed` and the shape.
pub fn gumbel_noise(h: usize, w: usize, k: usize, seed: u64) -> Array3<f64> {
    let mut rng = seeded_rng(seed);
    let mut g = Array3::zeros((h, w, k));
    for v in g.iter_mut() {
        let u: f64 = rng.random::<f64>().max(1e-300);
        *v = -(-u.ln()).ln();
    }
    g
}

fn digest_f64s<'a>(state: u64, vals: impl Iterator<Item = &'a f64>) -> u64 {
    let mut h = state;
    for v in vals {
        h = crate::util::derive_seed(h, &[v.to_bits()]);
    }
    h
}

/// Differentiable map from control points to a garment texture.
pub struct TextureGenerator<'p> {
    params: &'p TextureParams,
    cfg: GeneratorConfig,
    h: usize,
    w: usize,
    mask: Array2<bool>,
    /// Per-color multiplicative logit gains; all ones unless the caller opts
    /// into optimizing them.
    gains: Vec<f64>,
}

impl<'p> TextureGenerator<'p> {
    /// `mask`: validity mask at the output resolution; `None` means all
    /// pixels valid. (Parameter files do not carry a mask, so callers that
    /// have the source texture should pass its mask resampled to `h`×`w`.)
    pub fn new(
        params: &'p TextureParams,
        cfg: GeneratorConfig,
        h: usize,
        w: usize,
        mask: Option<Array2<bool>>,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput("texture grid must be non-empty".into()));
        }
        let mask = match mask {
            Some(m) => {
                if m.dim() != (h, w) {
                    return Err(Error::InvalidInput(format!(
                        "mask shape {:?} does not match grid {h}x{w}",
                        m.dim()
                    )));
                }
                m
            }
            None => Array2::from_elem((h, w), true),
        };
        Ok(TextureGenerator {
            params,
            cfg,
            h,
            w,
            mask,
            gains: vec![1.0; params.palette.k()],
        })
    }

    pub fn set_gains(&mut self, gains: Vec<f64>) -> Result<()> {
        if gains.len() != self.params.palette.k() {
            return Err(Error::InvalidInput(format!(
                "expected {} gains, got {}",
                self.params.palette.k(),
                gains.len()
            )));
        }
        self.gains = gains;
        Ok(())
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    fn input_digest(&self) -> u64 {
        let mut d = crate::util::derive_seed(
            0x7e87_01,
            &[self.h as u64, self.w as u64, self.params.palette.k() as u64],
        );
        d = digest_f64s(d, self.params.points.points.iter());
        d = digest_f64s(d, self.gains.iter());
        d = digest_f64s(
            d,
            [
                self.cfg.tau_gumbel,
                self.cfg.blur_sigma,
                self.cfg.mix_ratio,
                self.cfg.clamp_shift,
                self.cfg.field_sigma,
            ]
            .iter(),
        );
        d
    }

    /// Generates the texture for one noise draw.
    pub fn forward(&self, noise_seed: u64) -> (GarmentTexture, GenCache) {
        let k = self.params.palette.k();
        let (h, w) = (self.h, self.w);
        let base = logit_field(&self.params.points, h, w, self.cfg.field_sigma);

        // Gain, then sharp/blurred blend per color plane.
        let mut blended = Array3::zeros((h, w, k));
        for c in 0..k {
            let mut plane = Array2::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    plane[[y, x]] = self.gains[c] * base[[y, x, c]];
                }
            }
            let blurred = gaussian_blur(&plane, self.cfg.blur_sigma);
            for y in 0..h {
                for x in 0..w {
                    blended[[y, x, c]] = self.cfg.mix_ratio * plane[[y, x]]
                        + (1.0 - self.cfg.mix_ratio) * blurred[[y, x]];
                }
            }
        }

        let noise = gumbel_noise(h, w, k, noise_seed);
        let mut soft = Array3::zeros((h, w, k));
        let mut pixels = Array3::zeros((h, w, 3));
        let palette01: Vec<[f64; 3]> = self
            .params
            .palette
            .colors
            .iter()
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        let mut logits = vec![0.0; k];
        let mut weights = vec![0.0; k];
        let mut renorm = vec![0.0; k];
        for y in 0..h {
            for x in 0..w {
                for c in 0..k {
                    logits[c] = blended[[y, x, c]] + noise[[y, x, c]];
                }
                softmax_tempered(&logits, self.cfg.tau_gumbel, &mut weights);
                for c in 0..k {
                    soft[[y, x, c]] = weights[c];
                }
                if !self.mask[[y, x]] {
                    continue;
                }
                clamp_renorm(&weights, self.cfg.clamp_shift, &mut renorm);
                for c in 0..k {
                    for ch in 0..3 {
                        pixels[[y, x, ch]] += renorm[c] * palette01[c][ch];
                    }
                }
            }
        }

        let tex = GarmentTexture {
            pixels,
            mask: self.mask.clone(),
            garment_id: self.params.garment_id,
            provenance: TextureProvenance {
                noise_seed,
                input_digest: self.input_digest(),
            },
        };
        (tex, GenCache { base, soft })
    }

    /// The per-pixel palette weights a forward pass mixed with: the cached
    /// softmax pushed through the same clamp-renormalize step, so each row
    /// is non-negative and sums to one (the convex-hull certificate for
    /// `pixels`).
    pub fn hull_weights(&self, cache: &GenCache) -> Array3<f64> {
        let k = self.params.palette.k();
        let (h, w) = (self.h, self.w);
        let mut out = Array3::zeros((h, w, k));
        let mut soft = vec![0.0; k];
        let mut renorm = vec![0.0; k];
        for y in 0..h {
            for x in 0..w {
                for c in 0..k {
                    soft[c] = cache.soft[[y, x, c]];
                }
                clamp_renorm(&soft, self.cfg.clamp_shift, &mut renorm);
                for c in 0..k {
                    out[[y, x, c]] = renorm[c];
                }
            }
        }
        out
    }

    /// Gradient of `⟨upstream, pixels⟩` with respect to control points and
    /// logit gains. `forward` must be the texture produced by this generator
    /// with the same `noise_seed`; anything else is a contract violation.
    pub fn backward(
        &self,
        noise_seed: u64,
        upstream: &Array3<f64>,
        forward: &GarmentTexture,
        cache: &GenCache,
    ) -> Result<TextureGrad> {
        let k = self.params.palette.k();
        let (h, w) = (self.h, self.w);
        if upstream.dim() != (h, w, 3) {
            return Err(Error::InvalidInput(format!(
                "upstream shape {:?} does not match texture {h}x{w}x3",
                upstream.dim()
            )));
        }
        let expected = TextureProvenance {
            noise_seed,
            input_digest: self.input_digest(),
        };
        if forward.provenance != expected {
            return Err(Error::Contract(format!(
                "texture gradient requested for noise seed {} / digest {:#x}, but the forward \
                 texture was produced with noise seed {} / digest {:#x}",
                noise_seed,
                expected.input_digest,
                forward.provenance.noise_seed,
                forward.provenance.input_digest
            )));
        }

        let palette01: Vec<[f64; 3]> = self
            .params
            .palette
            .colors
            .iter()
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();

        // Per-pixel chain down to the blended logits.
        let mut d_blended = Array3::zeros((h, w, k));
        for y in 0..h {
            for x in 0..w {
                if !self.mask[[y, x]] {
                    continue;
                }
                let mut d_what = vec![0.0; k]; // d loss / d renormalized weight
                for c in 0..k {
                    for ch in 0..3 {
                        d_what[c] += upstream[[y, x, ch]] * palette01[c][ch];
                    }
                }
                let mut tsum = 0.0;
                for c in 0..k {
                    tsum += cache.soft[[y, x, c]].max(self.cfg.clamp_shift);
                }
                let mut dot = 0.0; // Σ_j d_what_j · what_j
                for c in 0..k {
                    let what = cache.soft[[y, x, c]].max(self.cfg.clamp_shift) / tsum;
                    dot += d_what[c] * what;
                }
                // Through the renormalized clamp (pass-through below clamp).
                let mut d_soft = vec![0.0; k];
                for c in 0..k {
                    let dt = (d_what[c] - dot) / tsum;
                    d_soft[c] = if cache.soft[[y, x, c]] > self.cfg.clamp_shift {
                        dt
                    } else {
                        0.0
                    };
                }
                // Through the softmax and temperature.
                let mut wdot = 0.0;
                for c in 0..k {
                    wdot += cache.soft[[y, x, c]] * d_soft[c];
                }
                for c in 0..k {
                    d_blended[[y, x, c]] =
                        cache.soft[[y, x, c]] * (d_soft[c] - wdot) / self.cfg.tau_gumbel;
                }
            }
        }

        // Through the sharp/blurred blend back to the gained fields, then
        // split into gain and raw-field gradients.
        let mut d_gains = vec![0.0; k];
        let mut d_base = Array3::zeros((h, w, k));
        for c in 0..k {
            let mut plane = Array2::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    plane[[y, x]] = d_blended[[y, x, c]];
                }
            }
            let adj = gaussian_blur_adjoint(&plane, self.cfg.blur_sigma);
            for y in 0..h {
                for x in 0..w {
                    let dz = self.cfg.mix_ratio * plane[[y, x]]
                        + (1.0 - self.cfg.mix_ratio) * adj[[y, x]];
                    d_gains[c] += dz * cache.base[[y, x, c]];
                    d_base[[y, x, c]] = dz * self.gains[c];
                }
            }
        }

        // Field backward: d ln(ε+S)/dp via the same kernel cutoff.
        let pts = &self.params.points.points;
        let (_, p, _) = pts.dim();
        let inv_s2 = 1.0 / (self.cfg.field_sigma * self.cfg.field_sigma);
        let cutoff = FIELD_CUTOFF_SIGMAS * self.cfg.field_sigma;
        let cutoff2 = cutoff * cutoff;
        let bins = PointBins::build(pts, cutoff);
        let mut d_points = Array3::zeros((k, p, 2));
        for y in 0..h {
            for x in 0..w {
                let uv = grid_uv(y, x, h, w);
                for c in 0..k {
                    let db = d_base[[y, x, c]];
                    if db == 0.0 {
                        continue;
                    }
                    // ε + S is recoverable from the cached log-field.
                    let coeff = db / cache.base[[y, x, c]].exp();
                    bins.visit(c, uv, |j| {
                        let du = pts[[c, j, 0]] - uv[0];
                        let dv = pts[[c, j, 1]] - uv[1];
                        let d2 = du * du + dv * dv;
                        if d2 <= cutoff2 {
                            let kern = (-d2 * inv_s2).exp();
                            let scale = coeff * kern * (-2.0 * inv_s2);
                            d_points[[c, j, 0]] += scale * du;
                            d_points[[c, j, 1]] += scale * dv;
                        }
                    });
                }
            }
        }

        Ok(TextureGrad {
            points: d_points,
            gains: d_gains,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture_param::{ControlPointSet, LockedPalette};
    use ndarray::{array, Array3};

    fn params_from(points: Array3<f64>, colors: Vec<[u8; 3]>) -> TextureParams {
        let p_max = points.dim().1;
        TextureParams {
            garment_id: GarmentId::Upper,
            palette: LockedPalette {
                colors,
                gamut_id: "test".into(),
            },
            points: ControlPointSet { points },
            p_max,
            seed: 0,
            source_texture_sha256: String::new(),
        }
    }

    fn zero_noise_cfg(tau: f64, field_sigma: f64) -> GeneratorConfig {
        GeneratorConfig {
            tau_gumbel: tau,
            blur_sigma: 0.0,
            mix_ratio: 1.0,
            clamp_shift: 0.0,
            field_sigma,
            seed_mode: SeedMode::Fixed,
        }
    }

    /// Forward pass with the Gumbel noise replaced by zeros, for closed-form
    /// checks (the public path always adds noise).
    fn forward_zero_noise(
        params: &TextureParams,
        cfg: &GeneratorConfig,
        h: usize,
        w: usize,
    ) -> Array3<f64> {
        let k = params.palette.k();
        let base = logit_field(&params.points, h, w, cfg.field_sigma);
        let mut pixels = Array3::zeros((h, w, 3));
        let mut logits = vec![0.0; k];
        let mut weights = vec![0.0; k];
        let mut renorm = vec![0.0; k];
        for y in 0..h {
            for x in 0..w {
                for c in 0..k {
                    logits[c] = base[[y, x, c]];
                }
                softmax_tempered(&logits, cfg.tau_gumbel, &mut weights);
                clamp_renorm(&weights, cfg.clamp_shift, &mut renorm);
                for c in 0..k {
                    for ch in 0..3 {
                        pixels[[y, x, ch]] +=
                            renorm[c] * params.palette.colors[c][ch] as f64 / 255.0;
                    }
                }
            }
        }
        pixels
    }

    #[test]
    fn field_peaks_at_control_point_and_floors_far_away() {
        let points = ControlPointSet {
            points: array![[[0.5 / 8.0, 0.5 / 8.0]]],
        };
        let z = logit_field(&points, 8, 8, 0.05);
        // At the point itself the single kernel term is exp(0) = 1.
        assert!((z[[0, 0, 0]] - (FIELD_EPS + 1.0).ln()).abs() < 1e-12);
        // The far corner only sees the floor.
        assert!((z[[7, 7, 0]] - FIELD_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn mirrored_clusters_have_mirrored_logits() {
        let points = ControlPointSet {
            points: array![[[0.25, 0.5]], [[0.75, 0.5]]],
        };
        let z = logit_field(&points, 8, 8, 0.2);
        for y in 0..8 {
            for x in 0..8 {
                let mirror = 7 - x;
                assert!(
                    (z[[y, x, 0]] - z[[y, mirror, 1]]).abs() < 1e-12,
                    "asymmetry at ({y},{x})"
                );
            }
        }
    }

    #[test]
    fn equal_logits_give_palette_mean() {
        let params = params_from(
            array![[[0.5, 0.5]], [[0.5, 0.5]]],
            vec![[255, 0, 0], [0, 0, 255]],
        );
        let pixels = forward_zero_noise(&params, &zero_noise_cfg(0.3, 0.2), 8, 8);
        for y in 0..8 {
            for x in 0..8 {
                assert!((pixels[[y, x, 0]] - 0.5).abs() < 1e-9);
                assert!(pixels[[y, x, 1]].abs() < 1e-9);
                assert!((pixels[[y, x, 2]] - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cold_temperature_snaps_to_nearest_color() {
        let params = params_from(
            array![[[0.25, 0.5]], [[0.75, 0.5]]],
            vec![[255, 0, 0], [0, 0, 255]],
        );
        let pixels = forward_zero_noise(&params, &zero_noise_cfg(1e-4, 0.1), 8, 8);
        // Left half belongs to color 0, right half to color 1.
        for y in 0..8 {
            assert!((pixels[[y, 0, 0]] - 1.0).abs() < 1e-6);
            assert!(pixels[[y, 0, 2]].abs() < 1e-6);
            assert!((pixels[[y, 7, 2]] - 1.0).abs() < 1e-6);
            assert!(pixels[[y, 7, 0]].abs() < 1e-6);
        }
    }

    /// softmax([1, 0, 0]) at τ = 1 is (e/(e+2), 1/(e+2), 1/(e+2)).
    #[test]
    fn softmax_matches_frozen_values() {
        let mut weights = [0.0; 3];
        softmax_tempered(&[1.0, 0.0, 0.0], 1.0, &mut weights);
        assert!((weights[0] - 0.5761168847658291).abs() < 1e-12);
        assert!((weights[1] - 0.21194155761708544).abs() < 1e-12);
        assert!((weights[2] - 0.21194155761708544).abs() < 1e-12);
    }

    #[test]
    fn clamp_renorm_keeps_the_simplex() {
        let mut out = [0.0; 2];
        clamp_renorm(&[0.98, 0.02], 0.05, &mut out);
        assert!((out[0] - 0.98 / 1.03).abs() < 1e-12);
        assert!((out[1] - 0.05 / 1.03).abs() < 1e-12);
        assert!((out[0] + out[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_are_convex_and_pixels_stay_in_hull() {
        let mut rng = crate::util::seeded_rng(5);
        use rand::Rng as _;
        for trial in 0..20 {
            let k = rng.random_range(2..=5usize);
            let p = rng.random_range(1..=4usize);
            let mut pts = Array3::zeros((k, p, 2));
            for v in pts.iter_mut() {
                *v = rng.random_range(0.0..1.0);
            }
            let colors: Vec<[u8; 3]> = (0..k)
                .map(|i| {
                    [
                        rng.random::<u8>().wrapping_add(i as u8),
                        rng.random::<u8>(),
                        rng.random::<u8>(),
                    ]
                })
                .collect();
            let params = params_from(pts, colors);
            let cfg = GeneratorConfig {
                clamp_shift: if trial % 2 == 0 { 0.15 } else { 0.01 },
                field_sigma: 0.2,
                ..GeneratorConfig::default()
            };
            let generator = TextureGenerator::new(&params, cfg, 8, 8, None).unwrap();
            let (tex, cache) = generator.forward(trial as u64);
            for y in 0..8 {
                for x in 0..8 {
                    let mut tsum = 0.0;
                    for c in 0..params.palette.k() {
                        let s = cache.soft[[y, x, c]];
                        assert!(s >= 0.0 && s <= 1.0 + 1e-12);
                        tsum += s.max(cfg.clamp_shift);
                    }
                    let renorm: f64 = (0..params.palette.k())
                        .map(|c| cache.soft[[y, x, c]].max(cfg.clamp_shift) / tsum)
                        .sum();
                    assert!((renorm - 1.0).abs() < 1e-6);
                    for ch in 0..3 {
                        let lo = params
                            .palette
                            .colors
                            .iter()
                            .map(|c| c[ch] as f64 / 255.0)
                            .fold(f64::INFINITY, f64::min);
                        let hi = params
                            .palette
                            .colors
                            .iter()
                            .map(|c| c[ch] as f64 / 255.0)
                            .fold(f64::NEG_INFINITY, f64::max);
                        let v = tex.pixels[[y, x, ch]];
                        assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn masked_pixels_are_zero() {
        let params = params_from(array![[[0.5, 0.5]], [[0.2, 0.2]]], vec![[255; 3], [0; 3]]);
        let mut mask = Array2::from_elem((8, 8), true);
        mask[[3, 3]] = false;
        let generator =
            TextureGenerator::new(&params, GeneratorConfig::default(), 8, 8, Some(mask)).unwrap();
        let (tex, _) = generator.forward(1);
        assert_eq!(tex.pixels[[3, 3, 0]], 0.0);
        assert_eq!(tex.pixels[[3, 3, 1]], 0.0);
        assert_eq!(tex.pixels[[3, 3, 2]], 0.0);
        assert!(tex.pixels[[0, 0, 0]] > 0.0);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let params = params_from(
            array![[[0.3, 0.4], [0.6, 0.6]], [[0.8, 0.2], [0.1, 0.9]]],
            vec![[10, 200, 30], [240, 10, 90]],
        );
        let generator =
            TextureGenerator::new(&params, GeneratorConfig::default(), 16, 16, None).unwrap();
        let (a, _) = generator.forward(1234);
        let (b, _) = generator.forward(1234);
        assert_eq!(a.pixels, b.pixels);
        let (c, _) = generator.forward(1235);
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let params = params_from(array![[[0.4, 0.4]], [[0.6, 0.6]]], vec![[255; 3], [0; 3]]);
        let generator =
            TextureGenerator::new(&params, GeneratorConfig::default(), 8, 8, None).unwrap();
        let (tex, cache) = generator.forward(7);
        let grad = generator
            .backward(7, &Array3::zeros((8, 8, 3)), &tex, &cache)
            .unwrap();
        assert!(grad.points.iter().all(|&g| g == 0.0));
        assert!(grad.gains.iter().all(|&g| g == 0.0));
    }

    /// A control point sitting exactly on the only pixel's center is a
    /// stationary point of its own kernel term: the gradient carries a factor
    /// (p − uv of the pixel), which is identically zero there.
    #[test]
    fn point_on_pixel_center_is_stationary() {
        let params = params_from(
            array![[[0.5, 0.5]], [[0.25, 0.25]]],
            vec![[255, 255, 255], [0, 0, 0]],
        );
        let cfg = zero_noise_cfg(0.5, 0.1);
        let generator = TextureGenerator::new(&params, cfg, 1, 1, None).unwrap();
        let (tex, cache) = generator.forward(3);
        let mut upstream = Array3::zeros((1, 1, 3));
        upstream.fill(1.0);
        let grad = generator.backward(3, &upstream, &tex, &cache).unwrap();
        assert_eq!(grad.points[[0, 0, 0]], 0.0);
        assert_eq!(grad.points[[0, 0, 1]], 0.0);
        // The off-center point is not stationary.
        assert!(grad.points[[1, 0, 0]] != 0.0 || grad.points[[1, 0, 1]] != 0.0);
    }

    #[test]
    fn mismatched_noise_seed_is_a_contract_violation() {
        let params = params_from(array![[[0.4, 0.4]], [[0.6, 0.6]]], vec![[255; 3], [0; 3]]);
        let generator =
            TextureGenerator::new(&params, GeneratorConfig::default(), 8, 8, None).unwrap();
        let (tex, cache) = generator.forward(7);
        let upstream = Array3::zeros((8, 8, 3));
        let err = generator.backward(8, &upstream, &tex, &cache).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err}");
    }

    #[test]
    fn mismatched_points_is_a_contract_violation() {
        let params_a = params_from(array![[[0.4, 0.4]], [[0.6, 0.6]]], vec![[255; 3], [0; 3]]);
        let mut params_b = params_a.clone();
        params_b.points.points[[0, 0, 0]] = 0.41;
        let gen_a =
            TextureGenerator::new(&params_a, GeneratorConfig::default(), 8, 8, None).unwrap();
        let gen_b =
            TextureGenerator::new(&params_b, GeneratorConfig::default(), 8, 8, None).unwrap();
        let (tex_a, _) = gen_a.forward(7);
        let (_, cache_b) = gen_b.forward(7);
        let upstream = Array3::zeros((8, 8, 3));
        let err = gen_b.backward(7, &upstream, &tex_a, &cache_b).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err}");
    }

    /// Central finite differences over every point coordinate and gain.
    fn finite_difference_check(seed: u64, clamp_shift: f64) -> f64 {
        use rand::Rng as _;
        let mut rng = crate::util::seeded_rng(seed);
        let k = rng.random_range(2..=3usize);
        let p = rng.random_range(2..=3usize);
        let (h, w) = (8usize, 8usize);
        let mut pts = Array3::zeros((k, p, 2));
        for v in pts.iter_mut() {
            *v = rng.random_range(0.05..0.95);
        }
        let colors: Vec<[u8; 3]> = (0..k)
            .map(|i| [(40 * i + 10) as u8, (90 * i + 5) as u8, (200 - 60 * i) as u8])
            .collect();
        let params = params_from(pts, colors);
        let cfg = GeneratorConfig {
            tau_gumbel: 0.5,
            blur_sigma: 1.0,
            mix_ratio: 0.7,
            clamp_shift,
            field_sigma: rng.random_range(0.15..0.3),
            seed_mode: SeedMode::Fixed,
        };
        let mut upstream = Array3::zeros((h, w, 3));
        for v in upstream.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let noise_seed = seed ^ 0xbeef;

        let loss = |params: &TextureParams| -> f64 {
            let generator = TextureGenerator::new(params, cfg, h, w, None).unwrap();
            let (tex, _) = generator.forward(noise_seed);
            tex.pixels
                .iter()
                .zip(upstream.iter())
                .map(|(a, b)| a * b)
                .sum()
        };

        let generator = TextureGenerator::new(&params, cfg, h, w, None).unwrap();
        let (tex, cache) = generator.forward(noise_seed);
        let grad = generator.backward(noise_seed, &upstream, &tex, &cache).unwrap();

        let hstep = 1e-4;
        let mut worst: f64 = 0.0;
        for c in 0..k {
            for j in 0..p {
                for d in 0..2 {
                    let mut plus = params.clone();
                    plus.points.points[[c, j, d]] += hstep;
                    let mut minus = params.clone();
                    minus.points.points[[c, j, d]] -= hstep;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * hstep);
                    worst = worst.max(crate::util::rel_err(grad.points[[c, j, d]], fd));
                }
            }
        }
        worst
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in [1u64, 2, 3, 4, 5] {
            let worst = finite_difference_check(seed, 0.0);
            assert!(worst <= 1e-4, "seed {seed}: max rel err {worst}");
        }
    }

    /// With a clamp high enough to actually bite, the pass-through
    /// subgradient still matches finite differences as long as no weight sits
    /// on the clamp boundary (the perturbations here are far smaller than the
    /// distance of any weight to the boundary).
    #[test]
    fn gradient_with_active_clamp_matches_finite_differences() {
        let worst = finite_difference_check(11, 0.05);
        assert!(worst <= 1e-4, "max rel err {worst}");
    }

    #[test]
    fn gain_gradient_matches_finite_differences() {
        use rand::Rng as _;
        let mut rng = crate::util::seeded_rng(21);
        let mut pts = Array3::zeros((2, 2, 2));
        for v in pts.iter_mut() {
            *v = rng.random_range(0.1..0.9);
        }
        let params = params_from(pts, vec![[255, 40, 0], [0, 80, 255]]);
        let cfg = GeneratorConfig {
            tau_gumbel: 0.5,
            field_sigma: 0.2,
            clamp_shift: 0.0,
            ..GeneratorConfig::default()
        };
        let (h, w) = (8usize, 8usize);
        let mut upstream = Array3::zeros((h, w, 3));
        for v in upstream.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let noise_seed = 99;

        let loss = |gains: &[f64]| -> f64 {
            let mut generator = TextureGenerator::new(&params, cfg, h, w, None).unwrap();
            generator.set_gains(gains.to_vec()).unwrap();
            let (tex, _) = generator.forward(noise_seed);
            tex.pixels
                .iter()
                .zip(upstream.iter())
                .map(|(a, b)| a * b)
                .sum()
        };

        let gains = vec![1.1, 0.9];
        let mut generator = TextureGenerator::new(&params, cfg, h, w, None).unwrap();
        generator.set_gains(gains.clone()).unwrap();
        let (tex, cache) = generator.forward(noise_seed);
        let grad = generator.backward(noise_seed, &upstream, &tex, &cache).unwrap();

        let hstep = 1e-5;
        for c in 0..2 {
            let mut plus = gains.clone();
            plus[c] += hstep;
            let mut minus = gains.clone();
            minus[c] -= hstep;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * hstep);
            let err = crate::util::rel_err(grad.gains[c], fd);
            assert!(err <= 1e-4, "gain {c}: rel err {err}");
        }
    }

    #[test]
    fn blur_adjoint_is_exact() {
        use rand::Rng as _;
        let mut rng = crate::util::seeded_rng(17);
        let (h, w) = (9usize, 7usize);
        let mut a = Array2::zeros((h, w));
        let mut b = Array2::zeros((h, w));
        for v in a.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for v in b.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        // ⟨blur(a), b⟩ must equal ⟨a, blurᵀ(b)⟩ exactly up to float noise.
        let lhs: f64 = gaussian_blur(&a, 1.3)
            .iter()
            .zip(b.iter())
            .map(|(x, y)| x * y)
            .sum();
        let rhs: f64 = a
            .iter()
            .zip(gaussian_blur_adjoint(&b, 1.3).iter())
            .map(|(x, y)| x * y)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut cfg = GeneratorConfig::default();
        cfg.tau_gumbel = 0.0;
        assert!(cfg.validate().is_err());
        cfg = GeneratorConfig::default();
        cfg.mix_ratio = 1.5;
        assert!(cfg.validate().is_err());
        cfg = GeneratorConfig::default();
        cfg.field_sigma = -0.1;
        assert!(cfg.validate().is_err());
    }
}
