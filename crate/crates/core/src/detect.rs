//! Detection interface: IoU and frame-loss utilities, a differentiable
//! contrast-based toy person detector, and external detection-log ingestion.
//!
//! The toy detector slides three window scales over the image and scores each
//! window by the mean absolute channel contrast between its interior and a
//! surrounding ring, mapped through a centered sigmoid so zero contrast means
//! zero confidence. The score is differentiable in the pixels, which is what
//! lets losses flow back to texels through the renderer's Jacobian.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::util::sigmoid;
use crate::{Error, Result};

/// One detection: pixel box, confidence, class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetBox {
    #[serde(rename = "box")]
    pub rect: [f64; 4],
    pub conf: f64,
    pub class: String,
}

impl DetBox {
    fn validate(&self) -> std::result::Result<(), String> {
        let [x1, y1, x2, y2] = self.rect;
        if !(x2 > x1 && y2 > y1) {
            return Err(format!("degenerate box [{x1}, {y1}, {x2}, {y2}]"));
        }
        if !self.rect.iter().all(|v| v.is_finite()) {
            return Err("non-finite box coordinate".into());
        }
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(format!("confidence {} outside [0, 1]", self.conf));
        }
        Ok(())
    }
}

/// Per-frame detections plus the ground-truth box they are judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame: usize,
    pub gt_box: [f64; 4],
    pub boxes: Vec<DetBox>,
}

/// All records of one video, sorted by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLog {
    pub video_id: String,
    pub records: Vec<DetectionRecord>,
}

/// Intersection over union; 0 for degenerate inputs.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let (aa, ab) = (area(a), area(b));
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    inter / (aa + ab - inter)
}

/// The person box judged against the ground truth: highest IoU, ties broken
/// by higher confidence, then lower index. Returns (index, conf, iou).
pub fn select_person_box(record: &DetectionRecord) -> Option<(usize, f64, f64)> {
    let mut best: Option<(f64, f64, usize)> = None; // (iou, conf, index)
    for (i, b) in record.boxes.iter().enumerate() {
        if b.class != "person" {
            continue;
        }
        let overlap = iou(b.rect, record.gt_box);
        let candidate = (overlap, b.conf, i);
        best = Some(match best {
            None => candidate,
            Some(cur) => {
                let (ci, cc, cx) = cur;
                if overlap > ci
                    || (overlap == ci && (b.conf > cc || (b.conf == cc && i < cx)))
                {
                    candidate
                } else {
                    cur
                }
            }
        });
    }
    best.map(|(overlap, conf, i)| (i, conf, overlap))
}

/// Per-frame attack loss: the confidence of the selected person box.
/// Returns (loss, conf, iou); all zeros when no person box exists.
pub fn frame_loss(record: &DetectionRecord) -> (f64, f64, f64) {
    match select_person_box(record) {
        Some((_, conf, overlap)) => (conf, conf, overlap),
        None => (0.0, 0.0, 0.0),
    }
}

/// Toy-detector knobs. The defaults are calibrated so unattacked renders on
/// procedural backgrounds score well above the confidence threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDetectorConfig {
    /// Contrast steepness inside the sigmoid.
    pub kappa: f64,
    /// Minimum score for a window to become a box.
    pub score_threshold: f64,
    /// Greedy NMS overlap bound: kept boxes have pairwise IoU below this.
    pub nms_iou: f64,
    /// Window heights as fractions of the image side; width is height/2.
    pub scales: Vec<f64>,
    /// Stride = resolution / stride_divisor, at least 1 px.
    pub stride_divisor: usize,
}

impl Default for ToyDetectorConfig {
    fn default() -> Self {
        ToyDetectorConfig {
            kappa: 8.0,
            score_threshold: 0.05,
            nms_iou: 0.5,
            scales: vec![0.35, 0.5, 0.7],
            stride_divisor: 32,
        }
    }
}

impl ToyDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa {} must be positive", self.kappa)));
        }
        if !(0.0..1.0).contains(&self.score_threshold) {
            return Err(Error::Config("score_threshold must lie in [0, 1)".into()));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Config("nms_iou must lie in (0, 1]".into()));
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| !(0.0 < s && s <= 1.0)) {
            return Err(Error::Config("scales must be non-empty fractions in (0, 1]".into()));
        }
        if self.stride_divisor == 0 {
            return Err(Error::Config("stride_divisor must be positive".into()));
        }
        Ok(())
    }
}

/// Channel-wise summed-area tables for O(1) rectangle means.
struct Integral {
    sums: [Vec<f64>; 3],
    w: usize,
}

impl Integral {
    fn new(image: &Array3<f64>) -> Self {
        let (h, w, _) = image.dim();
        let mut sums = [
            vec![0.0; (h + 1) * (w + 1)],
            vec![0.0; (h + 1) * (w + 1)],
            vec![0.0; (h + 1) * (w + 1)],
        ];
        for (c, sat) in sums.iter_mut().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    sat[(y + 1) * (w + 1) + (x + 1)] = image[[y, x, c]]
                        + sat[y * (w + 1) + (x + 1)]
                        + sat[(y + 1) * (w + 1) + x]
                        - sat[y * (w + 1) + x];
                }
            }
        }
        Integral { sums, w }
    }

    /// Sum over [y0, y1) × [x0, x1).
    fn rect(&self, c: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> f64 {
        let s = &self.sums[c];
        let w = self.w + 1;
        s[y1 * w + x1] - s[y0 * w + x1] - s[y1 * w + x0] + s[y0 * w + x0]
    }
}

/// Interior and clipped ring bounds for a window.
struct WindowRegions {
    y0: usize,
    x0: usize,
    y1: usize,
    x1: usize,
    ry0: usize,
    rx0: usize,
    ry1: usize,
    rx1: usize,
    n_int: f64,
    n_ring: f64,
}

fn window_regions(rect: [f64; 4], h: usize, w: usize) -> WindowRegions {
    let y0 = rect[1].round().max(0.0) as usize;
    let x0 = rect[0].round().max(0.0) as usize;
    let y1 = (rect[3].round() as usize).min(h);
    let x1 = (rect[2].round() as usize).min(w);
    let ring = ((y1 - y0) / 6).max(2);
    let ry0 = y0.saturating_sub(ring);
    let rx0 = x0.saturating_sub(ring);
    let ry1 = (y1 + ring).min(h);
    let rx1 = (x1 + ring).min(w);
    let n_int = ((y1 - y0) * (x1 - x0)) as f64;
    let n_ring = ((ry1 - ry0) * (rx1 - rx0)) as f64 - n_int;
    WindowRegions {
        y0,
        x0,
        y1,
        x1,
        ry0,
        rx0,
        ry1,
        rx1,
        n_int,
        n_ring,
    }
}

/// Mean |interior − ring| contrast per channel, averaged over channels.
fn window_contrast(sat: &Integral, reg: &WindowRegions) -> (f64, [f64; 3]) {
    let mut c = 0.0;
    let mut signs = [0.0; 3];
    for ch in 0..3 {
        let int_sum = sat.rect(ch, reg.y0, reg.x0, reg.y1, reg.x1);
        let ring_sum = sat.rect(ch, reg.ry0, reg.rx0, reg.ry1, reg.rx1) - int_sum;
        let diff = int_sum / reg.n_int - ring_sum / reg.n_ring;
        signs[ch] = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        c += diff.abs() / 3.0;
    }
    (c, signs)
}

fn contrast_score(c: f64, kappa: f64) -> f64 {
    2.0 * (sigmoid(kappa * c) - 0.5)
}

/// Run the sliding-window detector over an (R, R, 3) image in [0, 1].
pub fn toy_detect(image: &Array3<f64>, cfg: &ToyDetectorConfig) -> Result<Vec<DetBox>> {
    cfg.validate()?;
    let (h, w, ch) = image.dim();
    if ch != 3 || h != w {
        return Err(Error::InvalidInput(format!(
            "detector expects a square RGB image, got ({h}, {w}, {ch})"
        )));
    }
    let sat = Integral::new(image);
    let stride = (h / cfg.stride_divisor).max(1);

    let mut candidates: Vec<(f64, [f64; 4])> = Vec::new();
    for &scale in &cfg.scales {
        let wh = ((scale * h as f64).round() as usize).clamp(2, h);
        let ww = (wh / 2).max(1);
        let mut y0 = 0;
        while y0 + wh <= h {
            let mut x0 = 0;
            while x0 + ww <= w {
                let rect = [
                    x0 as f64,
                    y0 as f64,
                    (x0 + ww) as f64,
                    (y0 + wh) as f64,
                ];
                let reg = window_regions(rect, h, w);
                if reg.n_ring > 0.0 {
                    let (c, _) = window_contrast(&sat, &reg);
                    let score = contrast_score(c, cfg.kappa);
                    if score >= cfg.score_threshold {
                        candidates.push((score, rect));
                    }
                }
                x0 += stride;
            }
            y0 += stride;
        }
    }

    // Greedy NMS: highest score first (ties by enumeration order), keep a box
    // only if it overlaps every kept box strictly below the bound.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        candidates[j].0
            .partial_cmp(&candidates[i].0)
            .expect("finite scores")
            .then(i.cmp(&j))
    });
    let mut kept: Vec<DetBox> = Vec::new();
    for &i in &order {
        let (score, rect) = candidates[i];
        if kept.iter().all(|k| iou(k.rect, rect) < cfg.nms_iou) {
            kept.push(DetBox {
                rect,
                conf: score,
                class: "person".into(),
            });
        }
    }
    Ok(kept)
}

/// Score one window and the gradient of that score w.r.t. every pixel.
/// `rect` should be a box produced by [`toy_detect`] on the same image.
pub fn window_score_grad(
    image: &Array3<f64>,
    cfg: &ToyDetectorConfig,
    rect: [f64; 4],
) -> Result<(f64, Array3<f64>)> {
    cfg.validate()?;
    let (h, w, _) = image.dim();
    let reg = window_regions(rect, h, w);
    if reg.n_int <= 0.0 || reg.n_ring <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "window {rect:?} has an empty interior or ring at {h}x{w}"
        )));
    }
    let sat = Integral::new(image);
    let (c, signs) = window_contrast(&sat, &reg);
    let s = sigmoid(cfg.kappa * c);
    let score = 2.0 * (s - 0.5);
    // d score / d contrast, then the constant per-channel factor 1/3.
    let dsdc = 2.0 * cfg.kappa * s * (1.0 - s) / 3.0;

    let mut grad = Array3::zeros((h, w, 3));
    for y in reg.ry0..reg.ry1 {
        for x in reg.rx0..reg.rx1 {
            let interior = y >= reg.y0 && y < reg.y1 && x >= reg.x0 && x < reg.x1;
            for ch in 0..3 {
                grad[[y, x, ch]] = if interior {
                    dsdc * signs[ch] / reg.n_int
                } else {
                    -dsdc * signs[ch] / reg.n_ring
                };
            }
        }
    }
    Ok((score, grad))
}

/// Detect on a rendered frame and package the result as a record.
pub fn detect_frame(
    frame: &crate::render::Frame,
    cfg: &ToyDetectorConfig,
    video_id: &str,
    t: usize,
) -> Result<DetectionRecord> {
    Ok(DetectionRecord {
        video_id: video_id.to_string(),
        frame: t,
        gt_box: frame.gt_box,
        boxes: toy_detect(&frame.image, cfg)?,
    })
}

#[derive(Deserialize)]
struct RawLine {
    video_id: String,
    frame: usize,
    gt_box: [f64; 4],
    boxes: Vec<DetBox>,
}

/// Read a detection-log JSONL file: one frame per line. Records come back
/// grouped by video (sorted by id) and sorted by frame; gaps inside a video's
/// frame range are warned about and filled with empty no-box records.
pub fn ingest_log(path: &Path) -> Result<Vec<VideoLog>> {
    let text = std::fs::read_to_string(path)?;
    let mut videos: BTreeMap<String, BTreeMap<usize, DetectionRecord>> = BTreeMap::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: Some(lineno),
            msg,
        };
        let raw: RawLine =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        for (bi, b) in raw.boxes.iter().enumerate() {
            b.validate()
                .map_err(|msg| parse_err(format!("box {bi}: {msg}")))?;
        }
        let record = DetectionRecord {
            video_id: raw.video_id.clone(),
            frame: raw.frame,
            gt_box: raw.gt_box,
            boxes: raw.boxes,
        };
        let by_frame = videos.entry(raw.video_id).or_default();
        if by_frame.insert(raw.frame, record).is_some() {
            return Err(parse_err(format!("duplicate frame {}", raw.frame)));
        }
    }

    let mut out = Vec::new();
    for (video_id, by_frame) in videos {
        let lo = *by_frame.keys().next().expect("non-empty video");
        let hi = *by_frame.keys().next_back().expect("non-empty video");
        let missing = (hi - lo + 1) - by_frame.len();
        if missing > 0 {
            log::warn!("video {video_id}: {missing} missing frame(s) treated as no boxes");
        }
        let mut records = Vec::with_capacity(hi - lo + 1);
        for t in lo..=hi {
            records.push(by_frame.get(&t).cloned().unwrap_or(DetectionRecord {
                video_id: video_id.clone(),
                frame: t,
                gt_box: [0.0; 4],
                boxes: vec![],
            }));
        }
        out.push(VideoLog { video_id, records });
    }
    Ok(out)
}
