//! Sequence-level detection metrics and report emission.
//!
//! Three views of the same per-frame (confidence, IoU) pairs: SeqASR counts
//! frames the detector effectively missed, CVaR averages the worst (most
//! detectable) tail after IoU gating, and NDR counts videos that never
//! trigger a valid detection at all. Reports are byte-deterministic: JSON +
//! CSV tables plus SVG confidence-trajectory plots with no timestamps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::{frame_loss, VideoLog};
use crate::util::mean_std;
use crate::{Error, Result};

/// How a video counts as "never detected".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NdrMode {
    /// max_t conf < τ AND max_t IoU < τ_IoU (threshold on the maxima).
    MaxThreshold,
    /// Every frame individually fails: conf < τ OR IoU < τ_IoU.
    PerFrameFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Confidence threshold τ.
    pub tau: f64,
    /// IoU threshold τ_IoU.
    pub tau_iou: f64,
    /// CVaR tail fraction α.
    pub alpha: f64,
    pub ndr_mode: NdrMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            tau: 0.3,
            tau_iou: 0.1,
            alpha: 0.1,
            ndr_mode: NdrMode::MaxThreshold,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} must lie in (0, 1)", self.tau)));
        }
        if !(self.tau_iou >= 0.0 && self.tau_iou < 1.0) {
            return Err(Error::Config(format!(
                "tau_iou {} must lie in [0, 1)",
                self.tau_iou
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha {} must lie in (0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-frame (confidence, IoU) pairs of one video, in frame order.
pub fn frame_confidences(log: &VideoLog) -> Vec<(f64, f64)> {
    log.records
        .iter()
        .map(|r| {
            let (_, conf, overlap) = frame_loss(r);
            (conf, overlap)
        })
        .collect()
}

fn require_frames(frames: &[(f64, f64)]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one frame".into()));
    }
    Ok(())
}

/// Percentage of frames with conf < τ or IoU < τ_IoU (the attack "wins").
pub fn seqasr(frames: &[(f64, f64)], cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    require_frames(frames)?;
    let hits = frames
        .iter()
        .filter(|(conf, iou)| *conf < cfg.tau || *iou < cfg.tau_iou)
        .count();
    Ok(100.0 * hits as f64 / frames.len() as f64)
}

/// IoU-gated confidence: frames without a sufficiently overlapping box count
/// as zero evidence.
fn gated(frames: &[(f64, f64)], cfg: &MetricsConfig) -> Vec<f64> {
    frames
        .iter()
        .map(|&(conf, iou)| if iou >= cfg.tau_iou { conf } else { 0.0 })
        .collect()
}

/// Tail size m = max(1, ⌈α·T⌉). The tiny epsilon keeps an exact product like
/// α·T = k from rounding up to k+1 through float dust.
fn tail_size(alpha: f64, t: usize) -> usize {
    ((alpha * t as f64 - 1e-9).ceil() as usize).max(1)
}

/// Mean of the m = max(1, ⌈α·T⌉) largest IoU-gated confidences, ×100.
pub fn cvar(frames: &[(f64, f64)], cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    require_frames(frames)?;
    let mut g = gated(frames, cfg);
    let m = tail_size(cfg.alpha, g.len()).min(g.len());
    g.sort_by(|a, b| b.partial_cmp(a).expect("finite confidences"));
    Ok(100.0 * g[..m].iter().sum::<f64>() / m as f64)
}

/// Whether a video counts toward NDR under the configured mode.
pub fn video_neutralized(frames: &[(f64, f64)], cfg: &MetricsConfig) -> bool {
    match cfg.ndr_mode {
        NdrMode::MaxThreshold => {
            let max_conf = frames.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
            let max_iou = frames.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
            max_conf < cfg.tau && max_iou < cfg.tau_iou
        }
        NdrMode::PerFrameFailure => frames
            .iter()
            .all(|(conf, iou)| *conf < cfg.tau || *iou < cfg.tau_iou),
    }
}

/// Percentage of videos that never produce a valid detection.
pub fn ndr(videos: &[Vec<(f64, f64)>], cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(Error::InvalidInput("NDR needs at least one video".into()));
    }
    for v in videos {
        require_frames(v)?;
    }
    let n = videos.iter().filter(|v| video_neutralized(v, cfg)).count();
    Ok(100.0 * n as f64 / videos.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub frames: usize,
    pub seqasr: f64,
    pub cvar: f64,
    pub ndr_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub videos: usize,
    pub seqasr_mean: f64,
    pub seqasr_std: f64,
    pub cvar_mean: f64,
    pub cvar_std: f64,
    pub ndr_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: MetricsConfig,
    pub per_video: BTreeMap<String, VideoMetrics>,
    pub dataset: DatasetMetrics,
}

/// All three metrics per video plus dataset aggregates (population std).
pub fn compute_metrics(logs: &[VideoLog], cfg: &MetricsConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if logs.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one video".into()));
    }
    let mut per_video = BTreeMap::new();
    for log in logs {
        let frames = frame_confidences(log);
        require_frames(&frames)?;
        let entry = VideoMetrics {
            frames: frames.len(),
            seqasr: seqasr(&frames, cfg)?,
            cvar: cvar(&frames, cfg)?,
            ndr_flag: video_neutralized(&frames, cfg),
        };
        if per_video.insert(log.video_id.clone(), entry).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate video id {:?}",
                log.video_id
            )));
        }
    }
    let seqasrs: Vec<f64> = per_video.values().map(|v| v.seqasr).collect();
    let cvars: Vec<f64> = per_video.values().map(|v| v.cvar).collect();
    let flags = per_video.values().filter(|v| v.ndr_flag).count();
    let (sm, ss) = mean_std(&seqasrs);
    let (cm, cs) = mean_std(&cvars);
    let dataset = DatasetMetrics {
        videos: per_video.len(),
        seqasr_mean: sm,
        seqasr_std: ss,
        cvar_mean: cm,
        cvar_std: cs,
        ndr_percent: 100.0 * flags as f64 / per_video.len() as f64,
    };
    Ok(MetricsReport {
        config: *cfg,
        per_video,
        dataset,
    })
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 360.0;
const MARGIN_L: f64 = 46.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 22.0;
const MARGIN_B: f64 = 34.0;
const SERIES_COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn plot_x(t: usize, t_max: usize) -> f64 {
    let span = PLOT_W - MARGIN_L - MARGIN_R;
    MARGIN_L + span * t as f64 / t_max.max(1) as f64
}

fn plot_y(v: f64) -> f64 {
    let span = PLOT_H - MARGIN_T - MARGIN_B;
    MARGIN_T + span * (1.0 - v.clamp(0.0, 1.0))
}

/// One SVG line plot of gated confidence against frame index. Deterministic:
/// no timestamps, fixed precision, series drawn in the given order.
pub fn confidence_svg(series: &[(String, Vec<f64>)], tau: f64, title: &str) -> String {
    let t_max = series
        .iter()
        .map(|(_, v)| v.len().saturating_sub(1))
        .max()
        .unwrap_or(0);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\" \
         font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n\
         <text x=\"{MARGIN_L}\" y=\"14\" font-size=\"13\">{title}</text>\n"
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = plot_y(v);
        let _ = write!(
            svg,
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.2}</text>\n",
            PLOT_W - MARGIN_R,
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    let ty = plot_y(tau);
    let _ = write!(
        svg,
        "<line x1=\"{MARGIN_L}\" y1=\"{ty:.2}\" x2=\"{:.2}\" y2=\"{ty:.2}\" \
         stroke=\"#d62728\" stroke-dasharray=\"5 4\"/>\n\
         <text x=\"{:.2}\" y=\"{:.2}\" fill=\"#d62728\">conf threshold</text>\n",
        PLOT_W - MARGIN_R,
        MARGIN_L + 4.0,
        ty - 4.0
    );
    let _ = write!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">frame</text>\n",
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        PLOT_H - 8.0
    );
    for (si, (label, values)) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        if values.len() == 1 {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>\n",
                plot_x(0, t_max),
                plot_y(values[0])
            );
        } else {
            let mut points = String::new();
            for (t, v) in values.iter().enumerate() {
                let _ = write!(points, "{:.2},{:.2} ", plot_x(t, t_max), plot_y(*v));
            }
            let _ = write!(
                svg,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
                 points=\"{}\"/>\n",
                points.trim_end()
            );
        }
        if si < 12 {
            let ly = MARGIN_T + 12.0 * si as f64 + 10.0;
            let _ = write!(
                svg,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"3\" fill=\"{color}\"/>\n\
                 <text x=\"{:.2}\" y=\"{:.2}\">{label}</text>\n",
                PLOT_W - MARGIN_R - 130.0,
                ly - 3.0,
                PLOT_W - MARGIN_R - 116.0,
                ly + 2.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn safe_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Compute metrics and write report.json, report.csv, and SVG plots (one per
/// video plus an overlay of every video's gated-confidence trajectory).
/// Re-running on the same inputs reproduces every artifact byte for byte.
pub fn report(logs: &[VideoLog], cfg: &MetricsConfig, out_dir: &Path) -> Result<MetricsReport> {
    if out_dir.as_os_str().is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "output directory path is empty",
        )));
    }
    let metrics = compute_metrics(logs, cfg)?;
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots)?;

    let mut json = serde_json::to_string_pretty(&metrics)?;
    json.push('\n');
    std::fs::write(out_dir.join("report.json"), json)?;

    let mut csv = String::from("video_id,frames,seqasr,cvar,ndr_flag\n");
    for (id, v) in &metrics.per_video {
        let _ = writeln!(csv, "{id},{},{},{},{}", v.frames, v.seqasr, v.cvar, v.ndr_flag);
    }
    std::fs::write(out_dir.join("report.csv"), csv)?;

    let mut overlay_series = Vec::new();
    for log in logs {
        let g = gated(&frame_confidences(log), cfg);
        let svg = confidence_svg(
            &[(log.video_id.clone(), g.clone())],
            cfg.tau,
            &format!("gated confidence — {}", log.video_id),
        );
        std::fs::write(
            plots.join(format!("curve_{}.svg", safe_file_stem(&log.video_id))),
            svg,
        )?;
        overlay_series.push((log.video_id.clone(), g));
    }
    overlay_series.sort_by(|a, b| a.0.cmp(&b.0));
    std::fs::write(
        plots.join("overlay.svg"),
        confidence_svg(&overlay_series, cfg.tau, "gated confidence — all videos"),
    )?;
    Ok(metrics)
}
