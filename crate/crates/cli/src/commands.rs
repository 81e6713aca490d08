//! The eight subcommands: init → attack → render → detect/ingest → eval →
//! report, plus detector calibration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use seqcloak_core::detect::{ingest_log, toy_detect, DetectionRecord, VideoLog};
use seqcloak_core::eval::{self, confidence_svg, MetricsReport, NdrMode};
use seqcloak_core::optim::{resume_attack, run_attack, AttackOutcome};
use seqcloak_core::render::{dump_video, Split, VideoManifest};
use seqcloak_core::sim::BodyModel;
use seqcloak_core::smoke::EvalRenderer;
use seqcloak_core::texture_param::{
    parameterize_texture, GarmentId, InkLimitGamut, TextureParams, UvTexture,
};
use seqcloak_core::{Error, Result};

use crate::config::{write_manifest, RunConfig};

/// Fit a locked palette and control points to a printed texture.
#[allow(clippy::too_many_arguments)]
pub fn cmd_init(
    cfg: &RunConfig,
    texture: &Path,
    mask: &Path,
    garment: GarmentId,
    k: usize,
    p_max: usize,
    ink_limit: f64,
    out: &Path,
) -> Result<()> {
    for path in [texture, mask] {
        if !path.is_file() {
            return Err(Error::InvalidInput(format!("{} is not a file", path.display())));
        }
    }
    // Unreadable or undecodable images are usage errors here, not runtime
    // failures: the operator pointed us at the wrong file.
    let tex = UvTexture::from_png_files(texture, mask, garment).map_err(|e| match e {
        Error::Image(e) => Error::InvalidInput(format!("bad image: {e}")),
        Error::Io(e) => Error::InvalidInput(format!("unreadable input: {e}")),
        other => other,
    })?;
    let gamut = InkLimitGamut::new(ink_limit)?;
    let params = parameterize_texture(&tex, k, p_max, &gamut, cfg.seed)?;

    std::fs::create_dir_all(out)?;
    let path = out.join(format!("params_{garment}.json"));
    params.save_json(&path)?;
    write_manifest(
        out,
        "init",
        &[
            ("texture", texture.display().to_string()),
            ("mask", mask.display().to_string()),
            ("garment", garment.to_string()),
            ("k", k.to_string()),
            ("p_max", p_max.to_string()),
            ("ink_limit", ink_limit.to_string()),
        ],
        cfg,
    )?;

    let swatches: Vec<String> = params
        .palette
        .colors
        .iter()
        .map(|c| format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]))
        .collect();
    println!("palette ({}): {}", params.palette.k(), swatches.join(" "));
    let (k_fit, p_fit, _) = params.points.points.dim();
    println!("control points: {k_fit} colors x {p_fit} points");
    println!("wrote {}", path.display());
    Ok(())
}

fn load_params(paths: &[PathBuf]) -> Result<Vec<TextureParams>> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("at least one --params file is required".into()));
    }
    let params: Vec<TextureParams> = paths
        .iter()
        .map(|p| TextureParams::load_json(p))
        .collect::<Result<_>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for p in &params {
        if !seen.insert(p.garment_id.to_string()) {
            return Err(Error::InvalidInput(format!(
                "garment {} appears in more than one --params file",
                p.garment_id
            )));
        }
    }
    Ok(params)
}

/// Load `gains.json` (garment name → per-color logit gains) or default to
/// all-ones.
fn load_gains(path: Option<&Path>, params: &[TextureParams]) -> Result<Vec<Vec<f64>>> {
    let Some(path) = path else {
        return Ok(params.iter().map(|p| vec![1.0; p.palette.k()]).collect());
    };
    let map: BTreeMap<String, Vec<f64>> =
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: Some(e.line()),
            msg: e.to_string(),
        })?;
    params
        .iter()
        .map(|p| {
            map.get(&p.garment_id.to_string()).cloned().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{} has no entry for garment {}",
                    path.display(),
                    p.garment_id
                ))
            })
        })
        .collect()
}

/// Optimize textures against the detector over sampled scenes.
pub fn cmd_attack(
    mut cfg: RunConfig,
    params_paths: &[PathBuf],
    epochs: Option<usize>,
    resume: bool,
    out: &Path,
) -> Result<()> {
    if let Some(epochs) = epochs {
        cfg.attack.epochs = epochs;
    }
    cfg.attack.validate()?;
    if resume && !params_paths.is_empty() {
        return Err(Error::InvalidInput(
            "--resume loads parameters from the run directory; drop --params".into(),
        ));
    }
    if !resume && params_paths.is_empty() {
        return Err(Error::InvalidInput("at least one --params file is required".into()));
    }

    let body = BodyModel::new();
    let pool = cfg.background_pool()?;
    let env = cfg.env(&body, &pool, Split::Train);
    write_manifest(
        out,
        "attack",
        &[
            ("params", params_paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(";")),
            ("resume", resume.to_string()),
        ],
        &cfg,
    )?;

    let outcome: AttackOutcome = if resume {
        resume_attack(out, &cfg.attack, &env)?
    } else {
        let params = load_params(params_paths)?;
        run_attack(&params, &cfg.attack, &env, Some(out))?
    };

    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: loss={:.6} l_seq={:.6} l_ctrl={:.6}",
            last.epoch, last.loss, last.l_seq, last.l_ctrl
        );
    }
    println!("checkpoint in {}", out.display());
    Ok(())
}

/// Render held-out evaluation videos to PNG frames plus manifests.
pub fn cmd_render(
    cfg: &RunConfig,
    params_paths: &[PathBuf],
    gains: Option<&Path>,
    videos: Option<usize>,
    out: &Path,
) -> Result<()> {
    let params = load_params(params_paths)?;
    let gain_vecs = load_gains(gains, &params)?;
    let body = BodyModel::new();
    let pool = cfg.background_pool()?;
    let env = cfg.env(&body, &pool, Split::Test);
    let renderer = EvalRenderer::new(&params, &gain_vecs, &env)?;

    let n = videos.unwrap_or(cfg.eval_videos);
    write_manifest(
        out,
        "render",
        &[
            ("params", params_paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(";")),
            ("gains", gains.map(|p| p.display().to_string()).unwrap_or_default()),
            ("videos", n.to_string()),
        ],
        cfg,
    )?;
    let mut frame_total = 0;
    for v in 0..n {
        let (frames, scene) = renderer.render_video(&env, cfg.seed, v)?;
        frame_total += frames.len();
        dump_video(out, &format!("v{v:02}"), &frames, &scene)?;
    }
    println!("wrote {n} videos ({frame_total} frames) to {}", out.display());
    Ok(())
}

fn frame_array(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::zeros((h, w, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Run the toy detector over dumped frames, producing a detection log.
pub fn cmd_detect(cfg: &RunConfig, frames: &Path, out: &Path) -> Result<()> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(frames)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no video directories (with manifest.json) under {}",
            frames.display()
        )));
    }

    write_manifest(out, "detect", &[("frames", frames.display().to_string())], cfg)?;
    let mut logs = Vec::new();
    for dir in dirs {
        let manifest = VideoManifest::load(&dir)?;
        if manifest.gt_boxes.len() != manifest.frame_count {
            return Err(Error::Contract(format!(
                "{}: {} gt boxes for {} frames",
                dir.display(),
                manifest.gt_boxes.len(),
                manifest.frame_count
            )));
        }
        let mut records = Vec::with_capacity(manifest.frame_count);
        for t in 0..manifest.frame_count {
            let image = frame_array(&dir.join(format!("frame_{t:04}.png")))?;
            let boxes = if manifest.empty_frames.contains(&t) {
                vec![]
            } else {
                toy_detect(&image, &cfg.detector)?
            };
            records.push(DetectionRecord {
                video_id: manifest.video_id.clone(),
                frame: t,
                gt_box: manifest.gt_boxes[t],
                boxes,
            });
        }
        logs.push(VideoLog { video_id: manifest.video_id, records });
    }
    let n_frames: usize = logs.iter().map(|l| l.records.len()).sum();
    let path = out.join("detections.jsonl");
    std::fs::write(&path, logs_to_jsonl(&logs)?)?;
    println!("{} videos, {n_frames} frames -> {}", logs.len(), path.display());
    Ok(())
}

/// Validate an external detection log and write it back normalized (grouped
/// by video, sorted by frame, gaps filled).
pub fn cmd_ingest(cfg: &RunConfig, log: &Path, out: &Path) -> Result<()> {
    let logs = ingest_log(log)?;
    write_manifest(out, "ingest", &[("log", log.display().to_string())], cfg)?;
    let lines = logs_to_jsonl(&logs)?;
    let path = out.join("ingested.jsonl");
    std::fs::write(&path, lines)?;
    for video in &logs {
        let boxes: usize = video.records.iter().map(|r| r.boxes.len()).sum();
        println!("{}: {} frames, {} boxes", video.video_id, video.records.len(), boxes);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_ndr_mode(s: &str) -> Result<NdrMode> {
    match s {
        "max-threshold" => Ok(NdrMode::MaxThreshold),
        "per-frame-failure" => Ok(NdrMode::PerFrameFailure),
        other => Err(Error::InvalidInput(format!(
            "unknown NDR mode {other:?} (expected max-threshold or per-frame-failure)"
        ))),
    }
}

/// Compute sequence metrics over a detection log and write the full report.
#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    mut cfg: RunConfig,
    log: &Path,
    tau: Option<f64>,
    tau_iou: Option<f64>,
    alpha: Option<f64>,
    ndr_mode: Option<&str>,
    out: &Path,
) -> Result<()> {
    if let Some(tau) = tau {
        cfg.metrics.tau = tau;
    }
    if let Some(tau_iou) = tau_iou {
        cfg.metrics.tau_iou = tau_iou;
    }
    if let Some(alpha) = alpha {
        cfg.metrics.alpha = alpha;
    }
    if let Some(mode) = ndr_mode {
        cfg.metrics.ndr_mode = parse_ndr_mode(mode)?;
    }
    cfg.metrics.validate()?;

    let logs = ingest_log(log)?;
    write_manifest(out, "eval", &[("log", log.display().to_string())], &cfg)?;
    let report = eval::report(&logs, &cfg.metrics, out)?;
    print_dataset_line(&report);
    println!("report in {}", out.display());
    Ok(())
}

fn print_dataset_line(report: &MetricsReport) {
    let d = &report.dataset;
    println!(
        "videos={} SeqASR={:.1}±{:.1} CVaR={:.1}±{:.1} NDR={:.1}%",
        d.videos, d.seqasr_mean, d.seqasr_std, d.cvar_mean, d.cvar_std, d.ndr_percent
    );
}

/// Compare several evaluation reports side by side: a summary table plus an
/// overlay of per-video tail confidence.
pub fn cmd_report(cfg: &RunConfig, runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for dir in runs {
        let path = dir.join("report.json");
        let report: MetricsReport =
            serde_json::from_str(&std::fs::read_to_string(&path)?).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: Some(e.line()),
                msg: e.to_string(),
            })?;
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        rows.push((label, report));
    }

    write_manifest(
        out,
        "report",
        &[("runs", runs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(";"))],
        cfg,
    )?;

    let mut csv = String::from("run,videos,seqasr_mean,seqasr_std,cvar_mean,cvar_std,ndr_percent\n");
    for (label, report) in &rows {
        let d = &report.dataset;
        csv.push_str(&format!(
            "{label},{},{},{},{},{},{}\n",
            d.videos, d.seqasr_mean, d.seqasr_std, d.cvar_mean, d.cvar_std, d.ndr_percent
        ));
    }
    std::fs::write(out.join("comparison.csv"), csv)?;

    // Tail confidence lives on the same [0, 1] axis as tau, so the overlay
    // shows at a glance which runs pushed their worst frames under threshold.
    let series: Vec<(String, Vec<f64>)> = rows
        .iter()
        .map(|(label, report)| {
            (
                label.clone(),
                report.per_video.values().map(|v| v.cvar / 100.0).collect(),
            )
        })
        .collect();
    let tau = rows.first().map(|(_, r)| r.config.tau).unwrap_or(0.3);
    std::fs::write(
        out.join("comparison.svg"),
        confidence_svg(&series, tau, "per-video tail confidence (CVaR/100)"),
    )?;

    for (label, report) in &rows {
        print!("{label}: ");
        print_dataset_line(report);
    }
    println!("comparison in {}", out.display());
    Ok(())
}

const KAPPA_GRID: [f64; 7] = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 16.0];
const CALIBRATION_TARGET: f64 = 0.6;
const CALIBRATION_VIDEOS: usize = 2;

/// Sweep the detector contrast gain over unattacked renders and report the
/// smallest value whose mean top detection clears the calibration target.
pub fn cmd_calibrate(cfg: &RunConfig, params_paths: &[PathBuf], out: &Path) -> Result<()> {
    let params = load_params(params_paths)?;
    let gain_vecs = load_gains(None, &params)?;
    let body = BodyModel::new();
    let pool = cfg.background_pool()?;
    let env = cfg.env(&body, &pool, Split::Train);
    let renderer = EvalRenderer::new(&params, &gain_vecs, &env)?;

    let mut frames = Vec::new();
    for v in 0..CALIBRATION_VIDEOS {
        let (video, _) = renderer.render_video(&env, cfg.seed, v)?;
        frames.extend(video.into_iter().filter(|f| !f.empty));
    }
    if frames.is_empty() {
        return Err(Error::Config("no frames with a visible subject to calibrate on".into()));
    }

    #[derive(serde::Serialize)]
    struct GridPoint {
        kappa: f64,
        mean_top_conf: f64,
    }
    let mut grid = Vec::new();
    for kappa in KAPPA_GRID {
        let mut det = cfg.detector.clone();
        det.kappa = kappa;
        let mut sum = 0.0;
        for frame in &frames {
            let top = toy_detect(&frame.image, &det)?
                .iter()
                .map(|b| b.conf)
                .fold(0.0, f64::max);
            sum += top;
        }
        grid.push(GridPoint { kappa, mean_top_conf: sum / frames.len() as f64 });
    }
    let recommended = grid
        .iter()
        .find(|p| p.mean_top_conf >= CALIBRATION_TARGET)
        .map(|p| p.kappa);

    write_manifest(
        out,
        "calibrate-detector",
        &[("params", params_paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(";"))],
        cfg,
    )?;
    #[derive(serde::Serialize)]
    struct Calibration {
        target: f64,
        frames: usize,
        grid: Vec<GridPoint>,
        recommended_kappa: Option<f64>,
    }
    let calibration = Calibration {
        target: CALIBRATION_TARGET,
        frames: frames.len(),
        grid,
        recommended_kappa: recommended,
    };
    let mut text = serde_json::to_string_pretty(&calibration)?;
    text.push('\n');
    std::fs::write(out.join("calibration.json"), text)?;

    for p in &calibration.grid {
        println!("kappa={:<5} mean_top_conf={:.3}", p.kappa, p.mean_top_conf);
    }
    match recommended {
        Some(k) => println!("recommended kappa: {k} (target {CALIBRATION_TARGET})"),
        None => println!("no kappa in the grid reaches the {CALIBRATION_TARGET} target"),
    }
    Ok(())
}

/// Turn detection logs grouped per video into JSONL text (one frame per
/// line), the format `ingest` and `eval` consume.
pub fn logs_to_jsonl(logs: &[VideoLog]) -> Result<String> {
    let mut lines = String::new();
    for video in logs {
        for record in &video.records {
            lines.push_str(&serde_json::to_string(record)?);
            lines.push('\n');
        }
    }
    Ok(lines)
}
