//! Run configuration shared by every subcommand, plus the run manifest each
//! command writes next to its outputs.
//!
//! The top-level `seed` drives every stage; the `[attack]` table's own seed
//! is overwritten with it at load time so a single knob (or `--seed`)
//! controls the whole run. Manifests echo the *effective* configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use seqcloak_core::detect::ToyDetectorConfig;
use seqcloak_core::eval::MetricsConfig;
use seqcloak_core::optim::{AttackConfig, AttackEnv};
use seqcloak_core::render::{BackgroundPool, RenderConfig, SceneRanges, Split};
use seqcloak_core::sim::{BodyModel, MeshDensity};
use seqcloak_core::texture_gen::GeneratorConfig;
use seqcloak_core::util::derive_seed;
use seqcloak_core::{Error, Result};

/// Where background plates come from: a directory of PNGs, or a seeded
/// procedural pool when no directory is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundConfig {
    pub dir: Option<PathBuf>,
    /// Procedural pool size (ignored when `dir` is set).
    pub count: usize,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig { dir: None, count: 16 }
    }
}

/// Full pipeline configuration. Every field has a default, so an empty file
/// is valid; unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker thread bound; `None` uses all logical cores.
    pub jobs: Option<usize>,
    /// Generated texture resolution (height, width).
    pub texture_size: [usize; 2],
    pub mesh_density: MeshDensity,
    /// Walk interpolation steps per keyframe interval (controls frames/video).
    pub steps_per_interval: usize,
    /// Videos rendered by `render`, `detect` pipelines and calibration.
    pub eval_videos: usize,
    pub backgrounds: BackgroundConfig,
    pub ranges: SceneRanges,
    pub render: RenderConfig,
    pub detector: ToyDetectorConfig,
    pub generator: GeneratorConfig,
    pub attack: AttackConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: None,
            texture_size: [64, 64],
            mesh_density: MeshDensity::Standard,
            steps_per_interval: 12,
            eval_videos: 8,
            backgrounds: BackgroundConfig::default(),
            ranges: SceneRanges::default(),
            render: RenderConfig::default(),
            detector: ToyDetectorConfig::default(),
            generator: GeneratorConfig::default(),
            attack: AttackConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Load from TOML (default) or JSON (`.json` extension).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        let mut cfg: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: Some(e.line()),
                msg: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: e
                    .span()
                    .map(|s| text[..s.start].bytes().filter(|&b| b == b'\n').count() + 1),
                msg: e.message().to_string(),
            })?
        };
        cfg.attack.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, jobs: Option<usize>) {
        if let Some(s) = seed {
            self.seed = s;
            self.attack.seed = s;
        }
        if jobs.is_some() {
            self.jobs = jobs;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.texture_size.iter().any(|&s| s < 2) {
            return Err(Error::Config(format!(
                "texture_size {:?} must be at least 2x2",
                self.texture_size
            )));
        }
        if self.steps_per_interval == 0 {
            return Err(Error::Config("steps_per_interval must be positive".into()));
        }
        if self.eval_videos == 0 {
            return Err(Error::Config("eval_videos must be positive".into()));
        }
        if self.backgrounds.dir.is_none() && self.backgrounds.count == 0 {
            return Err(Error::Config("backgrounds.count must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        self.ranges.validate()?;
        self.render.validate()?;
        self.detector.validate()?;
        self.generator.validate()?;
        self.attack.validate()?;
        self.metrics.validate()
    }

    /// Materialize the background pool: directory PNGs or a procedural set
    /// seeded from the run seed.
    pub fn background_pool(&self) -> Result<BackgroundPool> {
        match &self.backgrounds.dir {
            Some(dir) => {
                let pool = BackgroundPool::from_dir(dir)?;
                if pool.refs.is_empty() {
                    return Err(Error::Config(format!(
                        "no PNG backgrounds in {}",
                        dir.display()
                    )));
                }
                Ok(pool)
            }
            None => Ok(BackgroundPool::procedural(
                self.backgrounds.count,
                derive_seed(self.seed, &[0xb6]),
            )),
        }
    }

    /// Assemble the pipeline environment for one split.
    pub fn env<'a>(
        &self,
        body: &'a BodyModel,
        pool: &'a BackgroundPool,
        split: Split,
    ) -> AttackEnv<'a> {
        let mut env = AttackEnv::new(body, pool);
        env.ranges = self.ranges;
        env.split = split;
        env.render = self.render;
        env.detector = self.detector.clone();
        env.generator = self.generator;
        env.texture_size = (self.texture_size[0], self.texture_size[1]);
        env.density = self.mesh_density;
        env.steps_per_interval = self.steps_per_interval;
        env
    }
}

/// What a command ran with — effective config, inputs, seed and source
/// revision — enough to reproduce its outputs bit for bit.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    inputs: BTreeMap<&'a str, String>,
    seed: u64,
    git_describe: Option<String>,
    config: &'a RunConfig,
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Write `manifest.json` into `out_dir`, creating the directory if needed.
pub fn write_manifest(
    out_dir: &Path,
    command: &str,
    inputs: &[(&str, String)],
    cfg: &RunConfig,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let manifest = RunManifest {
        command,
        inputs: inputs.iter().map(|(k, v)| (*k, v.clone())).collect(),
        seed: cfg.seed,
        git_describe: git_describe(),
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out_dir.join("manifest.json"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_partial_configs_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, RunConfig::default());

        std::fs::write(&path, "seed = 7\n[attack]\nepochs = 3\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.attack.epochs, 3);
        // The run seed propagates into the attack stage.
        assert_eq!(cfg.attack.seed, 7);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 1\ntypo_key = 2\n").unwrap();
        match RunConfig::load(&path) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, Some(2), "{msg}");
                assert!(msg.contains("typo_key"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        // Nested tables are checked too.
        std::fs::write(&path, "[detector]\nkapa = 3.0\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn json_configs_load_too() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, "{\"seed\": 9, \"metrics\": {\"tau\": 0.4}}\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.metrics.tau, 0.4);
    }

    #[test]
    fn config_round_trips_through_manifest_echo() {
        let mut cfg = RunConfig::default();
        cfg.seed = 5;
        cfg.attack.seed = 5;
        cfg.metrics.alpha = 0.25;
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn seed_override_reaches_attack_stage() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(Some(42), Some(3));
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.attack.seed, 42);
        assert_eq!(cfg.jobs, Some(3));
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let mut cfg = RunConfig::default();
        cfg.metrics.tau = 2.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.is_usage(), "{err}");

        let mut cfg = RunConfig::default();
        cfg.texture_size = [1, 64];
        assert!(cfg.validate().is_err());
    }
}
