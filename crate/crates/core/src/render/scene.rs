//! Scene sampling: camera, motion, illumination, background and material.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sim::{sample_material, MaterialParams};
use crate::util::seeded_rng;
use crate::{Error, Result};

/// Which background pool a scene draws from. Pools are disjoint so that
/// held-out evaluation never sees a training background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSample {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub speed_mps: f64,
    pub start_offset_m: f64,
    /// Subject heading: rotation of the walk path about the vertical axis.
    pub direction_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightSample {
    pub intensity: f64,
    /// Color-temperature proxy: per-channel gain in (0, 1].
    pub rgb_gain: [f64; 3],
    /// Unit vector pointing from the scene toward the light.
    pub direction: [f64; 3],
}

/// A background source. Procedural backgrounds are generated on the fly;
/// file backgrounds are loaded and resized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackgroundRef {
    Procedural { seed: u64 },
    File { path: PathBuf },
}

impl BackgroundRef {
    fn canonical(&self) -> String {
        match self {
            BackgroundRef::Procedural { seed } => format!("procedural:{seed}"),
            BackgroundRef::File { path } => format!("file:{}", path.display()),
        }
    }

    /// Stable content-independent hash of the reference.
    pub fn stable_hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    /// Pool assignment by hash parity: even → train, odd → held out.
    pub fn split(&self) -> Split {
        if self.stable_hash() % 2 == 0 {
            Split::Train
        } else {
            Split::Test
        }
    }
}

/// An ordered set of background references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundPool {
    pub refs: Vec<BackgroundRef>,
}

impl BackgroundPool {
    /// `count` procedural backgrounds with seeds derived from `seed`.
    pub fn procedural(count: usize, seed: u64) -> Self {
        let refs = (0..count)
            .map(|i| BackgroundRef::Procedural {
                seed: crate::util::derive_seed(seed, &[i as u64]),
            })
            .collect();
        BackgroundPool { refs }
    }

    /// Every PNG in a directory, sorted by file name.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .map(|e| e.eq_ignore_ascii_case("png"))
                    .unwrap_or(false)
            })
            .collect();
        paths.sort();
        Ok(BackgroundPool {
            refs: paths
                .into_iter()
                .map(|path| BackgroundRef::File { path })
                .collect(),
        })
    }

    pub fn refs_for(&self, split: Split) -> Vec<&BackgroundRef> {
        self.refs.iter().filter(|r| r.split() == split).collect()
    }
}

/// Configurable sampling ranges. The defaults match the training setup:
/// elevation 40–70°, full azimuth, fixed 4 m distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRanges {
    pub elevation_deg: [f64; 2],
    pub azimuth_deg: [f64; 2],
    pub distance_m: [f64; 2],
    pub light_intensity: [f64; 2],
    pub light_elevation_deg: [f64; 2],
    pub rgb_gain: [f64; 2],
    pub speed_mps: f64,
    pub start_offset_m: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        SceneRanges {
            elevation_deg: [40.0, 70.0],
            azimuth_deg: [0.0, 360.0],
            distance_m: [4.0, 4.0],
            light_intensity: [0.7, 1.3],
            light_elevation_deg: [25.0, 70.0],
            rgb_gain: [0.85, 1.0],
            speed_mps: 1.0,
            start_offset_m: -1.0,
        }
    }
}

impl SceneRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = [
            ("elevation_deg", self.elevation_deg),
            ("azimuth_deg", self.azimuth_deg),
            ("distance_m", self.distance_m),
            ("light_intensity", self.light_intensity),
            ("light_elevation_deg", self.light_elevation_deg),
            ("rgb_gain", self.rgb_gain),
        ];
        for (name, [lo, hi]) in ordered {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("range {name} = [{lo}, {hi}] is not ordered")));
            }
        }
        if self.elevation_deg[0] < 0.0 || self.elevation_deg[1] > 90.0 {
            return Err(Error::Config("camera elevation range must lie in [0, 90]".into()));
        }
        if self.azimuth_deg[0] < 0.0 || self.azimuth_deg[1] > 360.0 {
            return Err(Error::Config("azimuth range must lie in [0, 360]".into()));
        }
        if self.distance_m[0] <= 0.0 {
            return Err(Error::Config("camera distance must be positive".into()));
        }
        if self.light_intensity[0] <= 0.0 || self.light_intensity[1] > 4.0 {
            return Err(Error::Config("light intensity range must lie in (0, 4]".into()));
        }
        if self.rgb_gain[0] <= 0.0 || self.rgb_gain[1] > 1.0 {
            return Err(Error::Config("rgb gain range must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One draw of every controllable rendering variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub camera: CameraSample,
    pub motion: MotionSample,
    pub light: LightSample,
    pub background: BackgroundRef,
    pub material: MaterialParams,
    pub seed: u64,
}

impl SceneSample {
    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        if !(0.0..=90.0).contains(&c.elevation_deg) {
            return Err(Error::InvalidInput(format!(
                "camera elevation {} outside [0, 90]",
                c.elevation_deg
            )));
        }
        if !(0.0..360.0).contains(&c.azimuth_deg) {
            return Err(Error::InvalidInput(format!(
                "camera azimuth {} outside [0, 360)",
                c.azimuth_deg
            )));
        }
        if !(c.distance_m.is_finite() && c.distance_m > 0.0) {
            return Err(Error::InvalidInput("camera distance must be positive".into()));
        }
        let l = &self.light;
        if !(l.intensity > 0.0 && l.intensity <= 4.0) {
            return Err(Error::InvalidInput(format!(
                "light intensity {} outside (0, 4]",
                l.intensity
            )));
        }
        for g in l.rgb_gain {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::InvalidInput(format!("rgb gain {g} outside (0, 1]")));
            }
        }
        let n = crate::geom::norm(l.direction);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("light direction norm {n} != 1")));
        }
        self.material.validate()
    }
}

/// Draw one scene. The consumption order of the underlying uniform stream is
/// fixed (camera, light, heading, background, material), so a given seed
/// always yields the same sample.
pub fn sample_scene(
    seed: u64,
    pool: &BackgroundPool,
    split: Split,
    ranges: &SceneRanges,
) -> Result<SceneSample> {
    ranges.validate()?;
    let candidates = pool.refs_for(split);
    if candidates.is_empty() {
        return Err(Error::Config(format!("background pool has no {split:?} entries")));
    }

    let mut rng = seeded_rng(seed);
    let mut draw = |[lo, hi]: [f64; 2]| lo + rng.random::<f64>() * (hi - lo);

    // random::<f64>() lies in [0, 1), so an [0, 360] azimuth range never
    // actually produces 360 and the half-open invariant holds.
    let camera = CameraSample {
        elevation_deg: draw(ranges.elevation_deg),
        azimuth_deg: draw(ranges.azimuth_deg),
        distance_m: draw(ranges.distance_m),
    };
    let intensity = draw(ranges.light_intensity);
    let light_azim = draw([0.0, 360.0]).to_radians();
    let light_elev = draw(ranges.light_elevation_deg).to_radians();
    let rgb_gain = [
        draw(ranges.rgb_gain),
        draw(ranges.rgb_gain),
        draw(ranges.rgb_gain),
    ];
    let direction_deg = draw([0.0, 360.0]);
    let pick = (rng.random::<f64>() * candidates.len() as f64) as usize;
    let background = candidates[pick.min(candidates.len() - 1)].clone();
    let material = sample_material(&mut rng);

    let light = LightSample {
        intensity,
        rgb_gain,
        direction: [
            light_elev.cos() * light_azim.cos(),
            light_elev.sin(),
            light_elev.cos() * light_azim.sin(),
        ],
    };
    let sample = SceneSample {
        camera,
        motion: MotionSample {
            speed_mps: ranges.speed_mps,
            start_offset_m: ranges.start_offset_m,
            direction_deg,
        },
        light,
        background,
        material,
        seed,
    };
    sample.validate()?;
    Ok(sample)
}
