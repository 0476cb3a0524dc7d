//! Scene persistence and balanced dataset splits.
//!
//! Datasets are stored as line-delimited JSON: the first line is a header
//! carrying a format tag, version, tick length, and camera geometry; every
//! following line is one [`Scene`]. JSON floats round-trip exactly through
//! the shortest-representation printer, so write → read is bit-exact.
//!
//! Splits are balanced over the full ego-maneuver × target-kind grid and
//! draw their scene seeds from disjoint per-split ranges, so train/val/test
//! never share a scene.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ego::DT;
use crate::error::{Error, Result};
use crate::loc::{IMG_H, IMG_W};
use crate::synth::{generate_scene, Camera, EgoKind, Scene, ScenarioConfig, TargetKind};

/// Format tag expected on the header line.
pub const FORMAT_TAG: &str = "egocast-scenes";

/// Current container version.
pub const FORMAT_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    /// Tick length in seconds.
    pub dt: f64,
    /// Image size in pixels (width, height).
    pub image: (f64, f64),
    /// Camera geometry shared by the scenes.
    pub camera: Camera,
}

impl Default for DatasetHeader {
    fn default() -> Self {
        DatasetHeader {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            dt: DT,
            image: (IMG_W, IMG_H),
            camera: Camera::default(),
        }
    }
}

/// Writes a header line followed by one JSON line per scene.
pub fn write_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        camera: scenes.first().map(|s| s.camera).unwrap_or_default(),
        ..DatasetHeader::default()
    };
    let line = serde_json::to_string(&header)
        .map_err(|e| Error::contract(format!("header serialization failed: {e}")))?;
    writeln!(out, "{line}")?;
    for scene in scenes {
        let line = serde_json::to_string(scene)
            .map_err(|e| Error::contract(format!("scene serialization failed: {e}")))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_scenes`].
///
/// Malformed lines are reported with their 1-based line number; a header
/// with the wrong tag or version is a format error, not a parse error.
pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file, expected a dataset header".to_string(),
    })?;
    let header: DatasetHeader = serde_json::from_str(&first?).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(Error::Format {
            expected: format!("{FORMAT_TAG} v{FORMAT_VERSION}"),
            found: format!("{} v{}", header.format, header.version),
        });
    }

    let mut scenes = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        scenes.push(scene);
    }
    Ok(scenes)
}

/// Requested sizes of the three dataset splits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 600,
            val: 100,
            test: 100,
        }
    }
}

/// The three generated splits.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

/// Number of (ego kind, target kind) combinations each split cycles through.
pub const COMBOS: usize = EgoKind::ALL.len() * TargetKind::ALL.len();

fn combo(i: usize) -> (EgoKind, TargetKind) {
    (
        EgoKind::ALL[(i / TargetKind::ALL.len()) % EgoKind::ALL.len()],
        TargetKind::ALL[i % TargetKind::ALL.len()],
    )
}

/// Generates `count` scenes balanced over the kind grid, with seeds
/// `base .. base + count`. Scenes are generated in parallel; the output
/// order is by seed regardless of scheduling.
fn generate_balanced(count: usize, base: u64) -> Result<Vec<Scene>> {
    if count % COMBOS != 0 {
        return Err(Error::contract(format!(
            "split size {count} must be a multiple of {COMBOS} to balance every \
             ego/target combination"
        )));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (ego, target) = combo(i);
            let cfg = ScenarioConfig::for_kinds(ego, target);
            generate_scene(&cfg, base.wrapping_add(i as u64))
        })
        .collect()
}

/// Generates balanced train/val/test splits from one master seed.
///
/// Each split draws scene seeds from its own disjoint range, so no scene is
/// shared between splits and the whole dataset is reproducible from
/// `master_seed` alone.
pub fn generate_splits(master_seed: u64, spec: &SplitSpec) -> Result<DatasetSplits> {
    let max = spec.train.max(spec.val).max(spec.test) as u64;
    let stride = (max + 1).next_power_of_two();
    let base = master_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    Ok(DatasetSplits {
        train: generate_balanced(spec.train, base)?,
        val: generate_balanced(spec.val, base.wrapping_add(stride))?,
        test: generate_balanced(spec.test, base.wrapping_add(2 * stride))?,
    })
}
