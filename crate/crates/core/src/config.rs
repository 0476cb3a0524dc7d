//! Run configuration: one TOML document covering data generation, both model
//! streams, training, and evaluation.
//!
//! Precedence is command line > config file > built-in defaults. The merged
//! ("effective") config can be serialized back to TOML and content-hashed, so
//! every output directory records exactly what produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SplitSpec;
use crate::ego::EgoConfig;
use crate::error::{Error, Result};
use crate::loc::LocConfig;
use crate::train::TrainConfig;

/// Dataset generation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Master seed every scene seed derives from.
    pub master_seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        DataConfig {
            master_seed: 1,
            train: s.train,
            val: s.val,
            test: s.test,
        }
    }
}

impl DataConfig {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.train,
            val: self.val,
            test: self.test,
        }
    }
}

/// Evaluation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of ego-motion modes / box trajectories sampled per scene.
    pub k: usize,
    /// Stochastic forward passes fused per prediction step.
    pub n_dropout: usize,
    pub seed: u64,
    /// How many test scenes the forecast-dump command covers.
    pub dump_scenes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            n_dropout: 20,
            seed: 0,
            dump_scenes: 8,
        }
    }
}

/// The complete configuration for a run.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub ego: EgoConfig,
    pub loc: LocConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Loads the effective config: defaults, overlaid with `path` (if given),
/// overlaid with `key.path=value` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut merged = toml::Value::try_from(RunConfig::default())
        .map_err(|e| Error::contract(format!("default config serialization failed: {e}")))?;

    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        let file_value: toml::Value = toml::from_str(&text).map_err(|e| Error::Parse {
            line: line_of(&text, &e),
            msg: e.message().to_string(),
        })?;
        merge(&mut merged, file_value);
    }

    for spec in overrides {
        apply_override(&mut merged, spec)?;
    }

    merged.try_into().map_err(map_config_error)
}

/// Deep merge: tables merge key-by-key, everything else is replaced.
fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        // Unknown at this level; keep it so deserialization
                        // reports the offending key.
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies one `dotted.path=value` override onto a TOML document.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::contract(format!("override `{spec}` is not of the form key.path=value"))
    })?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(Error::contract(format!("override `{spec}` has an empty key")));
    }
    let mut cursor = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::UnknownKey(path.to_string()))?;
        if i + 1 == segments.len() {
            table.insert(seg.to_string(), parse_scalar(raw));
            return Ok(());
        }
        cursor = table
            .entry(seg.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    unreachable!("split('.') yields at least one segment");
}

/// Best-effort scalar typing: integer, then float, then boolean, then string.
fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(raw.to_string())
}

fn line_of(text: &str, err: &toml::de::Error) -> usize {
    err.span()
        .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
        .unwrap_or(1)
}

/// Maps a deserialization failure to the crate error vocabulary, surfacing
/// unknown keys as such.
fn map_config_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return Error::UnknownKey(rest[..end].to_string());
        }
    }
    Error::Parse { line: 1, msg }
}

/// The effective config as pretty TOML.
pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string_pretty(cfg)
        .map_err(|e| Error::contract(format!("config serialization failed: {e}")))
}

/// SHA-256 of the canonical TOML rendering, as lowercase hex.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let text = to_toml(cfg)?;
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_load_without_a_file() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.base_lr, 1e-3);
        assert_eq!(cfg.data.train, 600);
        assert_eq!(cfg.eval.k, 10);
    }

    #[test]
    fn file_values_override_defaults_field_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nbase_lr = 0.005\n[eval]\nk = 3\n").unwrap();
        let cfg = load_config(Some(&path), &[]).unwrap();
        assert_eq!(cfg.train.base_lr, 0.005);
        assert_eq!(cfg.eval.k, 3);
        // Untouched fields keep their defaults.
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.data, DataConfig::default());
    }

    #[test]
    fn command_line_overrides_beat_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nbase_lr = 0.005\nseed = 11\n").unwrap();
        let cfg = load_config(
            Some(&path),
            &["train.base_lr=0.009".to_string(), "eval.n_dropout=4".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.train.base_lr, 0.009);
        assert_eq!(cfg.train.seed, 11);
        assert_eq!(cfg.eval.n_dropout, 4);
    }

    #[test]
    fn unknown_file_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nlearning_rate = 0.005\n").unwrap();
        match load_config(Some(&path), &[]) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "learning_rate"),
            other => panic!("expected an unknown-key error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_override_key_is_named() {
        match load_config(None, &["train.momentum=0.9".to_string()]) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "momentum"),
            other => panic!("expected an unknown-key error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_override_is_rejected() {
        assert!(matches!(
            load_config(None, &["train.base_lr".to_string()]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bad_toml_syntax_reports_a_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nbase_lr == 0.005\n").unwrap();
        match load_config(Some(&path), &[]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn scalar_typing_in_overrides() {
        let mut doc = toml::Value::Table(Default::default());
        apply_override(&mut doc, "a.int=42").unwrap();
        apply_override(&mut doc, "a.float=0.5").unwrap();
        apply_override(&mut doc, "a.flag=true").unwrap();
        apply_override(&mut doc, "a.name=hello").unwrap();
        let t = doc["a"].as_table().unwrap();
        assert!(matches!(t["int"], toml::Value::Integer(42)));
        assert!(matches!(t["float"], toml::Value::Float(f) if f == 0.5));
        assert!(matches!(t["flag"], toml::Value::Boolean(true)));
        assert!(matches!(t["name"], toml::Value::String(ref s) if s == "hello"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = load_config(None, &[]).unwrap();
        let b = load_config(None, &["train.seed=99".to_string()]).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&a).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn effective_toml_round_trips() {
        let cfg = load_config(None, &["ego.hidden_dim=48".to_string()]).unwrap();
        let text = to_toml(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.ego.hidden_dim, 48);
    }
}
