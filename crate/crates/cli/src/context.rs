//! Shared command plumbing: output-directory resolution, effective-config
//! assembly, dataset loading with path-bearing errors, and the artifact
//! manifest every command appends to.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use egocast_core::config::{config_hash, load_config, to_toml, RunConfig};
use egocast_core::dataset::read_scenes;
use egocast_core::error::{Error, Result};
use egocast_core::synth::Scene;
use sha2::{Digest, Sha256};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "EGOCAST_OUT";

/// Resolve the output root: `--out`, then `EGOCAST_OUT`, then `./out`.
pub fn out_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(OUT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("out")
}

/// Load the effective config: defaults, then the file, then overrides (the
/// caller appends typed flags last so they win over positional overrides).
pub fn effective_config(config: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    load_config(config, overrides)
}

/// Write the effective config beside the outputs and return its hash.
pub fn write_effective_config(
    out: &Path,
    cfg: &RunConfig,
    manifest: &mut Manifest,
) -> Result<String> {
    let text = to_toml(cfg)?;
    let path = out.join("effective-config.toml");
    fs::write(&path, &text)?;
    manifest.record(out, &path)?;
    config_hash(cfg)
}

/// Read a scene file, naming the path on failure.
pub fn read_scenes_at(path: &Path) -> Result<Vec<Scene>> {
    read_scenes(path).map_err(|e| match e {
        Error::Io(io) => Error::contract(format!("cannot read {}: {io}", path.display())),
        other => Error::contract(format!("cannot read {}: {other}", path.display())),
    })
}

/// Sidecar manifest: one `<relative path>\t<sha256>` line per artifact,
/// sorted by path. Commands merge into any existing manifest so a pipeline
/// accumulates a complete inventory.
pub struct Manifest {
    path: PathBuf,
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Manifest> {
        let path = out.join("manifest.tsv");
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let mut parts = line.splitn(2, '\t');
                let (Some(name), Some(hash)) = (parts.next(), parts.next()) else {
                    return Err(Error::Parse {
                        line: idx + 1,
                        msg: format!("bad manifest line: {line:?}"),
                    });
                };
                entries.insert(name.to_string(), hash.to_string());
            }
        }
        Ok(Manifest { path, entries })
    }

    /// Hash `file` and record it under its path relative to `out`.
    pub fn record(&mut self, out: &Path, file: &Path) -> Result<()> {
        let bytes = fs::read(file)?;
        let mut h = Sha256::new();
        h.update(&bytes);
        let digest = hex::encode(h.finalize());
        let rel = file.strip_prefix(out).unwrap_or(file);
        self.entries.insert(rel.to_string_lossy().into_owned(), digest);
        Ok(())
    }

    pub fn write(&self) -> Result<()> {
        let mut text = String::new();
        for (name, hash) in &self.entries {
            text.push_str(name);
            text.push('\t');
            text.push_str(hash);
            text.push('\n');
        }
        fs::write(&self.path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_root_prefers_the_flag() {
        assert_eq!(out_root(Some(Path::new("/tmp/x"))), PathBuf::from("/tmp/x"));
    }

    #[test]
    fn manifest_round_trips_and_merges() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let a = out.join("a.txt");
        fs::write(&a, "hello").unwrap();

        let mut m = Manifest::load(out).unwrap();
        m.record(out, &a).unwrap();
        m.write().unwrap();

        let b = out.join("b.txt");
        fs::write(&b, "world").unwrap();
        let mut m2 = Manifest::load(out).unwrap();
        m2.record(out, &b).unwrap();
        m2.write().unwrap();

        let text = fs::read_to_string(out.join("manifest.tsv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2, "merged manifest keeps earlier entries: {text}");
        assert!(lines[0].starts_with("a.txt\t"));
        assert!(lines[1].starts_with("b.txt\t"));
        for l in lines {
            let hash = l.split('\t').nth(1).unwrap();
            assert_eq!(hash.len(), 64);
            assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
        }
    }

    #[test]
    fn missing_scene_files_name_the_path() {
        let err = read_scenes_at(Path::new("/nonexistent/q.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/q.jsonl"), "{err}");
    }
}
