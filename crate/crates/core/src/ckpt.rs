//! Parameter checkpoints.
//!
//! A checkpoint is a single JSON document mapping parameter names to shape +
//! row-major values, wrapped in a versioned envelope. JSON floats use the
//! shortest round-trip representation, so save → load reproduces every bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Array;

/// Format tag expected in the checkpoint envelope.
pub const CKPT_TAG: &str = "egocast-params";

/// Current checkpoint version.
pub const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    params: BTreeMap<String, StoredParam>,
}

/// Saves every parameter in `store` to `path`.
pub fn save_params(path: &Path, store: &ParamStore) -> Result<()> {
    let params = store
        .iter()
        .map(|(name, value)| {
            (
                name.to_string(),
                StoredParam {
                    shape: value.shape().to_vec(),
                    data: value.data().to_vec(),
                },
            )
        })
        .collect();
    let envelope = Envelope {
        format: CKPT_TAG.to_string(),
        version: CKPT_VERSION,
        params,
    };
    let mut out = BufWriter::new(File::create(path)?);
    let text = serde_json::to_string(&envelope)
        .map_err(|e| Error::contract(format!("checkpoint serialization failed: {e}")))?;
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Loads a checkpoint saved by [`save_params`], checking tag and version.
pub fn load_params(path: &Path) -> Result<ParamStore> {
    let reader = BufReader::new(File::open(path)?);
    let envelope: Envelope = serde_json::from_reader(reader).map_err(|e| Error::Parse {
        line: e.line().max(1),
        msg: format!("bad checkpoint: {e}"),
    })?;
    if envelope.format != CKPT_TAG || envelope.version != CKPT_VERSION {
        return Err(Error::Format {
            expected: format!("{CKPT_TAG} v{CKPT_VERSION}"),
            found: format!("{} v{}", envelope.format, envelope.version),
        });
    }
    let mut store = ParamStore::new();
    for (name, p) in envelope.params {
        let expected: usize = p.shape.iter().product();
        if expected != p.data.len() {
            return Err(Error::contract(format!(
                "checkpoint parameter `{name}` declares shape {:?} ({expected} values) \
                 but carries {} values",
                p.shape,
                p.data.len()
            )));
        }
        store.insert(&name, Array::new(p.shape, p.data));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_store(seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in [
            ("a.w", vec![3, 4]),
            ("a.b", vec![3]),
            ("z.scale", vec![1]),
        ] {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            store.insert(name, Array::new(shape, data));
        }
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = random_store(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        save_params(&path, &store).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(store, back);
    }

    #[test]
    fn awkward_values_survive_the_round_trip() {
        let mut store = ParamStore::new();
        store.insert(
            "edge",
            Array::vector(vec![
                0.1 + 0.2,
                f64::MIN_POSITIVE,
                -1.0 / 3.0,
                1e308,
                5e-324,
                0.0,
                -0.0,
            ]),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edge.json");
        save_params(&path, &store).unwrap();
        let back = load_params(&path).unwrap();
        let (a, b) = (store.get("edge").data(), back.get("edge").data());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn version_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("old.json");
        let text = format!(
            "{{\"format\":\"{CKPT_TAG}\",\"version\":0,\"params\":{{}}}}"
        );
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn garbage_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.json");
        std::fs::write(&path, "{\"format\": ").unwrap();
        assert!(matches!(load_params(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn shape_and_payload_disagreement_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let text = format!(
            "{{\"format\":\"{CKPT_TAG}\",\"version\":{CKPT_VERSION},\
             \"params\":{{\"w\":{{\"shape\":[2,2],\"data\":[1.0,2.0,3.0]}}}}}}"
        );
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_params(&path), Err(Error::Contract(_))));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.json");
        assert!(matches!(load_params(&path), Err(Error::Io(_))));
    }
}
