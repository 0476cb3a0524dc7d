//! Forecast dumps: per-scene model output serialized as JSON lines.
//!
//! A dump captures everything a downstream consumer (plotting, inspection,
//! regression diffs) needs about one variant's forecasts on a scene set:
//! the observed windows, the clean future, per-step fused moments, sampled
//! ego modes, and sampled box trajectories. The file starts with a header
//! line naming the format so stale files fail loudly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ego::{const_vel_ego, EgoModel, OdomStep};
use crate::error::{Error, Result};
use crate::eval::{ego_modes_for, prior_modes_for, settings_for, EvalSettings};
use crate::loc::{const_vel_boxes, BoxState, LocModel};
use crate::nn::ParamStore;
use crate::synth::Scene;
use crate::uncertainty::FusedGaussian;
use crate::variants::{Group, VariantCard};

pub const DUMP_TAG: &str = "egocast-forecasts";
pub const DUMP_VERSION: u32 = 1;

/// First line of a dump file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format: String,
    pub version: u32,
    pub variant: String,
    pub k: usize,
    pub n_dropout: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// One target track's forecast: observed and true boxes plus the sampled
/// trajectories (all in normalized image coordinates) and the per-step
/// fused moments each sample was drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetForecast {
    pub obs_boxes: Vec<BoxState>,
    pub gt_future_boxes: Vec<BoxState>,
    pub trajectories: Vec<Vec<BoxState>>,
    pub fused: Vec<Vec<FusedGaussian>>,
}

/// One scene's forecast under one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneForecast {
    pub scene_seed: u64,
    pub variant: String,
    pub t_obs: usize,
    pub horizon: usize,
    /// Noisy observed odometry (model input).
    pub obs_odom: Vec<OdomStep>,
    /// Clean future odometry (reference).
    pub gt_future_odom: Vec<OdomStep>,
    /// Per-step fused (v, yaw-rate) moments; empty for analytic baselines.
    pub ego_fused: Vec<FusedGaussian>,
    /// Sampled ego odometry modes; mode 0 is the mean where one exists.
    pub ego_modes: Vec<Vec<OdomStep>>,
    pub targets: Vec<TargetForecast>,
}

/// Forecast one scene under one registered variant. Ego rows fill the ego
/// fields and leave `targets` empty; box rows fill both (their ego modes
/// are the conditioning the rollouts followed, empty for box baselines).
pub fn forecast_scene(
    settings: &EvalSettings,
    card: &VariantCard,
    params: Option<&ParamStore>,
    scene: &Scene,
    seed: u64,
) -> Result<SceneForecast> {
    let t_obs = settings.ego.t_obs;
    let horizon = settings.ego.horizon;
    if scene.len() < t_obs + horizon {
        return Err(Error::contract(format!(
            "scene {} has {} ticks, need {} observed + {} forecast",
            scene.seed,
            scene.len(),
            t_obs,
            horizon
        )));
    }
    if card.needs_checkpoint() && params.is_none() {
        return Err(Error::MissingCheckpoint(card.tag.to_string()));
    }
    let obs = &scene.odom[..t_obs];
    let future = &scene.odom_clean[t_obs..t_obs + horizon];
    let ego_model = EgoModel::new(settings.ego);
    let loc_model = LocModel::new(settings.loc);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut out = SceneForecast {
        scene_seed: scene.seed,
        variant: card.tag.to_string(),
        t_obs,
        horizon,
        obs_odom: obs.to_vec(),
        gt_future_odom: future.to_vec(),
        ego_fused: Vec::new(),
        ego_modes: Vec::new(),
        targets: Vec::new(),
    };

    match (card.group, card.trained) {
        (Group::Ego, None) => {
            out.ego_modes = vec![const_vel_ego(obs, horizon)];
        }
        (Group::Ego, Some((unc, _))) => {
            let store = params.expect("checked above");
            let (fused, modes) = ego_modes_for(
                &ego_model,
                store,
                obs,
                unc,
                settings.k,
                settings.n_dropout,
                &mut rng,
            );
            out.ego_fused = fused;
            out.ego_modes = modes;
        }
        (Group::Boxes, trained) => {
            for track in &scene.targets {
                let boxes_obs = &track.boxes[..t_obs];
                let flows_obs = &track.flows[..t_obs];
                let gt_future_boxes = track.boxes_clean[t_obs..t_obs + horizon].to_vec();
                let (trajectories, fused) = match trained {
                    None => {
                        (vec![const_vel_boxes(boxes_obs, card.scaled_baseline, horizon)], vec![])
                    }
                    Some((unc, prior)) => {
                        let store = params.expect("checked above");
                        if out.ego_modes.is_empty() {
                            out.ego_modes = prior_modes_for(
                                &ego_model,
                                store,
                                obs,
                                unc,
                                prior,
                                future,
                                settings.k,
                                settings.n_dropout,
                                &mut rng,
                            );
                        }
                        let roll = settings_for(unc, settings.n_dropout);
                        let f = loc_model.sample_trajectories(
                            store,
                            boxes_obs,
                            flows_obs,
                            &out.ego_modes,
                            &roll,
                            &mut rng,
                        );
                        (f.trajectories, f.fused)
                    }
                };
                out.targets.push(TargetForecast {
                    obs_boxes: boxes_obs.to_vec(),
                    gt_future_boxes,
                    trajectories,
                    fused,
                });
            }
        }
    }
    Ok(out)
}

/// Forecast a whole scene set under one variant, on per-scene seeds drawn
/// from `settings.seed`, and in scene order.
pub fn forecast_scenes(
    settings: &EvalSettings,
    card: &VariantCard,
    params: Option<&ParamStore>,
    scenes: &[Scene],
) -> Result<Vec<SceneForecast>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let seeds: Vec<u64> = scenes.iter().map(|_| rng.gen()).collect();
    scenes
        .iter()
        .zip(seeds)
        .map(|(scene, seed)| forecast_scene(settings, card, params, scene, seed))
        .collect()
}

/// Write a dump: header line, then one scene forecast per line.
pub fn write_forecasts(
    path: &Path,
    settings: &EvalSettings,
    variant: &str,
    forecasts: &[SceneForecast],
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = DumpHeader {
        format: DUMP_TAG.to_string(),
        version: DUMP_VERSION,
        variant: variant.to_string(),
        k: settings.k,
        n_dropout: settings.n_dropout,
        seed: settings.seed,
        config_hash: settings.config_hash.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("could not encode dump header: {e}"),
    })?;
    w.write_all(b"\n")?;
    for f in forecasts {
        serde_json::to_writer(&mut w, f).map_err(|e| Error::Parse {
            line: 1,
            msg: format!("could not encode forecast for scene {}: {e}", f.scene_seed),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dump back; the header must carry the expected format tag and
/// version.
pub fn read_forecasts(path: &Path) -> Result<(DumpHeader, Vec<SceneForecast>)> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let first = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(Error::Parse { line: 1, msg: "empty forecast dump".to_string() });
        }
    };
    let header: DumpHeader = serde_json::from_str(&first)
        .map_err(|e| Error::Parse { line: 1, msg: format!("bad dump header: {e}") })?;
    if header.format != DUMP_TAG || header.version != DUMP_VERSION {
        return Err(Error::Format {
            expected: format!("{DUMP_TAG} v{DUMP_VERSION}"),
            found: format!("{} v{}", header.format, header.version),
        });
    }

    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: SceneForecast = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 2,
            msg: format!("bad forecast line: {e}"),
        })?;
        out.push(f);
    }
    Ok((header, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ego::EgoConfig;
    use crate::loc::LocConfig;
    use crate::synth::{generate_scene, EgoKind, ScenarioConfig, TargetKind};
    use crate::variants;

    fn settings() -> EvalSettings {
        EvalSettings {
            ego: EgoConfig { embed_dim: 4, hidden_dim: 8, head_hidden: 6, ..EgoConfig::default() },
            loc: LocConfig { hidden_dim: 8, head_hidden: 6, ..LocConfig::default() },
            k: 3,
            n_dropout: 2,
            seed: 5,
            dataset_id: "dump-test".to_string(),
            config_hash: "beef".to_string(),
        }
    }

    fn scene(seed: u64) -> Scene {
        let cfg = ScenarioConfig::for_kinds(EgoKind::LeftTurn, TargetKind::CrossingLeft);
        generate_scene(&cfg, seed).unwrap()
    }

    fn params(s: &EvalSettings, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EgoModel::new(s.ego).init_params(&mut store, &mut rng);
        LocModel::new(s.loc).init_params(&mut store, &mut rng);
        store
    }

    #[test]
    fn ego_and_box_rows_fill_the_right_fields() {
        let s = settings();
        let sc = scene(3);
        let store = params(&s, 7);

        let ego = forecast_scene(&s, &variants::find("rnn-ae").unwrap(), Some(&store), &sc, 1)
            .unwrap();
        assert_eq!(ego.ego_modes.len(), 3);
        assert_eq!(ego.ego_fused.len(), s.ego.horizon);
        assert!(ego.targets.is_empty());

        let boxes =
            forecast_scene(&s, &variants::find("rnn-box-ae").unwrap(), Some(&store), &sc, 1)
                .unwrap();
        assert_eq!(boxes.targets.len(), 1);
        let t = &boxes.targets[0];
        assert_eq!(t.trajectories.len(), 3);
        for traj in &t.trajectories {
            assert_eq!(traj.len(), s.ego.horizon);
        }
        assert_eq!(t.gt_future_boxes.len(), s.ego.horizon);

        let baseline =
            forecast_scene(&s, &variants::find("const-vel-box").unwrap(), None, &sc, 1).unwrap();
        assert!(baseline.ego_fused.is_empty() && baseline.ego_modes.is_empty());
        assert_eq!(baseline.targets[0].trajectories.len(), 1);
        assert!(baseline.targets[0].fused.is_empty());
    }

    #[test]
    fn missing_parameters_are_reported_as_a_missing_checkpoint() {
        let s = settings();
        let sc = scene(4);
        let err =
            forecast_scene(&s, &variants::find("rnn").unwrap(), None, &sc, 1).unwrap_err();
        match err {
            Error::MissingCheckpoint(tag) => assert_eq!(tag, "rnn"),
            other => panic!("expected missing checkpoint, got {other}"),
        }
    }

    #[test]
    fn dumps_round_trip_bit_exactly() {
        let s = settings();
        let scenes: Vec<Scene> = (0..2).map(scene).collect();
        let store = params(&s, 9);
        let card = variants::find("rnn-box-ae").unwrap();
        let forecasts = forecast_scenes(&s, &card, Some(&store), &scenes).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        write_forecasts(&path, &s, card.tag, &forecasts).unwrap();
        let (header, back) = read_forecasts(&path).unwrap();
        assert_eq!(header.variant, "rnn-box-ae");
        assert_eq!(header.k, 3);
        assert_eq!(back, forecasts);
    }

    #[test]
    fn forecasting_is_deterministic() {
        let s = settings();
        let scenes: Vec<Scene> = (0..2).map(scene).collect();
        let store = params(&s, 9);
        let card = variants::find("rnn-ep").unwrap();
        let a = forecast_scenes(&s, &card, Some(&store), &scenes).unwrap();
        let b = forecast_scenes(&s, &card, Some(&store), &scenes).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stale_or_broken_dumps_fail_loudly() {
        let dir = tempfile::tempdir().unwrap();

        let empty = dir.path().join("empty.jsonl");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(read_forecasts(&empty), Err(Error::Parse { line: 1, .. })));

        let wrong = dir.path().join("wrong.jsonl");
        std::fs::write(
            &wrong,
            "{\"format\":\"egocast-forecasts\",\"version\":9,\"variant\":\"x\",\"k\":1,\
             \"n_dropout\":1,\"seed\":0,\"config_hash\":\"\"}\n",
        )
        .unwrap();
        match read_forecasts(&wrong).unwrap_err() {
            Error::Format { expected, found } => {
                assert!(expected.contains("v1"));
                assert!(found.contains("v9"));
            }
            other => panic!("expected a format error, got {other}"),
        }

        let garbled = dir.path().join("garbled.jsonl");
        std::fs::write(
            &garbled,
            "{\"format\":\"egocast-forecasts\",\"version\":1,\"variant\":\"x\",\"k\":1,\
             \"n_dropout\":1,\"seed\":0,\"config_hash\":\"\"}\nnot json\n",
        )
        .unwrap();
        assert!(matches!(read_forecasts(&garbled), Err(Error::Parse { line: 2, .. })));
    }
}
