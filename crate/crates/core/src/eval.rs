//! Forecast quality metrics and the benchmark harness.
//!
//! Point-sequence errors (ADE/FDE), final-box overlap (FIOU), best-of-k
//! selection, and `run_benchmark`, which scores registered variants on a
//! scene set and renders the result as an aligned table or tab-separated
//! rows. Ego errors are meters in the ground plane after dead reckoning;
//! box errors are pixels on the full image frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ego::{
    const_vel_ego, dead_reckon, fuse_passes, sample_modes, EgoConfig, EgoModel, OdomStep, Pose2D,
    DT,
};
use crate::error::{Error, Result};
use crate::loc::{const_vel_boxes, BoxState, LocConfig, LocModel, SampleSettings};
use crate::nn::{DropoutSpec, ParamStore};
use crate::synth::Scene;
use crate::train::{PriorSource, UncMode};
use crate::uncertainty::FusedGaussian;
use crate::variants::{Group, VariantCard};

// ---- point and box metrics -------------------------------------------------

/// Average and final displacement error between two equal-length, non-empty
/// point sequences.
pub fn ade_fde(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::contract(format!(
            "ade_fde: {} predicted points vs {} reference points",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("ade_fde: empty sequences"));
    }
    let mut sum = 0.0;
    let mut last = 0.0;
    for (p, q) in pred.iter().zip(gt) {
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        sum += d;
        last = d;
    }
    Ok((sum / pred.len() as f64, last))
}

/// Intersection-over-union of two axis-aligned boxes given as center and
/// size. Identical boxes score exactly 1, disjoint boxes exactly 0.
pub fn fiou(a: &BoxState, b: &BoxState) -> f64 {
    let (ax0, ay0, ax1, ay1) = corners(a);
    let (bx0, by0, bx1, by1) = corners(b);
    let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn corners(b: &BoxState) -> (f64, f64, f64, f64) {
    (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0)
}

/// Minimum of `metric` over candidates, with the index of the winner.
/// Maxima (e.g. overlap scores) are minima of the negated metric.
pub fn best_of_k<T>(candidates: &[T], metric: impl Fn(&T) -> f64) -> (f64, usize) {
    assert!(!candidates.is_empty(), "best_of_k: no candidates");
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (i, c) in candidates.iter().enumerate() {
        let v = metric(c);
        if v < best {
            best = v;
            arg = i;
        }
    }
    (best, arg)
}

// ---- variant-aware forecasting ----------------------------------------------

/// Per-step fused moments and sampled odometry modes for one uncertainty
/// treatment. Mean-only models carry no sampling machinery and return the
/// single mean mode; for the others, mode 0 is the fused mean and `k − 1`
/// further modes are sampled.
pub fn ego_modes_for(
    model: &EgoModel,
    params: &ParamStore,
    obs: &[OdomStep],
    unc: UncMode,
    k: usize,
    n_dropout: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<FusedGaussian>, Vec<Vec<OdomStep>>) {
    let fused = match unc {
        UncMode::Mse => fuse_passes(&[model.run(params, obs, &DropoutSpec::off(), rng)], false),
        UncMode::Aleatoric => {
            fuse_passes(&[model.run(params, obs, &DropoutSpec::off(), rng)], true)
        }
        UncMode::Epistemic => fuse_passes(&model.mc_runs(params, obs, n_dropout, rng), false),
        UncMode::AleatoricEpistemic => {
            fuse_passes(&model.mc_runs(params, obs, n_dropout, rng), true)
        }
    };
    let k_eff = if unc == UncMode::Mse { 1 } else { k };
    let modes = sample_modes(&fused, k_eff, rng);
    (fused, modes)
}

/// How one uncertainty treatment rolls out box trajectories.
pub fn settings_for(unc: UncMode, n_dropout: usize) -> SampleSettings {
    match unc {
        UncMode::Mse => SampleSettings::mean(),
        UncMode::Aleatoric => SampleSettings::head_sigma_only(),
        UncMode::Epistemic => SampleSettings::mc_spread_only(n_dropout),
        UncMode::AleatoricEpistemic => SampleSettings::mc(n_dropout),
    }
}

/// The per-step ego conditioning sequences a box rollout follows. Mean-only
/// models get their single conditioning; stochastic models get `k` modes —
/// distinct samples when the prior is sampled, the same conditioning
/// repeated otherwise (the spread then comes from the rollout itself).
pub fn prior_modes_for(
    ego_model: &EgoModel,
    params: &ParamStore,
    obs: &[OdomStep],
    unc: UncMode,
    prior: PriorSource,
    clean_future: &[OdomStep],
    k: usize,
    n_dropout: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<OdomStep>> {
    let horizon = ego_model.cfg.horizon;
    let base: Vec<Vec<OdomStep>> = match prior {
        PriorSource::None => vec![vec![OdomStep { v: 0.0, yaw_rate: 0.0 }; horizon]],
        PriorSource::GroundTruth => vec![clean_future[..horizon].to_vec()],
        PriorSource::PredictedMean => {
            vec![ego_modes_for(ego_model, params, obs, unc, 1, n_dropout, rng).1.remove(0)]
        }
        PriorSource::PredictedSampled => {
            ego_modes_for(ego_model, params, obs, unc, k, n_dropout, rng).1
        }
    };
    if unc == UncMode::Mse || base.len() > 1 {
        base
    } else {
        vec![base[0].clone(); k]
    }
}

// ---- benchmark harness -------------------------------------------------------

/// Everything `run_benchmark` needs besides the scenes and the rows.
#[derive(Clone, Debug)]
pub struct EvalSettings {
    pub ego: EgoConfig,
    pub loc: LocConfig,
    /// Samples per stochastic variant (deterministic rows report 1).
    pub k: usize,
    /// Monte-Carlo dropout passes per fused step.
    pub n_dropout: usize,
    pub seed: u64,
    /// Opaque label for the scene set being scored.
    pub dataset_id: String,
    /// Hash of the effective run configuration.
    pub config_hash: String,
}

/// Best-of-k point errors for one row. `ade_at_best_fde` is the auxiliary
/// joint view: the ADE of the sample whose FDE won.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajMetrics {
    pub ade: f64,
    pub fde: f64,
    pub ade_at_best_fde: f64,
}

/// Best-of-k pixel errors and final-box overlap for one row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxMetrics {
    pub ade: f64,
    pub fde: f64,
    pub fiou: f64,
    pub ade_at_best_fde: f64,
}

/// One scored row of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub tag: String,
    pub group: Group,
    pub k_used: usize,
    pub ego: Option<TrajMetrics>,
    pub boxes: Option<BoxMetrics>,
}

/// A full benchmark result: fixed row order, all values finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub k: usize,
    pub n_dropout: usize,
    pub horizon: usize,
    pub rows: Vec<MetricRow>,
}

/// Score each row on every scene. Rows keep their input order; scenes are
/// evaluated in parallel on pre-drawn seeds, so the report is a pure
/// function of (scenes, rows, settings). Trained rows must come with
/// parameters; a missing store is reported as a missing checkpoint naming
/// the row.
pub fn run_benchmark(
    settings: &EvalSettings,
    scenes: &[Scene],
    rows: &[(VariantCard, Option<ParamStore>)],
) -> Result<MetricReport> {
    if scenes.is_empty() {
        return Err(Error::contract("run_benchmark: no scenes to score"));
    }
    let ego_model = EgoModel::new(settings.ego);
    let loc_model = LocModel::new(settings.loc);

    let mut out = Vec::with_capacity(rows.len());
    for (row_idx, (card, params)) in rows.iter().enumerate() {
        if card.needs_checkpoint() && params.is_none() {
            return Err(Error::MissingCheckpoint(card.tag.to_string()));
        }
        let mut row_rng = ChaCha8Rng::seed_from_u64(settings.seed);
        row_rng.set_stream(row_idx as u64 + 1);
        let scene_seeds: Vec<u64> = scenes.iter().map(|_| row_rng.gen()).collect();

        let row = match card.group {
            Group::Ego => {
                eval_ego_row(settings, &ego_model, scenes, &scene_seeds, card, params.as_ref())?
            }
            Group::Boxes => eval_box_row(
                settings,
                &ego_model,
                &loc_model,
                scenes,
                &scene_seeds,
                card,
                params.as_ref(),
            )?,
        };
        check_row(&row)?;
        out.push(row);
    }

    Ok(MetricReport {
        dataset_id: settings.dataset_id.clone(),
        config_hash: settings.config_hash.clone(),
        seed: settings.seed,
        k: settings.k,
        n_dropout: settings.n_dropout,
        horizon: settings.ego.horizon,
        rows: out,
    })
}

fn check_row(row: &MetricRow) -> Result<()> {
    let bad = |what: &str| {
        Err(Error::Numeric {
            op: "run_benchmark",
            msg: format!("non-finite or out-of-range {what} for `{}`", row.tag),
        })
    };
    if let Some(e) = &row.ego {
        if !(e.ade.is_finite() && e.fde.is_finite() && e.ade_at_best_fde.is_finite()) {
            return bad("ego metric");
        }
    }
    if let Some(b) = &row.boxes {
        if !(b.ade.is_finite() && b.fde.is_finite() && b.ade_at_best_fde.is_finite()) {
            return bad("box metric");
        }
        if !(b.fiou.is_finite() && (0.0..=1.0).contains(&b.fiou)) {
            return bad("FIOU");
        }
    }
    Ok(())
}

fn window_lengths(scene: &Scene, t_obs: usize, horizon: usize) -> Result<()> {
    if scene.len() < t_obs + horizon {
        return Err(Error::contract(format!(
            "scene {} has {} ticks, need {} observed + {} forecast",
            scene.seed,
            scene.len(),
            t_obs,
            horizon
        )));
    }
    Ok(())
}

fn eval_ego_row(
    settings: &EvalSettings,
    model: &EgoModel,
    scenes: &[Scene],
    scene_seeds: &[u64],
    card: &VariantCard,
    params: Option<&ParamStore>,
) -> Result<MetricRow> {
    let t_obs = settings.ego.t_obs;
    let horizon = settings.ego.horizon;
    let k_used = match card.trained {
        None | Some((UncMode::Mse, _)) => 1,
        Some(_) => settings.k,
    };

    let per_scene: Result<Vec<(f64, f64, f64)>> = scenes
        .par_iter()
        .zip(scene_seeds)
        .map(|(scene, &seed)| {
            window_lengths(scene, t_obs, horizon)?;
            let obs = &scene.odom[..t_obs];
            let future = &scene.odom_clean[t_obs..t_obs + horizon];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);

            let modes: Vec<Vec<OdomStep>> = match card.trained {
                None => vec![const_vel_ego(obs, horizon)],
                Some((unc, _)) => {
                    let store = params.expect("checked by run_benchmark");
                    ego_modes_for(model, store, obs, unc, settings.k, settings.n_dropout, &mut rng)
                        .1
                }
            };

            let gt = dead_reckon(future, &Pose2D::identity());
            let mut cands = Vec::with_capacity(modes.len());
            for m in &modes {
                let pred = dead_reckon(m, &Pose2D::identity());
                cands.push(ade_fde(&pred, &gt)?);
            }
            let (ade, _) = best_of_k(&cands, |c| c.0);
            let (fde, at) = best_of_k(&cands, |c| c.1);
            Ok((ade, fde, cands[at].0))
        })
        .collect();
    let per_scene = per_scene?;

    let n = per_scene.len() as f64;
    let sum = per_scene.iter().fold([0.0; 3], |a, &(x, y, z)| [a[0] + x, a[1] + y, a[2] + z]);
    Ok(MetricRow {
        tag: card.tag.to_string(),
        group: card.group,
        k_used,
        ego: Some(TrajMetrics { ade: sum[0] / n, fde: sum[1] / n, ade_at_best_fde: sum[2] / n }),
        boxes: None,
    })
}

fn eval_box_row(
    settings: &EvalSettings,
    ego_model: &EgoModel,
    loc_model: &LocModel,
    scenes: &[Scene],
    scene_seeds: &[u64],
    card: &VariantCard,
    params: Option<&ParamStore>,
) -> Result<MetricRow> {
    let t_obs = settings.loc.t_obs;
    let horizon = settings.loc.horizon;
    let k_used = match card.trained {
        None | Some((UncMode::Mse, _)) => 1,
        Some(_) => settings.k,
    };

    let per_scene: Result<Vec<Vec<[f64; 4]>>> = scenes
        .par_iter()
        .zip(scene_seeds)
        .map(|(scene, &seed)| {
            window_lengths(scene, t_obs, horizon)?;
            let obs = &scene.odom[..t_obs];
            let future = &scene.odom_clean[t_obs..t_obs + horizon];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);

            let mut samples = Vec::with_capacity(scene.targets.len());
            for track in &scene.targets {
                let boxes_obs = &track.boxes[..t_obs];
                let flows_obs = &track.flows[..t_obs];
                let gt_px: Vec<BoxState> = track.boxes_clean[t_obs..t_obs + horizon]
                    .iter()
                    .map(|b| b.to_pixels())
                    .collect();
                let gt_centers: Vec<[f64; 2]> = gt_px.iter().map(|b| [b.cx, b.cy]).collect();

                let trajectories: Vec<Vec<BoxState>> = match card.trained {
                    None => {
                        vec![const_vel_boxes(boxes_obs, card.scaled_baseline, horizon)]
                    }
                    Some((unc, prior)) => {
                        let store = params.expect("checked by run_benchmark");
                        let modes = prior_modes_for(
                            ego_model,
                            store,
                            obs,
                            unc,
                            prior,
                            future,
                            settings.k,
                            settings.n_dropout,
                            &mut rng,
                        );
                        let roll = settings_for(unc, settings.n_dropout);
                        loc_model
                            .sample_trajectories(store, boxes_obs, flows_obs, &modes, &roll, &mut rng)
                            .trajectories
                    }
                };

                let mut cands = Vec::with_capacity(trajectories.len());
                for traj in &trajectories {
                    let px: Vec<BoxState> = traj.iter().map(|b| b.to_pixels()).collect();
                    let centers: Vec<[f64; 2]> = px.iter().map(|b| [b.cx, b.cy]).collect();
                    let (ade, fde) = ade_fde(&centers, &gt_centers)?;
                    let overlap = fiou(px.last().unwrap(), gt_px.last().unwrap());
                    cands.push((ade, fde, overlap));
                }
                let (ade, _) = best_of_k(&cands, |c| c.0);
                let (fde, at) = best_of_k(&cands, |c| c.1);
                // FIOU is a score, so its best sample maximizes it.
                let (neg, _) = best_of_k(&cands, |c| -c.2);
                samples.push([ade, fde, -neg, cands[at].0]);
            }
            Ok(samples)
        })
        .collect();

    let flat: Vec<[f64; 4]> = per_scene?.into_iter().flatten().collect();
    if flat.is_empty() {
        return Err(Error::contract(format!("no target tracks to score for `{}`", card.tag)));
    }
    let n = flat.len() as f64;
    let sum = flat.iter().fold([0.0; 4], |a, s| [a[0] + s[0], a[1] + s[1], a[2] + s[2], a[3] + s[3]]);
    Ok(MetricRow {
        tag: card.tag.to_string(),
        group: card.group,
        k_used,
        ego: None,
        boxes: Some(BoxMetrics {
            ade: sum[0] / n,
            fde: sum[1] / n,
            fiou: sum[2] / n,
            ade_at_best_fde: sum[3] / n,
        }),
    })
}

// ---- rendering -----------------------------------------------------------------

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:>9.4}"),
        None => format!("{:>9}", "-"),
    }
}

/// Aligned human-readable table with provenance header and footnotes.
pub fn render_table(r: &MetricReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "dataset {}   seed {}   k {}   n-dropout {}   config {}\n\n",
        r.dataset_id, r.seed, r.k, r.n_dropout, r.config_hash
    ));
    s.push_str(&format!(
        "{:<22}  {:<5}  {:>3}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "variant", "group", "k", "ADE", "FDE", "FIOU", "ADE@bFDE"
    ));
    s.push_str(&format!("{}\n", "-".repeat(22 + 2 + 5 + 2 + 3 + 4 * 11)));
    for row in &r.rows {
        let (ade, fde, fi, at) = match (&row.ego, &row.boxes) {
            (Some(e), _) => (Some(e.ade), Some(e.fde), None, Some(e.ade_at_best_fde)),
            (_, Some(b)) => (Some(b.ade), Some(b.fde), Some(b.fiou), Some(b.ade_at_best_fde)),
            _ => (None, None, None, None),
        };
        s.push_str(&format!(
            "{:<22}  {:<5}  {:>3}  {}  {}  {}  {}\n",
            row.tag,
            row.group.label(),
            row.k_used,
            fmt_cell(ade),
            fmt_cell(fde),
            fmt_cell(fi),
            fmt_cell(at)
        ));
    }
    let secs = r.horizon as f64 * DT;
    s.push_str(&format!(
        "\nego rows: meters over the {secs:.1} s horizon. box rows: pixels on a 1920x1200 frame; \
         FIOU is the intersection-over-union of the final box.\n\
         best-of-k: ADE, FDE and FIOU each take their best sample independently; ADE@bFDE is \
         the ADE of the sample whose FDE won.\n\
         context: on the real-imagery benchmark these rows mirror (not comparable to this \
         synthetic set), the constant-velocity ego baseline scores ADE 0.3089 / FDE 0.8386 m, \
         the full ego model ADE 0.1324 / FDE 0.3031 m, and the full box model ADE 49.02 px / \
         FDE 100.26 px / FIOU 0.5194.\n"
    ));
    s
}

/// Tab-separated rows with a header line; one line per variant, shortest
/// round-trip float formatting, empty cells where a metric does not apply.
pub fn render_tsv(r: &MetricReport) -> String {
    let mut s = String::new();
    s.push_str(
        "dataset\tconfig\tseed\tk\tn_dropout\tgroup\ttag\tk_used\tego_ade\tego_fde\t\
         ego_ade_at_best_fde\tbox_ade\tbox_fde\tfiou\tbox_ade_at_best_fde\n",
    );
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in &r.rows {
        let e = |f: fn(&TrajMetrics) -> f64| row.ego.as_ref().map(f);
        let b = |f: fn(&BoxMetrics) -> f64| row.boxes.as_ref().map(f);
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.dataset_id,
            r.config_hash,
            r.seed,
            r.k,
            r.n_dropout,
            row.group.label(),
            row.tag,
            row.k_used,
            cell(e(|m| m.ade)),
            cell(e(|m| m.fde)),
            cell(e(|m| m.ade_at_best_fde)),
            cell(b(|m| m.ade)),
            cell(b(|m| m.fde)),
            cell(b(|m| m.fiou)),
            cell(b(|m| m.ade_at_best_fde)),
        ));
    }
    s
}
