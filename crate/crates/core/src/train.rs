//! Optimization harness: RMSProp, step-wise learning-rate decay, and the
//! two-phase training protocol (ego stream first, then both streams jointly
//! under a weighted loss).
//!
//! Training is deterministic given (seed, dataset, config): example order,
//! dropout masks, and the gradient reduction order are all derived from the
//! config seed, and batch gradients are summed in a fixed order even though
//! the per-example passes run in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ego::{EgoModel, OdomStep, V_SCALE, YAW_SCALE};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::loc::{scaled_prior_nodes, BoxState, FlowFeature, LocModel};
use crate::nn::{DropoutMode, DropoutSpec, ParamStore};
use crate::synth::Scene;
use crate::tensor::Array;
use crate::uncertainty::RHO_MAX;

/// Hyperparameters shared by both training phases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    /// RMSProp second-moment decay.
    pub rms_decay: f64,
    /// RMSProp denominator offset.
    pub rms_eps: f64,
    /// Epochs for the ego-only phase.
    pub ego_epochs: usize,
    /// Epochs for the joint phase.
    pub joint_epochs: usize,
    /// The learning rate is divided by this factor every `lr_period` epochs
    /// during the ego phase ...
    pub ego_lr_factor: f64,
    /// ... and by this one during the joint phase.
    pub joint_lr_factor: f64,
    pub lr_period: usize,
    /// Weight of the ego-motion term in the joint loss.
    pub lambda_ego: f64,
    /// Weight of the box-localization term in the joint loss.
    pub lambda_box: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            base_lr: 1e-3,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            ego_epochs: 100,
            joint_epochs: 100,
            ego_lr_factor: 2.0,
            joint_lr_factor: 5.0,
            lr_period: 20,
            lambda_ego: 0.2,
            lambda_box: 1.0,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::contract(format!(
                "base_lr must be positive and finite, got {}",
                self.base_lr
            )));
        }
        if !(self.lambda_ego >= 0.0 && self.lambda_box >= 0.0) {
            return Err(Error::contract(format!(
                "loss weights must be non-negative, got λ_ego={} λ_box={}",
                self.lambda_ego, self.lambda_box
            )));
        }
        if self.batch_size == 0 || self.lr_period == 0 {
            return Err(Error::contract(
                "batch_size and lr_period must be at least 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::contract(format!(
                "rms_decay must lie in [0, 1), got {}",
                self.rms_decay
            )));
        }
        if !(self.ego_lr_factor >= 1.0 && self.joint_lr_factor >= 1.0) {
            return Err(Error::contract(
                "learning-rate decay factors must be ≥ 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Which uncertainty machinery a trained model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UncMode {
    /// Mean-only fit, no uncertainty (MSE objective).
    Mse,
    /// Heteroscedastic NLL objective; no test-time dropout sampling.
    Aleatoric,
    /// MSE objective; uncertainty from test-time dropout sampling only.
    Epistemic,
    /// Heteroscedastic NLL plus test-time dropout sampling.
    AleatoricEpistemic,
}

impl UncMode {
    /// Whether training fits the full heteroscedastic likelihood.
    pub fn uses_nll(self) -> bool {
        matches!(self, UncMode::Aleatoric | UncMode::AleatoricEpistemic)
    }

    /// Whether evaluation samples dropout to expose model uncertainty.
    pub fn samples_dropout(self) -> bool {
        matches!(self, UncMode::Epistemic | UncMode::AleatoricEpistemic)
    }
}

/// Where the localization decoder's per-step ego-motion conditioning comes
/// from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorSource {
    /// Zeros: the box stream sees no ego motion at all.
    None,
    /// The clean future odometry (diagnostic upper bound).
    GroundTruth,
    /// The ego stream's predicted means, differentiably in-graph.
    PredictedMean,
    /// A reparameterized draw from the ego stream's predicted per-step
    /// distribution, differentiable through mean and spread.
    PredictedSampled,
}

/// One trainable/evaluable model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVariant {
    /// Short tag used in reports and checkpoint names.
    pub tag: String,
    pub unc: UncMode,
    pub prior: PriorSource,
}

impl ModelVariant {
    pub fn new(tag: &str, unc: UncMode, prior: PriorSource) -> Self {
        ModelVariant {
            tag: tag.to_string(),
            unc,
            prior,
        }
    }
}

/// RMSProp accumulator, one slot per parameter component.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsState {
    s: ParamStore,
}

impl RmsState {
    /// Zero-initialized state matching `params`' shapes.
    pub fn new(params: &ParamStore) -> RmsState {
        let mut s = ParamStore::new();
        for (name, value) in params.iter() {
            s.insert(name, Array::zeros(value.shape().to_vec()));
        }
        RmsState { s }
    }
}

/// One RMSProp update over every parameter.
///
/// `grads` must mirror `params` name-for-name and shape-for-shape. Non-finite
/// gradients abort the step before anything is mutated.
pub fn rmsprop_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut RmsState,
    lr: f64,
    decay: f64,
    eps: f64,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::Numeric {
                op: "rmsprop_step",
                msg: format!("non-finite gradient for parameter `{name}`"),
            });
        }
    }
    for (name, value) in params.iter_mut() {
        let g = grads.get(name);
        assert_eq!(
            g.shape(),
            value.shape(),
            "rmsprop_step: gradient shape mismatch for `{name}`"
        );
        let s = state.s.get_mut(name);
        for ((p, &gi), si) in value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(s.data_mut().iter_mut())
        {
            *si = decay * *si + (1.0 - decay) * gi * gi;
            *p -= lr * gi / (si.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step-decayed learning rate: `base / factor^⌊epoch/period⌋`.
pub fn lr_at(epoch: usize, base: f64, factor: f64, period: usize) -> f64 {
    base / factor.powi((epoch / period) as i32)
}

/// Scales `grads` so its global L2 norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, g) in grads.iter() {
        sq += g.data().iter().map(|x| x * x).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= k;
            }
        }
    }
    norm
}

/// A `ParamStore` of zeros with the same names and shapes as `like`.
fn zeros_like(like: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, value) in like.iter() {
        out.insert(name, Array::zeros(value.shape().to_vec()));
    }
    out
}

/// Reads every parameter gradient out of a backpropagated graph, in the
/// store's (sorted) name order.
fn collect_grads(g: &Graph, params: &ParamStore, bound: &crate::nn::Bound) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, value) in params.iter() {
        let node = bound.node(name);
        // A parameter the loss never touches keeps no gradient entry; it
        // contributes an exact zero.
        let grad = match g.grad(node) {
            Some(grad) => {
                debug_assert_eq!(grad.shape(), value.shape());
                grad.clone()
            }
            None => Array::zeros(value.shape().to_vec()),
        };
        out.insert(name, grad);
    }
    out
}

/// One row of a training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Result of a training phase.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub final_params: ParamStore,
    /// Parameters at the epoch with the best validation loss.
    pub best_params: ParamStore,
    pub best_epoch: usize,
    pub curve: Vec<EpochRow>,
}

/// The slices of a scene a training pass consumes.
struct EgoWindow<'a> {
    obs: &'a [OdomStep],
    future: &'a [OdomStep],
}

fn ego_window<'a>(scene: &'a Scene, t_obs: usize, horizon: usize) -> Result<EgoWindow<'a>> {
    if scene.len() < t_obs + horizon {
        return Err(Error::contract(format!(
            "scene {} has {} ticks, need {} (observation) + {} (horizon)",
            scene.seed,
            scene.len(),
            t_obs,
            horizon
        )));
    }
    Ok(EgoWindow {
        obs: &scene.odom[..t_obs],
        future: &scene.odom_clean[t_obs..t_obs + horizon],
    })
}

struct JointWindow<'a> {
    ego: EgoWindow<'a>,
    boxes_obs: &'a [BoxState],
    flows_obs: &'a [FlowFeature],
    future_boxes: &'a [BoxState],
}

fn joint_window<'a>(scene: &'a Scene, t_obs: usize, horizon: usize) -> Result<JointWindow<'a>> {
    let ego = ego_window(scene, t_obs, horizon)?;
    let track = scene
        .targets
        .first()
        .ok_or_else(|| Error::contract(format!("scene {} has no target track", scene.seed)))?;
    Ok(JointWindow {
        ego,
        boxes_obs: &track.boxes[..t_obs],
        flows_obs: &track.flows[..t_obs],
        future_boxes: &track.boxes_clean[t_obs..t_obs + horizon],
    })
}

/// Mean per-step ego loss over already-built prediction heads.
fn ego_loss_from_heads(
    g: &mut Graph,
    heads: &[NodeId],
    future: &[OdomStep],
    unc: UncMode,
) -> NodeId {
    let mut total = None;
    for (head, s) in heads.iter().zip(future) {
        let term = if unc.uses_nll() {
            crate::uncertainty::nll_node(g, *head, [s.v, s.yaw_rate])
        } else {
            let mu = g.slice(*head, 0, 2);
            crate::uncertainty::unit_nll_node(g, mu, [s.v, s.yaw_rate])
        };
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    let total = total.expect("ego_loss_from_heads: empty horizon");
    g.scale(total, 1.0 / future.len() as f64)
}

/// Mean per-step box loss (center factor + dimension factor) over
/// already-built heads.
fn loc_loss_from_heads(
    g: &mut Graph,
    heads: &[NodeId],
    future: &[BoxState],
    unc: UncMode,
) -> NodeId {
    let mut total = None;
    for (head, b) in heads.iter().zip(future) {
        let step = if unc.uses_nll() {
            let center = g.slice(*head, 0, 5);
            let dims = g.slice(*head, 5, 10);
            let lc = crate::uncertainty::nll_node(g, center, [b.cx, b.cy]);
            let ld = crate::uncertainty::nll_node(g, dims, [b.w, b.h]);
            g.add(lc, ld)
        } else {
            let c_mu = g.slice(*head, 0, 2);
            let d_mu = g.slice(*head, 5, 7);
            let lc = crate::uncertainty::unit_nll_node(g, c_mu, [b.cx, b.cy]);
            let ld = crate::uncertainty::unit_nll_node(g, d_mu, [b.w, b.h]);
            g.add(lc, ld)
        };
        total = Some(match total {
            None => step,
            Some(acc) => g.add(acc, step),
        });
    }
    let total = total.expect("loc_loss_from_heads: empty horizon");
    g.scale(total, 1.0 / future.len() as f64)
}

/// Per-step ego-motion conditioning nodes for the box decoder, scaled to the
/// same units as the ego encoder inputs.
fn prior_nodes(
    g: &mut Graph,
    source: PriorSource,
    ego_heads: &[NodeId],
    clean_future: &[OdomStep],
    rng: &mut ChaCha8Rng,
) -> Vec<NodeId> {
    match source {
        PriorSource::None => (0..clean_future.len())
            .map(|_| g.constant(Array::zeros(vec![2])))
            .collect(),
        PriorSource::GroundTruth => scaled_prior_nodes(g, clean_future),
        PriorSource::PredictedMean => {
            let inv = g.constant(Array::vector(vec![1.0 / V_SCALE, 1.0 / YAW_SCALE]));
            ego_heads
                .iter()
                .map(|&head| {
                    let mu = g.slice(head, 0, 2);
                    g.mul(mu, inv)
                })
                .collect()
        }
        PriorSource::PredictedSampled => {
            let inv = g.constant(Array::vector(vec![1.0 / V_SCALE, 1.0 / YAW_SCALE]));
            ego_heads
                .iter()
                .map(|&head| {
                    let sample = reparam_sample(g, head, rng);
                    g.mul(sample, inv)
                })
                .collect()
        }
    }
}

/// Differentiable draw from a 5-component head `[μ₁, μ₂, s₁, s₂, r]`:
/// `μ + L·z` with `L` the Cholesky factor of the predicted covariance and
/// `z` a fixed standard-normal draw.
fn reparam_sample(g: &mut Graph, head: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let z1: f64 = rng.sample(rand_distr::StandardNormal);
    let z2: f64 = rng.sample(rand_distr::StandardNormal);
    let mu = g.slice(head, 0, 2);
    let s = g.slice(head, 2, 4);
    let sig = g.exp(s);
    let sig1 = g.slice(sig, 0, 1);
    let sig2 = g.slice(sig, 1, 2);
    let r = g.slice(head, 4, 5);
    let t = g.tanh(r);
    let rho = g.scale(t, RHO_MAX);
    // √(1−ρ²) = exp(½·ln(1−ρ²)), keeping everything inside the graph.
    let rho2 = g.square(rho);
    let omr = g.one_minus(rho2);
    let lo = g.ln(omr);
    let half = g.scale(lo, 0.5);
    let root = g.exp(half);
    let d1 = g.scale(sig1, z1);
    let rs2 = g.mul(rho, sig2);
    let a = g.scale(rs2, z1);
    let qs2 = g.mul(root, sig2);
    let b = g.scale(qs2, z2);
    let d2 = g.add(a, b);
    let delta = g.concat(d1, d2);
    g.add(mu, delta)
}

/// Builds the ego-phase loss graph for one scene and returns the loss node.
fn ego_loss_graph(
    g: &mut Graph,
    model: &EgoModel,
    bound: &crate::nn::Bound,
    win: &EgoWindow,
    unc: UncMode,
    dropout: &DropoutSpec,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let w = model.bind(bound);
    let h = model.encode(g, &w, win.obs);
    let heads = model.predict(
        g,
        &w,
        h,
        *win.obs.last().expect("non-empty observation window"),
        dropout,
        win.future.len(),
        rng,
    );
    ego_loss_from_heads(g, &heads, win.future, unc)
}

/// Builds the joint loss graph for one scene:
/// `λ_ego · L_ego + λ_box · L_box`, with the box decoder conditioned on the
/// variant's ego prior.
#[allow(clippy::too_many_arguments)]
fn joint_loss_graph(
    g: &mut Graph,
    ego: &EgoModel,
    loc: &LocModel,
    bound: &crate::nn::Bound,
    win: &JointWindow,
    cfg: &TrainConfig,
    variant: &ModelVariant,
    dropout_ego: &DropoutSpec,
    dropout_loc: &DropoutSpec,
    rng: &mut ChaCha8Rng,
) -> NodeId {
    let ew = ego.bind(bound);
    let h = ego.encode(g, &ew, win.ego.obs);
    let ego_heads = ego.predict(
        g,
        &ew,
        h,
        *win.ego.obs.last().expect("non-empty observation window"),
        dropout_ego,
        win.ego.future.len(),
        rng,
    );
    let ego_term = ego_loss_from_heads(g, &ego_heads, win.ego.future, variant.unc);

    let prior = prior_nodes(g, variant.prior, &ego_heads, win.ego.future, rng);
    let lw = loc.bind(bound);
    let enc = loc.encode(g, &lw, win.boxes_obs, win.flows_obs);
    let loc_heads = loc.predict(
        g,
        &lw,
        enc,
        *win.boxes_obs.last().expect("non-empty box window"),
        &prior,
        dropout_loc,
        rng,
    );
    let loc_term = loc_loss_from_heads(g, &loc_heads, win.future_boxes, variant.unc);

    let we = g.scale(ego_term, cfg.lambda_ego);
    let wb = g.scale(loc_term, cfg.lambda_box);
    g.add(we, wb)
}

/// What one parallel training pass returns.
struct PassResult {
    loss: f64,
    grads: ParamStore,
}

/// Runs `build` over a batch of scene indices in parallel, backpropagates
/// each graph, and reduces the gradients in batch order.
fn batch_pass<F>(
    params: &ParamStore,
    batch: &[(usize, u64)],
    build: F,
) -> Result<(f64, ParamStore)>
where
    F: Fn(&mut Graph, &crate::nn::Bound, usize, &mut ChaCha8Rng) -> NodeId + Sync,
{
    let results: Vec<Result<PassResult>> = batch
        .par_iter()
        .map(|&(idx, seed)| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let loss_node = build(&mut g, &bound, idx, &mut rng);
            let loss = g.value(loss_node).item();
            g.backward(loss_node)?;
            Ok(PassResult {
                loss,
                grads: collect_grads(&g, params, &bound),
            })
        })
        .collect();

    let mut total_loss = 0.0;
    let mut grads = zeros_like(params);
    for r in results {
        let r = r?;
        total_loss += r.loss;
        for (name, g) in r.grads.iter() {
            grads.get_mut(name).add_assign(g);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    total_loss *= scale;
    for (_, g) in grads.iter_mut() {
        for x in g.data_mut() {
            *x *= scale;
        }
    }
    Ok((total_loss, grads))
}

/// Mean loss over a dataset with dropout off (deterministic).
fn eval_loss<F>(params: &ParamStore, n: usize, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &crate::nn::Bound, usize, &mut ChaCha8Rng) -> NodeId + Sync,
{
    if n == 0 {
        return Ok(f64::NAN);
    }
    let losses: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false);
            let mut rng = ChaCha8Rng::seed_from_u64(idx as u64);
            let loss = build(&mut g, &bound, idx, &mut rng);
            g.value(loss).item()
        })
        .collect();
    Ok(losses.iter().sum::<f64>() / n as f64)
}

/// Shared epoch loop for both phases.
#[allow(clippy::too_many_arguments)]
fn run_epochs<FT, FV>(
    mut params: ParamStore,
    n_train: usize,
    n_val: usize,
    epochs: usize,
    lr_factor: f64,
    cfg: &TrainConfig,
    train_build: FT,
    val_build: FV,
) -> Result<TrainOutcome>
where
    FT: Fn(&mut Graph, &crate::nn::Bound, usize, &mut ChaCha8Rng) -> NodeId + Sync,
    FV: Fn(&mut Graph, &crate::nn::Bound, usize, &mut ChaCha8Rng) -> NodeId + Sync,
{
    let mut state = RmsState::new(&params);
    let mut curve = Vec::with_capacity(epochs);
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;

    for epoch in 0..epochs {
        let lr = lr_at(epoch, cfg.base_lr, lr_factor, cfg.lr_period);
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        epoch_rng.set_stream(epoch as u64 + 1);
        for i in (1..order.len()).rev() {
            let j = epoch_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, u64)> =
                chunk.iter().map(|&i| (i, epoch_rng.gen())).collect();
            let (loss, mut grads) = batch_pass(&params, &batch, &train_build)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    msg: format!("training loss became {loss}"),
                });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            rmsprop_step(
                &mut params,
                &grads,
                &mut state,
                lr,
                cfg.rms_decay,
                cfg.rms_eps,
            )?;
            epoch_loss += loss;
            batches += 1.0;
        }
        let train_loss = epoch_loss / batches.max(1.0);

        let val_loss = if n_val > 0 {
            eval_loss(&params, n_val, &val_build)?
        } else {
            train_loss
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                msg: format!("validation loss became {val_loss}"),
            });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
        curve.push(EpochRow {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }

    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_epoch,
        curve,
    })
}

/// Phase one: trains the ego-motion stream alone.
///
/// Observation windows come from the noisy odometry channel; targets are the
/// clean future odometry. Returns the final and best-validation parameters
/// plus the full training curve.
pub fn train_ego(
    model: &EgoModel,
    train: &[Scene],
    val: &[Scene],
    cfg: &TrainConfig,
    variant: &ModelVariant,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training split is empty".to_string()));
    }
    let (t_obs, horizon) = (model.cfg.t_obs, model.cfg.horizon);
    let train_windows: Vec<EgoWindow> = train
        .iter()
        .map(|s| ego_window(s, t_obs, horizon))
        .collect::<Result<_>>()?;
    let val_windows: Vec<EgoWindow> = val
        .iter()
        .map(|s| ego_window(s, t_obs, horizon))
        .collect::<Result<_>>()?;

    let mut params = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    model.init_params(&mut params, &mut init_rng);

    let dropout = DropoutSpec::new(model.cfg.dropout_rate, DropoutMode::Train)?;
    let off = DropoutSpec::off();
    let unc = variant.unc;

    run_epochs(
        params,
        train_windows.len(),
        val_windows.len(),
        cfg.ego_epochs,
        cfg.ego_lr_factor,
        cfg,
        |g, bound, idx, rng| ego_loss_graph(g, model, bound, &train_windows[idx], unc, &dropout, rng),
        |g, bound, idx, rng| ego_loss_graph(g, model, bound, &val_windows[idx], unc, &off, rng),
    )
}

/// Phase two: joint optimization of both streams under
/// `λ_ego · L_ego + λ_box · L_box`, starting from pre-trained ego weights.
pub fn train_joint(
    ego: &EgoModel,
    loc: &LocModel,
    ego_params: &ParamStore,
    train: &[Scene],
    val: &[Scene],
    cfg: &TrainConfig,
    variant: &ModelVariant,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::contract("training split is empty".to_string()));
    }
    if ego.cfg.t_obs != loc.cfg.t_obs || ego.cfg.horizon != loc.cfg.horizon {
        return Err(Error::contract(format!(
            "ego and box streams disagree on the window: {}+{} vs {}+{}",
            ego.cfg.t_obs, ego.cfg.horizon, loc.cfg.t_obs, loc.cfg.horizon
        )));
    }
    let (t_obs, horizon) = (ego.cfg.t_obs, ego.cfg.horizon);
    let train_windows: Vec<JointWindow> = train
        .iter()
        .map(|s| joint_window(s, t_obs, horizon))
        .collect::<Result<_>>()?;
    let val_windows: Vec<JointWindow> = val
        .iter()
        .map(|s| joint_window(s, t_obs, horizon))
        .collect::<Result<_>>()?;

    let mut params = ego_params.clone();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    loc.init_params(&mut params, &mut init_rng);

    let d_ego = DropoutSpec::new(ego.cfg.dropout_rate, DropoutMode::Train)?;
    let d_loc = DropoutSpec::new(loc.cfg.dropout_rate, DropoutMode::Train)?;
    let off = DropoutSpec::off();

    run_epochs(
        params,
        train_windows.len(),
        val_windows.len(),
        cfg.joint_epochs,
        cfg.joint_lr_factor,
        cfg,
        |g, bound, idx, rng| {
            joint_loss_graph(
                g,
                ego,
                loc,
                bound,
                &train_windows[idx],
                cfg,
                variant,
                &d_ego,
                &d_loc,
                rng,
            )
        },
        |g, bound, idx, rng| {
            joint_loss_graph(
                g,
                ego,
                loc,
                bound,
                &val_windows[idx],
                cfg,
                variant,
                &off,
                &off,
                rng,
            )
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ego::EgoConfig;
    use crate::loc::LocConfig;
    use crate::synth::{generate_scene, EgoKind, ScenarioConfig, TargetKind};

    fn tiny_ego() -> EgoModel {
        EgoModel::new(EgoConfig {
            embed_dim: 6,
            hidden_dim: 8,
            head_hidden: 6,
            dropout_rate: 0.2,
            t_obs: 10,
            horizon: 20,
        })
    }

    fn tiny_loc() -> LocModel {
        LocModel::new(LocConfig {
            hidden_dim: 8,
            head_hidden: 6,
            dropout_rate: 0.2,
            t_obs: 10,
            horizon: 20,
        })
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            ego_epochs: 3,
            joint_epochs: 3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn scenes(n: usize, base: u64) -> Vec<Scene> {
        (0..n)
            .map(|i| {
                let kinds = [
                    (EgoKind::Straight, TargetKind::Leading),
                    (EgoKind::LeftTurn, TargetKind::CrossingLeft),
                    (EgoKind::Stop, TargetKind::Stopped),
                    (EgoKind::RightTurn, TargetKind::Oncoming),
                ];
                let (e, t) = kinds[i % kinds.len()];
                generate_scene(&ScenarioConfig::for_kinds(e, t), base + i as u64).unwrap()
            })
            .collect()
    }

    fn single_param_store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Array::vector(values.to_vec()));
        s
    }

    #[test]
    fn rmsprop_first_step_matches_the_update_rule() {
        let mut params = single_param_store(&[1.0]);
        let grads = single_param_store(&[1.0]);
        let mut state = RmsState::new(&params);
        rmsprop_step(&mut params, &grads, &mut state, 1e-3, 0.99, 1e-8).unwrap();
        // s = 0.01·1² = 0.01, Δp = −0.001/(0.1 + 1e-8).
        let expected = 1.0 - 1e-3 / (0.1 + 1e-8);
        assert!((params.get("p").data()[0] - expected).abs() < 1e-15);
        assert!((state.s.get("p").data()[0] - 0.01).abs() < 1e-16);
    }

    #[test]
    fn rmsprop_zero_gradient_leaves_params_but_decays_state() {
        let mut params = single_param_store(&[2.5, -3.0]);
        let mut state = RmsState::new(&params);
        state.s.get_mut("p").data_mut().copy_from_slice(&[0.04, 0.16]);
        let grads = single_param_store(&[0.0, 0.0]);
        rmsprop_step(&mut params, &grads, &mut state, 1e-2, 0.99, 1e-8).unwrap();
        assert_eq!(params.get("p").data(), &[2.5, -3.0]);
        assert_eq!(state.s.get("p").data(), &[0.99 * 0.04, 0.99 * 0.16]);
    }

    #[test]
    fn rmsprop_equal_gradients_produce_equal_updates() {
        let mut params = single_param_store(&[1.0, 1.0, -4.0]);
        let grads = single_param_store(&[0.3, 0.3, 0.3]);
        let mut state = RmsState::new(&params);
        rmsprop_step(&mut params, &grads, &mut state, 1e-2, 0.99, 1e-8).unwrap();
        let d = params.get("p").data();
        assert_eq!(d[0], d[1]);
        assert_eq!(1.0 - d[0], -4.0 - d[2]);
    }

    #[test]
    fn rmsprop_rejects_non_finite_gradients_without_mutating() {
        let mut params = single_param_store(&[1.0, 2.0]);
        let before = params.clone();
        let grads = single_param_store(&[0.1, f64::NAN]);
        let mut state = RmsState::new(&params);
        let err = rmsprop_step(&mut params, &grads, &mut state, 1e-2, 0.99, 1e-8);
        assert!(matches!(err, Err(Error::Numeric { .. })));
        assert_eq!(params, before);
        assert_eq!(state.s.get("p").data(), &[0.0, 0.0]);
    }

    #[test]
    fn rmsprop_lr_zero_is_a_bit_exact_no_op_on_params() {
        let mut params = single_param_store(&[0.123456789, -9.87654321]);
        let before = params.clone();
        let grads = single_param_store(&[5.0, -2.0]);
        let mut state = RmsState::new(&params);
        rmsprop_step(&mut params, &grads, &mut state, 0.0, 0.99, 1e-8).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn lr_schedule_steps_at_period_boundaries() {
        assert_eq!(lr_at(0, 1e-3, 2.0, 20), 1e-3);
        assert_eq!(lr_at(19, 1e-3, 2.0, 20), 1e-3);
        assert_eq!(lr_at(20, 1e-3, 2.0, 20), 5e-4);
        assert_eq!(lr_at(40, 1e-3, 2.0, 20), 2.5e-4);
        assert_eq!(lr_at(20, 1e-3, 5.0, 20), 2e-4);
    }

    #[test]
    fn clip_rescales_only_oversized_gradients() {
        let mut grads = single_param_store(&[3.0, 4.0]);
        let norm = clip_global_norm(&mut grads, 5.0);
        assert_eq!(norm, 5.0);
        assert_eq!(grads.get("p").data(), &[3.0, 4.0]);

        let mut grads = single_param_store(&[30.0, 40.0]);
        let norm = clip_global_norm(&mut grads, 5.0);
        assert_eq!(norm, 50.0);
        let d = grads.get("p").data();
        assert!((d[0] - 3.0).abs() < 1e-12 && (d[1] - 4.0).abs() < 1e-12);
        let clipped: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((clipped - 5.0).abs() < 1e-12);
    }

    #[test]
    fn small_lr_step_rarely_increases_the_loss() {
        // On a smooth model, a small RMSProp step along the gradient should
        // almost always decrease the loss.
        use crate::nn::{bind_mlp, init_mlp, mlp_forward, Activation};
        let acts = [Activation::Tanh, Activation::Identity];
        let mut non_increasing = 0;
        let trials = 100;
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let mut params = ParamStore::new();
            init_mlp(&mut params, "m", &[3, 5, 2], &acts, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let loss_of = |store: &ParamStore, want_grads: bool| {
                let mut g = Graph::new();
                let bound = store.bind(&mut g, want_grads);
                let w = bind_mlp(&bound, "m", &acts);
                let xin = g.constant(Array::vector(x.clone()));
                let out = mlp_forward(&mut g, xin, &w);
                let target = g.constant(Array::vector(y.clone()));
                let d = g.sub(out, target);
                let sq = g.square(d);
                let loss = g.mean(sq);
                if want_grads {
                    g.backward(loss).unwrap();
                    let grads = collect_grads(&g, store, &bound);
                    (g.value(loss).item(), Some(grads))
                } else {
                    (g.value(loss).item(), None)
                }
            };

            let (before, grads) = loss_of(&params, true);
            let mut state = RmsState::new(&params);
            rmsprop_step(&mut params, &grads.unwrap(), &mut state, 1e-5, 0.99, 1e-8).unwrap();
            let (after, _) = loss_of(&params, false);
            if after <= before {
                non_increasing += 1;
            }
        }
        assert!(
            non_increasing >= 95,
            "loss decreased in only {non_increasing}/{trials} trials"
        );
    }

    #[test]
    fn training_on_a_constant_velocity_scene_recovers_the_speed() {
        let mut scfg = ScenarioConfig::for_kinds(EgoKind::Straight, TargetKind::Leading);
        scfg.v_range = (10.0, 10.0);
        scfg.odom_noise_v = 0.0;
        scfg.odom_noise_yaw = 0.0;
        let scene = generate_scene(&scfg, 1).unwrap();

        let model = EgoModel::new(EgoConfig {
            embed_dim: 6,
            hidden_dim: 12,
            head_hidden: 8,
            dropout_rate: 0.0,
            t_obs: 10,
            horizon: 20,
        });
        let cfg = TrainConfig {
            batch_size: 1,
            base_lr: 0.01,
            ego_epochs: 1500,
            lr_period: 600,
            seed: 3,
            ..TrainConfig::default()
        };
        let variant = ModelVariant::new("rnn", UncMode::Mse, PriorSource::None);
        let out = train_ego(&model, &[scene.clone()], &[scene.clone()], &cfg, &variant).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let heads = model
            .run(&out.best_params, &scene.odom[..10], &DropoutSpec::off(), &mut rng);
        for (t, head) in heads.iter().enumerate() {
            assert!(
                (head.mu[0] - 10.0).abs() < 0.05,
                "step {t}: μ_v = {}",
                head.mu[0]
            );
        }
    }

    #[test]
    fn zero_learning_rate_training_never_changes_weights() {
        let data = scenes(4, 100);
        let model = tiny_ego();
        // base_lr must be positive; make every step a no-op by zeroing it
        // through the schedule instead: factor so large the first period is
        // already below underflow. Simpler: validate that lr=0 is rejected,
        // then check the documented no-op at the optimizer level.
        assert!(TrainConfig {
            base_lr: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());

        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        model.init_params(&mut params, &mut rng);
        let before = params.clone();
        let grads = {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let win = ego_window(&data[0], 10, 20).unwrap();
            let loss = ego_loss_graph(
                &mut g,
                &model,
                &bound,
                &win,
                UncMode::Mse,
                &DropoutSpec::off(),
                &mut rng,
            );
            g.backward(loss).unwrap();
            collect_grads(&g, &params, &bound)
        };
        let mut state = RmsState::new(&params);
        rmsprop_step(&mut params, &grads, &mut state, 0.0, 0.99, 1e-8).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn ego_training_is_deterministic_per_seed() {
        let train = scenes(6, 40);
        let val = scenes(2, 60);
        let model = tiny_ego();
        let cfg = tiny_cfg();
        let variant = ModelVariant::new("rnn-ae", UncMode::AleatoricEpistemic, PriorSource::None);
        let a = train_ego(&model, &train, &val, &cfg, &variant).unwrap();
        let b = train_ego(&model, &train, &val, &cfg, &variant).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.best_params, b.best_params);
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn joint_training_is_deterministic_per_seed() {
        let train = scenes(4, 200);
        let val = scenes(2, 300);
        let ego = tiny_ego();
        let loc = tiny_loc();
        let cfg = tiny_cfg();
        let variant = ModelVariant::new(
            "rnn-ap",
            UncMode::Aleatoric,
            PriorSource::PredictedSampled,
        );
        let mut ego_params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        ego.init_params(&mut ego_params, &mut rng);

        let a = train_joint(&ego, &loc, &ego_params, &train, &val, &cfg, &variant).unwrap();
        let b = train_joint(&ego, &loc, &ego_params, &train, &val, &cfg, &variant).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn zero_ego_weight_and_no_prior_give_zero_ego_gradients() {
        let data = scenes(1, 400);
        let ego = tiny_ego();
        let loc = tiny_loc();
        let cfg = TrainConfig {
            lambda_ego: 0.0,
            ..tiny_cfg()
        };
        let variant = ModelVariant::new("rnn-np", UncMode::Aleatoric, PriorSource::None);

        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ego.init_params(&mut params, &mut rng);
        loc.init_params(&mut params, &mut rng);

        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let win = joint_window(&data[0], 10, 20).unwrap();
        let loss = joint_loss_graph(
            &mut g,
            &ego,
            &loc,
            &bound,
            &win,
            &cfg,
            &variant,
            &DropoutSpec::off(),
            &DropoutSpec::off(),
            &mut rng,
        );
        g.backward(loss).unwrap();
        let grads = collect_grads(&g, &params, &bound);
        for (name, grad) in grads.iter() {
            let norm = grad.norm();
            if name.starts_with("ego.") {
                assert_eq!(norm, 0.0, "ego gradient `{name}` should be exactly zero");
            } else {
                assert!(norm.is_finite());
            }
        }
    }

    #[test]
    fn prior_path_still_reaches_ego_weights_when_lambda_ego_is_zero() {
        let data = scenes(1, 500);
        let ego = tiny_ego();
        let loc = tiny_loc();
        let cfg = TrainConfig {
            lambda_ego: 0.0,
            ..tiny_cfg()
        };
        let variant = ModelVariant::new("rnn-p", UncMode::Aleatoric, PriorSource::PredictedMean);

        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        ego.init_params(&mut params, &mut rng);
        loc.init_params(&mut params, &mut rng);

        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let win = joint_window(&data[0], 10, 20).unwrap();
        let loss = joint_loss_graph(
            &mut g,
            &ego,
            &loc,
            &bound,
            &win,
            &cfg,
            &variant,
            &DropoutSpec::off(),
            &DropoutSpec::off(),
            &mut rng,
        );
        g.backward(loss).unwrap();
        let grads = collect_grads(&g, &params, &bound);
        let ego_norm: f64 = grads
            .iter()
            .filter(|(n, _)| n.starts_with("ego."))
            .map(|(_, g)| g.norm())
            .sum();
        assert!(
            ego_norm > 0.0,
            "predicted-mean prior should carry gradients into the ego stream"
        );
    }

    #[test]
    fn no_prior_predictions_are_independent_of_odometry() {
        let mut a = scenes(1, 600).remove(0);
        let ego = tiny_ego();
        let loc = tiny_loc();

        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        ego.init_params(&mut params, &mut rng);
        loc.init_params(&mut params, &mut rng);

        let heads_for = |scene: &Scene, params: &ParamStore| -> Vec<Vec<f64>> {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false);
            let lw = loc.bind(&bound);
            let track = &scene.targets[0];
            let enc = loc.encode(&mut g, &lw, &track.boxes[..10], &track.flows[..10]);
            let prior: Vec<NodeId> = (0..20)
                .map(|_| g.constant(Array::zeros(vec![2])))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let heads = loc.predict(
                &mut g,
                &lw,
                enc,
                track.boxes[9],
                &prior,
                &DropoutSpec::off(),
                &mut rng,
            );
            heads.iter().map(|&h| g.value(h).data().to_vec()).collect()
        };

        let before = heads_for(&a, &params);
        // Rewrite the odometry completely; the zero-prior box stream must
        // not notice.
        for s in a.odom.iter_mut() {
            *s = OdomStep::new(19.0, 0.5);
        }
        let after = heads_for(&a, &params);
        assert_eq!(before, after);
    }

    #[test]
    fn short_scene_is_rejected_with_a_contract_error() {
        let mut scene = scenes(1, 700).remove(0);
        scene.odom_clean.truncate(15);
        scene.odom.truncate(15);
        let model = tiny_ego();
        let err = train_ego(
            &model,
            &[scene],
            &[],
            &tiny_cfg(),
            &ModelVariant::new("rnn", UncMode::Mse, PriorSource::None),
        );
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn ground_truth_prior_nodes_match_the_scaled_odometry() {
        let scene = scenes(1, 800).remove(0);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let future = &scene.odom_clean[10..30];
        let nodes = prior_nodes(&mut g, PriorSource::GroundTruth, &[], future, &mut rng);
        assert_eq!(nodes.len(), 20);
        for (node, s) in nodes.iter().zip(future) {
            let v = g.value(*node).data().to_vec();
            assert_eq!(v, vec![s.v / V_SCALE, s.yaw_rate / YAW_SCALE]);
        }
    }

    #[test]
    fn reparam_sample_is_differentiable_and_unbiased_at_zero_spread() {
        // With σ→0 the sample collapses to the mean exactly, and gradients
        // flow back to the head.
        let mut g = Graph::new();
        let head = g.param(Array::vector(vec![3.0, -1.0, -40.0, -40.0, 0.3]));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = reparam_sample(&mut g, head, &mut rng);
        let v = g.value(s).data().to_vec();
        assert!((v[0] - 3.0).abs() < 1e-12);
        assert!((v[1] + 1.0).abs() < 1e-12);
        let total = g.sum(s);
        g.backward(total).unwrap();
        let grad = g.grad(head).unwrap();
        // Mean components receive unit gradient regardless of the draw.
        assert_eq!(grad.data()[0], 1.0);
        assert_eq!(grad.data()[1], 1.0);
    }
}
