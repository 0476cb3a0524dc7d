//! Future object localization: encode a target's observed bounding boxes and
//! their inter-frame motion with two GRUs, concatenate the final hiddens,
//! and decode future boxes with a GRU whose per-step input is conditioned on
//! a future ego-motion prior. The head emits a 10-vector per step read as
//! two independent bivariate Gaussians — one over the box center, one over
//! the box dimensions.
//!
//! Boxes live in normalized image coordinates ([0, 1] for observed data;
//! predictions may legitimately leave the frame and are not clipped).
//! Metrics convert to pixels via [`IMG_W`] × [`IMG_H`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ego::{OdomStep, V_SCALE, YAW_SCALE};
use crate::graph::{Graph, NodeId};
use crate::nn::{
    bind_gru, bind_mlp, dropout_node, gru_step, init_gru, init_mlp, mlp_forward, Activation,
    Bound, DropoutMode, DropoutSpec, GruWeights, MlpWeights, ParamStore,
};
use crate::tensor::Array;
use crate::uncertainty::{fuse, nll_node, unit_nll_node, FusedGaussian, Gauss2D};

/// Pixel-space image width used by metrics.
pub const IMG_W: f64 = 1920.0;

/// Pixel-space image height used by metrics.
pub const IMG_H: f64 = 1200.0;

/// Smallest normalized box dimension a predicted trajectory may carry;
/// extrapolated or sampled dimensions below this are raised to it so boxes
/// stay well-formed. It only binds in degenerate cases.
pub const DIM_FLOOR: f64 = 1e-4;

/// Axis-aligned bounding box: center and dimensions, normalized to the
/// image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxState {
    /// Validated constructor for observed data: finite, positive dimensions.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> BoxState {
        assert!(
            cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite(),
            "box must be finite"
        );
        assert!(w > 0.0 && h > 0.0, "box dimensions must be positive: w={w}, h={h}");
        BoxState { cx, cy, w, h }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Scale into pixel space (1920×1200).
    pub fn to_pixels(&self) -> BoxState {
        BoxState { cx: self.cx * IMG_W, cy: self.cy * IMG_H, w: self.w * IMG_W, h: self.h * IMG_H }
    }
}

/// Inter-frame box motion (Δcx, Δcy, Δw, Δh) in normalized units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowFeature {
    pub dcx: f64,
    pub dcy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl FlowFeature {
    pub fn as_array(&self) -> [f64; 4] {
        [self.dcx, self.dcy, self.dw, self.dh]
    }
}

/// Per-step motion of a box track; the first step has no predecessor and
/// uses zeros.
pub fn flows_from_boxes(boxes: &[BoxState]) -> Vec<FlowFeature> {
    let mut out = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        if i == 0 {
            out.push(FlowFeature::default());
        } else {
            let p = &boxes[i - 1];
            out.push(FlowFeature {
                dcx: b.cx - p.cx,
                dcy: b.cy - p.cy,
                dw: b.w - p.w,
                dh: b.h - p.h,
            });
        }
    }
    out
}

/// Per-step forecast distributions and sampled box trajectories.
///
/// `center_heads`/`dim_heads` come from the deterministic pass conditioned
/// on the first (fused-mean) ego mode. `trajectories[m]` follows ego mode
/// `m`; trajectory 0 is the deterministic mean rollout. `fused[m][t]` holds
/// the fused 4-dim (cx, cy, w, h) moments the step-t sample of trajectory
/// `m` was drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxForecast {
    pub center_heads: Vec<Gauss2D>,
    pub dim_heads: Vec<Gauss2D>,
    pub trajectories: Vec<Vec<BoxState>>,
    pub fused: Vec<Vec<FusedGaussian>>,
}

/// How a stochastic rollout treats each decoding step: how many head passes
/// to fuse, whether those passes run with Monte-Carlo dropout, whether the
/// next box is sampled from the fused moments or taken at their mean, and
/// whether the per-pass head variances enter the fusion (dropping them
/// leaves only the spread across passes).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSettings {
    pub n_passes: usize,
    pub mc_dropout: bool,
    pub draw_samples: bool,
    pub use_head_sigma: bool,
}

impl SampleSettings {
    /// Deterministic mean rollout: one dropout-off pass, mean fed forward.
    pub fn mean() -> Self {
        Self { n_passes: 1, mc_dropout: false, draw_samples: false, use_head_sigma: true }
    }

    /// Sample from the head's own variance, no dropout: one dropout-off
    /// pass per step, next box drawn from its moments.
    pub fn head_sigma_only() -> Self {
        Self { n_passes: 1, mc_dropout: false, draw_samples: true, use_head_sigma: true }
    }

    /// Sample from the spread across `n` Monte-Carlo dropout passes alone,
    /// ignoring the per-pass head variances.
    pub fn mc_spread_only(n_passes: usize) -> Self {
        Self { n_passes, mc_dropout: true, draw_samples: true, use_head_sigma: false }
    }

    /// Full fusion: `n` Monte-Carlo dropout passes, head variances included,
    /// next box sampled from the fused moments.
    pub fn mc(n_passes: usize) -> Self {
        Self { n_passes, mc_dropout: true, draw_samples: true, use_head_sigma: true }
    }
}

/// Localization-stream dimensions and protocol lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocConfig {
    pub hidden_dim: usize,
    pub head_hidden: usize,
    pub dropout_rate: f64,
    pub t_obs: usize,
    pub horizon: usize,
}

impl Default for LocConfig {
    fn default() -> LocConfig {
        LocConfig {
            hidden_dim: 64,
            head_hidden: 32,
            dropout_rate: 0.2,
            t_obs: crate::ego::T_OBS,
            horizon: crate::ego::T_PRED,
        }
    }
}

/// Graph-bound weights of the localization stream.
pub struct LocWeights {
    pub box_enc: GruWeights,
    pub flow_enc: GruWeights,
    pub bridge: MlpWeights,
    pub dec: GruWeights,
    pub head: MlpWeights,
}

/// Two GRU encoders (flow and box), a bridge from their concatenation to the
/// decoder's initial hidden state, and a prior-conditioned GRU decoder with
/// a 10-dim two-factor Gaussian head.
#[derive(Clone, Copy, Debug)]
pub struct LocModel {
    pub cfg: LocConfig,
}

const HEAD_ACTS: [Activation; 2] = [Activation::Tanh, Activation::Identity];

impl LocModel {
    pub fn new(cfg: LocConfig) -> LocModel {
        assert!(cfg.t_obs >= 1 && cfg.horizon >= 1, "window lengths must be ≥ 1");
        LocModel { cfg }
    }

    /// Create all localization parameters (prefix `loc.`) in the store.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        init_gru(store, "loc.box_enc", c.hidden_dim, 4, rng);
        init_gru(store, "loc.flow_enc", c.hidden_dim, 4, rng);
        init_mlp(store, "loc.bridge", &[2 * c.hidden_dim, c.hidden_dim], &[Activation::Tanh], rng);
        // Decoder input: previous box (4) concatenated with the scaled ego
        // prior for the step (2).
        init_gru(store, "loc.dec", c.hidden_dim, 6, rng);
        init_mlp(store, "loc.head", &[c.hidden_dim, c.head_hidden, 10], &HEAD_ACTS, rng);
    }

    pub fn bind(&self, bound: &Bound) -> LocWeights {
        LocWeights {
            box_enc: bind_gru(bound, "loc.box_enc"),
            flow_enc: bind_gru(bound, "loc.flow_enc"),
            bridge: bind_mlp(bound, "loc.bridge", &[Activation::Tanh]),
            dec: bind_gru(bound, "loc.dec"),
            head: bind_mlp(bound, "loc.head", &HEAD_ACTS),
        }
    }

    /// Encode observed boxes and flows; returns the concatenation of the two
    /// final hidden states, flow encoder first, box encoder second (fixed
    /// layout).
    pub fn encode(&self, g: &mut Graph, w: &LocWeights, boxes: &[BoxState], flows: &[FlowFeature]) -> NodeId {
        assert_eq!(
            boxes.len(),
            self.cfg.t_obs,
            "encode: expected {} observed boxes, got {}",
            self.cfg.t_obs,
            boxes.len()
        );
        assert_eq!(
            flows.len(),
            self.cfg.t_obs,
            "encode: expected {} observed flows, got {}",
            self.cfg.t_obs,
            flows.len()
        );
        let mut hb = g.constant(Array::zeros(vec![self.cfg.hidden_dim]));
        for b in boxes {
            let x = g.constant(Array::vector(b.as_array().to_vec()));
            hb = gru_step(g, x, hb, &w.box_enc);
        }
        let mut hf = g.constant(Array::zeros(vec![self.cfg.hidden_dim]));
        for f in flows {
            let x = g.constant(Array::vector(f.as_array().to_vec()));
            hf = gru_step(g, x, hf, &w.flow_enc);
        }
        g.concat(hf, hb)
    }

    /// Unroll the decoder once per prior step. The decoder starts from the
    /// bridged encoding; each step's input is the previous box estimate
    /// (observed box first, then the predicted mean, fed back in-graph)
    /// concatenated with that step's ego-prior node. Dropout applies to the
    /// decoder hidden state entering the head MLP. Returns one 10-vector
    /// node per step: (μ_cx, μ_cy, s_cx, s_cy, r_c, μ_w, μ_h, s_w, s_h,
    /// r_d).
    ///
    /// Prior nodes must be 2-vectors already scaled for network input (see
    /// [`scaled_prior_nodes`]); passing them as nodes keeps the conditioning
    /// path differentiable, which joint training uses.
    pub fn predict(
        &self,
        g: &mut Graph,
        w: &LocWeights,
        encoding: NodeId,
        last_box: BoxState,
        prior: &[NodeId],
        dropout: &DropoutSpec,
        rng: &mut ChaCha8Rng,
    ) -> Vec<NodeId> {
        assert!(!prior.is_empty(), "predict: need at least one prior step");
        let mut h = mlp_forward(g, encoding, &w.bridge);
        let mut box_in = g.constant(Array::vector(last_box.as_array().to_vec()));
        let mut heads = Vec::with_capacity(prior.len());
        for &p in prior {
            assert_eq!(g.value(p).len(), 2, "predict: prior nodes must be 2-vectors");
            let input = g.concat(box_in, p);
            h = gru_step(g, input, h, &w.dec);
            let hd = dropout_node(g, h, dropout, rng);
            let head = mlp_forward(g, hd, &w.head);
            heads.push(head);
            let c_mu = g.slice(head, 0, 2);
            let d_mu = g.slice(head, 5, 7);
            box_in = g.concat(c_mu, d_mu);
        }
        heads
    }

    /// Mean per-step NLL of the future boxes: the center factor plus the
    /// dimension factor.
    #[allow(clippy::too_many_arguments)]
    pub fn nll_loss(
        &self,
        g: &mut Graph,
        w: &LocWeights,
        boxes: &[BoxState],
        flows: &[FlowFeature],
        prior: &[NodeId],
        future: &[BoxState],
        dropout: &DropoutSpec,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        assert_eq!(prior.len(), future.len(), "nll_loss: prior/future length mismatch");
        let enc = self.encode(g, w, boxes, flows);
        let heads = self.predict(g, w, enc, *boxes.last().unwrap(), prior, dropout, rng);
        let mut total = None;
        for (head, b) in heads.iter().zip(future) {
            let center = g.slice(*head, 0, 5);
            let dims = g.slice(*head, 5, 10);
            let lc = nll_node(g, center, [b.cx, b.cy]);
            let ld = nll_node(g, dims, [b.w, b.h]);
            let step = g.add(lc, ld);
            total = Some(match total {
                None => step,
                Some(acc) => g.add(acc, step),
            });
        }
        let total = total.expect("nll_loss: empty future window");
        g.scale(total, 1.0 / future.len() as f64)
    }

    /// Mean-only variant: per-step unit-variance NLL of the two factor
    /// means. The σ and ρ head outputs receive no gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn mse_loss(
        &self,
        g: &mut Graph,
        w: &LocWeights,
        boxes: &[BoxState],
        flows: &[FlowFeature],
        prior: &[NodeId],
        future: &[BoxState],
        dropout: &DropoutSpec,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        assert_eq!(prior.len(), future.len(), "mse_loss: prior/future length mismatch");
        let enc = self.encode(g, w, boxes, flows);
        let heads = self.predict(g, w, enc, *boxes.last().unwrap(), prior, dropout, rng);
        let mut total = None;
        for (head, b) in heads.iter().zip(future) {
            let c_mu = g.slice(*head, 0, 2);
            let d_mu = g.slice(*head, 5, 7);
            let lc = unit_nll_node(g, c_mu, [b.cx, b.cy]);
            let ld = unit_nll_node(g, d_mu, [b.w, b.h]);
            let step = g.add(lc, ld);
            total = Some(match total {
                None => step,
                Some(acc) => g.add(acc, step),
            });
        }
        let total = total.expect("mse_loss: empty future window");
        g.scale(total, 1.0 / future.len() as f64)
    }

    /// One forward pass on frozen parameters; returns (center, dimension)
    /// factor heads per step.
    pub fn run(
        &self,
        params: &ParamStore,
        boxes: &[BoxState],
        flows: &[FlowFeature],
        prior: &[OdomStep],
        dropout: &DropoutSpec,
        rng: &mut ChaCha8Rng,
    ) -> Vec<(Gauss2D, Gauss2D)> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let w = self.bind(&bound);
        let enc = self.encode(&mut g, &w, boxes, flows);
        let prior_nodes = scaled_prior_nodes(&mut g, prior);
        let heads =
            self.predict(&mut g, &w, enc, *boxes.last().unwrap(), &prior_nodes, dropout, rng);
        heads
            .iter()
            .map(|&id| {
                let v = g.value(id).data();
                (Gauss2D::from_head(&v[0..5]), Gauss2D::from_head(&v[5..10]))
            })
            .collect()
    }

    /// Sample one box trajectory per ego mode. Trajectory 0 is the
    /// deterministic mean rollout (dropout off, mean fed forward); every
    /// other trajectory runs the decoder autoregressively under `settings`:
    /// per step, `n_passes` head passes are fused, the next box is sampled
    /// from the fused moments (or the mean is taken), and the result is fed
    /// forward. Modes run in parallel on pre-drawn seeds, so results do not
    /// depend on thread count.
    pub fn sample_trajectories(
        &self,
        params: &ParamStore,
        boxes: &[BoxState],
        flows: &[FlowFeature],
        ego_modes: &[Vec<OdomStep>],
        settings: &SampleSettings,
        rng: &mut ChaCha8Rng,
    ) -> BoxForecast {
        assert!(!ego_modes.is_empty(), "sample_trajectories: need at least one ego mode");
        assert!(settings.n_passes >= 1, "sample_trajectories: n_passes must be ≥ 1");
        for m in ego_modes {
            assert_eq!(m.len(), self.cfg.horizon, "sample_trajectories: ego mode length mismatch");
        }

        let det_heads = self.run(params, boxes, flows, &ego_modes[0], &DropoutSpec::off(), rng);
        let (center_heads, dim_heads) = det_heads.into_iter().unzip();

        let seeds: Vec<u64> = (0..ego_modes.len()).map(|_| rng.gen()).collect();
        let rollouts: Vec<(Vec<BoxState>, Vec<FusedGaussian>)> = ego_modes
            .par_iter()
            .zip(seeds)
            .enumerate()
            .map(|(m, (mode, seed))| {
                let mut mode_rng = ChaCha8Rng::seed_from_u64(seed);
                let s = if m == 0 { SampleSettings::mean() } else { settings.clone() };
                self.rollout(params, boxes, flows, mode, &s, &mut mode_rng)
            })
            .collect();

        let (trajectories, fused) = rollouts.into_iter().unzip();
        BoxForecast { center_heads, dim_heads, trajectories, fused }
    }

    /// One autoregressive rollout along a single ego mode, shaped by
    /// `settings`: `n_passes` head passes per step (with or without
    /// Monte-Carlo dropout) are fused, optionally dropping the per-pass head
    /// variances from the fusion, and the next box is either sampled from
    /// the fused moments or taken at their mean.
    fn rollout(
        &self,
        params: &ParamStore,
        boxes: &[BoxState],
        flows: &[FlowFeature],
        mode: &[OdomStep],
        settings: &SampleSettings,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<BoxState>, Vec<FusedGaussian>) {
        let spec = if settings.mc_dropout {
            DropoutSpec::new(self.cfg.dropout_rate, DropoutMode::McSample)
                .expect("configured dropout rate must be valid")
        } else {
            DropoutSpec::off()
        };
        let passes = settings.n_passes;

        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let w = self.bind(&bound);
        let enc = self.encode(&mut g, &w, boxes, flows);
        let mut h = mlp_forward(&mut g, enc, &w.bridge);

        let mut cur = *boxes.last().unwrap();
        let mut traj = Vec::with_capacity(mode.len());
        let mut fused_steps = Vec::with_capacity(mode.len());
        for step in mode {
            let box_in = g.constant(Array::vector(cur.as_array().to_vec()));
            let prior = g.constant(Array::vector(vec![step.v / V_SCALE, step.yaw_rate / YAW_SCALE]));
            let input = g.concat(box_in, prior);
            h = gru_step(&mut g, input, h, &w.dec);

            let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..passes)
                .map(|_| {
                    let hd = dropout_node(&mut g, h, &spec, rng);
                    let head = mlp_forward(&mut g, hd, &w.head);
                    let v = g.value(head).data();
                    let c = Gauss2D::from_head(&v[0..5]);
                    let d = Gauss2D::from_head(&v[5..10]);
                    let var = if settings.use_head_sigma {
                        let [scx, scy] = c.sigma();
                        let [sw, sh] = d.sigma();
                        vec![scx * scx, scy * scy, sw * sw, sh * sh]
                    } else {
                        vec![0.0; 4]
                    };
                    (vec![c.mu[0], c.mu[1], d.mu[0], d.mu[1]], var)
                })
                .collect();
            let f = fuse(&samples).expect("at least one head pass");

            let next = if settings.draw_samples { f.sample(rng) } else { f.mean.clone() };
            cur = BoxState {
                cx: next[0],
                cy: next[1],
                w: next[2].max(DIM_FLOOR),
                h: next[3].max(DIM_FLOOR),
            };
            traj.push(cur);
            fused_steps.push(f);
        }
        (traj, fused_steps)
    }
}

/// Build per-step prior nodes from odometry, scaled the way the networks
/// expect inputs.
pub fn scaled_prior_nodes(g: &mut Graph, steps: &[OdomStep]) -> Vec<NodeId> {
    steps
        .iter()
        .map(|s| g.constant(Array::vector(vec![s.v / V_SCALE, s.yaw_rate / YAW_SCALE])))
        .collect()
}

/// Constant-velocity box baseline: extrapolate the center linearly from the
/// last two observations; with `scaling` the dimensions are extrapolated the
/// same way (floored at [`DIM_FLOOR`]), otherwise they stay frozen at the
/// last observation.
pub fn const_vel_boxes(boxes: &[BoxState], scaling: bool, horizon: usize) -> Vec<BoxState> {
    assert!(boxes.len() >= 2, "const_vel_boxes: need at least 2 observed boxes");
    let last = boxes[boxes.len() - 1];
    let prev = boxes[boxes.len() - 2];
    let (dcx, dcy) = (last.cx - prev.cx, last.cy - prev.cy);
    let (dw, dh) = if scaling { (last.w - prev.w, last.h - prev.h) } else { (0.0, 0.0) };
    (1..=horizon)
        .map(|n| {
            let n = n as f64;
            BoxState {
                cx: last.cx + dcx * n,
                cy: last.cy + dcy * n,
                w: (last.w + dw * n).max(DIM_FLOOR),
                h: (last.h + dh * n).max(DIM_FLOOR),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_param_grads, FD_TOL};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy_config() -> LocConfig {
        LocConfig { hidden_dim: 4, head_hidden: 3, dropout_rate: 0.0, t_obs: 2, horizon: 2 }
    }

    fn model_with_params(cfg: LocConfig, seed: u64) -> (LocModel, ParamStore) {
        let model = LocModel::new(cfg);
        let mut store = ParamStore::new();
        model.init_params(&mut store, &mut rng(seed));
        (model, store)
    }

    fn random_boxes(len: usize, r: &mut ChaCha8Rng) -> Vec<BoxState> {
        (0..len)
            .map(|_| {
                BoxState::new(
                    r.gen_range(0.2..0.8),
                    r.gen_range(0.2..0.8),
                    r.gen_range(0.05..0.3),
                    r.gen_range(0.05..0.3),
                )
            })
            .collect()
    }

    fn random_prior(len: usize, r: &mut ChaCha8Rng) -> Vec<OdomStep> {
        (0..len).map(|_| OdomStep::new(r.gen_range(0.0..20.0), r.gen_range(-0.5..0.5))).collect()
    }

    #[test]
    fn flows_start_at_zero_and_difference_the_track() {
        let boxes = vec![
            BoxState::new(0.5, 0.5, 0.1, 0.2),
            BoxState::new(0.52, 0.49, 0.11, 0.2),
            BoxState::new(0.55, 0.47, 0.13, 0.21),
        ];
        let flows = flows_from_boxes(&boxes);
        assert_eq!(flows[0], FlowFeature::default());
        assert!((flows[1].dcx - 0.02).abs() < 1e-15);
        assert!((flows[1].dw - 0.01).abs() < 1e-15);
        assert!((flows[2].dcy - (-0.02)).abs() < 1e-15);
        assert!((flows[2].dh - 0.01).abs() < 1e-15);
    }

    #[test]
    fn pixel_conversion_scales_by_image_size() {
        let b = BoxState::new(0.5, 0.5, 0.1, 0.2);
        let px = b.to_pixels();
        assert_eq!(px.cx, 960.0);
        assert_eq!(px.cy, 600.0);
        assert_eq!(px.w, 192.0);
        assert_eq!(px.h, 240.0);
    }

    #[test]
    fn zero_weights_encode_to_zero() {
        let (model, mut store) = model_with_params(toy_config(), 3);
        for name in store.names().map(str::to_string).collect::<Vec<_>>() {
            for v in store.get_mut(&name).data_mut() {
                *v = 0.0;
            }
        }
        let mut r = rng(4);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let w = model.bind(&bound);
        let enc = model.encode(&mut g, &w, &boxes, &flows);
        assert_eq!(g.value(enc).data(), &[0.0; 8]);
    }

    #[test]
    fn encoding_matches_two_encoder_oracle() {
        // Hand-rolled GRU folds for both encoders; layout is flow hidden
        // first, box hidden second.
        let cfg = LocConfig { t_obs: 5, ..toy_config() };
        let (model, store) = model_with_params(cfg, 21);
        let mut r = rng(22);
        let boxes = random_boxes(5, &mut r);
        let flows = flows_from_boxes(&boxes);

        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let w = model.bind(&bound);
        let enc = model.encode(&mut g, &w, &boxes, &flows);
        let got = g.value(enc).data().to_vec();

        let matvec = |m: &Array, v: &[f64], row: usize| -> f64 {
            (0..v.len()).map(|j| m.at(row, j) * v[j]).sum()
        };
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let fold = |prefix: &str, inputs: &[[f64; 4]]| -> Vec<f64> {
            let w_ih = store.get(&format!("{prefix}.w_ih"));
            let w_hh = store.get(&format!("{prefix}.w_hh"));
            let bias = store.get(&format!("{prefix}.bias")).data();
            let hs = cfg.hidden_dim;
            let mut h = vec![0.0; hs];
            for x in inputs {
                let mut next = vec![0.0; hs];
                for i in 0..hs {
                    let z = sigmoid(matvec(w_ih, x, i) + matvec(w_hh, &h, i) + bias[i]);
                    let rr = sigmoid(
                        matvec(w_ih, x, hs + i) + matvec(w_hh, &h, hs + i) + bias[hs + i],
                    );
                    let n = (matvec(w_ih, x, 2 * hs + i)
                        + rr * matvec(w_hh, &h, 2 * hs + i)
                        + bias[2 * hs + i])
                        .tanh();
                    next[i] = (1.0 - z) * n + z * h[i];
                }
                h = next;
            }
            h
        };
        let flow_in: Vec<[f64; 4]> = flows.iter().map(FlowFeature::as_array).collect();
        let box_in: Vec<[f64; 4]> = boxes.iter().map(BoxState::as_array).collect();
        let mut want = fold("loc.flow_enc", &flow_in);
        want.extend(fold("loc.box_enc", &box_in));
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn swapping_encoder_inputs_changes_the_encoding() {
        let (model, store) = model_with_params(toy_config(), 31);
        let mut r = rng(32);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let encode = |a: &[BoxState], f: &[FlowFeature]| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g, false);
            let w = model.bind(&bound);
            let enc = model.encode(&mut g, &w, a, f);
            g.value(enc).data().to_vec()
        };
        let normal = encode(&boxes, &flows);
        // Feed each sequence to the other encoder (both are 4-dim).
        let as_boxes: Vec<BoxState> =
            flows.iter().map(|f| BoxState { cx: f.dcx, cy: f.dcy, w: f.dw, h: f.dh }).collect();
        let as_flows: Vec<FlowFeature> = boxes
            .iter()
            .map(|b| FlowFeature { dcx: b.cx, dcy: b.cy, dw: b.w, dh: b.h })
            .collect();
        let swapped = encode(&as_boxes, &as_flows);
        assert_ne!(normal, swapped, "encoder roles must not be interchangeable");
    }

    #[test]
    #[should_panic(expected = "expected 2 observed flows")]
    fn encode_rejects_length_mismatch() {
        let (model, store) = model_with_params(toy_config(), 5);
        let mut r = rng(6);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&random_boxes(3, &mut r));
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let w = model.bind(&bound);
        model.encode(&mut g, &w, &boxes, &flows);
    }

    #[test]
    fn prediction_is_deterministic_with_dropout_off() {
        let (model, store) = model_with_params(toy_config(), 7);
        let mut r = rng(8);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let prior = random_prior(2, &mut r);
        let a = model.run(&store, &boxes, &flows, &prior, &DropoutSpec::off(), &mut rng(1));
        let b = model.run(&store, &boxes, &flows, &prior, &DropoutSpec::off(), &mut rng(2));
        assert_eq!(a, b);
    }

    #[test]
    fn different_priors_move_the_heads() {
        let (model, store) = model_with_params(toy_config(), 9);
        let mut r = rng(10);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let straight = vec![OdomStep::new(10.0, 0.0); 2];
        let turning = vec![OdomStep::new(10.0, 0.5); 2];
        let a = model.run(&store, &boxes, &flows, &straight, &DropoutSpec::off(), &mut rng(1));
        let b = model.run(&store, &boxes, &flows, &turning, &DropoutSpec::off(), &mut rng(1));
        let diff: f64 = a
            .iter()
            .zip(&b)
            .map(|((ca, da), (cb, db))| {
                (ca.mu[0] - cb.mu[0]).abs()
                    + (ca.mu[1] - cb.mu[1]).abs()
                    + (da.mu[0] - db.mu[0]).abs()
                    + (da.mu[1] - db.mu[1]).abs()
            })
            .sum();
        assert!(diff > 0.0, "heads ignored the ego prior");
    }

    #[test]
    fn zero_head_weights_give_standard_heads() {
        let (model, mut store) = model_with_params(toy_config(), 11);
        for name in ["loc.head.0.w", "loc.head.0.b", "loc.head.1.w", "loc.head.1.b"] {
            for v in store.get_mut(name).data_mut() {
                *v = 0.0;
            }
        }
        let mut r = rng(12);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let prior = random_prior(2, &mut r);
        for (c, d) in model.run(&store, &boxes, &flows, &prior, &DropoutSpec::off(), &mut rng(1)) {
            for h in [c, d] {
                assert_eq!(h.mu, [0.0, 0.0]);
                assert_eq!(h.sigma(), [1.0, 1.0]);
                assert_eq!(h.rho(), 0.0);
            }
        }
    }

    #[test]
    fn prior_gradients_are_live() {
        // The conditioning path must carry gradient: differentiate the loss
        // w.r.t. the prior inputs themselves.
        let (model, store) = model_with_params(toy_config(), 13);
        let mut r = rng(14);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let future = random_boxes(2, &mut r);

        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        let w = model.bind(&bound);
        let prior: Vec<NodeId> = (0..2)
            .map(|_| {
                g.param(Array::vector(vec![
                    r.gen_range(0.0..1.0),
                    r.gen_range(-0.5..0.5),
                ]))
            })
            .collect();
        let enc = model.encode(&mut g, &w, &boxes, &flows);
        let heads = model.predict(
            &mut g,
            &w,
            enc,
            *boxes.last().unwrap(),
            &prior,
            &DropoutSpec::off(),
            &mut rng(0),
        );
        let mut total = None;
        for (head, b) in heads.iter().zip(&future) {
            let center = g.slice(*head, 0, 5);
            let lc = nll_node(&mut g, center, [b.cx, b.cy]);
            total = Some(match total {
                None => lc,
                Some(acc) => g.add(acc, lc),
            });
        }
        g.backward(total.unwrap()).unwrap();
        let grad_norm: f64 = prior
            .iter()
            .map(|&p| g.grad(p).expect("prior is trainable").data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert!(grad_norm > 0.0, "ego-prior conditioning path is dead");
    }

    #[test]
    fn mean_rollout_reproduces_predicted_means_exactly() {
        // Dimension-mean bias keeps predicted dims well above the floor, so
        // the floor is the identity and the autoregressive mean rollout must
        // match the in-graph mean feedback bit for bit.
        let (model, mut store) = model_with_params(toy_config(), 15);
        {
            let b = store.get_mut("loc.head.1.b").data_mut();
            b[5] = 0.6;
            b[6] = 0.6;
        }
        let mut r = rng(16);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let prior = random_prior(2, &mut r);
        let f = model.sample_trajectories(&store, &boxes, &flows, &[prior.clone()], &SampleSettings::mc(1), &mut rng(17));
        let heads = model.run(&store, &boxes, &flows, &prior, &DropoutSpec::off(), &mut rng(18));
        assert_eq!(f.trajectories.len(), 1);
        for (got, (c, d)) in f.trajectories[0].iter().zip(&heads) {
            assert_eq!(got.cx.to_bits(), c.mu[0].to_bits());
            assert_eq!(got.cy.to_bits(), c.mu[1].to_bits());
            assert_eq!(got.w.to_bits(), d.mu[0].to_bits());
            assert_eq!(got.h.to_bits(), d.mu[1].to_bits());
        }
    }

    #[test]
    fn fused_variance_is_aleatoric_when_dropout_is_off() {
        // p=0, single pass: the fused variance must equal the head variance
        // exactly (the epistemic term vanishes). Dimension means are biased
        // above the floor so both feedback paths carry identical values.
        let (model, mut store) = model_with_params(toy_config(), 19);
        {
            let b = store.get_mut("loc.head.1.b").data_mut();
            b[5] = 0.6;
            b[6] = 0.6;
        }
        let mut r = rng(20);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let prior = random_prior(2, &mut r);
        let f = model.sample_trajectories(&store, &boxes, &flows, &[prior.clone()], &SampleSettings::mc(1), &mut rng(21));
        let heads = model.run(&store, &boxes, &flows, &prior, &DropoutSpec::off(), &mut rng(22));
        for (fused, (c, d)) in f.fused[0].iter().zip(&heads) {
            let [scx, scy] = c.sigma();
            let [sw, sh] = d.sigma();
            assert_eq!(fused.var, vec![scx * scx, scy * scy, sw * sw, sh * sh]);
        }
    }

    #[test]
    fn degenerate_variance_and_shared_modes_collapse_trajectories() {
        // σ→0 (log-σ bias −30) and identical ego modes: every sampled
        // trajectory coincides with the mean rollout to within sampling
        // noise of order e⁻³⁰.
        let (model, mut store) = model_with_params(toy_config(), 23);
        {
            let b = store.get_mut("loc.head.1.b").data_mut();
            for i in [2, 3, 7, 8] {
                b[i] = -30.0;
            }
            b[5] = 0.6; // keep dimensions above the floor
            b[6] = 0.6;
        }
        let mut r = rng(24);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let prior = random_prior(2, &mut r);
        let modes = vec![prior.clone(), prior.clone(), prior];
        let f = model.sample_trajectories(&store, &boxes, &flows, &modes, &SampleSettings::mc(4), &mut rng(25));
        for traj in &f.trajectories[1..] {
            for (a, b) in traj.iter().zip(&f.trajectories[0]) {
                assert!((a.cx - b.cx).abs() < 1e-9);
                assert!((a.cy - b.cy).abs() < 1e-9);
                assert!((a.w - b.w).abs() < 1e-9);
                assert!((a.h - b.h).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible_from_the_seed() {
        let cfg = LocConfig { dropout_rate: 0.3, ..toy_config() };
        let (model, store) = model_with_params(cfg, 26);
        let mut r = rng(27);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let modes = vec![random_prior(2, &mut r), random_prior(2, &mut r)];
        let a = model.sample_trajectories(&store, &boxes, &flows, &modes, &SampleSettings::mc(3), &mut rng(99));
        let b = model.sample_trajectories(&store, &boxes, &flows, &modes, &SampleSettings::mc(3), &mut rng(99));
        assert_eq!(a, b);
    }

    // ---- constant-velocity baseline ---------------------------------------

    #[test]
    fn static_box_stays_put_under_both_flags() {
        let boxes = vec![BoxState::new(0.4, 0.6, 0.1, 0.15); 10];
        for scaling in [false, true] {
            let out = const_vel_boxes(&boxes, scaling, 20);
            assert_eq!(out, vec![boxes[9]; 20]);
        }
    }

    #[test]
    fn centers_extrapolate_linearly() {
        let mut boxes = vec![BoxState::new(0.50, 0.50, 0.1, 0.1), BoxState::new(0.51, 0.50, 0.1, 0.1)];
        let out = const_vel_boxes(&boxes, false, 20);
        for (i, b) in out.iter().enumerate() {
            let n = (i + 1) as f64;
            assert!((b.cx - (0.51 + 0.01 * n)).abs() < 1e-12);
            assert_eq!(b.cy, 0.50);
            assert_eq!(b.w, 0.1); // frozen without scaling
        }
        // Only the last two observations matter.
        boxes.insert(0, BoxState::new(0.9, 0.1, 0.3, 0.3));
        assert_eq!(const_vel_boxes(&boxes, false, 20), out);
    }

    #[test]
    fn dimensions_extrapolate_when_scaling_is_on() {
        let boxes = vec![BoxState::new(0.5, 0.5, 0.10, 0.20), BoxState::new(0.5, 0.5, 0.11, 0.19)];
        let out = const_vel_boxes(&boxes, true, 20);
        for (i, b) in out.iter().enumerate() {
            let n = (i + 1) as f64;
            assert!((b.w - (0.11 + 0.01 * n)).abs() < 1e-12);
            assert!((b.h - (0.19 - 0.01 * n)).abs() < 1e-12 || b.h == DIM_FLOOR);
        }
        // Shrinking height hits the floor instead of going nonpositive.
        assert_eq!(out.last().unwrap().h, DIM_FLOOR);
        assert!(out.iter().all(|b| b.h >= DIM_FLOOR));
    }

    #[test]
    #[should_panic(expected = "at least 2 observed boxes")]
    fn const_vel_needs_two_boxes() {
        const_vel_boxes(&[BoxState::new(0.5, 0.5, 0.1, 0.1)], false, 20);
    }

    // ---- end-to-end gradients ---------------------------------------------

    #[test]
    fn localization_nll_gradients_match_finite_differences() {
        let (model, store) = model_with_params(toy_config(), 33);
        let mut r = rng(34);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let prior = random_prior(2, &mut r);
        let future = random_boxes(2, &mut r);
        check_param_grads(&store, FD_TOL, |g, bound| {
            let w = model.bind(bound);
            let prior_nodes = scaled_prior_nodes(g, &prior);
            model.nll_loss(g, &w, &boxes, &flows, &prior_nodes, &future, &DropoutSpec::off(), &mut rng(0))
        })
        .expect("localization NLL gradients must match finite differences");
    }

    #[test]
    fn localization_mse_gradients_match_finite_differences() {
        let (model, store) = model_with_params(toy_config(), 35);
        let mut r = rng(36);
        let boxes = random_boxes(2, &mut r);
        let flows = flows_from_boxes(&boxes);
        let prior = random_prior(2, &mut r);
        let future = random_boxes(2, &mut r);
        check_param_grads(&store, FD_TOL, |g, bound| {
            let w = model.bind(bound);
            let prior_nodes = scaled_prior_nodes(g, &prior);
            model.mse_loss(g, &w, &boxes, &flows, &prior_nodes, &future, &DropoutSpec::off(), &mut rng(0))
        })
        .expect("localization MSE gradients must match finite differences");
    }
}
