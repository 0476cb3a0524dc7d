//! Ego-motion forecasting: encode a window of observed odometry with a GRU,
//! unroll a GRU decoder that emits a bivariate Gaussian head over
//! (velocity, yaw rate) per future step, fuse Monte-Carlo dropout passes
//! into predictive distributions, sample future odometry modes, and
//! dead-reckon odometry into 2D trajectories.
//!
//! Coordinates are right-handed, x forward, y left, in meters; headings in
//! radians; one odometry tick is [`DT`] seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, NodeId};
use crate::nn::{
    bind_gru, bind_mlp, dropout_node, gru_step, init_gru, init_mlp, mlp_forward, Activation,
    Bound, DropoutSpec, GruWeights, MlpWeights, ParamStore,
};
use crate::tensor::Array;
use crate::uncertainty::{fuse, nll_node, unit_nll_node, FusedGaussian, Gauss2D};

/// Odometry tick duration in seconds.
pub const DT: f64 = 0.1;

/// Observed window length (steps) in the standard protocol: 1 second.
pub const T_OBS: usize = 10;

/// Forecast horizon (steps) in the standard protocol: 2 seconds.
pub const T_PRED: usize = 20;

/// Velocity is divided by this before entering the network (typical urban
/// speeds then land in roughly [0, 1]); heads emit raw m/s.
pub const V_SCALE: f64 = 20.0;

/// Yaw rate is divided by this before entering the network; heads emit raw
/// rad/s.
pub const YAW_SCALE: f64 = 0.6;

/// One odometry tick: forward velocity (m/s) and yaw rate (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdomStep {
    pub v: f64,
    pub yaw_rate: f64,
}

impl OdomStep {
    pub fn new(v: f64, yaw_rate: f64) -> OdomStep {
        assert!(v.is_finite() && yaw_rate.is_finite(), "odometry must be finite");
        OdomStep { v, yaw_rate }
    }
}

// ---- rigid 2D poses and dead reckoning --------------------------------------

/// Rigid 2D transform: rotation (2×2, orthonormal, det +1) plus translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub rot: [[f64; 2]; 2],
    pub trans: [f64; 2],
}

impl Pose2D {
    pub fn identity() -> Pose2D {
        Pose2D { rot: [[1.0, 0.0], [0.0, 1.0]], trans: [0.0, 0.0] }
    }

    pub fn from_angle_trans(angle: f64, trans: [f64; 2]) -> Pose2D {
        let (s, c) = angle.sin_cos();
        Pose2D { rot: [[c, -s], [s, c]], trans }
    }

    /// Advance by one odometry tick: rotate the heading by θ̇·dt first, then
    /// translate by (v·dt, 0) along the *new* heading.
    pub fn step(&self, s: OdomStep) -> Pose2D {
        let da = s.yaw_rate * DT;
        let (sn, cs) = da.sin_cos();
        let r = self.rot;
        let rot = [
            [r[0][0] * cs + r[0][1] * sn, -r[0][0] * sn + r[0][1] * cs],
            [r[1][0] * cs + r[1][1] * sn, -r[1][0] * sn + r[1][1] * cs],
        ];
        let d = s.v * DT;
        let trans = [self.trans[0] + rot[0][0] * d, self.trans[1] + rot[1][0] * d];
        Pose2D { rot, trans }
    }

    pub fn position(&self) -> [f64; 2] {
        self.trans
    }

    /// Heading angle in radians, in (−π, π].
    pub fn heading(&self) -> f64 {
        self.rot[1][0].atan2(self.rot[0][0])
    }

    /// Map a point from this pose's local frame into the world frame.
    pub fn transform(&self, local: [f64; 2]) -> [f64; 2] {
        [
            self.rot[0][0] * local[0] + self.rot[0][1] * local[1] + self.trans[0],
            self.rot[1][0] * local[0] + self.rot[1][1] * local[1] + self.trans[1],
        ]
    }

    /// Map a world point into this pose's local frame (inverse transform).
    pub fn to_local(&self, world: [f64; 2]) -> [f64; 2] {
        let d = [world[0] - self.trans[0], world[1] - self.trans[1]];
        [
            self.rot[0][0] * d[0] + self.rot[1][0] * d[1],
            self.rot[0][1] * d[0] + self.rot[1][1] * d[1],
        ]
    }

    /// Worst deviation from a proper rotation: max over |RᵀR − I| entries
    /// and |det R − 1|.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rot;
        let rtr = [
            [r[0][0] * r[0][0] + r[1][0] * r[1][0], r[0][0] * r[0][1] + r[1][0] * r[1][1]],
            [r[0][1] * r[0][0] + r[1][1] * r[1][0], r[0][1] * r[0][1] + r[1][1] * r[1][1]],
        ];
        let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
        let mut worst: f64 = (det - 1.0).abs();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rtr[i][j] - want).abs());
            }
        }
        worst
    }
}

/// Integrate odometry into world poses, one per tick, starting from `start`
/// (exclusive: the output holds the poses *after* each tick).
pub fn dead_reckon_poses(odom: &[OdomStep], start: &Pose2D) -> Vec<Pose2D> {
    let mut pose = *start;
    odom.iter()
        .map(|s| {
            pose = pose.step(*s);
            pose
        })
        .collect()
}

/// Integrate odometry into 2D positions, one per tick.
pub fn dead_reckon(odom: &[OdomStep], start: &Pose2D) -> Vec<[f64; 2]> {
    dead_reckon_poses(odom, start).iter().map(Pose2D::position).collect()
}

/// Arc length Σ|v|·dt of an odometry sequence.
pub fn path_length(odom: &[OdomStep]) -> f64 {
    odom.iter().map(|s| s.v.abs() * DT).sum()
}

/// Constant-velocity baseline: repeat the last observed tick for the whole
/// horizon.
pub fn const_vel_ego(past: &[OdomStep], horizon: usize) -> Vec<OdomStep> {
    let last = *past.last().expect("const_vel_ego: empty observation window");
    vec![last; horizon]
}

// ---- forecasting model -------------------------------------------------------

/// Ego-stream dimensions and protocol lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden: usize,
    pub dropout_rate: f64,
    pub t_obs: usize,
    pub horizon: usize,
}

impl Default for EgoConfig {
    fn default() -> EgoConfig {
        EgoConfig {
            embed_dim: 32,
            hidden_dim: 64,
            head_hidden: 32,
            dropout_rate: 0.2,
            t_obs: T_OBS,
            horizon: T_PRED,
        }
    }
}

/// Graph-bound weights of the ego stream.
pub struct EgoWeights {
    pub embed: MlpWeights,
    pub enc: GruWeights,
    pub dec: GruWeights,
    pub head: MlpWeights,
}

/// Per-step forecast distributions and sampled future odometry.
///
/// `heads` is the deterministic (dropout-off) pass; `fused` combines the
/// Monte-Carlo passes per step; `modes[0]` is always the fused mean
/// sequence, further modes are per-step samples from the fused
/// distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoForecast {
    pub heads: Vec<Gauss2D>,
    pub fused: Vec<FusedGaussian>,
    pub modes: Vec<Vec<OdomStep>>,
}

/// GRU encoder over embedded odometry, GRU decoder with a Gaussian head,
/// mean-fed-back autoregression.
#[derive(Clone, Copy, Debug)]
pub struct EgoModel {
    pub cfg: EgoConfig,
}

const HEAD_ACTS: [Activation; 2] = [Activation::Tanh, Activation::Identity];

impl EgoModel {
    pub fn new(cfg: EgoConfig) -> EgoModel {
        assert!(cfg.t_obs >= 1 && cfg.horizon >= 1, "window lengths must be ≥ 1");
        EgoModel { cfg }
    }

    /// Create all ego parameters (prefix `ego.`) in the store.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        init_mlp(store, "ego.embed", &[2, c.embed_dim], &[Activation::Tanh], rng);
        init_gru(store, "ego.enc", c.hidden_dim, c.embed_dim, rng);
        init_gru(store, "ego.dec", c.hidden_dim, c.embed_dim, rng);
        init_mlp(store, "ego.head", &[c.hidden_dim, c.head_hidden, 5], &HEAD_ACTS, rng);
    }

    pub fn bind(&self, bound: &Bound) -> EgoWeights {
        EgoWeights {
            embed: bind_mlp(bound, "ego.embed", &[Activation::Tanh]),
            enc: bind_gru(bound, "ego.enc"),
            dec: bind_gru(bound, "ego.dec"),
            head: bind_mlp(bound, "ego.head", &HEAD_ACTS),
        }
    }

    /// Fold the observed window through embed + encoder GRU; returns the
    /// final hidden state node. The window length must match the configured
    /// observation length.
    pub fn encode(&self, g: &mut Graph, w: &EgoWeights, past: &[OdomStep]) -> NodeId {
        assert_eq!(
            past.len(),
            self.cfg.t_obs,
            "encode: expected {} observed steps, got {}",
            self.cfg.t_obs,
            past.len()
        );
        let mut h = g.constant(Array::zeros(vec![self.cfg.hidden_dim]));
        for s in past {
            let x = scaled_input_node(g, *s);
            let e = mlp_forward(g, x, &w.embed);
            h = gru_step(g, e, h, &w.enc);
        }
        h
    }

    /// Unroll the decoder `horizon` steps from hidden state `h0`. The first
    /// decoder input is the last observed tick; afterwards the previous
    /// step's predicted mean is fed back (in-graph, so gradients flow
    /// through the feedback). Dropout is applied to the decoder hidden
    /// state on its way into the head MLP; the recurrence itself stays
    /// clean. Returns one 5-vector head node (μ_v, μ_θ̇, s_v, s_θ̇, r) per
    /// step.
    pub fn predict(
        &self,
        g: &mut Graph,
        w: &EgoWeights,
        h0: NodeId,
        last_obs: OdomStep,
        dropout: &DropoutSpec,
        horizon: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<NodeId> {
        assert!(horizon >= 1, "predict: horizon must be ≥ 1");
        let inv_scale = g.constant(Array::vector(vec![1.0 / V_SCALE, 1.0 / YAW_SCALE]));
        let mut input = scaled_input_node(g, last_obs);
        let mut h = h0;
        let mut heads = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let e = mlp_forward(g, input, &w.embed);
            h = gru_step(g, e, h, &w.dec);
            let hd = dropout_node(g, h, dropout, rng);
            let head = mlp_forward(g, hd, &w.head);
            heads.push(head);
            let mu = g.slice(head, 0, 2);
            input = g.mul(mu, inv_scale);
        }
        heads
    }

    /// Mean per-step NLL of the future odometry under the predicted heads.
    pub fn nll_loss(
        &self,
        g: &mut Graph,
        w: &EgoWeights,
        past: &[OdomStep],
        future: &[OdomStep],
        dropout: &DropoutSpec,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        let h = self.encode(g, w, past);
        let heads = self.predict(g, w, h, *past.last().unwrap(), dropout, future.len(), rng);
        let mut total = None;
        for (head, s) in heads.iter().zip(future) {
            let term = nll_node(g, *head, [s.v, s.yaw_rate]);
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        let total = total.expect("nll_loss: empty future window");
        g.scale(total, 1.0 / future.len() as f64)
    }

    /// Mean-only variant of the loss: per-step unit-variance NLL of the
    /// predicted means (an MSE fit, offset so values compare to
    /// [`Self::nll_loss`]). The σ and ρ head outputs receive no gradient.
    pub fn mse_loss(
        &self,
        g: &mut Graph,
        w: &EgoWeights,
        past: &[OdomStep],
        future: &[OdomStep],
        dropout: &DropoutSpec,
        rng: &mut ChaCha8Rng,
    ) -> NodeId {
        let h = self.encode(g, w, past);
        let heads = self.predict(g, w, h, *past.last().unwrap(), dropout, future.len(), rng);
        let mut total = None;
        for (head, s) in heads.iter().zip(future) {
            let mu = g.slice(*head, 0, 2);
            let term = unit_nll_node(g, mu, [s.v, s.yaw_rate]);
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        let total = total.expect("mse_loss: empty future window");
        g.scale(total, 1.0 / future.len() as f64)
    }

    /// One full forward pass on frozen parameters; returns the per-step
    /// heads as plain distributions.
    pub fn run(
        &self,
        params: &ParamStore,
        past: &[OdomStep],
        dropout: &DropoutSpec,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Gauss2D> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let w = self.bind(&bound);
        let h = self.encode(&mut g, &w, past);
        let heads = self.predict(&mut g, &w, h, *past.last().unwrap(), dropout, self.cfg.horizon, rng);
        heads.iter().map(|&id| Gauss2D::from_head(g.value(id).data())).collect()
    }

    /// Run `n` Monte-Carlo dropout passes. Passes run in parallel on seeds
    /// pre-drawn from the caller's RNG, so results do not depend on thread
    /// count.
    pub fn mc_runs(
        &self,
        params: &ParamStore,
        past: &[OdomStep],
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vec<Gauss2D>> {
        assert!(n >= 1, "mc_runs: n must be ≥ 1");
        let mc = DropoutSpec::new(self.cfg.dropout_rate, crate::nn::DropoutMode::McSample)
            .expect("configured dropout rate must be valid");
        let seeds: Vec<u64> = (0..n).map(|_| rng.gen()).collect();
        seeds
            .into_par_iter()
            .map(|seed| self.run(params, past, &mc, &mut ChaCha8Rng::seed_from_u64(seed)))
            .collect()
    }

    /// Full inference: one deterministic pass, `n_dropout` Monte-Carlo
    /// passes fused per step, and `k` sampled odometry modes (mode 0 is the
    /// fused mean). Mode sampling consumes the caller's RNG sequentially.
    pub fn forecast(
        &self,
        params: &ParamStore,
        past: &[OdomStep],
        k: usize,
        n_dropout: usize,
        rng: &mut ChaCha8Rng,
    ) -> EgoForecast {
        assert!(k >= 1, "forecast: k must be ≥ 1");

        let heads = self.run(params, past, &DropoutSpec::off(), rng);
        let passes = self.mc_runs(params, past, n_dropout, rng);
        let fused = fuse_passes(&passes, true);
        let modes = sample_modes(&fused, k, rng);
        EgoForecast { heads, fused, modes }
    }
}

/// Fuse per-step heads across forward passes into per-step moments. With
/// `use_head_sigma` false the per-pass head variances are dropped from the
/// fusion, leaving only the spread across passes; with a single pass and
/// `use_head_sigma` true this is the head's own distribution.
pub fn fuse_passes(passes: &[Vec<Gauss2D>], use_head_sigma: bool) -> Vec<FusedGaussian> {
    assert!(!passes.is_empty(), "fuse_passes: need at least one pass");
    let horizon = passes[0].len();
    for p in passes {
        assert_eq!(p.len(), horizon, "fuse_passes: pass length mismatch");
    }
    (0..horizon)
        .map(|t| {
            let samples: Vec<(Vec<f64>, Vec<f64>)> = passes
                .iter()
                .map(|pass| {
                    let head = &pass[t];
                    let var = if use_head_sigma {
                        let [s1, s2] = head.sigma();
                        vec![s1 * s1, s2 * s2]
                    } else {
                        vec![0.0, 0.0]
                    };
                    (head.mu.to_vec(), var)
                })
                .collect();
            fuse(&samples).expect("at least one pass")
        })
        .collect()
}

/// Draw `k` odometry sequences from per-step fused distributions. Sequence 0
/// is the fused mean; the rest sample each step independently (diagonal).
pub fn sample_modes(fused: &[FusedGaussian], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<OdomStep>> {
    assert!(k >= 1, "sample_modes: k must be ≥ 1");
    let mean_seq: Vec<OdomStep> =
        fused.iter().map(|f| OdomStep { v: f.mean[0], yaw_rate: f.mean[1] }).collect();
    let mut modes = Vec::with_capacity(k);
    modes.push(mean_seq);
    for _ in 1..k {
        modes.push(
            fused
                .iter()
                .map(|f| {
                    let s = f.sample(rng);
                    OdomStep { v: s[0], yaw_rate: s[1] }
                })
                .collect(),
        );
    }
    modes
}

fn scaled_input_node(g: &mut Graph, s: OdomStep) -> NodeId {
    assert!(s.v.is_finite() && s.yaw_rate.is_finite(), "odometry must be finite: {s:?}");
    g.constant(Array::vector(vec![s.v / V_SCALE, s.yaw_rate / YAW_SCALE]))
}
