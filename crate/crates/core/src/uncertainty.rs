//! Gaussian-head math: the five-parameter bivariate head, its negative
//! log-likelihood (as a plain number and as a differentiable graph node),
//! Cholesky sampling, and the fusion of Monte-Carlo forward passes into a
//! single predictive mean/variance.
//!
//! Conventions fixed here and used by every head in the crate:
//! * scale parameters are log-standard-deviations, σ = exp(s), so σ > 0
//!   always;
//! * correlation is squashed as ρ = 0.999·tanh(r), keeping |ρ| ≤ 0.999 and
//!   the covariance positive definite in 64-bit arithmetic while staying
//!   differentiable everywhere;
//! * NLL values include the log(2π) constant, so reported losses are true
//!   negative log-densities;
//! * fusion tracks per-dimension variances (diagonal), and the fused
//!   epistemic term is computed around an anchor-shifted mean so coincident
//!   samples yield exactly zero spread.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Array;

/// Correlation bound: |ρ| never exceeds this.
pub const RHO_MAX: f64 = 0.999;

/// log(2π), the additive NLL constant.
pub const LN_2PI: f64 = 1.8378770664093453;

/// Bivariate Gaussian head: mean, log-σ per dimension, raw correlation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gauss2D {
    pub mu: [f64; 2],
    pub log_sigma: [f64; 2],
    pub corr_raw: f64,
}

impl Gauss2D {
    /// Head with the given mean, unit σ, zero correlation.
    pub fn at_mean(mu: [f64; 2]) -> Gauss2D {
        Gauss2D { mu, log_sigma: [0.0, 0.0], corr_raw: 0.0 }
    }

    /// Construct from a 5-vector head output (μ₁, μ₂, s₁, s₂, r).
    pub fn from_head(v: &[f64]) -> Gauss2D {
        assert_eq!(v.len(), 5, "Gauss2D::from_head: need 5 values");
        Gauss2D { mu: [v[0], v[1]], log_sigma: [v[2], v[3]], corr_raw: v[4] }
    }

    pub fn sigma(&self) -> [f64; 2] {
        [self.log_sigma[0].exp(), self.log_sigma[1].exp()]
    }

    /// ρ = 0.999·tanh(r); the same squash the graph loss uses.
    pub fn rho(&self) -> f64 {
        RHO_MAX * self.corr_raw.tanh()
    }

    /// Covariance matrix [[σ₁², ρσ₁σ₂], [ρσ₁σ₂, σ₂²]].
    pub fn cov(&self) -> [[f64; 2]; 2] {
        let [s1, s2] = self.sigma();
        let c = self.rho() * s1 * s2;
        [[s1 * s1, c], [c, s2 * s2]]
    }

    /// −log N(y; μ, Σ), the full bivariate form:
    ///   log(2π) + s₁ + s₂ + ½·log(1−ρ²) + (z₁² − 2ρz₁z₂ + z₂²) / (2(1−ρ²))
    /// with zᵢ = (yᵢ−μᵢ)/σᵢ. At ρ=0 this reduces to the per-dimension
    /// ½[exp(−2sᵢ)(yᵢ−μᵢ)² ] + sᵢ diagonal form plus the constant.
    ///
    /// Panics on non-finite `y`; observations are validated where they enter
    /// the system.
    pub fn nll(&self, y: [f64; 2]) -> f64 {
        assert!(y[0].is_finite() && y[1].is_finite(), "nll: non-finite observation {y:?}");
        let [s1, s2] = self.log_sigma;
        let z1 = (y[0] - self.mu[0]) * (-s1).exp();
        let z2 = (y[1] - self.mu[1]) * (-s2).exp();
        let rho = self.rho();
        let omr2 = 1.0 - rho * rho;
        let q = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2;
        LN_2PI + s1 + s2 + 0.5 * omr2.ln() + 0.5 * q / omr2
    }

    /// Draw μ + L·z with z ~ N(0, I₂) and L the lower Cholesky factor
    ///   [[σ₁, 0], [ρσ₂, σ₂√(1−ρ²)]].
    /// The noise is generated before the mean is added, so the RNG stream is
    /// independent of μ.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let [s1, s2] = self.sigma();
        let rho = self.rho();
        let n1 = s1 * z1;
        let n2 = rho * s2 * z1 + s2 * (1.0 - rho * rho).sqrt() * z2;
        [self.mu[0] + n1, self.mu[1] + n2]
    }
}

/// Mean and per-dimension total variance of fused Monte-Carlo passes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl FusedGaussian {
    /// Diagonal sample: μ_d + √var_d · z_d. Zero-variance dimensions return
    /// the mean exactly (a z is still drawn, keeping stream layout fixed).
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }
}

/// Fuse N forward passes (ŷᵢ, Σ̂ᵢ) into mean and total variance:
///   μ_y = mean(ŷᵢ)
///   Σ_y = mean over i of (ŷᵢ − μ_y)² + mean(Σ̂ᵢ)      (per dimension)
///
/// The spread term is the epistemic variance; the mean of the predicted
/// variances is the aleatoric part. The mean is computed anchored at ŷ₀
/// (μ = ŷ₀ + mean(ŷᵢ−ŷ₀)), which is algebraically the plain mean but makes
/// coincident samples produce exactly zero epistemic variance.
pub fn fuse(samples: &[(Vec<f64>, Vec<f64>)]) -> Result<FusedGaussian> {
    if samples.is_empty() {
        return Err(Error::contract("fuse: need at least one sample"));
    }
    let dim = samples[0].0.len();
    for (y, v) in samples {
        assert_eq!(y.len(), dim, "fuse: sample dimension mismatch");
        assert_eq!(v.len(), dim, "fuse: variance dimension mismatch");
    }
    let n = samples.len() as f64;
    let anchor = &samples[0].0;

    let mut mean = vec![0.0; dim];
    for (y, _) in samples {
        for d in 0..dim {
            mean[d] += y[d] - anchor[d];
        }
    }
    for d in 0..dim {
        mean[d] = anchor[d] + mean[d] / n;
    }

    let mut var = vec![0.0; dim];
    for (y, _) in samples {
        for d in 0..dim {
            let dev = y[d] - mean[d];
            var[d] += dev * dev;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    for (_, av) in samples {
        for d in 0..dim {
            var[d] += av[d] / n;
        }
    }
    Ok(FusedGaussian { mean, var })
}

/// Graph version of [`Gauss2D::nll`]: `head` is a 5-vector node
/// (μ₁, μ₂, s₁, s₂, r), `y` the observed pair. Returns a scalar node equal to
/// the plain NLL and differentiable in all five head values.
pub fn nll_node(g: &mut Graph, head: NodeId, y: [f64; 2]) -> NodeId {
    assert_eq!(g.value(head).len(), 5, "nll_node: head must be a 5-vector");
    assert!(y[0].is_finite() && y[1].is_finite(), "nll_node: non-finite observation {y:?}");

    let mu = g.slice(head, 0, 2);
    let s = g.slice(head, 2, 4);
    let r = g.slice(head, 4, 5);

    let y_const = g.constant(Array::vector(y.to_vec()));
    let d = g.sub(y_const, mu);
    let neg_s = g.scale(s, -1.0);
    let inv_sigma = g.exp(neg_s);
    let z = g.mul(d, inv_sigma);

    let tanh_r = g.tanh(r);
    let rho = g.scale(tanh_r, RHO_MAX);
    let rho2 = g.square(rho);
    let omr2 = g.one_minus(rho2);

    let z_sq = g.square(z);
    let q_diag = g.sum(z_sq);
    let z1 = g.slice(z, 0, 1);
    let z2 = g.slice(z, 1, 2);
    let z1z2 = g.mul(z1, z2);
    let cross = g.mul(rho, z1z2);
    let cross = g.scale(cross, -2.0);
    let q = g.add(q_diag, cross);

    let inv_omr2 = g.recip(omr2);
    let maha = g.mul(q, inv_omr2);
    let maha = g.scale(maha, 0.5);

    let logdet = g.ln(omr2);
    let logdet = g.scale(logdet, 0.5);

    let s_sum = g.sum(s);
    let part = g.add(maha, logdet);
    let part = g.add(part, s_sum);
    g.add_scalar(part, LN_2PI)
}

/// NLL of `y` under N(μ, I₂): log(2π) + ½‖y−μ‖². Used as the training loss
/// and validation score of mean-only (MSE) model variants, so they stay
/// comparable to full-likelihood heads.
pub fn unit_nll(mu: [f64; 2], y: [f64; 2]) -> f64 {
    let d0 = y[0] - mu[0];
    let d1 = y[1] - mu[1];
    LN_2PI + 0.5 * (d0 * d0 + d1 * d1)
}

/// Graph version of [`unit_nll`]; `mu` is a 2-vector node.
pub fn unit_nll_node(g: &mut Graph, mu: NodeId, y: [f64; 2]) -> NodeId {
    assert_eq!(g.value(mu).len(), 2, "unit_nll_node: mu must be a 2-vector");
    let y_const = g.constant(Array::vector(y.to_vec()));
    let d = g.sub(y_const, mu);
    let sq = g.square(d);
    let q = g.sum(sq);
    let q = g.scale(q, 0.5);
    g.add_scalar(q, LN_2PI)
}
