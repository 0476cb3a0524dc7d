//! Finite-difference validation of every graph primitive.
//!
//! Each primitive's analytic adjoint is compared against central finite
//! differences at randomized points via [`crate::graph::finite_diff_check`].
//! The suite is exposed as library code (not just tests) so the acceptance
//! harness can run it, time it, and report the worst relative error.

use crate::error::{Error, Result};
use crate::graph::{finite_diff_check, Graph, NodeId};
use crate::nn::{Bound, ParamStore};
use crate::tensor::Array;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Step size for the central differences. Chosen so truncation and roundoff
/// error are balanced for O(1) values in f64.
pub const FD_EPS: f64 = 1e-5;

/// Worst relative error allowed for any primitive adjoint.
pub const FD_TOL: f64 = 1e-4;

/// Absolute escape hatch for composite-loss checks: central differences of
/// an O(1) loss carry ~1e-9 of rounding noise, so components whose true
/// gradient sits below ~1e-5 cannot meet a relative bound. They are held to
/// this absolute bound instead — well above the noise, far below any real
/// adjoint error, which scales with the gradient itself.
pub const FD_NOISE: f64 = 1e-8;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Array {
    Array::vector((0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Run one primitive's check at `points` random inputs; returns the max
/// relative error seen.
fn check_op(
    rng: &mut ChaCha8Rng,
    points: usize,
    make_input: impl Fn(&mut ChaCha8Rng) -> Array,
    build: impl Fn(&mut Graph, NodeId, &mut ChaCha8Rng) -> NodeId,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x = make_input(rng);
        // Auxiliary randomness (constants, other operands) must be identical
        // across the analytic and probe evaluations, so it is drawn once per
        // point and the builder closure reuses it via cloned state.
        let aux = ChaCha8Rng::seed_from_u64(rng.gen());
        let err = finite_diff_check(|g, leaf| build(g, leaf, &mut aux.clone()), &x, FD_EPS)?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Check every primitive at `points` random inputs each. Returns
/// `(op name, max relative error)` per primitive, in a fixed order.
pub fn primitive_suite(points: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // matmul, gradient w.r.t. the matrix (vector held constant).
    out.push((
        "matmul/lhs",
        check_op(
            &mut rng,
            points,
            |r| {
                let d = uniform(r, 12, -2.0, 2.0);
                Array::matrix(3, 4, d.into_data())
            },
            |g, a, r| {
                let x = g.constant(uniform(r, 4, -2.0, 2.0));
                let y = g.matmul(a, x);
                g.sum(y)
            },
        )?,
    ));
    // matmul, gradient w.r.t. the vector.
    out.push((
        "matmul/rhs",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 4, -2.0, 2.0),
            |g, x, r| {
                let d = uniform(r, 12, -2.0, 2.0);
                let a = g.constant(Array::matrix(3, 4, d.into_data()));
                let y = g.matmul(a, x);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "add",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 5, -2.0, 2.0),
            |g, a, r| {
                let b = g.constant(uniform(r, 5, -2.0, 2.0));
                let y = g.add(a, b);
                // Weight the sum so the adjoint is not uniformly 1.
                let w = g.constant(uniform(r, 5, -2.0, 2.0));
                let wy = g.mul(y, w);
                g.sum(wy)
            },
        )?,
    ));
    out.push((
        "mul",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 5, -2.0, 2.0),
            |g, a, r| {
                let b = g.constant(uniform(r, 5, -2.0, 2.0));
                let y = g.mul(a, b);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "sigmoid",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, -3.0, 3.0),
            |g, x, _| {
                let y = g.sigmoid(x);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "tanh",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, -3.0, 3.0),
            |g, x, _| {
                let y = g.tanh(x);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "exp",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, -2.0, 2.0),
            |g, x, _| {
                let y = g.exp(x);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "ln",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, 0.2, 3.0),
            |g, x, _| {
                let y = g.ln(x);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "recip",
        check_op(
            &mut rng,
            points,
            |r| {
                // Bounded away from the pole at 0.
                let mut a = uniform(r, 6, 0.3, 3.0);
                for (i, v) in a.data_mut().iter_mut().enumerate() {
                    if i % 2 == 1 {
                        *v = -*v;
                    }
                }
                a
            },
            |g, x, _| {
                let y = g.recip(x);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "square",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, -2.0, 2.0),
            |g, x, _| {
                let y = g.square(x);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "scale",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, -2.0, 2.0),
            |g, x, r| {
                let c: f64 = r.gen_range(-3.0..3.0);
                let y = g.scale(x, c);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "concat",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 4, -2.0, 2.0),
            |g, a, r| {
                let b = g.constant(uniform(r, 3, -2.0, 2.0));
                let y = g.concat(a, b);
                let w = g.constant(uniform(r, 7, -2.0, 2.0));
                let wy = g.mul(y, w);
                g.sum(wy)
            },
        )?,
    ));
    out.push((
        "slice",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 8, -2.0, 2.0),
            |g, x, r| {
                let start = r.gen_range(0..4);
                let end = r.gen_range(start + 1..=8);
                let y = g.slice(x, start, end);
                g.sum(y)
            },
        )?,
    ));
    out.push((
        "sum",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, -2.0, 2.0),
            |g, x, _| {
                let s = g.sum(x);
                g.square(s)
            },
        )?,
    ));
    out.push((
        "mean",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, -2.0, 2.0),
            |g, x, _| {
                let m = g.mean(x);
                g.square(m)
            },
        )?,
    ));
    // A deep composition exercising accumulation through shared nodes.
    out.push((
        "composite",
        check_op(
            &mut rng,
            points,
            |r| uniform(r, 6, -1.5, 1.5),
            |g, x, r| {
                let t = g.tanh(x);
                let s = g.sigmoid(x); // x feeds two consumers
                let p = g.mul(t, s);
                let e = g.exp(p);
                let lo = g.slice(e, 0, 3);
                let hi = g.slice(e, 3, 6);
                let c = g.concat(hi, lo);
                let w = g.constant(uniform(r, 6, -1.0, 1.0));
                let wc = g.mul(c, w);
                let sq = g.square(wc);
                g.mean(sq)
            },
        )?,
    ));
    Ok(out)
}

/// Check every parameter of a scalar loss against central differences.
///
/// `build` must construct the loss deterministically from a bound parameter
/// store (rebind-safe: it is called once with trainable parameters for the
/// analytic sweep and many times with perturbed constants for the probes).
/// Per component the criterion is `rel < tol` or `|analytic − fd| <`
/// [`FD_NOISE`]; the first violation is returned as an error naming the
/// parameter. On success, returns the worst relative error among components
/// large enough to measure.
pub fn check_param_grads<F>(store: &ParamStore, tol: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> NodeId,
{
    let mut g = Graph::new();
    let bound = store.bind(&mut g, true);
    let loss = build(&mut g, &bound);
    g.backward(loss)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let bound = s.bind(&mut g, false);
        let loss = build(&mut g, &bound);
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(Error::Numeric {
                op: "check_param_grads",
                msg: format!("probe loss is not finite: {v}"),
            });
        }
        Ok(v)
    };

    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for (name, arr) in store.iter() {
        let analytic =
            g.grad(bound.node(name)).expect("trainable parameter has a gradient").data().to_vec();
        for i in 0..arr.len() {
            let orig = arr.data()[i];
            probe.get_mut(name).data_mut()[i] = orig + FD_EPS;
            let f_plus = eval(&probe)?;
            probe.get_mut(name).data_mut()[i] = orig - FD_EPS;
            let f_minus = eval(&probe)?;
            probe.get_mut(name).data_mut()[i] = orig;
            let fd = (f_plus - f_minus) / (2.0 * FD_EPS);
            let abs = (analytic[i] - fd).abs();
            let rel = abs / fd.abs().max(1e-8);
            if rel >= tol && abs >= FD_NOISE {
                return Err(Error::Numeric {
                    op: "check_param_grads",
                    msg: format!(
                        "{name}[{i}]: analytic {:+.6e} vs fd {fd:+.6e} (rel {rel:.3e}, abs {abs:.3e})",
                        analytic[i]
                    ),
                });
            }
            if abs >= FD_NOISE {
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}
