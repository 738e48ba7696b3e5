//! Finite-difference gradient verification.
//!
//! Analytic gradients come from the f32 backward pass; the numeric side is a
//! central difference computed on an f64 replay of the same tape, so the
//! check is not limited by f32 forward rounding. Relative error is
//! |analytic - numeric| / max(1, |analytic|), reported as the max over all
//! checked elements.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::replay::eval_f64;
use super::{Graph, NodeId, Op, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Max elements checked per leaf; None checks every element.
    pub max_elems_per_leaf: Option<usize>,
    /// Seed for element subsampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-3,
            max_elems_per_leaf: None,
            seed: 0,
        }
    }
}

/// Check the gradient of a scalar function of one tensor.
///
/// `f` receives a fresh graph and the id of `x` inserted as a trainable
/// leaf, and must return the scalar loss node. Returns the max relative
/// error over all elements of `x`. Fails if `f` is not deterministic
/// (two forward passes disagree bitwise) or `h <= 0`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("grad_check step must be positive, got {h}")));
    }
    let build = |g: &mut Graph| {
        let mut t = x.clone();
        t.requires_grad = true;
        let id = g.leaf(t);
        f(g, id)
    };

    let mut g1 = Graph::new();
    let loss1 = build(&mut g1)?;
    let mut g2 = Graph::new();
    let loss2 = build(&mut g2)?;
    if g1.value(loss1).item().to_bits() != g2.value(loss2).item().to_bits() {
        return Err(Error::NonDeterministic);
    }

    check_leaves(
        &g1,
        loss1,
        &[0],
        GradCheckOptions {
            h,
            ..Default::default()
        },
    )
}

/// Check gradients of every `requires_grad` leaf in a built graph.
///
/// `build` constructs the whole computation (inserting its own leaves) and
/// returns the scalar loss. Element subsampling via `opts` keeps large
/// models affordable.
pub fn grad_check_all_leaves<B>(build: B, opts: GradCheckOptions) -> Result<f64>
where
    B: Fn(&mut Graph) -> Result<NodeId>,
{
    if opts.h <= 0.0 {
        return Err(Error::Config(format!("grad_check step must be positive, got {}", opts.h)));
    }
    let mut g1 = Graph::new();
    let loss1 = build(&mut g1)?;
    let mut g2 = Graph::new();
    let loss2 = build(&mut g2)?;
    if g1.value(loss1).item().to_bits() != g2.value(loss2).item().to_bits() {
        return Err(Error::NonDeterministic);
    }

    let leaves: Vec<NodeId> = (0..g1.len())
        .filter(|&id| matches!(g1.op(id), Op::Leaf) && g1.value(id).requires_grad)
        .collect();
    check_leaves(&g1, loss1, &leaves, opts)
}

fn check_leaves(g: &Graph, loss: NodeId, leaves: &[NodeId], opts: GradCheckOptions) -> Result<f64> {
    let grads = g.backward(loss)?;
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut max_rel = 0.0f64;

    for &leaf in leaves {
        let numel = g.value(leaf).numel();
        let mut indices: Vec<usize> = (0..numel).collect();
        if let Some(cap) = opts.max_elems_per_leaf {
            if numel > cap {
                indices.shuffle(&mut rng);
                indices.truncate(cap);
                indices.sort_unstable();
            }
        }
        let analytic = grads.get_or_zeros(leaf, g.value(leaf).shape());
        let base: Vec<f64> = g.value(leaf).data().iter().map(|&v| v as f64).collect();
        let mut probe = base.clone();
        for &i in &indices {
            probe[i] = base[i] + opts.h;
            let plus = eval_f64(g, loss, leaf, &probe);
            probe[i] = base[i] - opts.h;
            let minus = eval_f64(g, loss, leaf, &probe);
            probe[i] = base[i];
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic.data()[i] as f64;
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
