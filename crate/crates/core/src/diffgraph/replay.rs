//! f64 re-execution of a recorded graph.
//!
//! The gradient checker needs central differences that are not drowned in
//! f32 forward rounding, so it replays the tape in f64 with one leaf
//! perturbed. Ops reuse the generic kernels; only leaf values differ.

use super::kernels;
use super::{apply_bin_generic, Graph, NodeId, Op};

/// Evaluate node `target` in f64, overriding the data of one leaf.
/// All other leaves take their recorded f32 values, widened.
pub(crate) fn eval_f64(g: &Graph, target: NodeId, override_leaf: NodeId, override_data: &[f64]) -> f64 {
    let mut vals: Vec<Vec<f64>> = Vec::with_capacity(target + 1);
    for id in 0..=target {
        let v = match g.op(id) {
            Op::Leaf => {
                if id == override_leaf {
                    override_data.to_vec()
                } else {
                    g.value(id).data().iter().map(|&x| x as f64).collect()
                }
            }
            Op::Matmul { a, b } => {
                let (sa, sb) = (g.value(*a).shape(), g.value(*b).shape());
                kernels::matmul(&vals[*a], &vals[*b], sa[0], sa[1], sb[1])
            }
            Op::Bin { kind, a, b, bc } => {
                apply_bin_generic(*kind, *bc, &vals[*a], &vals[*b], g.value(id).shape())
            }
            Op::Scale { input, factor } => {
                let f = *factor as f64;
                vals[*input].iter().map(|v| v * f).collect()
            }
            Op::AddScalar { input, offset } => {
                let c = *offset as f64;
                vals[*input].iter().map(|v| v + c).collect()
            }
            Op::Softmax { input, axis } => {
                kernels::softmax_axis(&vals[*input], g.value(*input).shape(), *axis)
            }
            Op::LayerNorm { input, axis, eps } => {
                kernels::layer_norm_axis(&vals[*input], g.value(*input).shape(), *axis, *eps as f64)
            }
            Op::Gelu { input } => kernels::gelu(&vals[*input]),
            Op::Log { input } => kernels::log_floored(&vals[*input]),
            Op::Sqrt { input } => kernels::sqrt_clamped(&vals[*input]),
            Op::Reshape { input } => vals[*input].clone(),
            Op::Concat { inputs, axis } => {
                let parts: Vec<&[f64]> = inputs.iter().map(|&i| vals[i].as_slice()).collect();
                let shapes: Vec<&[usize]> = inputs.iter().map(|&i| g.value(i).shape()).collect();
                kernels::concat_axis(&parts, &shapes, *axis)
            }
            Op::Slice { input, axis, start, len } => {
                kernels::slice_axis(&vals[*input], g.value(*input).shape(), *axis, *start, *len)
            }
            Op::Mean { input, axis } => {
                kernels::reduce_axis(&vals[*input], g.value(*input).shape(), *axis, true)
            }
            Op::Sum { input, axis } => {
                kernels::reduce_axis(&vals[*input], g.value(*input).shape(), *axis, false)
            }
            Op::LogSumExp { input, axis } => {
                kernels::logsumexp_axis(&vals[*input], g.value(*input).shape(), *axis)
            }
            Op::Attention { q, k, v, heads } => kernels::attention(
                &vals[*q],
                &vals[*k],
                &vals[*v],
                g.value(*q).shape()[0],
                g.value(*k).shape()[0],
                g.value(*q).shape()[1],
                *heads,
            ),
        };
        vals.push(v);
    }
    debug_assert_eq!(vals[target].len(), 1, "replay target must be scalar");
    vals[target][0]
}

/// f64 forward value of `target` with no overrides; used to cross-check the
/// f32 and f64 paths against each other.
#[cfg(test)]
pub(crate) fn eval_f64_plain(g: &Graph, target: NodeId) -> f64 {
    eval_f64(g, target, usize::MAX, &[])
}
