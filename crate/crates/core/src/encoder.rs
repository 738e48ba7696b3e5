//! ViT-style raster encoder.
//!
//! The raster is split into fixed-size patches, linearly embedded, prefixed
//! with a class token, given learned positional embeddings, and run through
//! pre-norm transformer blocks (multi-head self-attention + GELU MLP with 4x
//! expansion). The class-token output, after the final norm, is projected to
//! the latent dimension. Dropout (training only) is realized as seeded
//! Bernoulli mask constants, so inference stays deterministic and the graph
//! op set stays small.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::config::ModelConfig;
use crate::diffgraph::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamBinding, ParamStore};
use crate::scenegen::RasterTensor;

pub const LAYER_NORM_EPS: f32 = 1e-5;
pub const INIT_STD: f32 = 0.02;
/// MLP hidden dim = MLP_EXPANSION * model dim.
pub const MLP_EXPANSION: usize = 4;

/// Seeded dropout state for one forward pass.
pub struct DropoutCtx {
    pub rng: ChaCha20Rng,
    pub rate: f32,
}

/// Split a raster into (H/P)*(W/P) patch vectors of length C*P*P.
///
/// Patches are ordered row-major over the patch grid; within a patch the
/// layout is channel-major, then row, then column.
pub fn patchify(raster: &RasterTensor, patch: usize) -> Result<Tensor> {
    if patch == 0 || raster.height % patch != 0 || raster.width % patch != 0 {
        return Err(Error::InvalidShape {
            op: "patchify",
            shape: vec![raster.channels, raster.height, raster.width],
            reason: format!("dimensions not divisible by patch size {patch}"),
        });
    }
    let (c, h, w) = (raster.channels, raster.height, raster.width);
    let (ph, pw) = (h / patch, w / patch);
    let dim = c * patch * patch;
    let mut data = Vec::with_capacity(ph * pw * dim);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                for dy in 0..patch {
                    for dx in 0..patch {
                        data.push(raster.get(ch, py * patch + dy, px * patch + dx));
                    }
                }
            }
        }
    }
    Tensor::new(vec![ph * pw, dim], data)
}

/// Register encoder weights (`enc.*`) for a given patch grid.
pub fn init_params(params: &mut ParamStore, config: &ModelConfig, n_patches: usize, rng: &mut ChaCha20Rng) {
    let d = config.enc_dim;
    let patch_dim = config.in_channels * config.patch_size * config.patch_size;
    params.insert("enc.patch.w", trunc_normal(rng, vec![patch_dim, d], INIT_STD));
    params.insert("enc.patch.b", Tensor::zeros(vec![d]));
    params.insert("enc.cls", trunc_normal(rng, vec![1, d], INIT_STD));
    params.insert("enc.pos", trunc_normal(rng, vec![n_patches + 1, d], INIT_STD));
    for i in 0..config.enc_layers {
        init_block(params, &format!("enc.block{i}"), d, rng);
    }
    params.insert("enc.ln_f.g", ones(vec![d]));
    params.insert("enc.ln_f.b", Tensor::zeros(vec![d]));
    params.insert("enc.head.w", trunc_normal(rng, vec![d, config.latent_dim], INIT_STD));
    params.insert("enc.head.b", Tensor::zeros(vec![config.latent_dim]));
}

pub(crate) fn init_block(params: &mut ParamStore, prefix: &str, d: usize, rng: &mut ChaCha20Rng) {
    let hidden = MLP_EXPANSION * d;
    params.insert(&format!("{prefix}.ln1.g"), ones(vec![d]));
    params.insert(&format!("{prefix}.ln1.b"), Tensor::zeros(vec![d]));
    params.insert(&format!("{prefix}.qkv.w"), trunc_normal(rng, vec![d, 3 * d], INIT_STD));
    params.insert(&format!("{prefix}.qkv.b"), Tensor::zeros(vec![3 * d]));
    params.insert(&format!("{prefix}.proj.w"), trunc_normal(rng, vec![d, d], INIT_STD));
    params.insert(&format!("{prefix}.proj.b"), Tensor::zeros(vec![d]));
    params.insert(&format!("{prefix}.ln2.g"), ones(vec![d]));
    params.insert(&format!("{prefix}.ln2.b"), Tensor::zeros(vec![d]));
    params.insert(&format!("{prefix}.fc1.w"), trunc_normal(rng, vec![d, hidden], INIT_STD));
    params.insert(&format!("{prefix}.fc1.b"), Tensor::zeros(vec![hidden]));
    params.insert(&format!("{prefix}.fc2.w"), trunc_normal(rng, vec![hidden, d], INIT_STD));
    params.insert(&format!("{prefix}.fc2.b"), Tensor::zeros(vec![d]));
}

fn ones(shape: Vec<usize>) -> Tensor {
    let numel = shape.iter().product();
    Tensor::new(shape, vec![1.0; numel]).expect("valid shape")
}

pub(crate) fn linear(g: &mut Graph, x: NodeId, vars: &ParamBinding, w: &str, b: &str) -> Result<NodeId> {
    let h = g.matmul(x, vars.id(w))?;
    g.add(h, vars.id(b))
}

/// layer_norm followed by the learned affine (gain, offset).
pub(crate) fn norm_affine(g: &mut Graph, x: NodeId, vars: &ParamBinding, gain: &str, offset: &str) -> Result<NodeId> {
    let n = g.layer_norm(x, 1, LAYER_NORM_EPS)?;
    let scaled = g.mul(n, vars.id(gain))?;
    g.add(scaled, vars.id(offset))
}

pub(crate) fn dropout(g: &mut Graph, x: NodeId, ctx: &mut Option<&mut DropoutCtx>) -> Result<NodeId> {
    let Some(ctx) = ctx.as_deref_mut() else {
        return Ok(x);
    };
    if ctx.rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - ctx.rate;
    let shape = g.value(x).shape().to_vec();
    let numel = g.value(x).numel();
    let mask: Vec<f32> = (0..numel)
        .map(|_| if ctx.rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = g.constant(Tensor::new(shape, mask)?);
    g.mul(x, m)
}

/// One pre-norm transformer block; shared by encoder and decoder.
pub(crate) fn transformer_block(
    g: &mut Graph,
    x: NodeId,
    vars: &ParamBinding,
    prefix: &str,
    heads: usize,
    ctx: &mut Option<&mut DropoutCtx>,
) -> Result<NodeId> {
    let d = g.value(x).shape()[1];
    let normed = norm_affine(g, x, vars, &format!("{prefix}.ln1.g"), &format!("{prefix}.ln1.b"))?;
    let qkv = linear(g, normed, vars, &format!("{prefix}.qkv.w"), &format!("{prefix}.qkv.b"))?;
    let q = g.slice(qkv, 1, 0, d)?;
    let k = g.slice(qkv, 1, d, d)?;
    let v = g.slice(qkv, 1, 2 * d, d)?;
    let attn = g.attention(q, k, v, heads)?;
    let proj = linear(g, attn, vars, &format!("{prefix}.proj.w"), &format!("{prefix}.proj.b"))?;
    let proj = dropout(g, proj, ctx)?;
    let x = g.add(x, proj)?;

    let normed = norm_affine(g, x, vars, &format!("{prefix}.ln2.g"), &format!("{prefix}.ln2.b"))?;
    let h = linear(g, normed, vars, &format!("{prefix}.fc1.w"), &format!("{prefix}.fc1.b"))?;
    let h = g.gelu(h)?;
    let h = linear(g, h, vars, &format!("{prefix}.fc2.w"), &format!("{prefix}.fc2.b"))?;
    let h = dropout(g, h, ctx)?;
    g.add(x, h)
}

/// Encode a patch sequence into a latent state vector of `latent_dim`.
pub fn encode(
    g: &mut Graph,
    vars: &ParamBinding,
    patches: NodeId,
    config: &ModelConfig,
    mut ctx: Option<&mut DropoutCtx>,
) -> Result<NodeId> {
    let embedded = linear(g, patches, vars, "enc.patch.w", "enc.patch.b")?;
    let with_cls = g.concat(&[vars.id("enc.cls"), embedded], 0)?;
    let x = g.add(with_cls, vars.id("enc.pos"))?;
    let mut x = dropout(g, x, &mut ctx)?;
    for i in 0..config.enc_layers {
        x = transformer_block(g, x, vars, &format!("enc.block{i}"), config.enc_heads, &mut ctx)?;
    }
    let normed = norm_affine(g, x, vars, "enc.ln_f.g", "enc.ln_f.b")?;
    let cls = g.slice(normed, 0, 0, 1)?;
    let latent = linear(g, cls, vars, "enc.head.w", "enc.head.b")?;
    g.reshape(latent, vec![config.latent_dim])
}
