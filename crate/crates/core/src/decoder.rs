//! K-hypothesis trajectory decoder.
//!
//! The encoder latent is repeated K times and each copy is concatenated with
//! a fresh standard-normal noise sample, giving K slots. The slots attend to
//! each other through pre-norm transformer blocks — deliberately without any
//! positional encoding, so the stack is permutation-equivariant and the
//! noise alone differentiates hypotheses. Heads:
//!   - per-slot linear to T per-step offsets, cumulatively summed into
//!     absolute ego-frame waypoints,
//!   - per-slot linear to a logit, softmax over K for confidences,
//!   - mean-pooled slots through a small MLP for the scalar uncertainty.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::config::ModelConfig;
use crate::diffgraph::{Graph, NodeId, Tensor};
use crate::encoder::{init_block, linear, norm_affine, transformer_block, INIT_STD};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamBinding, ParamStore};

/// K predicted trajectories with confidences and a scene uncertainty score.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle {
    /// K trajectories of T (x, y) waypoints, ego frame, meters.
    pub trajectories: Vec<Vec<(f32, f32)>>,
    /// Softmax-normalized, sums to 1.
    pub confidences: Vec<f32>,
    /// Regresses the sample NLL; may be negative.
    pub uncertainty: f32,
}

impl TrajectoryBundle {
    pub fn k(&self) -> usize {
        self.trajectories.len()
    }

    /// Index of the highest-confidence hypothesis.
    pub fn argmax_confidence(&self) -> usize {
        self.confidences
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f32 = self.confidences.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "confidences sum to {sum}, expected 1"
            )));
        }
        let finite = self
            .trajectories
            .iter()
            .flatten()
            .all(|&(x, y)| x.is_finite() && y.is_finite())
            && self.uncertainty.is_finite()
            && self.confidences.iter().all(|c| c.is_finite() && *c >= 0.0);
        if !finite {
            return Err(Error::InvalidInput("non-finite bundle values".into()));
        }
        Ok(())
    }
}

/// Register decoder weights (`dec.*`).
pub fn init_params(params: &mut ParamStore, config: &ModelConfig, rng: &mut ChaCha20Rng) {
    let d = config.dec_dim;
    let slot_dim = config.latent_dim + config.noise_dim;
    params.insert("dec.in.w", trunc_normal(rng, vec![slot_dim, d], INIT_STD));
    params.insert("dec.in.b", Tensor::zeros(vec![d]));
    for i in 0..config.dec_layers {
        init_block(params, &format!("dec.block{i}"), d, rng);
    }
    params.insert("dec.ln_f.g", {
        let t = Tensor::new(vec![d], vec![1.0; d]).expect("valid shape");
        t
    });
    params.insert("dec.ln_f.b", Tensor::zeros(vec![d]));
    params.insert("dec.traj.w", trunc_normal(rng, vec![d, 2 * config.horizon], INIT_STD));
    params.insert("dec.traj.b", Tensor::zeros(vec![2 * config.horizon]));
    params.insert("dec.conf.w", trunc_normal(rng, vec![d, 1], INIT_STD));
    params.insert("dec.conf.b", Tensor::zeros(vec![1]));
    params.insert("dec.unc.fc1.w", trunc_normal(rng, vec![d, d], INIT_STD));
    params.insert("dec.unc.fc1.b", Tensor::zeros(vec![d]));
    params.insert("dec.unc.fc2.w", trunc_normal(rng, vec![d, 1], INIT_STD));
    params.insert("dec.unc.fc2.b", Tensor::zeros(vec![1]));
}

/// Repeat the latent K times and append per-slot N(0,1) noise:
/// row k = [latent || S_k]. Noise is freshly sampled from `rng` per call.
pub fn replicate_and_noise(
    g: &mut Graph,
    latent: NodeId,
    k: usize,
    noise_dim: usize,
    rng: &mut ChaCha20Rng,
) -> Result<NodeId> {
    if k == 0 {
        return Err(Error::Config("hypothesis count K must be at least 1".into()));
    }
    let latent_dim = g.value(latent).numel();
    let row = g.reshape(latent, vec![1, latent_dim])?;
    let rows = vec![row; k];
    let repeated = if k == 1 { row } else { g.concat(&rows, 0)? };
    if noise_dim == 0 {
        return Ok(repeated);
    }
    let noise: Vec<f32> = (0..k * noise_dim).map(|_| sample_standard_normal(rng)).collect();
    let noise_node = g.constant(Tensor::new(vec![k, noise_dim], noise)?);
    g.concat(&[repeated, noise_node], 1)
}

fn sample_standard_normal(rng: &mut ChaCha20Rng) -> f32 {
    // Box-Muller, one value per draw pair.
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos()
}

/// Graph outputs of one decode pass.
pub struct DecodeNodes {
    /// [K, 2T] absolute waypoints.
    pub trajectories: NodeId,
    /// [K] confidences.
    pub confidences: NodeId,
    /// [1] uncertainty.
    pub uncertainty: NodeId,
}

/// Lower-triangular-by-parity constant: offsets [K, 2T] x M [2T, 2T]
/// cumulatively sums steps while keeping x/y lanes separate.
fn cumsum_matrix(g: &mut Graph, horizon: usize) -> Result<NodeId> {
    let n = 2 * horizon;
    let mut data = vec![0.0f32; n * n];
    for s in 0..horizon {
        for t in s..horizon {
            data[(2 * s) * n + 2 * t] = 1.0;
            data[(2 * s + 1) * n + 2 * t + 1] = 1.0;
        }
    }
    let t = Tensor::new(vec![n, n], data)?;
    Ok(g.constant(t))
}

/// Decode K slots into trajectories, confidences and uncertainty.
pub fn decode(
    g: &mut Graph,
    vars: &ParamBinding,
    slots: NodeId,
    config: &ModelConfig,
) -> Result<DecodeNodes> {
    let shape = g.value(slots).shape().to_vec();
    let expected = config.latent_dim + config.noise_dim;
    if shape.len() != 2 || shape[1] != expected {
        return Err(Error::ShapeMismatch {
            op: "decode",
            lhs: shape,
            rhs: vec![config.k, expected],
        });
    }
    let k = shape[0];

    let mut x = linear(g, slots, vars, "dec.in.w", "dec.in.b")?;
    for i in 0..config.dec_layers {
        x = transformer_block(g, x, vars, &format!("dec.block{i}"), config.dec_heads, &mut None)?;
    }
    let h = norm_affine(g, x, vars, "dec.ln_f.g", "dec.ln_f.b")?;

    let offsets = linear(g, h, vars, "dec.traj.w", "dec.traj.b")?;
    let cumsum = cumsum_matrix(g, config.horizon)?;
    let trajectories = g.matmul(offsets, cumsum)?;

    let logits = linear(g, h, vars, "dec.conf.w", "dec.conf.b")?;
    let conf_col = g.softmax(logits, 0)?;
    let confidences = g.reshape(conf_col, vec![k])?;

    let pooled = g.mean(h, 0)?;
    let u = linear(g, pooled, vars, "dec.unc.fc1.w", "dec.unc.fc1.b")?;
    let u = g.gelu(u)?;
    let u = linear(g, u, vars, "dec.unc.fc2.w", "dec.unc.fc2.b")?;
    let uncertainty = g.reshape(u, vec![1])?;

    Ok(DecodeNodes {
        trajectories,
        confidences,
        uncertainty,
    })
}

/// Materialize a bundle from decode outputs.
pub fn bundle_from_nodes(g: &Graph, nodes: &DecodeNodes, horizon: usize) -> TrajectoryBundle {
    let traj = g.value(nodes.trajectories);
    let k = traj.shape()[0];
    let trajectories = (0..k)
        .map(|ki| {
            (0..horizon)
                .map(|t| {
                    (
                        traj.data()[ki * 2 * horizon + 2 * t],
                        traj.data()[ki * 2 * horizon + 2 * t + 1],
                    )
                })
                .collect()
        })
        .collect();
    TrajectoryBundle {
        trajectories,
        confidences: g.value(nodes.confidences).data().to_vec(),
        uncertainty: g.value(nodes.uncertainty).item(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn decoder_params(config: &ModelConfig, seed: u64) -> ParamStore {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_params(&mut params, config, &mut rng);
        params
    }

    fn random_latent(dim: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Tensor::new(vec![dim], (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn replicate_shapes_paper_scale() {
        // latent 512 + noise 8 -> 5 x 520 slot matrix.
        let mut g = Graph::new();
        let latent = g.leaf(random_latent(512, 1));
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let slots = replicate_and_noise(&mut g, latent, 5, 8, &mut rng).unwrap();
        assert_eq!(g.value(slots).shape(), &[5, 520]);
    }

    #[test]
    fn zero_noise_gives_identical_rows() {
        let mut g = Graph::new();
        let latent = g.leaf(random_latent(16, 3));
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let slots = replicate_and_noise(&mut g, latent, 4, 0, &mut rng).unwrap();
        let data = g.value(slots).data();
        for row in 1..4 {
            assert_eq!(&data[..16], &data[row * 16..(row + 1) * 16]);
        }
    }

    #[test]
    fn noise_is_reproducible_per_seed() {
        let draw = |seed: u64| {
            let mut g = Graph::new();
            let latent = g.leaf(random_latent(8, 5));
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let slots = replicate_and_noise(&mut g, latent, 3, 4, &mut rng).unwrap();
            g.value(slots).data().to_vec()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn decode_output_shapes() {
        let config = ModelConfig::desk();
        let params = decoder_params(&config, 7);
        let mut g = Graph::new();
        let binding = params.bind(&mut g);
        let latent = g.leaf(random_latent(config.latent_dim, 1));
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let slots = replicate_and_noise(&mut g, latent, config.k, config.noise_dim, &mut rng).unwrap();
        let out = decode(&mut g, &binding, slots, &config).unwrap();
        assert_eq!(g.value(out.trajectories).shape(), &[5, 50]);
        assert_eq!(g.value(out.confidences).shape(), &[5]);
        assert_eq!(g.value(out.uncertainty).shape(), &[1]);
        let bundle = bundle_from_nodes(&g, &out, config.horizon);
        assert_eq!(bundle.k(), 5);
        assert_eq!(bundle.trajectories[0].len(), 25);
        bundle.validate().unwrap();
    }

    #[test]
    fn confidences_sum_to_one_for_random_weights() {
        let config = ModelConfig::desk();
        for seed in 0..30u64 {
            let params = decoder_params(&config, seed);
            let mut g = Graph::new();
            let binding = params.bind(&mut g);
            let latent = g.leaf(random_latent(config.latent_dim, seed));
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let slots =
                replicate_and_noise(&mut g, latent, config.k, config.noise_dim, &mut rng).unwrap();
            let out = decode(&mut g, &binding, slots, &config).unwrap();
            let sum: f32 = g.value(out.confidences).data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "seed {seed}: {sum}");
        }
    }

    #[test]
    fn zero_noise_collapses_hypotheses_bitwise() {
        let config = ModelConfig {
            noise_dim: 0,
            ..ModelConfig::desk()
        };
        let params = decoder_params(&config, 11);
        let mut g = Graph::new();
        let binding = params.bind(&mut g);
        let latent = g.leaf(random_latent(config.latent_dim, 2));
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let slots = replicate_and_noise(&mut g, latent, config.k, 0, &mut rng).unwrap();
        let out = decode(&mut g, &binding, slots, &config).unwrap();
        let traj = g.value(out.trajectories).data();
        let row = 2 * config.horizon;
        for ki in 1..config.k {
            assert_eq!(
                traj[..row]
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
                traj[ki * row..(ki + 1) * row]
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            );
        }
        for c in g.value(out.confidences).data() {
            assert!((c - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let config = ModelConfig::desk();
        let params = decoder_params(&config, 13);
        let slot_dim = config.latent_dim + config.noise_dim;
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let slot_data: Vec<f32> = (0..config.k * slot_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let perm: Vec<usize> = vec![3, 0, 4, 2, 1];
        let permuted: Vec<f32> = perm
            .iter()
            .flat_map(|&src| slot_data[src * slot_dim..(src + 1) * slot_dim].to_vec())
            .collect();

        let run = |data: Vec<f32>| {
            let mut g = Graph::new();
            let binding = params.bind(&mut g);
            let slots = g.leaf(Tensor::new(vec![config.k, slot_dim], data).unwrap());
            let out = decode(&mut g, &binding, slots, &config).unwrap();
            bundle_from_nodes(&g, &out, config.horizon)
        };
        let base = run(slot_data);
        let shuffled = run(permuted);

        for (dst, &src) in perm.iter().enumerate() {
            for (a, b) in shuffled.trajectories[dst].iter().zip(&base.trajectories[src]) {
                assert!((a.0 - b.0).abs() < 1e-4 && (a.1 - b.1).abs() < 1e-4);
            }
            assert!((shuffled.confidences[dst] - base.confidences[src]).abs() < 1e-5);
        }
        assert!((shuffled.uncertainty - base.uncertainty).abs() < 1e-4);
    }

    #[test]
    fn confidence_head_shift_invariance() {
        // Adding a constant to the confidence bias shifts every logit
        // equally, so confidences (and everything else) are unchanged.
        let config = ModelConfig::desk();
        let params = decoder_params(&config, 19);
        let mut shifted = params.clone();
        shifted.get_mut("dec.conf.b").unwrap().data_mut()[0] += 7.5;

        let run = |p: &ParamStore| {
            let mut g = Graph::new();
            let binding = p.bind(&mut g);
            let latent = g.leaf(random_latent(config.latent_dim, 23));
            let mut rng = ChaCha20Rng::seed_from_u64(5);
            let slots =
                replicate_and_noise(&mut g, latent, config.k, config.noise_dim, &mut rng).unwrap();
            let out = decode(&mut g, &binding, slots, &config).unwrap();
            bundle_from_nodes(&g, &out, config.horizon)
        };
        let base = run(&params);
        let moved = run(&shifted);
        for (a, b) in base.confidences.iter().zip(&moved.confidences) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(base.trajectories, moved.trajectories);
    }

    #[test]
    fn cumsum_matrix_turns_offsets_into_waypoints() {
        let mut g = Graph::new();
        // One slot, T=3: offsets (1,2), (3,4), (5,6).
        let offsets = g.leaf(Tensor::new(vec![1, 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let m = cumsum_matrix(&mut g, 3).unwrap();
        let traj = g.matmul(offsets, m).unwrap();
        assert_eq!(g.value(traj).data(), &[1.0, 2.0, 4.0, 6.0, 9.0, 12.0]);
    }
}
