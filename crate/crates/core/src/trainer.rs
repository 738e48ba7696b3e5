//! Two-phase training: AdamW with warm-up + cosine annealing, then SGD with
//! warm-up + cosine annealing and restarts. Optimizer state is reset at the
//! phase boundary. Each epoch shuffles with a seeded RNG, writes a
//! checkpoint, and every step appends (step, lr, l_pose, l_uncertainty) to
//! `train.csv`. Training is bitwise reproducible for a fixed
//! (seed, config, dataset).

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::{Config, TrainConfig};
use crate::diffgraph::Tensor;
use crate::encoder::{patchify, DropoutCtx};
use crate::error::{Error, Result};
use crate::losses::{mixture_nll, total_loss, LossValues};
use crate::model::Model;
use crate::params::{save_checkpoint, ParamStore};
use crate::scenegen::{rasterize, Scene};
use crate::seed::derive_seed2;

const ADAMW_BETA1: f32 = 0.9;
const ADAMW_BETA2: f32 = 0.999;
const ADAMW_EPS: f32 = 1e-8;
const SGD_MOMENTUM: f32 = 0.9;
const DIVERGENCE_LIMIT: f32 = 1e6;

/// Warm-up + cosine learning rate.
///
/// Linear ramp 0 -> base over `warmup_steps`, then
/// lr = min + (base - min)/2 * (1 + cos(pi * p / period)) with
/// p = steps past warm-up, wrapped modulo `period` iff `restarts`
/// (clamped at `period` otherwise).
pub fn cosine_lr(
    step: usize,
    base_lr: f32,
    min_lr: f32,
    warmup_steps: usize,
    period: usize,
    restarts: bool,
) -> f32 {
    if warmup_steps > 0 && step < warmup_steps {
        return base_lr * step as f32 / warmup_steps as f32;
    }
    let p = step - warmup_steps;
    let period = period.max(1);
    let p = if restarts { p % period } else { p.min(period) };
    let phase = std::f32::consts::PI * p as f32 / period as f32;
    min_lr + 0.5 * (base_lr - min_lr) * (1.0 + phase.cos())
}

/// Per-tensor optimizer slots, shape-matched to the parameter order.
struct OptState {
    /// First moment (AdamW) or velocity (SGD).
    m: Vec<Vec<f32>>,
    /// Second moment (AdamW only).
    v: Vec<Vec<f32>>,
    t: usize,
}

impl OptState {
    fn new(params: &ParamStore) -> Self {
        let m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        let v = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        OptState { m, v, t: 0 }
    }
}

fn check_grads(params: &ParamStore, grads: &[Tensor], step: usize) -> Result<()> {
    for ((name, tensor), grad) in params.iter().zip(grads) {
        debug_assert_eq!(tensor.shape(), grad.shape(), "optimizer state shape drift");
        if grad.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGrad {
                name: name.to_string(),
                step,
            });
        }
    }
    Ok(())
}

/// Scale gradients in place so the global L2 norm is at most `clip`.
fn clip_global_norm(grads: &mut [Tensor], clip: f32) {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum();
    let norm = sq.sqrt() as f32;
    if norm > clip && norm > 0.0 {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// One AdamW step: decoupled weight decay applied to the weights directly.
pub fn adamw_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptStateHandle,
    lr: f32,
    weight_decay: f32,
) -> Result<()> {
    let state = &mut state.0;
    state.t += 1;
    let bc1 = 1.0 - ADAMW_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAMW_BETA2.powi(state.t as i32);
    for (idx, (_, tensor)) in params.iter_mut().enumerate() {
        let g = grads[idx].data();
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let w = tensor.data_mut();
        for i in 0..w.len() {
            m[i] = ADAMW_BETA1 * m[i] + (1.0 - ADAMW_BETA1) * g[i];
            v[i] = ADAMW_BETA2 * v[i] + (1.0 - ADAMW_BETA2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (vhat.sqrt() + ADAMW_EPS) + weight_decay * w[i]);
        }
    }
    Ok(())
}

/// One SGD step with momentum 0.9; weight decay enters through the gradient.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptStateHandle,
    lr: f32,
    weight_decay: f32,
) -> Result<()> {
    let state = &mut state.0;
    for (idx, (_, tensor)) in params.iter_mut().enumerate() {
        let g = grads[idx].data();
        let m = &mut state.m[idx];
        let w = tensor.data_mut();
        for i in 0..w.len() {
            let grad = g[i] + weight_decay * w[i];
            m[i] = SGD_MOMENTUM * m[i] + grad;
            w[i] -= lr * m[i];
        }
    }
    Ok(())
}

/// Opaque optimizer state; construct per phase via [`OptStateHandle::new`].
pub struct OptStateHandle(OptState);

impl OptStateHandle {
    pub fn new(params: &ParamStore) -> Self {
        OptStateHandle(OptState::new(params))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    AdamW,
    Sgd,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub steps: usize,
    pub log_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    /// (step, lr, l_pose, l_uncertainty) rows as logged.
    pub log: Vec<(usize, f32, f32, f32)>,
}

/// Train a freshly initialized model.
pub fn fit(config: &Config, scenes: &[Scene], out_dir: &Path) -> Result<(Model, FitReport)> {
    config.validate()?;
    let mut model = Model::init(config.model, config.raster, config.train.seed)?;
    let report = fit_model(&mut model, &config.train, scenes, out_dir)?;
    Ok((model, report))
}

/// Train an existing model in place.
pub fn fit_model(
    model: &mut Model,
    train: &TrainConfig,
    scenes: &[Scene],
    out_dir: &Path,
) -> Result<FitReport> {
    train.validate()?;
    if scenes.is_empty() {
        return Err(Error::EmptyDataset(out_dir.join("<dataset>")));
    }
    if train.batch_size > scenes.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size {}",
            train.batch_size,
            scenes.len()
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    // Rasterize and patchify once; both are pure.
    let patches: Vec<Tensor> = scenes
        .iter()
        .map(|s| {
            let raster = rasterize(s, &model.raster_config)?;
            patchify(&raster, model.config.patch_size)
        })
        .collect::<Result<_>>()?;

    let steps_per_epoch = scenes.len().div_ceil(train.batch_size);
    let seed = train.seed;
    let log_path = out_dir.join("train.csv");
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    writeln!(log_file, "step,lr,l_pose,l_uncertainty")?;

    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut global_step = 0usize;
    let mut epoch_counter = 0usize;
    let mut forward_counter = 0u64;

    for phase in [Phase::AdamW, Phase::Sgd] {
        let epochs = match phase {
            Phase::AdamW => train.epochs_adamw,
            Phase::Sgd => train.epochs_sgd,
        };
        if epochs == 0 {
            continue;
        }
        let phase_steps = epochs * steps_per_epoch;
        let warmup = train
            .warmup_steps
            .unwrap_or_else(|| ((phase_steps as f64 * 0.05).round() as usize).max(1))
            .min(phase_steps);
        let (base_lr, restarts, period) = match phase {
            Phase::AdamW => (train.lr_adamw, false, (phase_steps - warmup).max(1)),
            Phase::Sgd => (
                train.lr_sgd,
                true,
                train
                    .restart_period
                    .unwrap_or_else(|| ((phase_steps - warmup) / 4).max(1)),
            ),
        };
        // Fresh momentum at the phase boundary.
        let mut opt = OptStateHandle::new(&model.params);
        let mut phase_step = 0usize;

        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..scenes.len()).collect();
            let mut shuffle_rng =
                ChaCha20Rng::seed_from_u64(derive_seed2(seed, "shuffle", epoch_counter as u64));
            order.shuffle(&mut shuffle_rng);

            for batch in order.chunks(train.batch_size) {
                let lr = cosine_lr(phase_step, base_lr, train.min_lr, warmup, period, restarts);
                let (mut grads, values) =
                    train_step(model, train, batch, &patches, scenes, seed, &mut forward_counter)?;
                if !values.total.is_finite() || values.total > DIVERGENCE_LIMIT {
                    return Err(Error::Diverged {
                        step: global_step + 1,
                        loss: values.total,
                    });
                }
                check_grads(&model.params, &grads, global_step + 1)?;
                clip_global_norm(&mut grads, train.clip_norm);
                match phase {
                    Phase::AdamW => {
                        adamw_step(&mut model.params, &grads, &mut opt, lr, train.weight_decay)?
                    }
                    Phase::Sgd => {
                        sgd_step(&mut model.params, &grads, &mut opt, lr, train.weight_decay)?
                    }
                }

                global_step += 1;
                phase_step += 1;
                writeln!(
                    log_file,
                    "{},{},{},{}",
                    global_step, lr, values.l_pose, values.l_uncertainty
                )?;
                log.push((global_step, lr, values.l_pose, values.l_uncertainty));
            }

            epoch_counter += 1;
            let ckpt = out_dir.join(format!("ckpt_epoch_{epoch_counter}"));
            save_checkpoint(&ckpt, &model.params)?;
            checkpoints.push(ckpt);
        }
    }
    log_file.flush()?;
    Ok(FitReport {
        steps: global_step,
        log_path,
        checkpoints,
        log,
    })
}

/// Forward + backward over one batch; returns per-parameter gradients (in
/// parameter order) and the realized loss values.
fn train_step(
    model: &Model,
    train: &TrainConfig,
    batch: &[usize],
    patches: &[Tensor],
    scenes: &[Scene],
    seed: u64,
    forward_counter: &mut u64,
) -> Result<(Vec<Tensor>, LossValues)> {
    let mut g = crate::diffgraph::Graph::new();
    let binding = model.params.bind(&mut g);
    let mut pose_nodes = Vec::with_capacity(batch.len());
    let mut unc_nodes = Vec::with_capacity(batch.len());

    for &scene_idx in batch {
        let pid = g.constant(patches[scene_idx].clone());
        let mut noise_rng =
            ChaCha20Rng::seed_from_u64(derive_seed2(seed, "train.noise", *forward_counter));
        let mut dropout = DropoutCtx {
            rng: ChaCha20Rng::seed_from_u64(derive_seed2(seed, "train.dropout", *forward_counter)),
            rate: train.dropout,
        };
        *forward_counter += 1;
        let nodes = model.forward(&mut g, &binding, pid, &mut noise_rng, Some(&mut dropout))?;
        let nll = mixture_nll(
            &mut g,
            nodes.trajectories,
            nodes.confidences,
            &scenes[scene_idx].future.points,
        )?;
        pose_nodes.push(nll);
        unc_nodes.push(nodes.uncertainty);
    }

    let (total, values) = total_loss(&mut g, &pose_nodes, &unc_nodes, train.lambda)?;
    let grads = g.backward(total)?;
    let grad_tensors: Vec<Tensor> = model
        .params
        .iter()
        .map(|(name, tensor)| grads.get_or_zeros(binding.id(name), tensor.shape()))
        .collect();
    Ok((grad_tensors, values))
}

/// Mean pose NLL over a scene set in inference mode (no dropout, fixed
/// per-scene noise); the before/after yardstick for training tests.
pub fn mean_pose_loss(model: &Model, scenes: &[Scene], eval_seed: u64) -> Result<f64> {
    let out = crate::metrics::evaluate(model, scenes, eval_seed)?;
    Ok(out.summary.cnll)
}

/// The schedule parameters `fit` uses for a phase; exposed so tests can
/// recompute the logged learning rates independently.
pub fn phase_schedule(
    train: &TrainConfig,
    dataset_len: usize,
    adamw: bool,
) -> (usize, usize, usize, f32, bool) {
    let steps_per_epoch = dataset_len.div_ceil(train.batch_size);
    let epochs = if adamw { train.epochs_adamw } else { train.epochs_sgd };
    let phase_steps = epochs * steps_per_epoch;
    let warmup = train
        .warmup_steps
        .unwrap_or_else(|| ((phase_steps as f64 * 0.05).round() as usize).max(1))
        .min(phase_steps);
    if adamw {
        (phase_steps, warmup, (phase_steps - warmup).max(1), train.lr_adamw, false)
    } else {
        let period = train
            .restart_period
            .unwrap_or_else(|| ((phase_steps - warmup) / 4).max(1));
        (phase_steps, warmup, period, train.lr_sgd, true)
    }
}
