//! Evaluation metrics: minADE / minFDE at K hypotheses, cNLL, retention
//! curves and R-AUC, plus the dataset-level evaluation driver.
//!
//! Retention semantics: scenes are sorted by predicted uncertainty
//! (ascending, ties broken by scene index); at fraction f the ceil(f*N)
//! least-uncertain scenes keep their error and the rejected rest contribute
//! zero (handed to a perfect fallback), so the value at f is
//! sum(retained errors) / N. R-AUC is the mean of the values over a fixed
//! 100-point fraction grid {0.01, ..., 1.00}.

use std::io::Write;
use std::path::Path;


use crate::decoder::TrajectoryBundle;
use crate::error::{Error, Result};
use crate::losses::mixture_nll_value;
use crate::model::Model;
use crate::scenegen::{rasterize, Scene};
use crate::seed::derive_seed2;

/// Metrics of a single scene.
#[derive(Clone, Debug, PartialEq)]
pub struct PerSceneEval {
    pub scene_id: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub cnll: f64,
    pub uncertainty: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetentionCurve {
    /// Ascending, last = 1.0.
    pub fractions: Vec<f64>,
    /// Mean retained error at each fraction.
    pub values: Vec<f64>,
    /// Mean of `values`: the R-AUC.
    pub area: f64,
}

/// Dataset-level summary, keyed like `summary.txt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub r_auc_cnll: f64,
    pub cnll: f64,
    pub min_ade_k: f64,
    pub min_fde_k: f64,
}

pub struct EvalOutput {
    pub per_scene: Vec<PerSceneEval>,
    pub retention: RetentionCurve,
    pub summary: Summary,
}

fn ade(traj: &[(f32, f32)], gt: &[(f32, f32)]) -> f64 {
    traj.iter()
        .zip(gt)
        .map(|(&(px, py), &(gx, gy))| {
            let dx = px as f64 - gx as f64;
            let dy = py as f64 - gy as f64;
            (dx * dx + dy * dy).sqrt()
        })
        .sum::<f64>()
        / gt.len() as f64
}

/// ADE of one hypothesis against the ground truth.
pub fn trajectory_ade(traj: &[(f32, f32)], gt: &[(f32, f32)]) -> Result<f64> {
    if traj.len() != gt.len() || gt.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "ade",
            lhs: vec![traj.len()],
            rhs: vec![gt.len()],
        });
    }
    Ok(ade(traj, gt))
}

/// min over hypotheses of the mean per-step displacement.
pub fn min_ade(bundle: &TrajectoryBundle, gt: &[(f32, f32)]) -> Result<f64> {
    if bundle.trajectories.is_empty() {
        return Err(Error::InvalidInput("empty bundle".into()));
    }
    let mut best = f64::INFINITY;
    for traj in &bundle.trajectories {
        best = best.min(trajectory_ade(traj, gt)?);
    }
    Ok(best)
}

/// min over hypotheses of the final-step displacement.
pub fn min_fde(bundle: &TrajectoryBundle, gt: &[(f32, f32)]) -> Result<f64> {
    if bundle.trajectories.is_empty() || gt.is_empty() {
        return Err(Error::InvalidInput("empty bundle or ground truth".into()));
    }
    let &(gx, gy) = gt.last().unwrap();
    let mut best = f64::INFINITY;
    for traj in &bundle.trajectories {
        if traj.len() != gt.len() {
            return Err(Error::ShapeMismatch {
                op: "min_fde",
                lhs: vec![traj.len()],
                rhs: vec![gt.len()],
            });
        }
        let &(px, py) = traj.last().unwrap();
        let dx = px as f64 - gx as f64;
        let dy = py as f64 - gy as f64;
        best = best.min((dx * dx + dy * dy).sqrt());
    }
    Ok(best)
}

/// Confidence-weighted NLL of the ground truth under the predicted mixture;
/// numerically the training pose loss.
pub fn cnll(bundle: &TrajectoryBundle, gt: &[(f32, f32)]) -> Result<f64> {
    mixture_nll_value(&bundle.trajectories, &bundle.confidences, gt)
}

/// The 100-point fraction grid used for R-AUC.
pub fn default_fractions() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

pub fn retention_curve(errors: &[f64], uncertainties: &[f64], fractions: &[f64]) -> Result<RetentionCurve> {
    if errors.is_empty() || errors.len() != uncertainties.len() {
        return Err(Error::InvalidInput(format!(
            "retention needs equal nonempty errors/uncertainties, got {} vs {}",
            errors.len(),
            uncertainties.len()
        )));
    }
    if fractions.is_empty()
        || fractions.windows(2).any(|w| w[0] >= w[1])
        || fractions.iter().any(|&f| !(0.0..=1.0).contains(&f) || f <= 0.0)
        || *fractions.last().unwrap() != 1.0
    {
        return Err(Error::InvalidInput(
            "fractions must be strictly ascending within (0, 1] and end at 1.0".into(),
        ));
    }
    let n = errors.len();
    // Ascending uncertainty, ties broken by scene index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainties[a].total_cmp(&uncertainties[b]).then(a.cmp(&b)));

    // Prefix sums over the retention order.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    for &i in &order {
        prefix.push(prefix.last().unwrap() + errors[i]);
    }

    let values: Vec<f64> = fractions
        .iter()
        .map(|&f| {
            let kept = kept_count(f, n);
            prefix[kept] / n as f64
        })
        .collect();
    let area = values.iter().sum::<f64>() / values.len() as f64;
    Ok(RetentionCurve {
        fractions: fractions.to_vec(),
        values,
        area,
    })
}

/// ceil(f * n) with a guard against f64 artifacts: grid fractions like 0.07
/// must yield exactly 7 of 100, not ceil(7.000000000000001) = 8.
fn kept_count(f: f64, n: usize) -> usize {
    (((f * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidInput(
            "spearman needs two equally sized samples of length >= 2".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    if da == 0.0 || db == 0.0 {
        return Ok(0.0);
    }
    Ok(num / (da * db).sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Evaluate a model over a dataset. Deterministic: per-scene noise seeds
/// derive from (eval_seed, "noise", scene index).
pub fn evaluate(model: &Model, scenes: &[Scene], eval_seed: u64) -> Result<EvalOutput> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset(std::path::PathBuf::from("<in-memory>")));
    }
    let mut per_scene = Vec::with_capacity(scenes.len());
    for (idx, scene) in scenes.iter().enumerate() {
        let raster = rasterize(scene, &model.raster_config)?;
        let bundle = model.predict(&raster, derive_seed2(eval_seed, "noise", idx as u64))?;
        let gt = &scene.future.points;
        per_scene.push(PerSceneEval {
            scene_id: idx,
            min_ade: min_ade(&bundle, gt)?,
            min_fde: min_fde(&bundle, gt)?,
            cnll: cnll(&bundle, gt)?,
            uncertainty: bundle.uncertainty,
        });
    }
    let errors: Vec<f64> = per_scene.iter().map(|p| p.cnll).collect();
    let uncertainties: Vec<f64> = per_scene.iter().map(|p| p.uncertainty as f64).collect();
    let retention = retention_curve(&errors, &uncertainties, &default_fractions())?;
    let n = per_scene.len() as f64;
    let summary = Summary {
        r_auc_cnll: retention.area,
        cnll: errors.iter().sum::<f64>() / n,
        min_ade_k: per_scene.iter().map(|p| p.min_ade).sum::<f64>() / n,
        min_fde_k: per_scene.iter().map(|p| p.min_fde).sum::<f64>() / n,
    };
    Ok(EvalOutput {
        per_scene,
        retention,
        summary,
    })
}

pub fn write_metrics_csv(path: &Path, per_scene: &[PerSceneEval]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "scene_id,min_ade,min_fde,cnll,u_hat")?;
    for p in per_scene {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.scene_id, p.min_ade, p.min_fde, p.cnll, p.uncertainty
        )?;
    }
    Ok(())
}

pub fn write_retention_csv(path: &Path, curve: &RetentionCurve) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "fraction,value")?;
    for (f, v) in curve.fractions.iter().zip(&curve.values) {
        writeln!(w, "{f},{v}")?;
    }
    Ok(())
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "R-AUC_cNLL = {}", summary.r_auc_cnll)?;
    writeln!(w, "cNLL = {}", summary.cnll)?;
    writeln!(w, "minADE_k5 = {}", summary.min_ade_k)?;
    writeln!(w, "minFDE_k5 = {}", summary.min_fde_k)?;
    Ok(())
}

/// All permutations of 0..n; the exhaustive ordering oracle for small n.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let v = rest.remove(i);
            prefix.push(v);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

/// R-AUC when scenes are retained in the given order (a permutation of
/// scene indices, most-confident first). Used by ordering-optimality tests.
pub fn r_auc_for_order(errors: &[f64], order: &[usize], fractions: &[f64]) -> f64 {
    let n = errors.len();
    let mut prefix = vec![0.0f64];
    for &i in order {
        prefix.push(prefix.last().unwrap() + errors[i]);
    }
    let values: Vec<f64> = fractions
        .iter()
        .map(|&f| {
            let kept = kept_count(f, n);
            prefix[kept] / n as f64
        })
        .collect();
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::scenegen::raster::RasterConfig;
    use crate::scenegen::{build_dataset, DatasetParams};
    use proptest::prelude::*;
    use rand::Rng;

    fn bundle(trajs: Vec<Vec<(f32, f32)>>) -> TrajectoryBundle {
        let k = trajs.len();
        TrajectoryBundle {
            trajectories: trajs,
            confidences: vec![1.0 / k as f32; k],
            uncertainty: 0.0,
        }
    }

    #[test]
    fn min_ade_examples() {
        let gt = vec![(0.0, 0.0), (1.0, 0.0)];
        // Some hypothesis exactly right -> 0.
        let b = bundle(vec![gt.clone(), vec![(5.0, 5.0), (6.0, 5.0)]]);
        assert_eq!(min_ade(&b, &gt).unwrap(), 0.0);
        // Constant offsets 1 m and 3 m -> 1.0.
        let b = bundle(vec![
            vec![(0.0, 1.0), (1.0, 1.0)],
            vec![(0.0, 3.0), (1.0, 3.0)],
        ]);
        assert!((min_ade(&b, &gt).unwrap() - 1.0).abs() < 1e-12);
        // Points off by (3,4) then exact -> (5 + 0) / 2 = 2.5.
        let b = bundle(vec![vec![(3.0, 4.0), (1.0, 0.0)]]);
        assert!((min_ade(&b, &gt).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn min_fde_examples() {
        let gt = vec![(0.0, 0.0), (1.0, 0.0)];
        let b = bundle(vec![vec![(9.0, 9.0), (1.0, 0.0)]]);
        assert_eq!(min_fde(&b, &gt).unwrap(), 0.0);
        let b = bundle(vec![vec![(0.0, 0.0), (4.0, 4.0)]]);
        assert!((min_fde(&b, &gt).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn min_fde_is_min_over_k_not_ade_winner() {
        // Hypothesis A: ADE 1, FDE 5. Hypothesis B: ADE 2, FDE 1 (T = 10).
        // min_fde must be 1 — the FDE minimum over k, not the FDE of the
        // ADE winner (which is A, with FDE 5).
        let t = 10;
        let gt: Vec<(f32, f32)> = vec![(0.0, 0.0); t];
        let mut a = vec![(0.0, 5.0f32 / 9.0); t - 1];
        a.push((0.0, 5.0));
        let mut b = vec![(0.0, 19.0f32 / 9.0); t - 1];
        b.push((0.0, 1.0));
        let bu = bundle(vec![a, b]);
        assert!((min_ade(&bu, &gt).unwrap() - 1.0).abs() < 1e-6); // A wins ADE
        let fde = min_fde(&bu, &gt).unwrap();
        assert!((fde - 1.0).abs() < 1e-12); // B wins FDE
        // Brute force over hypotheses agrees.
        let brute = bu
            .trajectories
            .iter()
            .map(|traj| {
                let (px, py) = *traj.last().unwrap();
                ((px as f64).powi(2) + (py as f64).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(fde, brute);
    }

    #[test]
    fn retention_brute_force_cases() {
        // Enumerated by hand: errors [1,2,3,4], ascending uncertainties.
        let errors = [1.0, 2.0, 3.0, 4.0];
        let unc = [0.1, 0.2, 0.3, 0.4];
        let fr = [0.25, 0.5, 0.75, 1.0];
        let curve = retention_curve(&errors, &unc, &fr).unwrap();
        assert_eq!(curve.values, vec![0.25, 0.75, 1.5, 2.5]);
        assert!((curve.area - 1.25).abs() < 1e-12);

        // Reversed uncertainties retain the worst first.
        let unc_rev = [0.4, 0.3, 0.2, 0.1];
        let curve = retention_curve(&errors, &unc_rev, &fr).unwrap();
        assert_eq!(curve.values, vec![1.0, 1.75, 2.25, 2.5]);
        assert!((curve.area - 1.875).abs() < 1e-12);
    }

    #[test]
    fn retention_all_zero_errors() {
        let errors = [0.0; 5];
        let unc = [5.0, 1.0, 3.0, 2.0, 4.0];
        let curve = retention_curve(&errors, &unc, &default_fractions()).unwrap();
        assert!(curve.values.iter().all(|&v| v == 0.0));
        assert_eq!(curve.area, 0.0);
    }

    #[test]
    fn retention_validates_inputs() {
        assert!(retention_curve(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
        assert!(retention_curve(&[], &[], &[1.0]).is_err());
        assert!(retention_curve(&[1.0], &[1.0], &[0.5, 0.4, 1.0]).is_err());
        assert!(retention_curve(&[1.0], &[1.0], &[0.5]).is_err());
        assert!(retention_curve(&[1.0], &[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn oracle_ordering_minimizes_r_auc_exhaustively() {
        // For every N <= 7 and random errors, retaining in ascending-error
        // order beats (or ties) every other ordering.
        let mut rng = ChaCha20Rng::seed_from_u64(123);
        for n in 1..=7usize {
            let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let fractions = default_fractions();
            let mut oracle_order: Vec<usize> = (0..n).collect();
            oracle_order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]));
            let oracle = r_auc_for_order(&errors, &oracle_order, &fractions);
            for perm in permutations(n) {
                let area = r_auc_for_order(&errors, &perm, &fractions);
                assert!(
                    oracle <= area + 1e-12,
                    "n={n}: oracle {oracle} > perm {area:?}"
                );
            }
        }
    }

    #[test]
    fn tie_break_is_by_scene_index() {
        let errors = [5.0, 1.0];
        let unc = [0.3, 0.3];
        let curve = retention_curve(&errors, &unc, &[0.5, 1.0]).unwrap();
        // Equal uncertainty: scene 0 retained first.
        assert_eq!(curve.values[0], 2.5);
    }

    proptest! {
        #[test]
        fn retention_at_full_fraction_is_plain_mean(
            errors in proptest::collection::vec(0.0f64..10.0, 1..20),
            seed in 0u64..100,
        ) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let unc: Vec<f64> = (0..errors.len()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let curve = retention_curve(&errors, &unc, &default_fractions()).unwrap();
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            prop_assert!((curve.values.last().unwrap() - mean).abs() < 1e-9);
        }

        #[test]
        fn retention_values_non_decreasing(
            errors in proptest::collection::vec(0.0f64..10.0, 1..20),
            seed in 0u64..100,
        ) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let unc: Vec<f64> = (0..errors.len()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let curve = retention_curve(&errors, &unc, &default_fractions()).unwrap();
            for w in curve.values.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }

        #[test]
        fn min_ade_bounded_by_max_step_error(seed in 0u64..200) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let t = rng.gen_range(1..10usize);
            let gt: Vec<(f32, f32)> = (0..t).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect();
            let trajs: Vec<Vec<(f32, f32)>> = (0..3)
                .map(|_| (0..t).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect())
                .collect();
            let b = bundle(trajs.clone());
            let made = min_ade(&b, &gt).unwrap();
            let min_max_step: f64 = trajs
                .iter()
                .map(|traj| {
                    traj.iter()
                        .zip(&gt)
                        .map(|(&(px, py), &(gx, gy))| {
                            let dx = px as f64 - gx as f64;
                            let dy = py as f64 - gy as f64;
                            (dx * dx + dy * dy).sqrt()
                        })
                        .fold(0.0f64, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            prop_assert!(made <= min_max_step + 1e-12);
            prop_assert!(min_fde(&b, &gt).unwrap() >= 0.0);
        }
    }

    fn tiny_model() -> Model {
        let config = ModelConfig {
            k: 3,
            horizon: 25,
            in_channels: 12,
            patch_size: 16,
            enc_layers: 1,
            enc_dim: 32,
            enc_heads: 2,
            latent_dim: 16,
            noise_dim: 4,
            dec_layers: 1,
            dec_dim: 32,
            dec_heads: 2,
        };
        Model::init(config, RasterConfig::default(), 5).unwrap()
    }

    #[test]
    fn single_scene_summary_equals_scene_metrics() {
        let model = tiny_model();
        let scenes = build_dataset(&DatasetParams {
            count: 1,
            seed_base: 3,
            shifted: false,
            kind: None,
            difficulty: None,
        });
        let out = evaluate(&model, &scenes, 9).unwrap();
        let p = &out.per_scene[0];
        assert_eq!(out.summary.cnll, p.cnll);
        assert_eq!(out.summary.min_ade_k, p.min_ade);
        assert_eq!(out.summary.min_fde_k, p.min_fde);
        // One scene: every retention value equals its error.
        assert!((out.summary.r_auc_cnll - p.cnll).abs() < 1e-9);
    }

    #[test]
    fn duplicated_scenes_keep_summary() {
        // N = 100 aligns with the fraction grid, so duplication changes no
        // retained proportion.
        let model = tiny_model();
        let scenes = build_dataset(&DatasetParams {
            count: 100,
            seed_base: 50,
            shifted: false,
            kind: None,
            difficulty: None,
        });
        let mut doubled = scenes.clone();
        doubled.extend(scenes.iter().cloned());
        let a = evaluate(&model, &scenes, 4).unwrap();
        // Duplicated copies must reuse the same per-scene noise to get the
        // same predictions; evaluate derives noise from the index, so feed
        // the duplicate block the same seed stream by evaluating separately.
        let b = evaluate(&model, &doubled[..100], 4).unwrap();
        let mut per = a.per_scene.clone();
        per.extend(b.per_scene.clone());
        let errors: Vec<f64> = per.iter().map(|p| p.cnll).collect();
        let unc: Vec<f64> = per.iter().map(|p| p.uncertainty as f64).collect();
        let curve = retention_curve(&errors, &unc, &default_fractions()).unwrap();
        assert!((curve.area - a.retention.area).abs() < 1e-9);
        let mean_cnll = errors.iter().sum::<f64>() / errors.len() as f64;
        assert!((mean_cnll - a.summary.cnll).abs() < 1e-9);
    }

    #[test]
    fn oracle_uncertainty_beats_random_orderings() {
        let model = tiny_model();
        let scenes = build_dataset(&DatasetParams {
            count: 20,
            seed_base: 200,
            shifted: false,
            kind: None,
            difficulty: None,
        });
        let out = evaluate(&model, &scenes, 7).unwrap();
        let errors: Vec<f64> = out.per_scene.iter().map(|p| p.cnll).collect();
        let fractions = default_fractions();
        let oracle = retention_curve(&errors, &errors, &fractions).unwrap().area;
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for _ in 0..100 {
            let random_unc: Vec<f64> = (0..errors.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let area = retention_curve(&errors, &random_unc, &fractions).unwrap().area;
            assert!(oracle <= area + 1e-12);
        }
    }

    #[test]
    fn evaluate_is_deterministic() {
        let model = tiny_model();
        let scenes = build_dataset(&DatasetParams {
            count: 5,
            seed_base: 11,
            shifted: true,
            kind: None,
            difficulty: None,
        });
        let a = evaluate(&model, &scenes, 3).unwrap();
        let b = evaluate(&model, &scenes, 3).unwrap();
        assert_eq!(a.per_scene, b.per_scene);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        let r = spearman(&a, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r, 0.0);
        assert!(spearman(&a, &[1.0]).is_err());
    }

    #[test]
    fn writers_emit_expected_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let per = vec![PerSceneEval {
            scene_id: 0,
            min_ade: 1.5,
            min_fde: 2.0,
            cnll: 50.0,
            uncertainty: 49.5,
        }];
        let curve = retention_curve(&[1.0], &[0.0], &[0.5, 1.0]).unwrap();
        let summary = Summary {
            r_auc_cnll: curve.area,
            cnll: 50.0,
            min_ade_k: 1.5,
            min_fde_k: 2.0,
        };
        write_metrics_csv(&dir.path().join("metrics.csv"), &per).unwrap();
        write_retention_csv(&dir.path().join("retention.csv"), &curve).unwrap();
        write_summary(&dir.path().join("summary.txt"), &summary).unwrap();
        let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(text.contains("R-AUC_cNLL = "));
        assert!(text.contains("cNLL = 50"));
        assert!(text.contains("minADE_k5 = 1.5"));
        assert!(text.contains("minFDE_k5 = 2"));
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("scene_id,min_ade,min_fde,cnll,u_hat\n"));
    }
}
