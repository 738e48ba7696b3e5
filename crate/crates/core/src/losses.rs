//! Training objective: mixture-of-Gaussians trajectory NLL plus an RMSE
//! regression of the predicted uncertainty onto the per-sample NLL.
//!
//! A predicted trajectory is treated as the mean of one 2T-dimensional
//! Gaussian with identity covariance, so for hypothesis k with confidence
//! c_k the sample NLL is
//!
//!   l_pose = -logsumexp_k( log c_k - 0.5 * ||xhat_k - gt||^2 - T * log 2pi )
//!
//! computed in log space throughout. `log c_k` is floored at -1e9 so a zero
//! confidence stays finite. The uncertainty head regresses these values with
//! sqrt(mean((l_pose_i - u_i)^2)); the targets are detached so the
//! uncertainty loss cannot push trajectories toward higher NLL.

use crate::diffgraph::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Scalars produced by one batch loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossValues {
    /// Batch mean of the per-sample trajectory NLL.
    pub l_pose: f32,
    /// RMSE between predicted uncertainties and detached per-sample NLLs.
    pub l_uncertainty: f32,
    /// l_pose + lambda * l_uncertainty.
    pub total: f32,
}

fn check_confidences(c: &[f32]) -> Result<()> {
    let sum: f32 = c.iter().sum();
    if (sum - 1.0).abs() > 1e-5 {
        return Err(Error::InvalidInput(format!(
            "confidences must sum to 1 within 1e-5, got {sum}"
        )));
    }
    Ok(())
}

/// Graph-side mixture NLL for one sample.
///
/// `xhat`: [K, 2T] trajectories (x, y interleaved per step), `conf`: [K]
/// probabilities, `gt`: T ground-truth waypoints. Returns a scalar node.
pub fn mixture_nll(g: &mut Graph, xhat: NodeId, conf: NodeId, gt: &[(f32, f32)]) -> Result<NodeId> {
    let horizon = gt.len();
    let shape = g.value(xhat).shape().to_vec();
    if shape.len() != 2 || shape[1] != 2 * horizon {
        return Err(Error::ShapeMismatch {
            op: "mixture_nll",
            lhs: shape,
            rhs: vec![horizon, 2],
        });
    }
    let k = shape[0];
    if g.value(conf).numel() != k {
        return Err(Error::ShapeMismatch {
            op: "mixture_nll",
            lhs: g.value(conf).shape().to_vec(),
            rhs: vec![k],
        });
    }
    check_confidences(g.value(conf).data())?;

    let mut gt_flat = Vec::with_capacity(2 * horizon);
    for &(x, y) in gt {
        gt_flat.push(x);
        gt_flat.push(y);
    }
    let gt_node = g.constant(Tensor::new(vec![1, 2 * horizon], gt_flat)?);

    let diff = g.sub(xhat, gt_node)?;
    let sq = g.mul(diff, diff)?;
    let sqdist = g.sum(sq, 1)?; // [K, 1]
    let sqdist = g.reshape(sqdist, vec![k])?;

    let conf_flat = g.reshape(conf, vec![k])?;
    let log_c = g.log(conf_flat)?;
    let half_sq = g.scale(sqdist, 0.5)?;
    let exponent = g.sub(log_c, half_sq)?;
    let lse = g.logsumexp(exponent, 0)?; // [1]
    let neg = g.scale(lse, -1.0)?;
    g.add_scalar(neg, (horizon as f64 * LN_2PI) as f32)
}

/// Pure-value mixture NLL (f64 accumulation); the evaluation-side cNLL.
///
/// `xhat[k]` is the k-th hypothesis as T waypoints.
pub fn mixture_nll_value(xhat: &[Vec<(f32, f32)>], conf: &[f32], gt: &[(f32, f32)]) -> Result<f64> {
    if xhat.len() != conf.len() || xhat.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "mixture_nll",
            lhs: vec![xhat.len()],
            rhs: vec![conf.len()],
        });
    }
    let horizon = gt.len();
    for traj in xhat {
        if traj.len() != horizon {
            return Err(Error::ShapeMismatch {
                op: "mixture_nll",
                lhs: vec![traj.len()],
                rhs: vec![horizon],
            });
        }
    }
    check_confidences(conf)?;

    let floor = crate::diffgraph::kernels::LOG_FLOOR;
    let exponents: Vec<f64> = xhat
        .iter()
        .zip(conf)
        .map(|(traj, &c)| {
            let sqdist: f64 = traj
                .iter()
                .zip(gt)
                .map(|(&(px, py), &(gx, gy))| {
                    let dx = px as f64 - gx as f64;
                    let dy = py as f64 - gy as f64;
                    dx * dx + dy * dy
                })
                .sum();
            let log_c = if c <= 0.0 { floor } else { (c as f64).ln().max(floor) };
            log_c - 0.5 * sqdist
        })
        .collect();
    let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + exponents.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
    Ok(horizon as f64 * LN_2PI - lse)
}

/// RMSE between predicted uncertainties and their (detached) targets.
///
/// `u_hats` are per-sample scalar nodes; `targets` the detached per-sample
/// NLL values. Errors on an empty batch.
pub fn uncertainty_loss(g: &mut Graph, u_hats: &[NodeId], targets: &[f32]) -> Result<NodeId> {
    if u_hats.is_empty() || u_hats.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "uncertainty_loss needs equal nonempty batches, got {} vs {}",
            u_hats.len(),
            targets.len()
        )));
    }
    let b = u_hats.len();
    let mut flat = Vec::with_capacity(b);
    for &u in u_hats {
        flat.push(g.reshape(u, vec![1])?);
    }
    let u_vec = if b == 1 { flat[0] } else { g.concat(&flat, 0)? };
    let t_node = g.constant(Tensor::new(vec![b], targets.to_vec())?);
    let diff = g.sub(u_vec, t_node)?;
    let sq = g.mul(diff, diff)?;
    let mse = g.mean(sq, 0)?;
    g.sqrt(mse)
}

/// Pure-value RMSE, for evaluation and tests.
pub fn uncertainty_loss_value(targets: &[f32], u_hats: &[f32]) -> Result<f64> {
    if targets.is_empty() || targets.len() != u_hats.len() {
        return Err(Error::InvalidInput(format!(
            "uncertainty_loss needs equal nonempty batches, got {} vs {}",
            targets.len(),
            u_hats.len()
        )));
    }
    let mse = targets
        .iter()
        .zip(u_hats)
        .map(|(&t, &u)| {
            let d = t as f64 - u as f64;
            d * d
        })
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mse.sqrt())
}

/// Combine per-sample NLL nodes and uncertainty heads into the batch loss:
/// total = mean_i(l_pose_i) + lambda * RMSE(detach(l_pose), u_hat).
///
/// Returns the total-loss node plus the realized [`LossValues`].
pub fn total_loss(
    g: &mut Graph,
    l_pose: &[NodeId],
    u_hats: &[NodeId],
    lambda: f32,
) -> Result<(NodeId, LossValues)> {
    if l_pose.is_empty() || l_pose.len() != u_hats.len() {
        return Err(Error::InvalidInput(format!(
            "total_loss needs equal nonempty batches, got {} vs {}",
            l_pose.len(),
            u_hats.len()
        )));
    }
    let b = l_pose.len();
    let mut flat = Vec::with_capacity(b);
    for &l in l_pose {
        flat.push(g.reshape(l, vec![1])?);
    }
    let pose_vec = if b == 1 { flat[0] } else { g.concat(&flat, 0)? };
    let pose_mean = g.mean(pose_vec, 0)?;

    // Detach: targets enter as constants built from the forward values.
    let targets: Vec<f32> = l_pose.iter().map(|&l| g.value(l).item()).collect();
    let unc = uncertainty_loss(g, u_hats, &targets)?;

    let scaled = g.scale(unc, lambda)?;
    let total = g.add(pose_mean, scaled)?;
    let values = LossValues {
        l_pose: g.value(pose_mean).item(),
        l_uncertainty: g.value(unc).item(),
        total: g.value(total).item(),
    };
    Ok((total, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn xhat_tensor(trajs: &[Vec<(f32, f32)>]) -> Tensor {
        let k = trajs.len();
        let t = trajs[0].len();
        let mut data = Vec::with_capacity(k * 2 * t);
        for traj in trajs {
            for &(x, y) in traj {
                data.push(x);
                data.push(y);
            }
        }
        Tensor::new(vec![k, 2 * t], data).unwrap()
    }

    fn nll_via_graph(trajs: &[Vec<(f32, f32)>], conf: &[f32], gt: &[(f32, f32)]) -> f32 {
        let mut g = Graph::new();
        let x = g.leaf(xhat_tensor(trajs));
        let c = g.leaf(Tensor::new(vec![conf.len()], conf.to_vec()).unwrap());
        let nll = mixture_nll(&mut g, x, c, gt).unwrap();
        g.value(nll).item()
    }

    // Frozen closed forms: T*ln(2pi) at the mean, plus 0.5*d^2 per offset,
    // plus log K for a vanished far component.
    const NLL_EXACT_T1: f64 = 1.837_877_066_409_345_3;
    const NLL_OFFSET_1M: f64 = 2.337_877_066_409_345_3;
    const NLL_TWO_COMP: f64 = 2.531_024_246_969_290_7;
    const NLL_EXACT_T25: f64 = 45.946_926_660_233_636;

    #[test]
    fn exact_match_t1() {
        let gt = vec![(1.5, -2.0)];
        let v = nll_via_graph(&[gt.clone()], &[1.0], &gt);
        assert!((v as f64 - NLL_EXACT_T1).abs() < 1e-5, "{v}");
        let s = mixture_nll_value(&[gt.clone()], &[1.0], &gt).unwrap();
        assert!((s - NLL_EXACT_T1).abs() < 1e-9);
    }

    #[test]
    fn one_meter_offset_adds_half() {
        let gt = vec![(0.0, 0.0)];
        let pred = vec![vec![(1.0, 0.0)]];
        let v = nll_via_graph(&pred, &[1.0], &gt);
        assert!((v as f64 - NLL_OFFSET_1M).abs() < 1e-5, "{v}");
        let s = mixture_nll_value(&pred, &[1.0], &gt).unwrap();
        assert!((s - NLL_OFFSET_1M).abs() < 1e-9);
    }

    #[test]
    fn far_component_underflows_to_log_k() {
        let gt = vec![(0.0, 0.0)];
        let pred = vec![vec![(0.0, 0.0)], vec![(100.0, 0.0)]];
        let v = nll_via_graph(&pred, &[0.5, 0.5], &gt);
        assert!((v as f64 - NLL_TWO_COMP).abs() < 1e-5, "{v}");
        let s = mixture_nll_value(&pred, &[0.5, 0.5], &gt).unwrap();
        assert!((s - NLL_TWO_COMP).abs() < 1e-9);
    }

    #[test]
    fn exact_match_t25() {
        let gt: Vec<(f32, f32)> = (0..25).map(|i| (i as f32 * 0.8, -(i as f32) * 0.1)).collect();
        let v = nll_via_graph(&[gt.clone()], &[1.0], &gt);
        assert!((v as f64 - NLL_EXACT_T25).abs() < 1e-4, "{v}");
        let s = mixture_nll_value(&[gt.clone()], &[1.0], &gt).unwrap();
        assert!((s - NLL_EXACT_T25).abs() < 1e-9);
    }

    #[test]
    fn zero_confidence_stays_finite() {
        let gt = vec![(0.0, 0.0)];
        let pred = vec![vec![(0.0, 0.0)], vec![(1.0, 1.0)]];
        let v = nll_via_graph(&pred, &[1.0, 0.0], &gt);
        assert!(v.is_finite());
        assert!((v as f64 - NLL_EXACT_T1).abs() < 1e-5);
    }

    #[test]
    fn confidence_sum_checked() {
        let gt = vec![(0.0, 0.0)];
        let mut g = Graph::new();
        let x = g.leaf(xhat_tensor(&[gt.clone()]));
        let c = g.leaf(Tensor::new(vec![1], vec![0.7]).unwrap());
        assert!(matches!(
            mixture_nll(&mut g, x, c, &gt),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn graph_and_value_routes_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..20 {
            let k = rng.gen_range(1..=5usize);
            let t = rng.gen_range(1..=25usize);
            let gt: Vec<(f32, f32)> = (0..t)
                .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let trajs: Vec<Vec<(f32, f32)>> = (0..k)
                .map(|_| {
                    gt.iter()
                        .map(|&(x, y)| (x + rng.gen_range(-2.0..2.0), y + rng.gen_range(-2.0..2.0)))
                        .collect()
                })
                .collect();
            let raw: Vec<f32> = (0..k).map(|_| rng.gen_range(0.1..1.0f32)).collect();
            let sum: f32 = raw.iter().sum();
            let conf: Vec<f32> = raw.iter().map(|v| v / sum).collect();
            let a = nll_via_graph(&trajs, &conf, &gt) as f64;
            let b = mixture_nll_value(&trajs, &conf, &gt).unwrap();
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn nll_grad_check_wrt_trajectories_and_confidences() {
        let gt: Vec<(f32, f32)> = vec![(1.0, 0.5), (2.0, 1.0), (3.0, 1.5)];
        let trajs = vec![
            vec![(1.2, 0.4), (2.1, 0.8), (3.3, 1.9)],
            vec![(0.5, 0.0), (1.0, 0.2), (2.0, 0.4)],
        ];
        let conf = [0.6f32, 0.4];

        let gt2 = gt.clone();
        let err = grad_check(
            |g, xid| {
                let c = g.constant(Tensor::new(vec![2], conf.to_vec()).unwrap());
                mixture_nll(g, xid, c, &gt2)
            },
            &xhat_tensor(&trajs),
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-2, "xhat grad rel err {err}");

        let gt3 = gt.clone();
        let trajs2 = trajs.clone();
        let c_tensor = Tensor::new(vec![2], conf.to_vec()).unwrap();
        let err = grad_check(
            |g, cid| {
                let x = g.constant(xhat_tensor(&trajs2));
                mixture_nll(g, x, cid, &gt3)
            },
            &c_tensor,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-2, "conf grad rel err {err}");
    }

    #[test]
    fn uncertainty_zero_when_exact() {
        let mut g = Graph::new();
        let u1 = g.leaf(Tensor::scalar(2.5));
        let u2 = g.leaf(Tensor::scalar(-1.0));
        let l = uncertainty_loss(&mut g, &[u1, u2], &[2.5, -1.0]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        assert_eq!(uncertainty_loss_value(&[45.946918], &[45.946918]).unwrap(), 0.0);
    }

    #[test]
    fn uncertainty_sqrt_ten_case() {
        // targets [0, 0], u = [2, 4] -> sqrt((4 + 16) / 2) = sqrt(10)
        let mut g = Graph::new();
        let u1 = g.leaf(Tensor::scalar(2.0));
        let u2 = g.leaf(Tensor::scalar(4.0));
        let l = uncertainty_loss(&mut g, &[u1, u2], &[0.0, 0.0]).unwrap();
        assert!((g.value(l).item() as f64 - 3.162_277_660_168_379_5).abs() < 1e-6);
    }

    #[test]
    fn uncertainty_empty_batch_errors() {
        let mut g = Graph::new();
        assert!(uncertainty_loss(&mut g, &[], &[]).is_err());
        assert!(uncertainty_loss_value(&[], &[]).is_err());
    }

    #[test]
    fn total_loss_lambda_zero_is_pose_mean() {
        let gt = vec![(0.0, 0.0)];
        let mut g = Graph::new();
        let x = g.leaf(xhat_tensor(&[vec![(1.0, 0.0)]]));
        let c = g.leaf(Tensor::new(vec![1], vec![1.0]).unwrap());
        let nll = mixture_nll(&mut g, x, c, &gt).unwrap();
        let u = g.leaf(Tensor::scalar(123.0));
        let (_, values) = total_loss(&mut g, &[nll], &[u], 0.0).unwrap();
        assert!((values.total - values.l_pose).abs() < 1e-6);
        assert!((values.l_pose as f64 - NLL_OFFSET_1M).abs() < 1e-5);
    }

    #[test]
    fn total_loss_perfect_predictions() {
        // Perfect trajectories and u = T*ln(2pi) -> total = T*ln(2pi).
        let t = 25;
        let gt: Vec<(f32, f32)> = (0..t).map(|i| (i as f32, 0.0)).collect();
        let mut g = Graph::new();
        let x = g.leaf(xhat_tensor(&[gt.clone()]));
        let c = g.leaf(Tensor::new(vec![1], vec![1.0]).unwrap());
        let nll = mixture_nll(&mut g, x, c, &gt).unwrap();
        let u = g.leaf(Tensor::scalar(g.value(nll).item()));
        let (_, values) = total_loss(&mut g, &[nll], &[u], 1.0).unwrap();
        assert!((values.total as f64 - NLL_EXACT_T25).abs() < 1e-4);
        assert!(values.l_uncertainty.abs() < 1e-6);
    }

    #[test]
    fn total_loss_matching_uncertainty_vanishes() {
        // lambda = 1, B = 1, l_pose = u -> total = l_pose.
        let gt = vec![(0.0, 0.0)];
        let mut g = Graph::new();
        let x = g.leaf(xhat_tensor(&[vec![(1.0, 0.0)]]));
        let c = g.leaf(Tensor::new(vec![1], vec![1.0]).unwrap());
        let nll = mixture_nll(&mut g, x, c, &gt).unwrap();
        let u = g.leaf(Tensor::scalar(g.value(nll).item()));
        let (_, values) = total_loss(&mut g, &[nll], &[u], 1.0).unwrap();
        assert!((values.total as f64 - NLL_OFFSET_1M).abs() < 1e-5);
    }

    #[test]
    fn uncertainty_targets_are_detached() {
        // Gradient of total wrt xhat must be unaffected by lambda.
        let gt = vec![(0.0, 0.0), (1.0, 1.0)];
        let trajs = vec![vec![(0.5, 0.2), (1.5, 0.9)]];
        let grad_for = |lambda: f32| -> Vec<f32> {
            let mut g = Graph::new();
            let x = g.leaf(xhat_tensor(&trajs).with_grad());
            let c = g.constant(Tensor::new(vec![1], vec![1.0]).unwrap());
            let nll = mixture_nll(&mut g, x, c, &gt).unwrap();
            let u = g.constant(Tensor::scalar(0.0));
            let (total, _) = total_loss(&mut g, &[nll], &[u], lambda).unwrap();
            let grads = g.backward(total).unwrap();
            grads.get(x).unwrap().data().to_vec()
        };
        assert_eq!(grad_for(0.0), grad_for(5.0));
    }

    proptest! {
        // Density of an identity-covariance mixture is maximized at a
        // component mean: NLL >= T*ln(2pi) always.
        #[test]
        fn nll_lower_bound(seed in 0u64..1000) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let k = rng.gen_range(1..=5usize);
            let t = rng.gen_range(1..=10usize);
            let gt: Vec<(f32, f32)> = (0..t)
                .map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            let trajs: Vec<Vec<(f32, f32)>> = (0..k)
                .map(|_| (0..t).map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0))).collect())
                .collect();
            let raw: Vec<f32> = (0..k).map(|_| rng.gen_range(0.01..1.0f32)).collect();
            let sum: f32 = raw.iter().sum();
            let conf: Vec<f32> = raw.iter().map(|v| v / sum).collect();
            let v = mixture_nll_value(&trajs, &conf, &gt).unwrap();
            prop_assert!(v >= t as f64 * LN_2PI - 1e-6, "{v} < bound");
        }

        // Invariance under simultaneous permutation of (xhat_k, c_k).
        #[test]
        fn nll_permutation_invariant(seed in 0u64..200) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let k = rng.gen_range(2..=5usize);
            let t = rng.gen_range(1..=8usize);
            let gt: Vec<(f32, f32)> = (0..t)
                .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let trajs: Vec<Vec<(f32, f32)>> = (0..k)
                .map(|_| (0..t).map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0))).collect())
                .collect();
            let raw: Vec<f32> = (0..k).map(|_| rng.gen_range(0.01..1.0f32)).collect();
            let sum: f32 = raw.iter().sum();
            let conf: Vec<f32> = raw.iter().map(|v| v / sum).collect();

            let mut order: Vec<usize> = (0..k).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let trajs_p: Vec<Vec<(f32, f32)>> = order.iter().map(|&i| trajs[i].clone()).collect();
            let conf_p: Vec<f32> = order.iter().map(|&i| conf[i]).collect();

            let a = mixture_nll_value(&trajs, &conf, &gt).unwrap();
            let b = mixture_nll_value(&trajs_p, &conf_p, &gt).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        // Scaling every offset away from gt by s > 1 never decreases the NLL.
        #[test]
        fn nll_monotone_in_offset_scale(seed in 0u64..200, s in 1.0f32..4.0) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let k = rng.gen_range(1..=5usize);
            let t = rng.gen_range(1..=8usize);
            let gt: Vec<(f32, f32)> = (0..t)
                .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect();
            let trajs: Vec<Vec<(f32, f32)>> = (0..k)
                .map(|_| gt.iter().map(|&(x, y)| (x + rng.gen_range(-3.0..3.0), y + rng.gen_range(-3.0..3.0))).collect())
                .collect();
            let scaled: Vec<Vec<(f32, f32)>> = trajs
                .iter()
                .map(|traj| {
                    traj.iter()
                        .zip(&gt)
                        .map(|(&(x, y), &(gx, gy))| (gx + s * (x - gx), gy + s * (y - gy)))
                        .collect()
                })
                .collect();
            let conf = vec![1.0 / k as f32; k];
            let base = mixture_nll_value(&trajs, &conf, &gt).unwrap();
            let far = mixture_nll_value(&scaled, &conf, &gt).unwrap();
            prop_assert!(far >= base - 1e-6, "{far} < {base}");
        }

        // RMSE is symmetric in residual sign and zero iff residuals vanish.
        #[test]
        fn rmse_sign_symmetric(vals in proptest::collection::vec(-10.0f32..10.0, 1..6)) {
            let zeros = vec![0.0f32; vals.len()];
            let pos = uncertainty_loss_value(&zeros, &vals).unwrap();
            let neg_vals: Vec<f32> = vals.iter().map(|v| -v).collect();
            let neg = uncertainty_loss_value(&zeros, &neg_vals).unwrap();
            prop_assert!((pos - neg).abs() < 1e-9);
            let zero_iff = uncertainty_loss_value(&vals, &vals).unwrap();
            prop_assert_eq!(zero_iff, 0.0);
            if vals.iter().any(|v| v.abs() > 1e-3) {
                prop_assert!(pos > 0.0);
            }
        }
    }
}
