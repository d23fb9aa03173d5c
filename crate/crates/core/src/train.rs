//! Ground-truth assignments, the weighted transport loss, and the training
//! loop.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SomaError};
use crate::labeler::{decode_frame, DecodeMode};
use crate::metrics::{accuracy, f1_frame};
use crate::mocap::{Frame, LabeledFrame, Labeling};
use crate::net::{NetConfig, NetParams};
use crate::ot;

/// `ln(1e-12)`: log-probabilities below this contribute a constant.
pub const LOG_CLAMP: f64 = -27.631_021_115_928_547;

/// Binary `(n+1) x (M+1)` target. Labeled points mark their label column,
/// ghosts the null column; every label without a point marks the dustbin
/// row. The dustbin corner stays 0.
pub fn build_gt_assignment(labels: &Labeling, occluded: &[usize], num_markers: usize) -> Result<Array2<f64>> {
    labels.check_injective()?;
    let n = labels.len();
    let mut gt = Array2::zeros((n + 1, num_markers + 1));
    let mut present = vec![false; num_markers];
    for (i, l) in labels.0.iter().enumerate() {
        match l {
            Some(m) if *m >= num_markers => {
                return Err(SomaError::InvalidArgument(format!("label {m} outside {num_markers} markers")))
            }
            Some(m) => {
                gt[[i, *m]] = 1.0;
                present[*m] = true;
            }
            None => gt[[i, num_markers]] = 1.0,
        }
    }
    for &m in occluded {
        if m >= num_markers || present[m] {
            return Err(SomaError::Constraint(format!("marker {m} is both present and occluded")));
        }
    }
    for (m, p) in present.iter().enumerate() {
        if !p {
            gt[[n, m]] = 1.0;
        }
    }
    Ok(gt)
}

/// Reciprocal-frequency weights for the null column and the dustbin row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub null: f64,
    pub dustbin: f64,
}

impl ClassWeights {
    pub const DEFAULT_CAP: f64 = 100.0;

    /// `null = 1 / (ghost rows / real rows)`, `dustbin = 1 / (missing
    /// labels / real columns)`, capped at `cap`. A class that never occurs
    /// carries no target mass and keeps weight 1.
    pub fn from_batch(gts: &[Array2<f64>], cap: f64) -> Result<Self> {
        if gts.is_empty() {
            return Err(SomaError::InvalidArgument("class weights need a non-empty batch".into()));
        }
        let (mut rows, mut nulls, mut cols, mut dust) = (0.0, 0.0, 0.0, 0.0);
        for gt in gts {
            let (r, c) = gt.dim();
            let (n, m) = (r - 1, c - 1);
            rows += n as f64;
            cols += m as f64;
            nulls += (0..n).map(|i| gt[[i, m]]).sum::<f64>();
            dust += (0..m).map(|j| gt[[n, j]]).sum::<f64>();
        }
        let weight = |count: f64, total: f64| {
            if count == 0.0 || total == 0.0 {
                1.0
            } else {
                (total / count).min(cap)
            }
        };
        Ok(ClassWeights {
            null: weight(nulls, rows),
            dustbin: weight(dust, cols),
        })
    }

    pub fn matrix(&self, num_points: usize, num_markers: usize) -> Array2<f64> {
        let (n, m) = (num_points, num_markers);
        Array2::from_shape_fn((n + 1, m + 1), |(i, j)| match (i == n, j == m) {
            (false, true) => self.null,
            (true, false) => self.dustbin,
            _ => 1.0,
        })
    }
}

/// `c_l * L_A + c_reg * ||phi||^2` evaluated directly on an augmented
/// assignment.
pub fn loss(
    a_aug: &Array2<f64>,
    gt: &Array2<f64>,
    weights: &Array2<f64>,
    params: &[Array2<f64>],
    c_l: f64,
    c_reg: f64,
) -> Result<f64> {
    if a_aug.dim() != gt.dim() || gt.dim() != weights.dim() {
        return Err(SomaError::Shape(format!(
            "assignment {:?}, target {:?}, weights {:?}",
            a_aug.dim(),
            gt.dim(),
            weights.dim()
        )));
    }
    let mass = gt.sum();
    if mass <= 0.0 {
        return Err(SomaError::InvalidArgument("ground truth carries no mass".into()));
    }
    let mut nll = 0.0;
    for ((&a, &g), &w) in a_aug.iter().zip(gt).zip(weights) {
        if g != 0.0 {
            nll += w * g * a.ln().max(LOG_CLAMP);
        }
    }
    Ok(c_l * (-nll / mass) + c_reg * squared_norm(params))
}

pub fn squared_norm(params: &[Array2<f64>]) -> f64 {
    params.iter().flat_map(|t| t.iter()).map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub c_l: f64,
    pub c_reg: f64,
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub sinkhorn_iters: usize,
    pub weight_cap: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub decode: DecodeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c_l: 1.0,
            c_reg: 5e-5,
            learning_rate: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 3,
            early_stop_patience: 8,
            max_epochs: 100,
            batch_size: 32,
            sinkhorn_iters: ot::DEFAULT_ITERS,
            weight_cap: ClassWeights::DEFAULT_CAP,
            init_seed: 0,
            shuffle_seed: 1,
            decode: DecodeMode::Greedy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.c_l > 0.0
            && self.c_reg >= 0.0
            && self.learning_rate >= 0.0
            && self.plateau_factor > 0.0
            && self.plateau_patience > 0
            && self.early_stop_patience > 0
            && self.max_epochs > 0
            && self.batch_size > 0
            && self.sinkhorn_iters > 0
            && self.weight_cap >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(SomaError::InvalidArgument(format!("invalid training config: {self:?}")))
        }
    }
}

/// Records the weighted transport loss of one frame on `tape`.
pub fn record_frame_loss(
    tape: &mut Tape,
    params: &NetParams,
    frame: &LabeledFrame,
    weights: &ClassWeights,
    c_l: f64,
    iters: usize,
) -> Result<Var> {
    let m = params.num_markers;
    let gt = build_gt_assignment(&frame.labels, &frame.occluded, m)?;
    let rec = params.record(tape, &frame.frame)?;
    let log_a = ot::sinkhorn_on_tape(tape, rec.scores, rec.alpha, iters)?;
    let w = weights.matrix(frame.len(), m);
    let nll = tape.weighted_nll(log_a, gt, w, LOG_CLAMP)?;
    Ok(tape.scale(nll, c_l))
}

/// Mean loss and summed-then-averaged gradients over a batch, including the
/// regularizer. Per-frame gradients are reduced in batch order.
pub fn batch_gradient(
    params: &NetParams,
    batch: &[&LabeledFrame],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let gts = batch
        .iter()
        .map(|f| build_gt_assignment(&f.labels, &f.occluded, params.num_markers))
        .collect::<Result<Vec<_>>>()?;
    let weights = ClassWeights::from_batch(&gts, cfg.weight_cap)?;
    let per_frame: Vec<(f64, Vec<Array2<f64>>)> = batch
        .par_iter()
        .map(|f| {
            let mut tape = Tape::new(&params.tensors);
            let l = record_frame_loss(&mut tape, params, f, &weights, cfg.c_l, cfg.sinkhorn_iters)?;
            let value = tape.scalar(l);
            Ok((value, tape.backward(l)?.into_params()))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads: Vec<Array2<f64>> = params.tensors.iter().map(|t| Array2::zeros(t.dim())).collect();
    for (value, g) in per_frame {
        total += value;
        for (acc, gi) in grads.iter_mut().zip(g) {
            *acc += &gi;
        }
    }
    for (acc, p) in grads.iter_mut().zip(&params.tensors) {
        acc.mapv_inplace(|x| x * scale);
        acc.scaled_add(2.0 * cfg.c_reg, p);
    }
    Ok((total * scale + cfg.c_reg * squared_norm(&params.tensors), grads))
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &[Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.dim())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_acc,val_f1\n");
    for r in history {
        out.push_str(&format!("{},{:e},{:.9},{:.6},{:.6}\n", r.epoch, r.lr, r.train_loss, r.val_acc, r.val_f1));
    }
    out
}

/// Everything needed to continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: NetParams,
    pub adam: Adam,
    pub epoch: usize,
    pub lr: f64,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub epochs_since_best: usize,
    pub epochs_since_reduce: usize,
    pub history: Vec<EpochRecord>,
    pub best: NetParams,
}

impl TrainState {
    pub fn new(net: NetConfig, num_markers: usize, cfg: &TrainConfig) -> Result<Self> {
        let params = NetParams::init(net, num_markers, cfg.init_seed)?;
        Ok(Self::from_params(params, cfg))
    }

    pub fn from_params(params: NetParams, cfg: &TrainConfig) -> Self {
        TrainState {
            adam: Adam::new(&params.tensors),
            best: params.clone(),
            params,
            epoch: 0,
            lr: cfg.learning_rate,
            best_val_acc: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
            epochs_since_reduce: 0,
            history: Vec::new(),
        }
    }

    pub fn finished(&self, cfg: &TrainConfig) -> bool {
        self.epoch >= cfg.max_epochs || self.epochs_since_best >= cfg.early_stop_patience
    }
}

/// Mean per-frame accuracy and F1 (both in `[0, 1]`).
pub fn evaluate(params: &NetParams, frames: &[LabeledFrame], mode: DecodeMode, iters: usize) -> Result<(f64, f64)> {
    if frames.is_empty() {
        return Err(SomaError::InvalidArgument("evaluation needs at least one frame".into()));
    }
    let scores: Vec<(f64, f64)> = frames
        .par_iter()
        .map(|f| {
            let pred = predict(params, &f.frame, mode, iters)?;
            Ok((accuracy(&pred, &f.labels)?, f1_frame(&pred, &f.labels)?))
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok((
        scores.iter().map(|s| s.0).sum::<f64>() / n,
        scores.iter().map(|s| s.1).sum::<f64>() / n,
    ))
}

pub fn predict(params: &NetParams, frame: &Frame, mode: DecodeMode, iters: usize) -> Result<Labeling> {
    decode_frame(&crate::labeler::assignment(params, frame, iters)?, mode)
}

/// Runs one epoch: shuffled mini-batches, one optimizer step each, then
/// validation and the plateau / early-stop bookkeeping.
pub fn train_epoch(
    state: &mut TrainState,
    train: &[LabeledFrame],
    val: &[LabeledFrame],
    cfg: &TrainConfig,
) -> Result<EpochRecord> {
    let epoch = state.epoch + 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let mut loss_sum = 0.0;
    let mut batches = 0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<&LabeledFrame> = chunk.iter().map(|&i| &train[i]).collect();
        let (loss, grads) = batch_gradient(&state.params, &batch, cfg)?;
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(SomaError::Diverged { epoch, batch: b, loss });
        }
        state.adam.update(&mut state.params.tensors, &grads, state.lr);
        loss_sum += loss;
        batches += 1;
    }
    let (val_acc, val_f1) = evaluate(&state.params, val, cfg.decode, cfg.sinkhorn_iters)?;
    let record = EpochRecord {
        epoch,
        lr: state.lr,
        train_loss: loss_sum / batches as f64,
        val_acc,
        val_f1,
    };
    state.epoch = epoch;
    state.history.push(record.clone());
    if val_acc > state.best_val_acc {
        state.best_val_acc = val_acc;
        state.best_epoch = epoch;
        state.best = state.params.clone();
        state.epochs_since_best = 0;
        state.epochs_since_reduce = 0;
    } else {
        state.epochs_since_best += 1;
        state.epochs_since_reduce += 1;
        if state.epochs_since_reduce >= cfg.plateau_patience {
            state.lr *= cfg.plateau_factor;
            state.epochs_since_reduce = 0;
        }
    }
    Ok(record)
}

/// Trains until the epoch budget or early stop. `on_epoch` sees every record.
pub fn train_from(
    mut state: TrainState,
    train: &[LabeledFrame],
    val: &[LabeledFrame],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState),
) -> Result<TrainState> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(SomaError::InvalidArgument("training and validation corpora must be non-empty".into()));
    }
    while !state.finished(cfg) {
        train_epoch(&mut state, train, val, cfg)?;
        on_epoch(&state);
    }
    Ok(state)
}

pub fn train(
    net: NetConfig,
    num_markers: usize,
    train_set: &[LabeledFrame],
    val: &[LabeledFrame],
    cfg: &TrainConfig,
) -> Result<TrainState> {
    train_from(TrainState::new(net, num_markers, cfg)?, train_set, val, cfg, |_| {})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Central-difference check of the full loss (scorer, Sinkhorn, weighted
/// loss and regularizer) on a random frame with ghosts and occlusions.
pub fn gradient_check(net: NetConfig, num_markers: usize, num_points: usize, eps: f64, seed: u64) -> Result<Vec<TensorCheck>> {
    let mut params = NetParams::init(net, num_markers, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Perturb biases and gains away from their structured init.
    for t in params.tensors.iter_mut() {
        t.mapv_inplace(|x| x + rng.gen_range(-0.1..0.1));
    }
    let points = (0..num_points)
        .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(0.0..1.8), rng.gen_range(-0.3..0.3)])
        .collect();
    let mut markers: Vec<usize> = (0..num_markers).collect();
    markers.shuffle(&mut rng);
    let labels: Vec<Option<usize>> = (0..num_points)
        .map(|i| if i + 1 < num_points && i < num_markers.saturating_sub(1) { Some(markers[i]) } else { None })
        .collect();
    let occluded = {
        let mut o: Vec<usize> = (0..num_markers).filter(|m| !labels.contains(&Some(*m))).collect();
        o.sort_unstable();
        o
    };
    let frame = LabeledFrame {
        frame: Frame::new(points)?,
        labels: Labeling(labels),
        occluded,
    };
    let cfg = TrainConfig::default();
    let gt = build_gt_assignment(&frame.labels, &frame.occluded, num_markers)?;
    let weights = ClassWeights::from_batch(&[gt], cfg.weight_cap)?;
    let full_loss = |tensors: &[Array2<f64>], p: &NetParams| -> Result<f64> {
        let mut tape = Tape::new(tensors);
        let l = record_frame_loss(&mut tape, p, &frame, &weights, cfg.c_l, cfg.sinkhorn_iters)?;
        Ok(tape.scalar(l) + cfg.c_reg * squared_norm(tensors))
    };
    let mut tape = Tape::new(&params.tensors);
    let l = record_frame_loss(&mut tape, &params, &frame, &weights, cfg.c_l, cfg.sinkhorn_iters)?;
    let mut grads = tape.backward(l)?.into_params();
    for (g, p) in grads.iter_mut().zip(&params.tensors) {
        g.scaled_add(2.0 * cfg.c_reg, p);
    }
    let mut report = Vec::with_capacity(params.tensors.len());
    for ti in 0..params.tensors.len() {
        let mut worst = 0.0f64;
        for idx in 0..params.tensors[ti].len() {
            let mut shifted = params.tensors.clone();
            shifted[ti].as_slice_mut().expect("contiguous")[idx] += eps;
            let plus = full_loss(&shifted, &params)?;
            shifted[ti].as_slice_mut().expect("contiguous")[idx] -= 2.0 * eps;
            let minus = full_loss(&shifted, &params)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads[ti].as_slice().expect("contiguous")[idx];
            let denom = numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max((numeric - analytic).abs() / denom);
        }
        report.push(TensorCheck {
            name: params.names[ti].clone(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> NetConfig {
        NetConfig {
            d_model: 8,
            heads: 2,
            layers: 2,
            feature_width: 8,
        }
    }

    #[test]
    fn clean_frame_is_permutation() {
        let gt = build_gt_assignment(&Labeling(vec![Some(2), Some(0), Some(1)]), &[], 3).unwrap();
        assert_eq!(
            gt,
            array![[0.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]
        );
    }

    #[test]
    fn single_ghost_all_occluded() {
        let gt = build_gt_assignment(&Labeling(vec![None]), &[0, 1, 2], 3).unwrap();
        assert_eq!(gt, array![[0.0, 0.0, 0.0, 1.0], [1.0, 1.0, 1.0, 0.0]]);
    }

    #[test]
    fn duplicate_labels_error() {
        assert!(build_gt_assignment(&Labeling(vec![Some(1), Some(1)]), &[], 3).is_err());
        assert!(build_gt_assignment(&Labeling(vec![Some(1)]), &[1], 3).is_err());
    }

    #[test]
    fn random_gt_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = rng.gen_range(1..8);
            let mut pool: Vec<usize> = (0..m).collect();
            pool.shuffle(&mut rng);
            let keep = rng.gen_range(0..=m);
            let ghosts = rng.gen_range(0..4);
            let mut labels: Vec<Option<usize>> = pool[..keep].iter().map(|&x| Some(x)).collect();
            labels.extend(std::iter::repeat(None).take(ghosts));
            labels.shuffle(&mut rng);
            if labels.is_empty() {
                continue;
            }
            let mut occ = pool[keep..].to_vec();
            occ.sort_unstable();
            let gt = build_gt_assignment(&Labeling(labels.clone()), &occ, m).unwrap();
            let n = labels.len();
            for i in 0..n {
                assert_eq!(gt.row(i).sum(), 1.0);
            }
            for j in 0..m {
                assert_eq!(gt.column(j).sum(), 1.0);
            }
            assert_eq!(gt[[n, m]], 0.0);
            assert!(gt.iter().all(|&x| x == 0.0 || x == 1.0));
        }
    }

    #[test]
    fn weights_without_noise_are_one() {
        let gt = build_gt_assignment(&Labeling(vec![Some(0), Some(1)]), &[], 2).unwrap();
        let w = ClassWeights::from_batch(&[gt], 100.0).unwrap();
        assert!(w.matrix(2, 2).iter().all(|&x| x == 1.0));
    }

    #[test]
    fn null_frequency_quarter_gives_four() {
        let gt = build_gt_assignment(&Labeling(vec![Some(0), Some(1), Some(2), None]), &[], 3).unwrap();
        let w = ClassWeights::from_batch(&[gt], 100.0).unwrap();
        assert_eq!(w.null, 4.0);
        let m = w.matrix(4, 3);
        assert_eq!(m[[0, 3]], 4.0);
        assert!(m.iter().all(|&x| x > 0.0));
        assert!(ClassWeights::from_batch(&[], 100.0).is_err());
    }

    #[test]
    fn weights_are_capped() {
        let mut labels: Vec<Option<usize>> = (0..200).map(Some).collect();
        labels.push(None);
        let gt = build_gt_assignment(&Labeling(labels), &[], 200).unwrap();
        assert_eq!(ClassWeights::from_batch(&[gt], 100.0).unwrap().null, 100.0);
    }

    #[test]
    fn loss_examples() {
        let gt = array![[1.0, 0.0], [0.0, 0.0]];
        let w = Array2::ones((2, 2));
        assert_eq!(loss(&gt, &gt, &w, &[], 1.0, 0.0).unwrap(), 0.0);
        let half = Array2::from_elem((2, 2), 0.5);
        let l = loss(&half, &gt, &w, &[], 1.0, 0.0).unwrap();
        assert!((l - 0.5f64.ln().abs()).abs() < 1e-15);
        let l2 = loss(&half, &gt, &(&w * 2.0), &[], 1.0, 0.0).unwrap();
        assert_eq!(l2, 2.0 * l);
        assert!(loss(&half, &Array2::zeros((3, 2)), &w, &[], 1.0, 0.0).is_err());
        let reg = loss(&gt, &gt, &w, &[array![[3.0, 4.0]]], 1.0, 0.5).unwrap();
        assert_eq!(reg, 12.5);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let gt = array![[1.0, 0.0], [0.0, 0.0]];
        let a = Array2::zeros((2, 2));
        let l = loss(&a, &gt, &Array2::ones((2, 2)), &[], 1.0, 0.0).unwrap();
        assert!((l + LOG_CLAMP).abs() < 1e-12);
    }

    #[test]
    fn tape_loss_matches_direct() {
        let p = NetParams::init(tiny(), 3, 2).unwrap();
        let frame = LabeledFrame {
            frame: Frame::new(vec![[0.1, 1.0, 0.0], [0.3, 0.2, 0.1], [-0.2, 1.4, 0.0]]).unwrap(),
            labels: Labeling(vec![Some(1), None, Some(0)]),
            occluded: vec![2],
        };
        let gt = build_gt_assignment(&frame.labels, &frame.occluded, 3).unwrap();
        let w = ClassWeights::from_batch(&[gt.clone()], 100.0).unwrap();
        let mut tape = Tape::new(&p.tensors);
        let l = record_frame_loss(&mut tape, &p, &frame, &w, 1.0, 35).unwrap();
        let scores = p.forward(&frame.frame).unwrap().scores;
        let a = ot::sinkhorn_log(&ot::augment(&scores, p.alpha()).unwrap(), 35).unwrap();
        let direct = loss(&a, &gt, &w.matrix(3, 3), &[], 1.0, 0.0).unwrap();
        assert!((tape.scalar(l) - direct).abs() < 1e-12);
        assert!(direct >= 0.0);
    }

    #[test]
    fn gradient_check_covers_all_tensors() {
        let report = gradient_check(tiny(), 4, 5, 1e-5, 3).unwrap();
        let p = NetParams::init(tiny(), 4, 3).unwrap();
        assert_eq!(report.len(), p.tensors.len());
        assert_eq!(report.last().unwrap().name, "alpha");
        for r in &report {
            assert!(r.max_rel_error <= 1e-3, "{}: {}", r.name, r.max_rel_error);
        }
        assert_eq!(report, gradient_check(tiny(), 4, 5, 1e-5, 3).unwrap());
    }

    fn clean_corpus(n: usize, m: usize, seed: u64) -> Vec<LabeledFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<[f64; 3]> = (0..m).map(|_| [rng.gen_range(-0.4..0.4), rng.gen_range(0.0..1.8), rng.gen_range(-0.2..0.2)]).collect();
        (0..n)
            .map(|_| {
                let mut order: Vec<usize> = (0..m).collect();
                order.shuffle(&mut rng);
                let pts = order
                    .iter()
                    .map(|&k| [base[k][0] + rng.gen_range(-0.01..0.01), base[k][1], base[k][2]])
                    .collect();
                LabeledFrame {
                    frame: Frame::new(pts).unwrap(),
                    labels: Labeling(order.iter().map(|&k| Some(k)).collect()),
                    occluded: vec![],
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = clean_corpus(8, 4, 1);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let init = NetParams::init(tiny(), 4, cfg.init_seed).unwrap();
        let state = train(tiny(), 4, &data, &data, &cfg).unwrap();
        assert_eq!(state.params, init);
    }

    #[test]
    fn deterministic_history() {
        let data = clean_corpus(16, 4, 2);
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train(tiny(), 4, &data, &data, &cfg).unwrap();
        let b = train(tiny(), 4, &data, &data, &cfg).unwrap();
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn overfits_small_clean_corpus() {
        let data = clean_corpus(32, 5, 3);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 200,
            early_stop_patience: 200,
            plateau_patience: 200,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(tiny(), 5, &cfg).unwrap();
        while !state.finished(&cfg) {
            train_epoch(&mut state, &data, &data, &cfg).unwrap();
            if state.best_val_acc >= 0.99 {
                break;
            }
        }
        let (acc, _) = evaluate(&state.best, &data, DecodeMode::Greedy, 35).unwrap();
        assert!(acc >= 0.99, "training accuracy {acc} after {} epochs", state.epoch);
        let first = state.history.first().unwrap().train_loss;
        let last = state.history.last().unwrap().train_loss;
        assert!(last < first);
    }

    #[test]
    fn plateau_reduces_and_stops() {
        let data = clean_corpus(4, 3, 4);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 50,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let state = train(tiny(), 3, &data, &data, &cfg).unwrap();
        // Accuracy never improves after epoch 1: reductions at 4 and 7,
        // stop after 8 epochs without improvement.
        assert_eq!(state.epoch, 9);
        assert_eq!(state.history[4].lr, 0.0);
        assert_eq!(state.best_epoch, 1);
    }

    #[test]
    fn lr_schedule_values() {
        let data = clean_corpus(4, 3, 4);
        let cfg = TrainConfig {
            learning_rate: 1e-30,
            max_epochs: 50,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let state = train(tiny(), 3, &data, &data, &cfg).unwrap();
        let lrs: Vec<f64> = state.history.iter().map(|r| r.lr).collect();
        assert_eq!(lrs[0], 1e-30);
        assert_eq!(lrs[3], 1e-30);
        assert!((lrs[4] - 1e-31).abs() < 1e-45);
        assert!((lrs[7] - 1e-32).abs() < 1e-46);
    }

    #[test]
    fn history_csv_header() {
        let csv = history_csv(&[EpochRecord {
            epoch: 1,
            lr: 1e-3,
            train_loss: 0.5,
            val_acc: 0.9,
            val_f1: 0.8,
        }]);
        assert!(csv.starts_with("epoch,lr,train_loss,val_acc,val_f1\n1,1e-3,"));
    }
}
