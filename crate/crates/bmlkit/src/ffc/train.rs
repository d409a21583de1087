//! Masked reconstruction loss, Adam updates, and the deterministic training
//! loop.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{bias_field, flip_image, flip_mask, BiasFieldParams, FlipAxis};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};
use crate::rng::{child_rng, derive_seed, stream};

use super::model::InpainterModel;
use super::tensor::Tensor4;

/// One healthy training slice with its bone region.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: GrayImage,
    pub bone: BinaryMask,
}

/// Tensorized batch: two-channel input `stack(x * (1 - m), m)`, the clean
/// target, and the mask as 0/1 weights.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub input: Tensor4,
    pub target: Tensor4,
    pub mask: Tensor4,
}

impl TrainBatch {
    pub fn from_samples(samples: &[(GrayImage, BinaryMask)]) -> TrainBatch {
        assert!(!samples.is_empty());
        let (w, h) = (samples[0].0.width(), samples[0].0.height());
        let n = samples.len();
        let mut input = Tensor4::zeros(n, 2, h, w);
        let mut target = Tensor4::zeros(n, 1, h, w);
        let mut mask = Tensor4::zeros(n, 1, h, w);
        for (i, (img, bone)) in samples.iter().enumerate() {
            let single = InpainterModel::stack_input(img, bone);
            input.plane_mut(i, 0).copy_from_slice(single.plane(0, 0));
            input.plane_mut(i, 1).copy_from_slice(single.plane(0, 1));
            for (t, &v) in target.plane_mut(i, 0).iter_mut().zip(img.data()) {
                *t = v;
            }
            for (mv, &b) in mask.plane_mut(i, 0).iter_mut().zip(bone.data()) {
                *mv = if b { 1.0 } else { 0.0 };
            }
        }
        TrainBatch { input, target, mask }
    }
}

/// Masked L1: `mean_{m=1} |pred - target| + lambda * mean_{m=0} |pred - target|`.
///
/// Returns the loss and its gradient with respect to `pred`; the subgradient
/// at exact ties is 0. Errors when the mask selects no pixels.
pub fn masked_l1_loss(
    pred: &Tensor4,
    target: &Tensor4,
    mask: &Tensor4,
    lambda_outside: f64,
) -> Result<(f64, Tensor4)> {
    if pred.dims() != target.dims() || pred.dims() != mask.dims() {
        return Err(Error::Shape("loss inputs must share dimensions".into()));
    }
    let n_in = mask.data.iter().filter(|&&m| m != 0.0).count();
    if n_in == 0 {
        return Err(Error::EmptyRegion("masked_l1_loss needs mask pixels".into()));
    }
    let n_out = mask.data.len() - n_in;
    let mut loss_in = 0.0;
    let mut loss_out = 0.0;
    let mut grad = Tensor4::zeros(pred.n, pred.c, pred.h, pred.w);
    let w_in = 1.0 / n_in as f64;
    let w_out = if n_out > 0 { lambda_outside / n_out as f64 } else { 0.0 };
    for i in 0..pred.data.len() {
        let d = pred.data[i] - target.data[i];
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        if mask.data[i] != 0.0 {
            loss_in += d.abs();
            grad.data[i] = s * w_in;
        } else {
            loss_out += d.abs();
            grad.data[i] = s * w_out;
        }
    }
    let loss = loss_in * w_in + if n_out > 0 { loss_out * lambda_outside / n_out as f64 } else { 0.0 };
    Ok((loss, grad))
}

/// Training-time augmentation switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flips: bool,
    pub bias_field_order: usize,
    pub bias_field_bound: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flips: true,
            bias_field_order: 3,
            bias_field_bound: 0.1,
        }
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_outside: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_size: 4,
            learning_rate: 2e-4,
            lambda_outside: 0.1,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: InpainterModel,
    v: InpainterModel,
    t: usize,
}

impl Adam {
    fn new(model: &InpainterModel) -> Self {
        Self {
            m: model.zeros_like(),
            v: model.zeros_like(),
            t: 0,
        }
    }

    /// One update, walking parameter tensors in their fixed visiting order.
    fn step(&mut self, model: &mut InpainterModel, grads: &InpainterModel, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);

        let mut grad_slices: Vec<Vec<f64>> = Vec::new();
        grads.for_each_param(|_, g| grad_slices.push(g.to_vec()));
        let mut idx = 0;
        self.m.for_each_param_mut(|_, m| {
            for (mv, &gv) in m.iter_mut().zip(&grad_slices[idx]) {
                *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            }
            idx += 1;
        });
        idx = 0;
        self.v.for_each_param_mut(|_, v| {
            for (vv, &gv) in v.iter_mut().zip(&grad_slices[idx]) {
                *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            }
            idx += 1;
        });
        let mut m_bc: Vec<Vec<f64>> = Vec::new();
        self.m.for_each_param(|_, m| m_bc.push(m.iter().map(|&x| x / bc1).collect()));
        let mut v_bc: Vec<Vec<f64>> = Vec::new();
        self.v.for_each_param(|_, v| v_bc.push(v.iter().map(|&x| x / bc2).collect()));
        idx = 0;
        model.for_each_param_mut(|_, p| {
            for ((pv, &mh), &vh) in p.iter_mut().zip(&m_bc[idx]).zip(&v_bc[idx]) {
                *pv -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
            idx += 1;
        });
    }
}

/// Deterministic per-sample augmentation for step `step`, slot `slot`.
fn augment_sample(
    image: &GrayImage,
    bone: &BinaryMask,
    cfg: &AugmentConfig,
    seed: u64,
    step: usize,
    slot: usize,
) -> (GrayImage, BinaryMask) {
    let tag = (step as u64) << 16 | slot as u64;
    let mut rng = child_rng(seed, stream::AUGMENT, tag);
    let mut img = image.clone();
    let mut msk = bone.clone();
    if cfg.flips {
        if rng.gen_bool(0.5) {
            img = flip_image(&img, FlipAxis::Horizontal);
            msk = flip_mask(&msk, FlipAxis::Horizontal);
        }
        if rng.gen_bool(0.5) {
            img = flip_image(&img, FlipAxis::Vertical);
            msk = flip_mask(&msk, FlipAxis::Vertical);
        }
    }
    if cfg.bias_field_bound > 0.0 {
        let params = BiasFieldParams {
            order: cfg.bias_field_order,
            bound: cfg.bias_field_bound,
            seed: derive_seed(seed, stream::BIAS_FIELD, tag),
        };
        img = bias_field(&img, &params);
    }
    (img, msk)
}

/// Train the model in place. Returns the per-step loss trace.
///
/// The step loop is sequential; per-sample forward/backward passes inside a
/// step run in parallel but gradients are reduced in slot order, so the
/// result is bit-identical to a sequential run.
pub fn train(
    model: &mut InpainterModel,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = Adam::new(model);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch_rng = child_rng(cfg.seed, stream::BATCH, step as u64);
        let indices: Vec<usize> = (0..cfg.batch_size)
            .map(|_| batch_rng.gen_range(0..samples.len()))
            .collect();

        // per-sample gradient passes; order restored by collect
        let results: Vec<Result<(f64, InpainterModel)>> = indices
            .par_iter()
            .enumerate()
            .map(|(slot, &si)| {
                let s = &samples[si];
                let (img, bone) = augment_sample(&s.image, &s.bone, &cfg.augment, cfg.seed, step, slot);
                let batch = TrainBatch::from_samples(&[(img, bone)]);
                let (pred, cache) = model.forward_train(&batch.input)?;
                let (loss, dpred) = masked_l1_loss(&pred, &batch.target, &batch.mask, cfg.lambda_outside)?;
                let mut grads = model.zeros_like();
                model.backward(&cache, &dpred, &mut grads);
                Ok((loss, grads))
            })
            .collect();

        let mut grads = model.zeros_like();
        let mut loss_sum = 0.0;
        for r in results {
            let (loss, g) = r?;
            loss_sum += loss;
            let mut gi = Vec::new();
            g.for_each_param(|_, p| gi.push(p.to_vec()));
            let mut idx = 0;
            grads.for_each_param_mut(|_, p| {
                for (pv, &gv) in p.iter_mut().zip(&gi[idx]) {
                    *pv += gv;
                }
                idx += 1;
            });
        }
        let scale = 1.0 / cfg.batch_size as f64;
        grads.for_each_param_mut(|_, p| {
            for v in p.iter_mut() {
                *v *= scale;
            }
        });
        let mean_loss = loss_sum * scale;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        trace.push(mean_loss);
        adam.step(model, &grads, cfg.learning_rate);
    }
    Ok(trace)
}

/// Mean masked L1 of the model on held-out samples (no augmentation).
pub fn evaluate_loss(model: &InpainterModel, samples: &[TrainSample], lambda_outside: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let batch = TrainBatch::from_samples(&[(s.image.clone(), s.bone.clone())]);
        let pred = model.forward(&batch.input)?;
        let (loss, _) = masked_l1_loss(&pred, &batch.target, &batch.mask, lambda_outside)?;
        total += loss;
    }
    Ok(total / samples.len().max(1) as f64)
}
