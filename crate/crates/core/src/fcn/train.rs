//! Mini-batch training with a step-decayed learning rate.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment_pair, AugmentationConfig};
use super::{round_f32, Model};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::losses::{self, Branch, LossConfig, LossKind};
use crate::raster::Plane;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            initial_lr: 1e-4,
            lr_decay: 0.3,
            decay_every: 25,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::invalid("train config", "epochs, batch_size and decay_every must be >= 1"));
        }
        if !(self.initial_lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::invalid("train config", "need initial_lr > 0 and 0 < lr_decay < 1"));
        }
        Ok(())
    }
}

/// `initial_lr * decay^floor(epoch / decay_every)` for zero-based `epoch`.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.initial_lr * libm::pow(cfg.lr_decay, (epoch / cfg.decay_every) as f64)
}

/// One training image (already a single-channel density map) and its
/// binary label map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Plane,
    pub label: Plane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss.
    pub loss: f64,
    /// Fraction of mini-batches that took the dense switching branch;
    /// `None` for non-switching losses.
    pub branch_fraction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| alloc::vec![0.0; p.len()];
        Adam {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(BETA2, self.t as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (j, (w, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = BETA1 * *m + (1.0 - BETA1) * gv;
                *v = BETA2 * *v + (1.0 - BETA2) * gv * gv;
                let update = lr * (*m / c1) / (libm::sqrt(*v / c2) + ADAM_EPS);
                *w = round_f32(*w - update);
            }
        }
    }
}

fn stack(planes: &[&Plane]) -> Result<Tensor> {
    let (h, w) = (planes[0].height, planes[0].width);
    let mut data = Vec::with_capacity(planes.len() * h * w);
    for p in planes {
        if (p.height, p.width) != (h, w) {
            return Err(Error::shape("batch", &[h, w], &[p.height, p.width]));
        }
        data.extend_from_slice(&p.data);
    }
    Tensor::new([planes.len(), 1, h, w], data)
}

/// Trains `model`. Each epoch does a seeded shuffle, then
/// augmented mini-batches of `batch_size` (the last may be short). The
/// switching branch is chosen afresh for every mini-batch.
pub fn train(
    mut model: Model,
    dataset: &[Sample],
    loss: LossKind,
    loss_cfg: &LossConfig,
    tcfg: &TrainConfig,
    acfg: &AugmentationConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    tcfg.validate()?;
    acfg.validate()?;
    loss_cfg.validate()?;
    if model.spec().input_channels != 1 {
        return Err(Error::invalid("train", "training expects single-channel input"));
    }
    for s in dataset {
        model.spec().check_input_dims(s.image.height, s.image.width)?;
        if (s.image.height, s.image.width) != (s.label.height, s.label.width) {
            return Err(Error::shape(
                "train",
                &[s.image.height, s.image.width],
                &[s.label.height, s.label.width],
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut adam = Adam::new(model.params());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);

    for epoch in 0..tcfg.epochs {
        let lr = learning_rate(tcfg, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut dense = 0usize;
        for (batch_idx, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let pairs: Vec<(Plane, Plane)> = chunk
                .iter()
                .map(|&i| augment_pair(&dataset[i].image, &dataset[i].label, acfg, &mut rng))
                .collect();
            let images: Vec<&Plane> = pairs.iter().map(|p| &p.0).collect();
            let labels: Vec<&Plane> = pairs.iter().map(|p| &p.1).collect();

            let mut graph = Graph::new();
            let x = graph.input(stack(&images)?);
            let g = graph.input(stack(&labels)?);
            let (prob, vars) = model.forward(&mut graph, x)?;
            let (l, branch) = losses::graph::loss(&mut graph, loss, prob, g, loss_cfg)?;
            let value = graph.value(l).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value,
                });
            }
            let grads = graph.backward(l)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .zip(model.params())
                .map(|(&v, p)| grads.get_or_zeros(v, p))
                .collect();
            match tcfg.optimizer {
                OptimizerKind::Adam => adam.step(model.params_mut(), &grads, lr),
                OptimizerKind::Sgd => {
                    for (p, gr) in model.params_mut().iter_mut().zip(&grads) {
                        for (w, &gv) in p.data_mut().iter_mut().zip(gr.data()) {
                            *w = round_f32(*w - lr * gv);
                        }
                    }
                }
            }
            loss_sum += value;
            batches += 1;
            if branch == Some(Branch::Dense) {
                dense += 1;
            }
        }
        history.push(EpochRecord {
            epoch,
            lr,
            loss: loss_sum / batches as f64,
            branch_fraction: (loss == LossKind::Switching).then(|| dense as f64 / batches as f64),
        });
    }
    Ok(TrainOutcome { model, history })
}
