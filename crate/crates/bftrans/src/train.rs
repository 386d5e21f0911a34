//! Desk-scale training loop.
//!
//! AdamW with decoupled weight decay, two learning-rate groups (the backbone
//! trains at one tenth of the rest), step decay at a configurable epoch
//! fraction, global gradient-norm clipping, and a
//! per-iteration CSV loss log. Batch members run forward/backward on worker
//! threads; sampling and the optimizer step stay on the main thread so runs
//! are bit-reproducible regardless of thread count.

use crate::data::{self, SequenceDataset};
use crate::error::{Error, Result};
use crate::model::{self, ModelConfig};
use crate::tensor::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_rest: f64,
    pub weight_decay: f64,
    /// Epoch fraction after which the learning rates drop by `decay_factor`.
    pub decay_at: f64,
    pub decay_factor: f64,
    pub clip_norm: f64,
    pub max_frame_gap: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_backbone > self.lr_rest {
            return Err(Error::Config(format!(
                "lr_backbone {} must not exceed lr_rest {}",
                self.lr_backbone, self.lr_rest
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay_factor {} must lie in (0,1)",
                self.decay_factor
            )));
        }
        if self.epochs == 0 || self.pairs_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, pairs_per_epoch, batch_size must be positive".into()));
        }
        Ok(())
    }
}

fn is_backbone(name: &str) -> bool {
    name.starts_with("backbone.")
}

// Weight decay skips biases and the TAPE alpha scalar.
fn decays(name: &str) -> bool {
    !(name.ends_with(".b") || name.ends_with(".alpha"))
}

/// Decoupled-weight-decay adaptive-moment optimizer, beta = (0.9, 0.999),
/// eps = 1e-8.
pub struct AdamW {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(store: &ParamStore<f32>) -> Self {
        Self {
            m: store.iter().map(|e| Tensor::zeros(e.value.shape())).collect(),
            v: store.iter().map(|e| Tensor::zeros(e.value.shape())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update from the gradients currently in the store. `lr_of` maps a
    /// parameter name to its group learning rate.
    pub fn step(
        &mut self,
        store: &mut ParamStore<f32>,
        lr_of: impl Fn(&str) -> f64,
        weight_decay: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..store.len() {
            let name = store.entry(i).name.clone();
            let lr = lr_of(&name);
            let wd = if decays(&name) { weight_decay } else { 0.0 };
            let entry = store.entry_mut(i);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for ((p, &g), (m, v)) in entry
                .value
                .data_mut()
                .iter_mut()
                .zip(entry.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let gd = g as f64;
                let md = self.beta1 * (*m as f64) + (1.0 - self.beta1) * gd;
                let vd = self.beta2 * (*v as f64) + (1.0 - self.beta2) * gd * gd;
                *m = md as f32;
                *v = vd as f32;
                let update = (md / bc1) / ((vd / bc2).sqrt() + self.eps);
                let mut pd = *p as f64;
                pd -= lr * update;
                pd -= lr * wd * pd;
                *p = pd as f32;
            }
        }
    }
}

/// Scale gradients so their global l2 norm stays below `max_norm`; returns
/// the pre-clip norm.
pub fn clip_gradients(store: &mut ParamStore<f32>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for e in store.iter() {
        for &g in e.grad.data() {
            sq += (g as f64) * (g as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for i in 0..store.len() {
            for g in store.entry_mut(i).grad.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug)]
pub struct LossRow {
    pub iter: usize,
    pub loss: f64,
    pub focal: f64,
    pub l1: f64,
    pub giou: f64,
}

impl LossRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.iter, self.loss, self.focal, self.l1, self.giou)
    }
}

/// Train in place. Writes the checkpoint to `ckpt_out` on success; on a
/// non-finite loss, restores and writes the last good parameters and aborts
/// with the iteration index.
pub fn train(
    store: &mut ParamStore<f32>,
    mcfg: &ModelConfig,
    dataset: &[SequenceDataset],
    tcfg: &TrainConfig,
    ckpt_out: Option<&Path>,
    log_out: Option<&Path>,
) -> Result<Vec<LossRow>> {
    tcfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(tcfg.seed);
    let mut opt = AdamW::new(store);
    let steps_per_epoch = (tcfg.pairs_per_epoch / tcfg.batch_size).max(1);
    let decay_epoch = (tcfg.epochs as f64 * tcfg.decay_at).floor() as usize;

    let mut log = match log_out {
        Some(p) => {
            let mut f = std::fs::File::create(p)?;
            writeln!(f, "iter,loss,l_focal,l_l1,l_giou")?;
            Some(f)
        }
        None => None,
    };

    let mut rows = Vec::new();
    let mut last_good = store.values_snapshot();
    let mut iter = 0usize;

    for epoch in 0..tcfg.epochs {
        let lr_scale = if epoch >= decay_epoch { tcfg.decay_factor } else { 1.0 };
        let lr_b = tcfg.lr_backbone * lr_scale;
        let lr_r = tcfg.lr_rest * lr_scale;
        for _ in 0..steps_per_epoch {
            iter += 1;
            let samples: Vec<data::TrainingPair> = (0..tcfg.batch_size)
                .map(|_| {
                    let seq = &dataset[rng.random_range(0..dataset.len())];
                    data::make_training_pair(seq, tcfg.max_frame_gap, &mcfg.backbone, &mut rng)
                })
                .collect::<Result<_>>()?;

            let per_sample: Vec<Result<([f64; 4], Vec<(String, Tensor)>)>> = samples
                .par_iter()
                .map(|pair| {
                    let mut g = Graph::<f32>::new();
                    let lv = model::training_loss(
                        &mut g,
                        store,
                        mcfg,
                        pair.template.clone(),
                        pair.search.clone(),
                        &pair.target,
                    )?;
                    g.backward(lv.total)?;
                    let vals = [
                        g.value(lv.total).data()[0] as f64,
                        g.value(lv.focal).data()[0] as f64,
                        g.value(lv.l1).data()[0] as f64,
                        g.value(lv.giou).data()[0] as f64,
                    ];
                    Ok((vals, g.param_grads()))
                })
                .collect();

            store.zero_grads();
            let mut sums = [0.0f64; 4];
            let inv_batch = 1.0 / tcfg.batch_size as f32;
            for r in per_sample {
                let (vals, grads) = r?;
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
                for (name, g) in grads {
                    let entry = store
                        .get_mut(&name)
                        .ok_or_else(|| Error::MissingParam(name.clone()))?;
                    for (dst, src) in entry.grad.data_mut().iter_mut().zip(g.data()) {
                        *dst += src * inv_batch;
                    }
                }
            }
            let n = tcfg.batch_size as f64;
            let row = LossRow {
                iter,
                loss: sums[0] / n,
                focal: sums[1] / n,
                l1: sums[2] / n,
                giou: sums[3] / n,
            };

            if !row.loss.is_finite() {
                store.restore_values(&last_good);
                if let Some(p) = ckpt_out {
                    store.save(p)?;
                }
                return Err(Error::TrainAbort {
                    iter,
                    reason: format!("non-finite loss {}; last-good checkpoint restored", row.loss),
                });
            }

            clip_gradients(store, tcfg.clip_norm);
            opt.step(store, |name| if is_backbone(name) { lr_b } else { lr_r }, tcfg.weight_decay);
            last_good = store.values_snapshot();

            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", row.csv())?;
            }
            rows.push(row);
        }
    }

    if let Some(p) = ckpt_out {
        store.save(p)?;
    }
    Ok(rows)
}
