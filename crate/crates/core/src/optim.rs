//! Adam with optional linear warmup and decoupled weight decay.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

pub struct Adam {
    lr: f64,
    hyper: AdamParams,
    weight_decay: f64,
    warmup_steps: usize,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: usize,
}

impl Adam {
    pub fn new(lr: f64, hyper: AdamParams, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            hyper,
            weight_decay: 0.0,
            warmup_steps: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            t: 0,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_warmup(mut self, steps: usize) -> Self {
        self.warmup_steps = steps;
        self
    }

    /// Learning rate used at 1-based step `step`: linear warmup, then constant.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    /// Applies one update. Parameters are snapped to the `f32` grid after
    /// the update so that checkpoints reproduce them exactly.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len(), "param/grad count mismatch");
        assert_eq!(params.len(), self.m.len(), "optimizer built for other params");
        self.t += 1;
        let lr = self.lr_at(self.t);
        if lr == 0.0 {
            return;
        }
        let AdamParams { eps, beta1, beta2 } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let g = &grads[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                let decay = self.weight_decay * p.data[i];
                p.data[i] -= lr * (mhat / (vhat.sqrt() + eps) + decay);
            }
            p.quantize_f32();
        }
    }
}

/// Element-wise sum of per-example gradient lists, folded in order.
pub fn sum_gradients(mut parts: Vec<Vec<Matrix>>) -> Option<Vec<Matrix>> {
    let mut iter = parts.drain(..);
    let mut acc = iter.next()?;
    for part in iter {
        for (a, g) in acc.iter_mut().zip(&part) {
            a.add_assign(g);
        }
    }
    Some(acc)
}

/// Independent generator for (`stream`, `index`) under a base seed, so
/// parallel work items never share state.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

/// Per-step training loss plus periodic validation loss.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub train: Vec<f64>,
    /// (step, loss); step 0 is the initial parameters.
    pub val: Vec<(usize, f64)>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,val_loss\n");
        let val_at = |step: usize| self.val.iter().find(|(s, _)| *s == step).map(|v| v.1);
        if let Some(v) = val_at(0) {
            let _ = writeln!(out, "0,,{v}");
        }
        for (i, t) in self.train.iter().enumerate() {
            let step = i + 1;
            match val_at(step) {
                Some(v) => writeln!(out, "{step},{t},{v}"),
                None => writeln!(out, "{step},{t},"),
            }
            .expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
