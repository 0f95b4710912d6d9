use std::collections::BTreeMap;
use std::f64::consts::PI;

use robomask_tensor::{ParamStore, Tensor};

use crate::config::Config;
use crate::error::{contract, Result};

/// Cosine decay from `base` at step 0 to 0 at step `total − 1`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    let span = total.saturating_sub(1).max(1) as f64;
    base * 0.5 * (1.0 + (PI * step.min(total.saturating_sub(1)) as f64 / span).cos())
}

/// Adam with decoupled weight decay and two learning-rate groups: the frame
/// encoder (`enc.*`) and everything else.
#[derive(Clone, Debug)]
pub struct Adam {
    lr_encoder: f64,
    lr_rest: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    total_steps: usize,
    step: usize,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: &Config) -> Self {
        Self {
            lr_encoder: cfg.lr_encoder,
            lr_rest: cfg.lr_rest,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: cfg.weight_decay,
            total_steps: cfg.steps,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rates `(encoder, rest)` for the next update.
    pub fn current_lr(&self) -> (f64, f64) {
        (
            cosine_lr(self.lr_encoder, self.step, self.total_steps),
            cosine_lr(self.lr_rest, self.step, self.total_steps),
        )
    }

    /// Applies one update; parameters without a gradient are left alone.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        let (lr_enc, lr_rest) = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).ok_or_else(|| {
                contract("adam", format!("gradient for unknown parameter `{name}`"))
            })?;
            if p.shape() != g.shape() {
                return Err(crate::error::dims("adam", p.shape(), g.shape()));
            }
            let lr = if name.starts_with("enc.") {
                lr_enc
            } else {
                lr_rest
            };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let (b1, b2) = (self.beta1, self.beta2);
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let update = (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
                *pv -= lr * (update + self.weight_decay * *pv);
            }
        }
        Ok(())
    }
}
