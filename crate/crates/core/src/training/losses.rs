use robomask_tensor::{cosine, Tensor, Var};

use crate::config::Config;
use crate::error::{dims, Result};

const CLAMP: f64 = 1e-6;

fn check(op: &'static str, p: &Var, g: &Tensor) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(dims(op, p.shape(), g.shape()));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities against `{0,1}` (or soft)
/// targets, probabilities clamped to `[1e-6, 1 − 1e-6]`.
pub fn bce(p: &Var, target: &Tensor) -> Var {
    let g = p.graph();
    let p = p.clamp(CLAMP, 1.0 - CLAMP);
    let t = g.constant(target.clone());
    let one_minus_t = g.constant(target.map(|v| 1.0 - v));
    let pos = p.log().mul(&t).expect("same shape");
    let neg = p
        .rsub_scalar(1.0)
        .log()
        .mul(&one_minus_t)
        .expect("same shape");
    pos.add(&neg).expect("same shape").mean().neg()
}

/// Mean focal loss `−α_t (1 − p_t)^γ log p_t` over pixels.
pub fn focal(p: &Var, target: &Tensor, gamma: f64, alpha: f64) -> Result<Var> {
    check("focal", p, target)?;
    let g = p.graph();
    let p = p.clamp(CLAMP, 1.0 - CLAMP);
    // p_t = p·t + (1 − p)(1 − t) = 1 − t + p(2t − 1)
    let pt = p
        .mul(&g.constant(target.map(|v| 2.0 * v - 1.0)))?
        .add(&g.constant(target.map(|v| 1.0 - v)))?;
    let alpha_t = g.constant(target.map(|v| alpha * v + (1.0 - alpha) * (1.0 - v)));
    let modulator = pt.rsub_scalar(1.0);
    let modulator = if gamma == 2.0 {
        modulator.square()
    } else {
        modulator.log().scale(gamma).exp()
    };
    Ok(alpha_t.mul(&modulator)?.mul(&pt.log())?.mean().neg())
}

/// `1 − (2Σpg + 1) / (Σp + Σg + 1)`.
pub fn dice(p: &Var, target: &Tensor) -> Result<Var> {
    check("dice", p, target)?;
    let g = p.graph();
    let inter = p.mul(&g.constant(target.clone()))?.sum();
    let num = inter.scale(2.0).add_scalar(1.0);
    let den = p.sum().add_scalar(target.sum() + 1.0);
    Ok(num.div(&den)?.rsub_scalar(1.0))
}

/// Focal/dice mixture used for every mask supervision.
pub fn mask_loss(p: &Var, target: &Tensor, cfg: &Config) -> Result<Var> {
    let f = focal(p, target, cfg.focal_gamma, cfg.focal_alpha)?;
    let d = dice(p, target)?;
    Ok(f.scale(cfg.focal_weight).add(&d.scale(cfg.dice_weight))?)
}

/// Both cycle endpoints against the first-frame ground truth.
pub fn loss_cycle(m0_forward: &Var, m0_backward: &Var, g0: &Tensor, cfg: &Config) -> Result<Var> {
    Ok(mask_loss(m0_forward, g0, cfg)?.add(&mask_loss(m0_backward, g0, cfg)?)?)
}

/// Mask-weighted mean feature, `Σ(F ⊙ M) / (ΣM + 1e-8)`, for `F: [C,h,w]`
/// and `M: [h,w]`; returns `[C]`.
pub fn object_embedding(features: &Var, mask: &Var) -> Result<Var> {
    let fs = features.shape();
    if fs.len() != 3 || mask.shape() != &fs[1..] {
        return Err(dims("object_embedding", fs, mask.shape()));
    }
    let (c, hw) = (fs[0], fs[1] * fs[2]);
    let weighted = features.mul(mask)?.reshape([c, hw])?.sum_axis(1)?;
    Ok(weighted.div(&mask.sum().add_scalar(1e-8))?)
}

/// `1 − mean cos(f_x, f_0)` over the intermediate embeddings; 0 when there
/// are none.
pub fn loss_semantic(embeddings: &[Var], f0: &Var) -> Result<Var> {
    if embeddings.is_empty() {
        log::warn!("semantic loss over an empty set of intermediate frames");
        return Ok(f0.graph().scalar(0.0));
    }
    let mut total = f0.graph().scalar(0.0);
    for f in embeddings {
        total = total.add(&cosine(f, f0)?)?;
    }
    Ok(total.scale(1.0 / embeddings.len() as f64).rsub_scalar(1.0))
}

/// `1 − Σpq / Σ(p + q − pq)` over valid cells; 0 when nothing is valid or the
/// denominator vanishes.
pub fn soft_iou_loss(p: &Var, q: &Tensor, valid: &[bool]) -> Result<Var> {
    check("soft_iou", p, q)?;
    let g = p.graph();
    if valid.len() != q.len() {
        return Err(dims("soft_iou", q.shape(), &[valid.len()]));
    }
    let v = Tensor::new(
        q.shape().to_vec(),
        valid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )?;
    let pv = p.mul(&g.constant(v.clone()))?;
    let qv: Vec<f64> = q.data().iter().zip(v.data()).map(|(a, b)| a * b).collect();
    let qv = Tensor::new(q.shape().to_vec(), qv)?;
    let inter = pv.mul(&g.constant(qv.clone()))?.sum();
    let union = pv.sum().add_scalar(qv.sum()).sub(&inter)?;
    if union.item() < 1e-12 {
        return Ok(g.scalar(0.0));
    }
    Ok(inter.div(&union)?.rsub_scalar(1.0))
}

/// Mean of per-frame soft IoU losses between downsampled masks and pseudo
/// labels.
pub fn loss_patch(downsampled: &[Var], labels: &[(Tensor, Vec<bool>)]) -> Result<Var> {
    if downsampled.len() != labels.len() {
        return Err(dims("loss_patch", &[downsampled.len()], &[labels.len()]));
    }
    let Some(first) = downsampled.first() else {
        return Err(crate::error::contract("loss_patch", "no frames"));
    };
    let mut total = first.graph().scalar(0.0);
    for (p, (q, valid)) in downsampled.iter().zip(labels) {
        total = total.add(&soft_iou_loss(p, q, valid)?)?;
    }
    Ok(total.scale(1.0 / downsampled.len() as f64))
}

/// Individual loss terms of one step.
#[derive(Clone, Debug)]
pub struct LossComponents {
    pub cycle: Var,
    pub semantic: Var,
    pub patch: Var,
    pub structure: Var,
    pub occlusion: Var,
    pub iou: Var,
}

/// Weighted sum of the components.
pub fn loss_total(c: &LossComponents, cfg: &Config) -> Result<Var> {
    let terms = [
        (&c.cycle, cfg.w_cyc),
        (&c.semantic, cfg.w_sem),
        (&c.patch, cfg.w_patch),
        (&c.structure, cfg.w_struct),
        (&c.occlusion, cfg.w_occ),
        (&c.iou, cfg.w_iou),
    ];
    let mut total = c.cycle.graph().scalar(0.0);
    for (v, w) in terms {
        if w != 0.0 {
            total = total.add(&v.scale(w))?;
        }
    }
    Ok(total)
}
