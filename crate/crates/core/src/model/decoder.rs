use robomask_tensor::{concat, Graph, Tensor, Var};

use crate::config::Config;
use crate::error::{contract, dims, Result};
use crate::layers::{
    attend, attn_specs, grid_position_codes, grid_to_tokens, mlp, mlp_specs, position_code,
    ParamSource, ParamSpec, LN_EPS,
};
use crate::model::encoder::FINE;

/// Candidate masks with their quality scores.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `[K, H/4, W/4]` logits.
    pub masks: Var,
    /// `[K]` predicted IoU, pre-sigmoid.
    pub iou: Var,
    /// `[1]` occlusion logit; positive means the target is not visible.
    pub occlusion: Var,
}

/// A user prompt in padded-image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prompt {
    Click {
        x: usize,
        y: usize,
        positive: bool,
    },
    Box {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    },
}

pub(crate) fn specs(cfg: &Config) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let mc = cfg.mask_channels;
    let k = cfg.candidates;
    let mut s = vec![
        ParamSpec::uniform("dec.tokens", &[k + 2, c], 1),
        ParamSpec::uniform("dec.up.w", &[c, mc, FINE, FINE], c),
        ParamSpec::zeros("dec.up.b", &[mc, 1, 1]),
        ParamSpec::uniform("prompt.pos", &[c], 1),
        ParamSpec::uniform("prompt.neg", &[c], 1),
        ParamSpec::uniform("prompt.box0", &[c], 1),
        ParamSpec::uniform("prompt.box1", &[c], 1),
    ];
    for b in 0..cfg.decoder_blocks {
        s.extend(attn_specs(&format!("dec.b{b}.self"), c));
        s.extend(attn_specs(&format!("dec.b{b}.t2i"), c));
        s.extend(mlp_specs(&format!("dec.b{b}.mlp"), c, 2 * c, c));
        s.extend(attn_specs(&format!("dec.b{b}.i2t"), c));
    }
    s.extend(attn_specs("dec.final", c));
    s.extend(mlp_specs("dec.hyper", c, c, mc));
    s.extend(mlp_specs("dec.iou", c, c, k));
    s.extend(mlp_specs("dec.occ", c, c, 1));
    s
}

/// Embeds user prompts as `[L, C]` tokens: coordinate encoding plus a learned
/// type embedding. Returns `None` when there are no prompts.
pub fn embed_prompts(
    p: &dyn ParamSource,
    g: &Graph,
    prompts: &[Prompt],
    height: usize,
    width: usize,
    c: usize,
) -> Result<Option<Var>> {
    if prompts.is_empty() {
        return Ok(None);
    }
    let code = |x: usize, y: usize| -> Result<Var> {
        let v = position_code(
            (x as f64 + 0.5) / width as f64,
            (y as f64 + 0.5) / height as f64,
            c,
        );
        Ok(g.constant(Tensor::new([c], v)?))
    };
    let mut rows = Vec::new();
    for prompt in prompts {
        match *prompt {
            Prompt::Click { x, y, positive } => {
                let kind = p.param(if positive { "prompt.pos" } else { "prompt.neg" })?;
                rows.push(code(x, y)?.add(&kind)?.reshape([1, c])?);
            }
            Prompt::Box { x0, y0, x1, y1 } => {
                rows.push(
                    code(x0, y0)?
                        .add(&p.param("prompt.box0")?)?
                        .reshape([1, c])?,
                );
                rows.push(
                    code(x1, y1)?
                        .add(&p.param("prompt.box1")?)?
                        .reshape([1, c])?,
                );
            }
        }
    }
    Ok(Some(concat(&rows, 0)?))
}

fn narrow_row(x: &Var, start: usize, len: usize) -> Result<Var> {
    Ok(x.narrow(0, start, len)?)
}

/// Two-way transformer decoder.
///
/// `image: [C, h, w]` embedding, `fine: [mask_channels, 4h, 4w]`,
/// `prompts: [L, C]` with `L ≥ 1`.
pub fn decode_masks(
    p: &dyn ParamSource,
    cfg: &Config,
    image: &Var,
    fine: &Var,
    prompts: &Var,
) -> Result<DecoderOutput> {
    let g = image.graph().clone();
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(contract(
                "decode_masks",
                format!("expected [C,h,w] image, got {:?}", image.shape()),
            ))
        }
    };
    if prompts.shape().len() != 2 || prompts.shape()[0] == 0 {
        return Err(contract(
            "decode_masks",
            "at least one prompt token is required",
        ));
    }
    if prompts.shape()[1] != c {
        return Err(dims("decode_masks", image.shape(), prompts.shape()));
    }
    let mc = cfg.mask_channels;
    let (fh, fw) = (h * FINE, w * FINE);
    if fine.shape() != [mc, fh, fw] {
        return Err(dims("decode_masks", &[mc, fh, fw], fine.shape()));
    }
    let k_out = cfg.candidates;

    let mut q = concat(&[p.param("dec.tokens")?, prompts.clone()], 0)?;
    let q_pe = q.clone();
    let mut keys = grid_to_tokens(image)?;
    let k_pe = g.constant(grid_position_codes(h, w, c));

    for b in 0..cfg.decoder_blocks {
        let qq = q.add(&q_pe)?;
        q = q
            .add(&attend(p, &format!("dec.b{b}.self"), &qq, &qq, &q)?)?
            .layer_norm(LN_EPS)?;
        let qq = q.add(&q_pe)?;
        let kk = keys.add(&k_pe)?;
        q = q
            .add(&attend(p, &format!("dec.b{b}.t2i"), &qq, &kk, &keys)?)?
            .layer_norm(LN_EPS)?;
        q = q
            .add(&mlp(p, &format!("dec.b{b}.mlp"), &q)?)?
            .layer_norm(LN_EPS)?;
        let qq = q.add(&q_pe)?;
        keys = keys
            .add(&attend(p, &format!("dec.b{b}.i2t"), &kk, &qq, &q)?)?
            .layer_norm(LN_EPS)?;
    }
    let qq = q.add(&q_pe)?;
    let kk = keys.add(&k_pe)?;
    q = q
        .add(&attend(p, "dec.final", &qq, &kk, &keys)?)?
        .layer_norm(LN_EPS)?;

    let grid = keys.t()?.reshape([c, h, w])?;
    let up = grid
        .conv_transpose2d(&p.param("dec.up.w")?)?
        .add(&p.param("dec.up.b")?)?
        .add(fine)?
        .tanh();
    let hyper = mlp(p, "dec.hyper", &narrow_row(&q, 2, k_out)?)?;
    let masks = hyper
        .matmul(&up.reshape([mc, fh * fw])?)?
        .reshape([k_out, fh, fw])?;
    let iou = mlp(p, "dec.iou", &narrow_row(&q, 0, 1)?)?.reshape([k_out])?;
    let occlusion = mlp(p, "dec.occ", &narrow_row(&q, 1, 1)?)?.reshape([1])?;
    Ok(DecoderOutput {
        masks,
        iou,
        occlusion,
    })
}

/// Index of the highest predicted IoU; ties go to the lowest index.
pub fn select_mask(iou: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in iou.iter().enumerate() {
        if v > iou[best] {
            best = i;
        }
    }
    best
}
