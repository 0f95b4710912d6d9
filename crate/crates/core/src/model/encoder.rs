use robomask_tensor::{linear, Graph, Tensor, Var};

use crate::config::Config;
use crate::error::{contract, Result};
use crate::imaging::{canny, Image};
use crate::layers::{
    attend, attn_specs, grid_position_codes, grid_to_tokens, mlp, mlp_specs, tokens_to_grid,
    ParamSource, ParamSpec, LN_EPS,
};

pub const PATCH: usize = 16;
/// Stride of the fine features and of the decoder's mask logits.
pub const FINE: usize = 4;

/// Encoder output for one frame.
#[derive(Clone, Debug)]
pub struct FrameFeatures {
    /// `[C, H/16, W/16]`.
    pub grid: Var,
    /// `[mask_channels, H/4, W/4]` high-resolution features for the decoder.
    pub fine: Var,
    /// Binary edge map max-pooled to `[1, H/16, W/16]`.
    pub edges: Tensor,
    pub frame_index: usize,
}

impl FrameFeatures {
    pub fn grid_size(&self) -> (usize, usize) {
        (self.grid.shape()[1], self.grid.shape()[2])
    }
}

pub(crate) fn specs(cfg: &Config) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let patch_in = 3 * PATCH * PATCH;
    let fine_in = 3 * FINE * FINE;
    let mut s = vec![
        ParamSpec::uniform("enc.patch.w", &[patch_in, c], patch_in),
        ParamSpec::zeros("enc.patch.b", &[c]),
        ParamSpec::uniform("enc.fine.w", &[fine_in, cfg.mask_channels], fine_in),
        ParamSpec::zeros("enc.fine.b", &[cfg.mask_channels]),
        ParamSpec::uniform(
            "enc.fine.conv",
            &[cfg.mask_channels, cfg.mask_channels, 3, 3],
            9 * cfg.mask_channels,
        ),
        ParamSpec::zeros("enc.fine.conv_b", &[cfg.mask_channels, 1, 1]),
    ];
    s.extend(attn_specs("enc.attn", c));
    s.extend(mlp_specs("enc.mlp", c, 2 * c, c));
    s
}

/// Cuts a `[3, H, W]` image into non-overlapping `p×p` patches, one row per
/// patch in row-major patch order, each row ordered channel, row, column.
pub fn patchify(img: &Image, p: usize) -> Result<Tensor> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    if ch != 3 || h % p != 0 || w % p != 0 {
        return Err(contract(
            "encode_frame",
            format!("expected RGB padded to multiples of {p}, got {ch}x{h}x{w}"),
        ));
    }
    let (gh, gw) = (h / p, w / p);
    let mut data = Vec::with_capacity(h * w * 3);
    for py in 0..gh {
        for px in 0..gw {
            for c in 0..3 {
                for dy in 0..p {
                    for dx in 0..p {
                        data.push(img.get(c, py * p + dy, px * p + dx));
                    }
                }
            }
        }
    }
    Ok(Tensor::new([gh * gw, 3 * p * p], data)?)
}

/// Linear patch embedding before positional encoding, `[h·w, C]`.
pub fn patch_embed(p: &dyn ParamSource, g: &Graph, img: &Image) -> Result<Var> {
    let patches = g.constant(patchify(img, PATCH)?);
    Ok(linear(
        &patches,
        &p.param("enc.patch.w")?,
        &p.param("enc.patch.b")?,
    )?)
}

/// Patch embedding, sinusoidal positions and one pre-norm transformer block.
pub fn encode_frame(
    p: &dyn ParamSource,
    g: &Graph,
    cfg: &Config,
    img: &Image,
    frame_index: usize,
) -> Result<FrameFeatures> {
    let (gh, gw) = (img.height() / PATCH, img.width() / PATCH);
    let tokens = patch_embed(p, g, img)?;
    let pe = g.constant(grid_position_codes(gh, gw, cfg.channels));
    let x = tokens.add(&pe)?;
    let n = x.layer_norm(LN_EPS)?;
    let x = x.add(&attend(p, "enc.attn", &n, &n, &n)?)?;
    let x = x.add(&mlp(p, "enc.mlp", &x.layer_norm(LN_EPS)?)?)?;
    let grid = tokens_to_grid(&x, gh, gw)?;

    let fine_patches = g.constant(patchify(img, FINE)?);
    let fine = linear(
        &fine_patches,
        &p.param("enc.fine.w")?,
        &p.param("enc.fine.b")?,
    )?;
    let fine = tokens_to_grid(&fine, img.height() / FINE, img.width() / FINE)?;
    let context = fine
        .relu()
        .conv2d(&p.param("enc.fine.conv")?)?
        .add(&p.param("enc.fine.conv_b")?)?;
    let fine = fine.add(&context)?;

    let edges = canny(img, cfg.canny_sigma, cfg.canny_low, cfg.canny_high)?.pooled(PATCH)?;
    Ok(FrameFeatures {
        grid,
        fine,
        edges,
        frame_index,
    })
}

/// Token view of a feature grid.
pub fn feature_tokens(f: &FrameFeatures) -> Result<Var> {
    grid_to_tokens(&f.grid)
}
