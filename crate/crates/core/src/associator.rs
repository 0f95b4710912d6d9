//! Structure-enhanced memory association.
//!
//! Current-frame features attend to the memory bank, an edge-modulated
//! multi-scale branch produces a one-channel structure map guided by the
//! same memory, and the map rescales the associated features:
//!
//! ```text
//! F'  = MLP(CrossAttn(SelfAttn(F), M))        residual around each step
//! Fe  = F ⊙ (1 + E)
//! Fms = Σ_k mix_k ⊙ DWConv_k(Fe),  k ∈ {3, 5, 7}
//! S   = σ(Conv3×3(CrossAttn(Fms, M)))
//! F'' = F' ⊙ (1 + α·S)
//! ```

use robomask_tensor::{Tensor, Var};

use crate::config::Config;
use crate::error::{contract, dims, Result};
use crate::imaging::BinaryMask;
use crate::layers::{
    attend, attn_specs, grid_to_tokens, mlp, mlp_specs, tokens_to_grid, ParamSource, ParamSpec,
    LN_EPS,
};
use crate::model::{FrameFeatures, MemoryBank, PATCH};

pub const SCALES: [usize; 3] = [3, 5, 7];

pub(crate) fn specs(cfg: &Config) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let mut s = attn_specs("assoc.self", c);
    s.extend(attn_specs("assoc.cross", c));
    s.extend(mlp_specs("assoc.mlp", c, 2 * c, c));
    for k in SCALES {
        s.push(ParamSpec::uniform(
            format!("assoc.ms.k{k}"),
            &[c, k, k],
            k * k,
        ));
        s.push(ParamSpec::ones(format!("assoc.ms.mix{k}"), &[c, 1, 1]));
    }
    s.extend(attn_specs("assoc.struct", c));
    s.push(ParamSpec::uniform(
        "assoc.struct.conv",
        &[1, c, 3, 3],
        9 * c,
    ));
    s.push(ParamSpec::zeros("assoc.struct.b", &[1, 1, 1]));
    s.push(ParamSpec::zeros("assoc.alpha", &[1, 1, 1]));
    s
}

/// Memory-conditioned features: self-attention, cross-attention to the
/// memory tokens `[L, C]`, then an MLP, each pre-normed with a residual.
pub fn temporal_associate(p: &dyn ParamSource, f: &Var, memory: &Var) -> Result<Var> {
    let (h, w) = (f.shape()[1], f.shape()[2]);
    let x = grid_to_tokens(f)?;
    let n = x.layer_norm(LN_EPS)?;
    let x = x.add(&attend(p, "assoc.self", &n, &n, &n)?)?;
    let n = x.layer_norm(LN_EPS)?;
    let x = x.add(&attend(p, "assoc.cross", &n, memory, memory)?)?;
    let x = x.add(&mlp(p, "assoc.mlp", &x.layer_norm(LN_EPS)?)?)?;
    tokens_to_grid(&x, h, w)
}

/// `F ⊙ (1 + E)` with `E: [1, h, w]` broadcast over channels.
pub fn edge_modulate(f: &Var, edges: &Var) -> Result<Var> {
    if edges.shape().len() != 3 || edges.shape()[0] != 1 || edges.shape()[1..] != f.shape()[1..] {
        return Err(dims("edge_modulate", f.shape(), edges.shape()));
    }
    Ok(f.mul(&edges.add_scalar(1.0))?)
}

/// Sum of 3×3, 5×5 and 7×7 depthwise convolutions, each scaled per channel.
pub fn multiscale(p: &dyn ParamSource, f: &Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for k in SCALES {
        let branch = f
            .depthwise_conv2d(&p.param(&format!("assoc.ms.k{k}"))?)?
            .mul(&p.param(&format!("assoc.ms.mix{k}"))?)?;
        acc = Some(match acc {
            None => branch,
            Some(a) => a.add(&branch)?,
        });
    }
    Ok(acc.expect("three scales"))
}

/// `σ(Conv3×3(F + CrossAttn(F, M)))`, shape `[1, h, w]`.
pub fn structure_map(p: &dyn ParamSource, f_ms: &Var, memory: &Var) -> Result<Var> {
    let (h, w) = (f_ms.shape()[1], f_ms.shape()[2]);
    let x = grid_to_tokens(f_ms)?;
    let x = x.add(&attend(
        p,
        "assoc.struct",
        &x.layer_norm(LN_EPS)?,
        memory,
        memory,
    )?)?;
    let grid = tokens_to_grid(&x, h, w)?;
    Ok(grid
        .conv2d(&p.param("assoc.struct.conv")?)?
        .add(&p.param("assoc.struct.b")?)?
        .sigmoid())
}

/// `F' ⊙ (1 + α·S)`.
pub fn structure_modulate(f_prime: &Var, s: &Var, alpha: &Var) -> Result<Var> {
    if s.shape().len() != 3 || s.shape()[0] != 1 || s.shape()[1..] != f_prime.shape()[1..] {
        return Err(dims("structure_modulate", f_prime.shape(), s.shape()));
    }
    Ok(f_prime.mul(&s.mul(alpha)?.add_scalar(1.0))?)
}

/// Boundary of the ground truth max-pooled to feature resolution, `[1, h, w]`.
pub fn structure_target(gt: &BinaryMask) -> Result<Tensor> {
    crate::imaging::boundary_map(gt).max_pool(PATCH)
}

/// Mean binary cross-entropy between the structure map and
/// [`structure_target`], with probabilities clamped to `[1e-6, 1 − 1e-6]`.
pub fn structure_loss(s: &Var, gt: &BinaryMask) -> Result<Var> {
    let target = structure_target(gt)?;
    if target.shape() != s.shape() {
        return Err(dims("structure_loss", s.shape(), target.shape()));
    }
    Ok(crate::training::bce(s, &target))
}

/// Result of the full associator.
#[derive(Clone, Debug)]
pub struct Associated {
    /// `F''`, `[C, h, w]`.
    pub features: Var,
    /// `F'` before structure modulation.
    pub temporal: Var,
    /// Structure map `[1, h, w]`; absent when the bank is empty.
    pub structure: Option<Var>,
}

/// Runs the whole associator; with an empty bank the features pass through.
pub fn associate(
    p: &dyn ParamSource,
    feat: &FrameFeatures,
    bank: &MemoryBank,
) -> Result<Associated> {
    if bank.is_empty() {
        return Ok(Associated {
            features: feat.grid.clone(),
            temporal: feat.grid.clone(),
            structure: None,
        });
    }
    let memory = bank.tokens()?;
    associate_with(
        p,
        &feat.grid,
        &feat.grid.graph().constant(feat.edges.clone()),
        &memory,
    )
}

/// Associator over explicit inputs: `f: [C,h,w]`, `edges: [1,h,w]`,
/// `memory: [L, C]`.
pub fn associate_with(
    p: &dyn ParamSource,
    f: &Var,
    edges: &Var,
    memory: &Var,
) -> Result<Associated> {
    if memory.shape().first() == Some(&0) {
        return Err(contract("associate", "memory is empty"));
    }
    let temporal = temporal_associate(p, f, memory)?;
    let f_edge = edge_modulate(f, edges)?;
    let f_ms = multiscale(p, &f_edge)?;
    let s = structure_map(p, &f_ms, memory)?;
    let features = structure_modulate(&temporal, &s, &p.param("assoc.alpha")?)?;
    Ok(Associated {
        features,
        temporal,
        structure: Some(s),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use robomask_tensor::Graph;

    use super::*;
    use crate::layers::{init_params, Overlay};
    use crate::model::param_specs;

    fn setup() -> (Config, robomask_tensor::ParamStore, ChaCha8Rng) {
        let cfg = Config {
            channels: 8,
            ..Config::default()
        };
        let params = init_params(&param_specs(&cfg), 3);
        (cfg, params, ChaCha8Rng::seed_from_u64(5))
    }

    #[test]
    fn alpha_zero_leaves_temporal_features_untouched() {
        let (_, params, mut rng) = setup();
        let g = Graph::new();
        let bound = params.bind(&g, false);
        let f = g.constant(Tensor::uniform([8, 3, 4], -1.0, 1.0, &mut rng));
        let e = g.constant(Tensor::uniform([1, 3, 4], 0.0, 1.0, &mut rng));
        let m = g.constant(Tensor::uniform([5, 8], -1.0, 1.0, &mut rng));
        let zero = Overlay::new(&bound).with("assoc.alpha", g.constant(Tensor::zeros([1, 1, 1])));
        let out = associate_with(&zero, &f, &e, &m).unwrap();
        assert_eq!(out.features.value(), out.temporal.value());
        assert_eq!(out.structure.as_ref().unwrap().shape(), &[1, 3, 4]);

        let half =
            Overlay::new(&bound).with("assoc.alpha", g.constant(Tensor::full([1, 1, 1], 0.5)));
        let out = associate_with(&half, &f, &e, &m).unwrap();
        assert_ne!(out.features.value(), out.temporal.value());
    }

    #[test]
    fn zero_edges_are_an_identity() {
        let (_, _, mut rng) = setup();
        let g = Graph::new();
        let f = g.constant(Tensor::uniform([4, 2, 5], -3.0, 3.0, &mut rng));
        let out = edge_modulate(&f, &g.constant(Tensor::zeros([1, 2, 5]))).unwrap();
        assert_eq!(out.value(), f.value());
        let ones = edge_modulate(&f, &g.constant(Tensor::ones([1, 2, 5]))).unwrap();
        assert_eq!(ones.value(), &f.value().map(|v| 2.0 * v));
        assert!(edge_modulate(&f, &g.constant(Tensor::zeros([1, 5, 2]))).is_err());
    }

    #[test]
    fn structure_map_is_a_probability_grid() {
        let (_, params, mut rng) = setup();
        let g = Graph::new();
        let bound = params.bind(&g, false);
        let f = g.constant(Tensor::uniform([8, 4, 4], -1.0, 1.0, &mut rng));
        let m = g.constant(Tensor::uniform([3, 8], -1.0, 1.0, &mut rng));
        let s = structure_map(&bound, &multiscale(&bound, &f).unwrap(), &m).unwrap();
        assert_eq!(s.shape(), &[1, 4, 4]);
        assert!(s.value().data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn empty_bank_passes_features_through() {
        let (cfg, params, _) = setup();
        let g = Graph::new();
        let bound = params.bind(&g, false);
        let img = crate::imaging::Image::from_fn(32, 48, 3, |c, y, x| {
            ((c * 7 + y * 3 + x) % 11) as f64 / 10.0
        });
        let feat = crate::model::encode_frame(&bound, &g, &cfg, &img, 0).unwrap();
        let out = associate(&bound, &feat, &MemoryBank::new(2).unwrap()).unwrap();
        assert!(out.structure.is_none());
        assert_eq!(out.features.value(), feat.grid.value());
        assert!(associate_with(
            &bound,
            &feat.grid,
            &g.constant(feat.edges.clone()),
            &g.constant(Tensor::zeros([0, 8]))
        )
        .is_err());
    }

    #[test]
    fn structure_target_marks_boundary_cells() {
        // A filled square spanning cells (1..3, 1..3) of a 4×4 grid.
        let gt = BinaryMask::from_fn(64, 64, |y, x| {
            (16..48).contains(&y) && (16..48).contains(&x)
        });
        let t = structure_target(&gt).unwrap();
        assert_eq!(t.shape(), &[1, 4, 4]);
        let on: Vec<usize> = (0..16).filter(|&i| t.data()[i] > 0.5).collect();
        assert_eq!(on, vec![5, 6, 9, 10]);
        let g = Graph::new();
        let perfect = g.constant(t.clone());
        assert!(structure_loss(&perfect, &gt).unwrap().item() < 1e-5);
        assert!(structure_loss(&g.constant(Tensor::zeros([1, 3, 3])), &gt).is_err());
    }
}
