//! Automatic prompts: a learnable class-token bank and object tokens built
//! by hierarchical clustering of past foreground features.
//!
//! For each memory frame, farthest point sampling over foreground positions
//! seeds a k-means split of the foreground features into `R` macro regions;
//! each region is split again into `S` micro clusters whose centers are
//! concatenated into one token of width `S·C`.

use robomask_tensor::{linear, Tensor, Var};

use crate::config::{Config, TargetClass};
use crate::error::{contract, dims, Result};
use crate::imaging::BinaryMask;
use crate::layers::{ParamSource, ParamSpec};

pub(crate) fn specs(cfg: &Config) -> Vec<ParamSpec> {
    let c = cfg.channels;
    let sc = cfg.subclusters * c;
    vec![
        ParamSpec::uniform("auto.classes", &[TargetClass::ALL.len(), c], 1),
        ParamSpec::uniform("auto.proj.w", &[sc, c], sc),
        ParamSpec::zeros("auto.proj.b", &[c]),
    ]
}

/// Farthest point sampling outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sampled {
    pub indices: Vec<usize>,
    /// Fewer points than requested were available.
    pub shortfall: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy max–min selection of `k` points starting from index 0; ties go to
/// the lowest index.
pub fn fps(points: &[[f64; 2]], k: usize) -> Result<Sampled> {
    if k == 0 || points.is_empty() {
        return Err(contract("fps", "need k ≥ 1 and at least one point"));
    }
    let take = k.min(points.len());
    let mut indices = vec![0];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[0])).collect();
    while indices.len() < take {
        let mut best = 0;
        for i in 1..points.len() {
            if nearest[i] > nearest[best] {
                best = i;
            }
        }
        indices.push(best);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, &points[best]));
        }
    }
    Ok(Sampled {
        indices,
        shortfall: take < k,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    /// `[k, C]`.
    pub centers: Tensor,
    pub inertia: f64,
    /// Inertia after every assignment step, starting with the initial centers.
    pub history: Vec<f64>,
}

fn assign(points: &[&[f64]], centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let assignments = points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = sq_dist(p, &centers[0]);
            for (j, c) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(p, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            total += best_d;
            best
        })
        .collect();
    (assignments, total)
}

/// Lloyd iterations from the given centers.
///
/// Stops after `max_iter` updates or once assignments no longer change. An
/// empty cluster is moved onto the point farthest from its own center.
pub fn kmeans(features: &Tensor, init: &Tensor, max_iter: usize) -> Result<ClusterResult> {
    if features.rank() != 2 || init.rank() != 2 || features.shape()[1] != init.shape()[1] {
        return Err(dims("kmeans", features.shape(), init.shape()));
    }
    let (n, c) = (features.shape()[0], features.shape()[1]);
    let k = init.shape()[0];
    if k == 0 || n < k {
        return Err(contract(
            "kmeans",
            format!("need 1 ≤ k ≤ points, got k={k}, points={n}"),
        ));
    }
    let points: Vec<&[f64]> = features.data().chunks(c).collect();
    let mut centers: Vec<Vec<f64>> = init.data().chunks(c).map(<[f64]>::to_vec).collect();
    let (mut assignments, inertia) = assign(&points, &centers);
    let mut history = vec![inertia];
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; c]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let old = centers.clone();
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let mut far: Option<(usize, f64)> = None;
                for (i, p) in points.iter().enumerate() {
                    let d = sq_dist(p, &old[assignments[i]]);
                    if !taken[i] && far.is_none_or(|(_, b)| d > b) {
                        far = Some((i, d));
                    }
                }
                if let Some((i, _)) = far {
                    taken[i] = true;
                    centers[j] = points[i].to_vec();
                }
            }
        }
        let (next, inertia) = assign(&points, &centers);
        history.push(inertia);
        let done = next == assignments;
        assignments = next;
        if done {
            break;
        }
    }
    let inertia = *history.last().expect("non-empty history");
    Ok(ClusterResult {
        assignments,
        centers: Tensor::new([k, c], centers.concat())?,
        inertia,
        history,
    })
}

/// Object tokens for a set of memory frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTokens {
    /// `[N, R, S·C]`.
    pub values: Tensor,
    /// Per frame: false when its mask had no foreground (its tokens are zero).
    pub valid: Vec<bool>,
}

/// Selects rows of a `[P, C]` feature matrix.
fn rows(features: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let c = features[0].len();
    let data: Vec<f64> = idx
        .iter()
        .flat_map(|&i| features[i].iter().copied())
        .collect();
    Tensor::new([idx.len(), c], data).expect("row selection")
}

/// FPS-seeded k-means with `k' = min(k, P)` clusters; returns the
/// assignments and centers (as rows).
fn seeded_clusters(
    coords: &[[f64; 2]],
    features: &[Vec<f64>],
    k: usize,
    iters: usize,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let seeds = fps(coords, k)?;
    let feats = rows(features, &(0..features.len()).collect::<Vec<_>>());
    let result = kmeans(&feats, &rows(features, &seeds.indices), iters)?;
    let c = features[0].len();
    let centers = result
        .centers
        .data()
        .chunks(c)
        .map(<[f64]>::to_vec)
        .collect();
    Ok((result.assignments, centers))
}

/// Hierarchical clustering tokens.
///
/// `features[n]` is `[C, h, w]` and `masks[n]` is the `h×w` foreground of
/// memory frame `n`. Shortfalls (fewer points than clusters) are padded by
/// repeating the last cluster.
pub fn object_tokens(
    features: &[Tensor],
    masks: &[BinaryMask],
    regions: usize,
    subclusters: usize,
    iters: usize,
) -> Result<ObjectTokens> {
    if regions == 0 || subclusters == 0 {
        return Err(contract("object_tokens", "R and S must be at least 1"));
    }
    if features.len() != masks.len() {
        return Err(dims("object_tokens", &[features.len()], &[masks.len()]));
    }
    let c = features.first().map(|f| f.shape()[0]).unwrap_or(0);
    let width = subclusters * c;
    let mut out = Vec::with_capacity(features.len() * regions * width);
    let mut valid = Vec::with_capacity(features.len());
    for (f, m) in features.iter().zip(masks) {
        let [fc, h, w] = *f.shape() else {
            return Err(contract(
                "object_tokens",
                format!("expected [C,h,w] features, got {:?}", f.shape()),
            ));
        };
        if fc != c || m.shape() != [h, w] {
            return Err(dims("object_tokens", f.shape(), &m.shape()));
        }
        let mut coords = Vec::new();
        let mut feats = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if m.get(y, x) {
                    coords.push([y as f64, x as f64]);
                    feats.push(
                        (0..c)
                            .map(|ch| f.data()[(ch * h + y) * w + x])
                            .collect::<Vec<f64>>(),
                    );
                }
            }
        }
        if coords.is_empty() {
            out.extend(std::iter::repeat_n(0.0, regions * width));
            valid.push(false);
            continue;
        }
        valid.push(true);
        let (region_of, macro_centers) = seeded_clusters(&coords, &feats, regions, iters)?;
        let mut tokens: Vec<Vec<f64>> = Vec::with_capacity(regions);
        for (r, macro_center) in macro_centers.iter().enumerate() {
            let members: Vec<usize> = (0..coords.len()).filter(|&i| region_of[i] == r).collect();
            let prototypes = if members.is_empty() {
                vec![macro_center.clone()]
            } else {
                let sub_coords: Vec<[f64; 2]> = members.iter().map(|&i| coords[i]).collect();
                let sub_feats: Vec<Vec<f64>> = members.iter().map(|&i| feats[i].clone()).collect();
                seeded_clusters(&sub_coords, &sub_feats, subclusters, iters)?.1
            };
            let mut token = Vec::with_capacity(width);
            for s in 0..subclusters {
                token.extend(&prototypes[s.min(prototypes.len() - 1)]);
            }
            tokens.push(token);
        }
        for r in 0..regions {
            out.extend(&tokens[r.min(tokens.len() - 1)]);
        }
    }
    Ok(ObjectTokens {
        values: Tensor::new([features.len(), regions, width], out)?,
        valid,
    })
}

/// The bank row for `target` as a `[1, C]` prompt token.
pub fn class_tokens(p: &dyn ParamSource, target: TargetClass) -> Result<Var> {
    Ok(p.param("auto.classes")?.narrow(0, target.index(), 1)?)
}

/// Linear map `S·C → C` over all `N·R` object tokens.
pub fn project_tokens(p: &dyn ParamSource, tokens: &Var) -> Result<Var> {
    let s = tokens.shape();
    if s.len() != 3 {
        return Err(contract(
            "project_tokens",
            format!("expected [N,R,S·C], got {s:?}"),
        ));
    }
    let flat = tokens.reshape([s[0] * s[1], s[2]])?;
    Ok(linear(
        &flat,
        &p.param("auto.proj.w")?,
        &p.param("auto.proj.b")?,
    )?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use robomask_tensor::Graph;

    use super::*;
    use crate::layers::init_params;
    use crate::model::param_specs;

    #[test]
    fn fps_spreads_along_a_line() {
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [0.0, i as f64]).collect();
        let s = fps(&pts, 3).unwrap();
        assert_eq!(s.indices, vec![0, 9, 4]);
        assert!(!s.shortfall);
        let s = fps(&pts[..2], 5).unwrap();
        assert_eq!(s.indices, vec![0, 1]);
        assert!(s.shortfall);
        assert!(fps(&[], 1).is_err());
        assert!(fps(&pts, 0).is_err());
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let data = vec![0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 5.0, 5.0, 5.1, 5.0];
        let x = Tensor::new([5, 2], data).unwrap();
        let init = Tensor::new([2, 2], vec![0.0, 0.0, 0.1, 0.0]).unwrap();
        let r = kmeans(&x, &init, 20).unwrap();
        assert_eq!(r.assignments[..3], [r.assignments[0]; 3]);
        assert_eq!(r.assignments[3], r.assignments[4]);
        assert_ne!(r.assignments[0], r.assignments[3]);
        assert!(r.inertia < 0.05);
        assert!(kmeans(&x, &Tensor::zeros([6, 2]), 5).is_err());
        assert!(kmeans(&x, &Tensor::zeros([2, 3]), 5).is_err());
    }

    #[test]
    fn empty_and_single_pixel_masks() {
        let f = Tensor::from_fn([4, 3, 3], |i| i as f64);
        let empty = BinaryMask::empty(3, 3);
        let mut dot = BinaryMask::empty(3, 3);
        dot.set(1, 2, true);
        let t = object_tokens(&[f.clone(), f.clone()], &[empty, dot], 2, 3, 5).unwrap();
        assert_eq!(t.values.shape(), &[2, 2, 12]);
        assert_eq!(t.valid, vec![false, true]);
        assert!(t.values.data()[..24].iter().all(|v| *v == 0.0));
        // Every sub-cluster of every region repeats the lone pixel's feature.
        let pixel: Vec<f64> = (0..4).map(|c| f.at(&[c, 1, 2])).collect();
        for chunk in t.values.data()[24..].chunks(4) {
            assert_eq!(chunk, &pixel[..]);
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let f = Tensor::zeros([4, 3, 3]);
        assert!(object_tokens(std::slice::from_ref(&f), &[], 1, 1, 1).is_err());
        assert!(object_tokens(
            std::slice::from_ref(&f),
            &[BinaryMask::empty(2, 3)],
            1,
            1,
            1
        )
        .is_err());
        assert!(object_tokens(&[f], &[BinaryMask::empty(3, 3)], 0, 1, 1).is_err());
    }

    #[test]
    fn class_and_projected_tokens_have_channel_width() {
        let cfg = Config {
            channels: 8,
            subclusters: 3,
            ..Config::default()
        };
        let params = init_params(&param_specs(&cfg), 1);
        let g = Graph::new();
        let bound = params.bind(&g, false);
        let arm = class_tokens(&bound, TargetClass::Arm).unwrap();
        let grip = class_tokens(&bound, TargetClass::Gripper).unwrap();
        assert_eq!(arm.shape(), &[1, 8]);
        assert_ne!(arm.value(), grip.value());
        let tokens = g.constant(Tensor::ones([2, 4, 24]));
        assert_eq!(project_tokens(&bound, &tokens).unwrap().shape(), &[8, 8]);
        assert!(project_tokens(&bound, &g.constant(Tensor::ones([8, 24]))).is_err());
    }

    proptest! {
        #[test]
        fn fps_returns_distinct_indices(
            pts in prop::collection::vec((0.0..20.0f64, 0.0..20.0f64), 1..40),
            k in 1usize..10,
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
            let s = fps(&pts, k).unwrap();
            prop_assert_eq!(s.indices[0], 0);
            prop_assert_eq!(s.indices.len(), k.min(pts.len()));
            let mut sorted = s.indices.clone();
            sorted.sort();
            sorted.dedup();
            // Duplicate coordinates may be revisited only once all distinct ones are used.
            let distinct = {
                let mut d = pts.clone();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                d.dedup();
                d.len()
            };
            prop_assert!(sorted.len() >= s.indices.len().min(distinct));
        }

        #[test]
        fn kmeans_history_never_increases(
            data in prop::collection::vec(-5.0..5.0f64, 6..60),
            k in 1usize..4,
        ) {
            let n = data.len() / 2;
            prop_assume!(n >= k);
            let x = Tensor::new([n, 2], data[..2 * n].to_vec()).unwrap();
            let init = Tensor::new([k, 2], data[..2 * k].to_vec()).unwrap();
            let r = kmeans(&x, &init, 15).unwrap();
            for w in r.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            prop_assert!(r.assignments.iter().all(|&a| a < k));
        }

        #[test]
        fn token_shape_is_n_by_r_by_sc(
            n in 1usize..4,
            r in 1usize..5,
            s in 1usize..5,
            values in prop::collection::vec(-1.0..1.0f64, 3 * 3 * 20),
            bits in prop::collection::vec(prop::bool::weighted(0.3), 3 * 20),
        ) {
            let (h, w, c) = (4, 5, 3);
            let feats: Vec<Tensor> = values.chunks(c * h * w).take(n).map(|v| Tensor::new([c, h, w], v.to_vec()).unwrap()).collect();
            let masks: Vec<BinaryMask> = bits.chunks(h * w).take(n).map(|b| BinaryMask::new(h, w, b.to_vec()).unwrap()).collect();
            let t = object_tokens(&feats, &masks, r, s, 5).unwrap();
            prop_assert_eq!(t.values.shape(), &[n, r, s * c]);
            for (i, m) in masks.iter().enumerate() {
                prop_assert_eq!(t.valid[i], !m.is_empty());
            }
        }
    }
}
