//! Built-in verification: finite-difference gradient checks over every
//! differentiable operation and loss, plus brute-force oracles for the
//! discrete algorithms. The report is deterministic text.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robomask_tensor::gradcheck::{check_gradients, check_gradients_sampled};
use robomask_tensor::{
    attention, concat, cosine, linear, Graph, ParamStore, Tensor, TensorError, Var,
};

use crate::associator;
use crate::autoprompt::{fps, kmeans, object_tokens, project_tokens};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{boundary_f, jaccard, run_setting, EvalSetting, SettingKind};
use crate::imaging::{distance_transform, downsample_mask_16, BinaryMask, Image};
use crate::layers::{attend, init_params, mlp, Overlay};
use crate::model::{decode_masks, param_specs};
use crate::tracker::{scripted, FrameData};
use crate::training::{
    bce, dice, focal, loss_cycle, loss_patch, loss_semantic, loss_total, mask_loss,
    object_embedding, pseudo_labels, soft_iou_loss, LossComponents, PatchStatistics,
};

/// Relative-error bound every gradient check must meet.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelfCheckReport {
    pub gradients: Vec<CheckResult>,
    pub oracles: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn all_passed(&self) -> bool {
        self.gradients.iter().chain(&self.oracles).all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (title, checks) in [("gradient", &self.gradients), ("oracle", &self.oracles)] {
            for c in checks {
                let _ = writeln!(
                    out,
                    "[{}] {title}/{} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
        }
        let total = self.gradients.len() + self.oracles.len();
        let passed = self
            .gradients
            .iter()
            .chain(&self.oracles)
            .filter(|c| c.passed)
            .count();
        let _ = writeln!(out, "{passed}/{total} checks passed");
        out
    }
}

/// Runs both suites.
pub fn run() -> Result<SelfCheckReport> {
    Ok(SelfCheckReport {
        gradients: gradient_suite()?,
        oracles: oracle_suite()?,
    })
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
}

fn positive_t(shape: &[usize], seed: u64) -> Tensor {
    rand_t(shape, seed).map(|v| 0.5 + v.abs())
}

fn binary_t(shape: &[usize], seed: u64) -> Tensor {
    rand_t(shape, seed).map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Contracts an output with fixed random weights so every coordinate gets a
/// distinct upstream gradient.
fn probe(g: &Graph, v: &Var, seed: u64) -> Result<Var> {
    let w = g.constant(rand_t(v.shape(), seed ^ 0x5eed));
    Ok(v.mul(&w)?.sum())
}

/// Small network used by the block-level checks.
fn tiny_params(cfg: &Config) -> ParamStore {
    init_params(&param_specs(cfg), 11)
}

type GradFn = Box<dyn Fn(&Graph, &[Var]) -> Result<Var>>;

struct GradCase {
    name: &'static str,
    inputs: Vec<Tensor>,
    f: GradFn,
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    f: impl Fn(&Graph, &[Var]) -> Result<Var> + 'static,
) -> GradCase {
    GradCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

fn tensor_cases() -> Vec<GradCase> {
    vec![
        case(
            "add_broadcast",
            vec![rand_t(&[3, 4], 1), rand_t(&[4], 2)],
            |g, x| probe(g, &x[0].add(&x[1])?, 1),
        ),
        case(
            "sub_broadcast",
            vec![rand_t(&[2, 3, 4], 3), rand_t(&[3, 1], 4)],
            |g, x| probe(g, &x[0].sub(&x[1])?, 2),
        ),
        case(
            "mul_broadcast",
            vec![rand_t(&[2, 3, 4], 5), rand_t(&[2, 1, 1], 6)],
            |g, x| probe(g, &x[0].mul(&x[1])?, 3),
        ),
        case(
            "div",
            vec![rand_t(&[3, 4], 7), positive_t(&[3, 4], 8)],
            |g, x| probe(g, &x[0].div(&x[1])?, 4),
        ),
        case("exp_log", vec![positive_t(&[5], 9)], |g, x| {
            probe(g, &x[0].log().exp().add(&x[0].exp())?, 5)
        }),
        case("sqrt_square", vec![positive_t(&[5], 10)], |g, x| {
            probe(g, &x[0].sqrt().add(&x[0].square())?, 6)
        }),
        case("tanh_sigmoid", vec![rand_t(&[6], 11)], |g, x| {
            probe(g, &x[0].tanh().mul(&x[0].sigmoid())?, 7)
        }),
        case("relu_clamp", vec![rand_t(&[8], 12)], |g, x| {
            probe(g, &x[0].relu().add(&x[0].clamp(-0.5, 0.5))?, 8)
        }),
        case("scalar_ops", vec![rand_t(&[4], 13)], |g, x| {
            probe(
                g,
                &x[0].scale(3.0).add_scalar(1.0).rsub_scalar(2.0).neg(),
                9,
            )
        }),
        case("sum_mean", vec![rand_t(&[3, 3], 14)], |_, x| {
            Ok(x[0].sum().mul(&x[0].mean())?)
        }),
        case("sum_axis", vec![rand_t(&[2, 3, 4], 15)], |g, x| {
            probe(g, &x[0].sum_axis(1)?, 10)
        }),
        case("reshape_permute_t", vec![rand_t(&[2, 3, 4], 16)], |g, x| {
            let y = x[0].permute(&[2, 0, 1])?.reshape([4, 6])?.t()?;
            probe(g, &y, 11)
        }),
        case(
            "matmul",
            vec![rand_t(&[3, 4], 17), rand_t(&[4, 2], 18)],
            |g, x| probe(g, &x[0].matmul(&x[1])?, 12),
        ),
        case(
            "narrow_concat",
            vec![rand_t(&[4, 3], 19), rand_t(&[2, 3], 20)],
            |g, x| {
                let y = concat(
                    &[x[0].narrow(0, 1, 2)?, x[1].clone(), x[0].narrow(0, 0, 1)?],
                    0,
                )?;
                probe(g, &y, 13)
            },
        ),
        case("softmax", vec![rand_t(&[3, 5], 21)], |g, x| {
            probe(g, &x[0].softmax(1)?.add(&x[0].softmax(0)?)?, 14)
        }),
        case("layer_norm", vec![rand_t(&[3, 6], 22)], |g, x| {
            probe(g, &x[0].layer_norm(1e-5)?, 15)
        }),
        case(
            "depthwise_conv2d",
            vec![rand_t(&[2, 5, 5], 23), rand_t(&[2, 3, 3], 24)],
            |g, x| probe(g, &x[0].depthwise_conv2d(&x[1])?, 16),
        ),
        case(
            "conv2d",
            vec![rand_t(&[2, 4, 4], 25), rand_t(&[3, 2, 3, 3], 26)],
            |g, x| probe(g, &x[0].conv2d(&x[1])?, 17),
        ),
        case(
            "conv_transpose2d",
            vec![rand_t(&[3, 2, 2], 27), rand_t(&[3, 2, 2, 2], 28)],
            |g, x| probe(g, &x[0].conv_transpose2d(&x[1])?, 18),
        ),
        case("avg_pool2d", vec![rand_t(&[4, 6], 29)], |g, x| {
            probe(g, &x[0].avg_pool2d(2)?, 19)
        }),
        case("upsample_bilinear", vec![rand_t(&[2, 3, 2], 30)], |g, x| {
            probe(g, &x[0].upsample_bilinear(2)?, 20)
        }),
        case(
            "attention",
            vec![
                rand_t(&[2, 4], 31),
                rand_t(&[3, 4], 32),
                rand_t(&[3, 4], 33),
            ],
            |g, x| probe(g, &attention(&x[0], &x[1], &x[2])?, 21),
        ),
        case(
            "cosine",
            vec![rand_t(&[5], 34), rand_t(&[5], 35)],
            |_, x| Ok(cosine(&x[0], &x[1])?),
        ),
        case(
            "linear",
            vec![rand_t(&[3, 4], 36), rand_t(&[4, 2], 37), rand_t(&[2], 38)],
            |g, x| probe(g, &linear(&x[0], &x[1], &x[2])?, 22),
        ),
    ]
}

fn block_cases() -> Vec<GradCase> {
    let cfg = Config::tiny();
    let c = cfg.channels;
    let store = std::rc::Rc::new(tiny_params(&cfg));
    let cfg = std::rc::Rc::new(cfg);
    let mut cases = Vec::new();
    {
        let s = store.clone();
        cases.push(case(
            "attend",
            vec![rand_t(&[3, c], 40), rand_t(&[2, c], 41)],
            move |g, x| {
                let b = s.bind(g, false);
                probe(g, &attend(&b, "assoc.cross", &x[0], &x[1], &x[1])?, 30)
            },
        ));
    }
    {
        let s = store.clone();
        cases.push(case("mlp", vec![rand_t(&[3, c], 42)], move |g, x| {
            probe(g, &mlp(&s.bind(g, false), "assoc.mlp", &x[0])?, 31)
        }));
    }
    {
        let s = store.clone();
        cases.push(case(
            "temporal_associate",
            vec![rand_t(&[c, 2, 2], 43), rand_t(&[3, c], 44)],
            move |g, x| {
                probe(
                    g,
                    &associator::temporal_associate(&s.bind(g, false), &x[0], &x[1])?,
                    32,
                )
            },
        ));
    }
    cases.push(case(
        "edge_modulate",
        vec![rand_t(&[c, 2, 3], 45), rand_t(&[1, 2, 3], 46)],
        |g, x| probe(g, &associator::edge_modulate(&x[0], &x[1])?, 33),
    ));
    {
        let s = store.clone();
        cases.push(case(
            "multiscale",
            vec![rand_t(&[c, 3, 3], 47), rand_t(&[c, 5, 5], 48)],
            move |g, x| {
                let b = s.bind(g, false);
                let p = Overlay::new(&b).with("assoc.ms.k5", x[1].clone());
                probe(g, &associator::multiscale(&p, &x[0])?, 34)
            },
        ));
    }
    {
        let s = store.clone();
        cases.push(case(
            "structure_map",
            vec![rand_t(&[c, 2, 2], 49), rand_t(&[3, c], 50)],
            move |g, x| {
                probe(
                    g,
                    &associator::structure_map(&s.bind(g, false), &x[0], &x[1])?,
                    35,
                )
            },
        ));
    }
    cases.push(case(
        "structure_modulate",
        vec![
            rand_t(&[c, 2, 2], 51),
            rand_t(&[1, 2, 2], 52),
            rand_t(&[1, 1, 1], 53),
        ],
        |g, x| probe(g, &associator::structure_modulate(&x[0], &x[1], &x[2])?, 36),
    ));
    {
        let s = store.clone();
        let edges = binary_t(&[1, 2, 2], 54);
        cases.push(case(
            "associate_full",
            vec![
                rand_t(&[c, 2, 2], 55),
                rand_t(&[3, c], 56),
                rand_t(&[1, 1, 1], 57),
            ],
            move |g, x| {
                let b = s.bind(g, false);
                let p = Overlay::new(&b).with("assoc.alpha", x[2].clone());
                let a = associator::associate_with(&p, &x[0], &g.constant(edges.clone()), &x[1])?;
                probe(g, &a.features, 37)
            },
        ));
    }
    {
        let s = store.clone();
        let cfg = cfg.clone();
        let fine = rand_t(&[cfg.mask_channels, 8, 8], 58);
        cases.push(case(
            "decode_masks",
            vec![rand_t(&[c, 2, 2], 59), rand_t(&[2, c], 60)],
            move |g, x| {
                let out = decode_masks(
                    &s.bind(g, false),
                    &cfg,
                    &x[0],
                    &g.constant(fine.clone()),
                    &x[1],
                )?;
                Ok(probe(g, &out.masks, 38)?
                    .add(&probe(g, &out.iou, 39)?)?
                    .add(&probe(g, &out.occlusion, 40)?)?)
            },
        ));
    }
    {
        let s = store.clone();
        let sc = cfg.subclusters * c;
        cases.push(case(
            "project_tokens",
            vec![rand_t(&[2, 2, sc], 61)],
            move |g, x| probe(g, &project_tokens(&s.bind(g, false), &x[0])?, 41),
        ));
    }
    cases.push(case(
        "object_embedding",
        vec![rand_t(&[3, 2, 3], 62), positive_t(&[2, 3], 63)],
        |g, x| probe(g, &object_embedding(&x[0], &x[1])?, 42),
    ));
    cases.push(case(
        "downsample_mask_16",
        vec![rand_t(&[32, 16], 64)],
        |g, x| probe(g, &downsample_mask_16(&x[0])?, 43),
    ));
    cases
}

fn loss_cases() -> Vec<GradCase> {
    let cfg = std::rc::Rc::new(Config::tiny());
    let target = binary_t(&[4, 4], 70);
    let mut cases = Vec::new();
    {
        let t = target.clone();
        cases.push(case("bce", vec![rand_t(&[4, 4], 71)], move |_, x| {
            Ok(bce(&x[0].sigmoid(), &t))
        }));
    }
    {
        let t = target.clone();
        cases.push(case("focal", vec![rand_t(&[4, 4], 72)], move |_, x| {
            focal(&x[0].sigmoid(), &t, 2.0, 0.25)
        }));
    }
    {
        let t = target.clone();
        cases.push(case(
            "focal_gamma_1.5",
            vec![rand_t(&[4, 4], 73)],
            move |_, x| focal(&x[0].sigmoid(), &t, 1.5, 0.4),
        ));
    }
    {
        let t = target.clone();
        cases.push(case("dice", vec![rand_t(&[4, 4], 74)], move |_, x| {
            dice(&x[0].sigmoid(), &t)
        }));
    }
    {
        let (t, cfg) = (target.clone(), cfg.clone());
        cases.push(case("mask_loss", vec![rand_t(&[4, 4], 75)], move |_, x| {
            mask_loss(&x[0].sigmoid(), &t, &cfg)
        }));
    }
    {
        let (t, cfg) = (target.clone(), cfg.clone());
        cases.push(case(
            "loss_cycle",
            vec![rand_t(&[4, 4], 76), rand_t(&[4, 4], 77)],
            move |_, x| loss_cycle(&x[0].sigmoid(), &x[1].sigmoid(), &t, &cfg),
        ));
    }
    cases.push(case(
        "loss_semantic",
        vec![
            rand_t(&[3, 2, 2], 78),
            rand_t(&[2, 2], 79),
            rand_t(&[2, 2], 80),
            rand_t(&[2, 2], 81),
        ],
        |_, x| {
            let emb = |m: &Var| object_embedding(&x[0], &m.sigmoid());
            loss_semantic(&[emb(&x[2])?, emb(&x[3])?], &emb(&x[1])?)
        },
    ));
    {
        let q = binary_t(&[3, 3], 82);
        let valid: Vec<bool> = (0..9).map(|i| i % 4 != 1).collect();
        cases.push(case("soft_iou", vec![rand_t(&[3, 3], 83)], move |_, x| {
            soft_iou_loss(&x[0].sigmoid(), &q, &valid)
        }));
    }
    {
        let labels = vec![
            (binary_t(&[2, 1], 84), vec![true, true]),
            (binary_t(&[2, 1], 85), vec![true, false]),
        ];
        cases.push(case(
            "loss_patch",
            vec![rand_t(&[32, 16], 86), rand_t(&[32, 16], 87)],
            move |_, x| {
                let d: Vec<Var> = x
                    .iter()
                    .map(|m| downsample_mask_16(&m.sigmoid()))
                    .collect::<Result<_>>()?;
                loss_patch(&d, &labels)
            },
        ));
    }
    {
        let gt = BinaryMask::from_fn(32, 32, |y, x| (8..24).contains(&y) && (4..20).contains(&x));
        cases.push(case(
            "structure_loss",
            vec![rand_t(&[1, 2, 2], 88)],
            move |_, x| associator::structure_loss(&x[0].sigmoid(), &gt),
        ));
    }
    {
        let (t, cfg) = (target.clone(), cfg.clone());
        let features = rand_t(&[3, 4, 4], 93);
        cases.push(case(
            "loss_total",
            vec![
                rand_t(&[4, 4], 89),
                rand_t(&[4, 4], 90),
                rand_t(&[3], 91),
                rand_t(&[2], 92),
            ],
            move |g, x| {
                let (m0f, m0b) = (x[0].sigmoid(), x[1].sigmoid());
                let feats = g.constant(features.clone());
                let emb = |m: &Var| object_embedding(&feats, m);
                let c = LossComponents {
                    cycle: loss_cycle(&m0f, &m0b, &t, &cfg)?,
                    semantic: loss_semantic(&[emb(&m0b)?], &emb(&m0f)?)?,
                    patch: soft_iou_loss(&m0b, &t, &[true; 16])?,
                    structure: bce(&x[2].sigmoid(), &Tensor::new([3], vec![1.0, 0.0, 1.0])?),
                    occlusion: bce(&x[3].narrow(0, 0, 1)?.sigmoid(), &Tensor::zeros([1])),
                    iou: x[3]
                        .sigmoid()
                        .sub(&g.constant(Tensor::new([2], vec![0.3, 0.8])?))?
                        .square()
                        .mean(),
                };
                loss_total(&c, &cfg)
            },
        ));
    }
    cases
}

/// Every gradient check, in a fixed order.
pub fn gradient_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for c in tensor_cases()
        .into_iter()
        .chain(block_cases())
        .chain(loss_cases())
    {
        let f = |g: &Graph, x: &[Var]| (c.f)(g, x).map_err(into_tensor_error);
        let r = if c.inputs.iter().map(Tensor::len).sum::<usize>() > 600 {
            check_gradients_sampled(&c.inputs, STEP, 200, f)?
        } else {
            check_gradients(&c.inputs, STEP, f)?
        };
        out.push(CheckResult {
            name: c.name.to_string(),
            passed: r.passes(GRAD_TOLERANCE),
            detail: format!("max_rel_err={:.3e} coords={}", r.max_rel_err, r.coords),
        });
    }
    Ok(out)
}

fn into_tensor_error(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Contract {
            op: "selfcheck",
            msg: other.to_string(),
        },
    }
}

fn verdict(name: &str, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail: detail.into(),
    }
}

/// Greedy max–min selection recomputed from scratch at every step.
fn fps_brute(points: &[[f64; 2]], k: usize) -> Vec<usize> {
    let d = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut chosen = vec![0];
    while chosen.len() < k.min(points.len()) {
        let score = |i: usize| {
            chosen
                .iter()
                .map(|&j| d(&points[i], &points[j]))
                .fold(f64::INFINITY, f64::min)
        };
        let best = (0..points.len()).fold(0, |b, i| if score(i) > score(b) { i } else { b });
        chosen.push(best);
    }
    chosen
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    let p = rng.gen_range(0.1..0.9);
    BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(p))
}

fn brute_boundary(m: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = (m.height(), m.width());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if m.get(y, x)
                && (edge
                    || !m.get(y - 1, x)
                    || !m.get(y + 1, x)
                    || !m.get(y, x - 1)
                    || !m.get(y, x + 1))
            {
                out.push((y, x));
            }
        }
    }
    out
}

fn brute_f(pred: &BinaryMask, gt: &BinaryMask, tol: usize) -> f64 {
    let (bp, bg) = (brute_boundary(pred), brute_boundary(gt));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return 100.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let near = |a: &(usize, usize), set: &[(usize, usize)]| {
        set.iter().any(|b| {
            let (dy, dx) = (a.0 as f64 - b.0 as f64, a.1 as f64 - b.1 as f64);
            (dy * dy + dx * dx).sqrt() <= tol as f64
        })
    };
    let p = bp.iter().filter(|a| near(a, &bg)).count() as f64 / bp.len() as f64;
    let r = bg.iter().filter(|a| near(a, &bp)).count() as f64 / bg.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        200.0 * p * r / (p + r)
    }
}

/// Brute-force oracles for the discrete algorithms and fixed points.
pub fn oracle_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let mut fps_ok = true;
    for _ in 0..50 {
        let n = rng.gen_range(1..=48);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let k = rng.gen_range(1..=8);
        fps_ok &= fps(&pts, k)?.indices == fps_brute(&pts, k);
    }
    out.push(verdict(
        "fps_vs_brute_force",
        fps_ok,
        "50 random point sets",
    ));

    let mut mono = true;
    for _ in 0..50 {
        let n = rng.gen_range(2..=40);
        let k = rng.gen_range(1..=n.min(5));
        let feats = Tensor::uniform([n, 3], -1.0, 1.0, &mut rng);
        let init = Tensor::new([k, 3], feats.data()[..k * 3].to_vec())?;
        let r = kmeans(&feats, &init, 20)?;
        mono &= r.history.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    }
    out.push(verdict("kmeans_inertia_monotone", mono, "50 random runs"));

    let mut dt_ok = true;
    for _ in 0..30 {
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let m = random_mask(&mut rng, h, w);
        let d = distance_transform(&m);
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::INFINITY;
                // Outside the image counts as background.
                for yy in -1..=h as isize {
                    for xx in -1..=w as isize {
                        let inside = yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize;
                        if !inside || !m.get(yy as usize, xx as usize) {
                            let dd = ((yy - y as isize).pow(2) + (xx - x as isize).pow(2)) as f64;
                            best = best.min(dd.sqrt());
                        }
                    }
                }
                let expect = if m.get(y, x) { best } else { 0.0 };
                dt_ok &= (d.get(y, x) - expect).abs() < 1e-9;
            }
        }
    }
    out.push(verdict(
        "distance_transform_vs_brute_force",
        dt_ok,
        "30 random masks",
    ));

    let (mut j_ok, mut f_ok) = (true, true);
    for _ in 0..60 {
        let (h, w) = (rng.gen_range(1..=20), rng.gen_range(1..=20));
        let (a, b) = (random_mask(&mut rng, h, w), random_mask(&mut rng, h, w));
        let inter = a
            .data()
            .iter()
            .zip(b.data())
            .filter(|(x, y)| **x && **y)
            .count();
        let union = a
            .data()
            .iter()
            .zip(b.data())
            .filter(|(x, y)| **x || **y)
            .count();
        let j = if union == 0 {
            100.0
        } else {
            100.0 * inter as f64 / union as f64
        };
        j_ok &= jaccard(&a, &b)? == j;
        let tol = rng.gen_range(0..=3);
        f_ok &= (boundary_f(&a, &b, tol)? - brute_f(&a, &b, tol)).abs() <= 1e-9;
    }
    out.push(verdict("jaccard_vs_enumeration", j_ok, "60 random pairs"));
    out.push(verdict(
        "boundary_f_vs_enumeration",
        f_ok,
        "60 random pairs",
    ));

    let cfg = Config::tiny();
    let store = tiny_params(&cfg);
    let g = Graph::new();
    let bound = store.bind(&g, false);
    let f = g.constant(rand_t(&[cfg.channels, 2, 3], 100));
    let memory = g.constant(rand_t(&[4, cfg.channels], 101));
    let edges = g.constant(binary_t(&[1, 2, 3], 102));
    let a = associator::associate_with(&bound, &f, &edges, &memory)?;
    out.push(verdict(
        "alpha_zero_is_identity",
        a.features.value() == a.temporal.value(),
        "structure modulation with alpha = 0",
    ));
    let fe = associator::edge_modulate(&f, &g.constant(Tensor::zeros([1, 2, 3])))?;
    out.push(verdict(
        "zero_edges_is_identity",
        fe.value() == f.value(),
        "edge modulation with E = 0",
    ));

    let mut shapes_ok = true;
    for n in 1..=3 {
        for r in 1..=4 {
            for s in 1..=4 {
                let feats: Vec<Tensor> =
                    (0..n).map(|i| rand_t(&[8, 3, 3], 200 + i as u64)).collect();
                let masks: Vec<BinaryMask> = (0..n)
                    .map(|i| {
                        BinaryMask::from_fn(3, 3, |y, x| {
                            if i == 0 {
                                y == 1 && x == 2
                            } else {
                                (y + x + i) % 2 == 0
                            }
                        })
                    })
                    .collect();
                let t = object_tokens(&feats, &masks, r, s, 10)?;
                shapes_ok &= t.values.shape() == [n, r, s * 8];
            }
        }
    }
    out.push(verdict(
        "object_tokens_shape",
        shapes_ok,
        "N×R×(S·C) over N≤3, R≤4, S≤4",
    ));

    let feat = rand_t(&[8, 4, 4], 300);
    let mask = BinaryMask::from_fn(4, 4, |y, x| (y * 4 + x) % 3 == 0);
    let tok = object_tokens(
        std::slice::from_ref(&feat),
        std::slice::from_ref(&mask),
        1,
        1,
        10,
    )?;
    let mut err: f64 = 0.0;
    for ch in 0..8 {
        let (mut sum, mut cnt) = (0.0, 0.0);
        for y in 0..4 {
            for x in 0..4 {
                if mask.get(y, x) {
                    sum += feat.at(&[ch, y, x]);
                    cnt += 1.0;
                }
            }
        }
        err = err.max((tok.values.data()[ch] - sum / cnt).abs());
    }
    out.push(verdict(
        "single_token_is_foreground_mean",
        err < 1e-9,
        format!("max_abs_err={err:.3e}"),
    ));

    let frame = Image::from_fn(48, 48, 3, |_, _, _| rng.gen_range(0.0..1.0));
    let g0 = BinaryMask::from_fn(48, 48, |y, x| y < 30 && x > 10);
    let labels = pseudo_labels(
        &PatchStatistics,
        &vec![frame; 3],
        &g0,
        Config::default().tau,
    )?;
    let coarse = downsample_mask_16(&Graph::new().constant(g0.to_tensor()))?
        .value()
        .map(|v| f64::from(v >= 0.5));
    let identity = labels.labels.iter().all(|l| l.data() == coarse.data())
        && labels.valid.iter().flatten().all(|v| *v);
    out.push(verdict(
        "pseudo_labels_on_repeated_frames",
        identity,
        "labels equal the downsampled mask",
    ));

    let g = Graph::new();
    let gt = binary_t(&[4, 4], 400);
    let perfect = g.constant(gt.map(|v| v.clamp(1e-6, 1.0 - 1e-6)));
    let cyc = loss_cycle(&perfect, &perfect, &gt, &Config::default())?.item();
    out.push(verdict(
        "perfect_cycle_loss",
        cyc < 1e-3,
        format!("L_cyc={cyc:.3e}"),
    ));
    let emb = g.constant(Tensor::new([3], vec![0.2, -0.4, 0.9])?);
    let sem = loss_semantic(&[emb.clone(), emb.clone()], &emb)?.item();
    out.push(verdict(
        "equal_embeddings_semantic_loss",
        sem.abs() < 1e-12,
        format!("L_sem={sem:.3e}"),
    ));
    let half = g.constant(Tensor::full([4, 4], 0.5));
    let d = dice(&half, &gt)?.item();
    let sg = gt.sum();
    let expect = 1.0 - (2.0 * 0.5 * sg + 1.0) / (8.0 + sg + 1.0);
    out.push(verdict(
        "uniform_half_dice",
        (d - expect).abs() < 1e-6,
        format!("dice={d:.6}"),
    ));

    out.extend(protocol_oracles()?);
    Ok(out)
}

fn protocol_oracles() -> Result<Vec<CheckResult>> {
    let (h, w) = (32, 32);
    let truth: Vec<BinaryMask> = (0..5)
        .map(|t| {
            BinaryMask::from_fn(h, w, |y, x| {
                (8..20).contains(&y) && (4 + t..16 + t).contains(&x)
            })
        })
        .collect();
    let frames: Vec<FrameData> = (0..5)
        .map(|i| FrameData::new(i, &Image::from_fn(h, w, 3, |_, _, _| 0.5)))
        .collect();
    let gts: Vec<Option<BinaryMask>> = truth.iter().cloned().map(Some).collect();
    let setting = EvalSetting::new(SettingKind::Online, &Config::default());
    let empty = run_setting(&mut scripted::AlwaysEmpty::new(), &frames, &gts, &setting)?;
    let oracle = run_setting(&mut scripted::Oracle::new(truth), &frames, &gts, &setting)?;
    Ok(vec![
        verdict(
            "online_rounds_with_empty_model",
            empty.rounds == setting.oi_max_rounds
                && empty
                    .clicks_per_round
                    .iter()
                    .all(|&c| c <= setting.oi_clicks_per_round),
            format!(
                "rounds={} clicks={:?}",
                empty.rounds, empty.clicks_per_round
            ),
        ),
        verdict(
            "online_rounds_with_oracle",
            oracle.rounds == 0,
            format!("rounds={}", oracle.rounds),
        ),
    ])
}
