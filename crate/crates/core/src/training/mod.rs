//! First-frame-supervised training: forward–backward cycles, consistency
//! losses, pseudo labels and the optimization loop.

mod cycle;
mod losses;
mod optim;
mod pseudo;

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robomask_tensor::{Graph, Tensor};

pub use cycle::{cycle_losses, run_cycle, CycleTrace};
pub use losses::{
    bce, dice, focal, loss_cycle, loss_patch, loss_semantic, loss_total, mask_loss,
    object_embedding, soft_iou_loss, LossComponents,
};
pub use optim::{cosine_lr, Adam};
pub use pseudo::{
    pseudo_labels, PatchFeatureProvider, PatchStatistics, PrecomputedFeatures, PseudoLabels,
    STATISTICS_DIM,
};

use crate::config::TargetClass;
use crate::dataset::VideoClip;
use crate::error::{contract, Error, Result};
use crate::eval::{simulate_bbox, simulate_clicks};
use crate::imaging::BinaryMask;
use crate::model::{Model, Prompt};
use crate::tracker::{FrameData, Session};

/// Training view of one target in one clip.
#[derive(Clone, Debug)]
pub struct ClipTarget {
    pub target: TargetClass,
    /// First-frame ground truth at padded resolution.
    pub g0: BinaryMask,
    pub pseudo: PseudoLabels,
    /// First-frame prompt sets derived from `g0`: none, one click, a box.
    pub prompt_sets: Vec<Vec<Prompt>>,
}

/// A clip with frames padded and pseudo labels computed once.
#[derive(Clone, Debug)]
pub struct PreparedClip {
    pub name: String,
    pub frames: Vec<FrameData>,
    pub targets: Vec<ClipTarget>,
}

impl PreparedClip {
    /// Uses only the first-frame masks of `targets`; targets without one are
    /// skipped.
    pub fn new(
        clip: &VideoClip,
        targets: &[TargetClass],
        provider: &dyn PatchFeatureProvider,
        tau: f64,
    ) -> Result<Self> {
        let frames: Vec<FrameData> = clip
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| FrameData::new(i, f))
            .collect();
        let padded: Vec<_> = frames.iter().map(|f| f.image.clone()).collect();
        let mut prepared = Vec::new();
        for &target in targets {
            let Some(g0) = clip.mask(target, 0) else {
                continue;
            };
            let g0 = frames[0].pad_mask(g0)?;
            let pseudo = pseudo_labels(provider, &padded, &g0, tau)?;
            let mut prompt_sets = vec![Vec::new()];
            if !g0.is_empty() {
                prompt_sets.push(
                    simulate_clicks(&g0, None, 1)?
                        .into_iter()
                        .map(Prompt::from)
                        .collect(),
                );
                let (x0, y0, x1, y1) = simulate_bbox(&g0)?;
                prompt_sets.push(vec![Prompt::Box { x0, y0, x1, y1 }]);
            }
            prepared.push(ClipTarget {
                target,
                g0,
                pseudo,
                prompt_sets,
            });
        }
        if prepared.is_empty() {
            return Err(contract(
                "training",
                format!(
                    "clip `{}` has no first-frame mask for the training targets",
                    clip.name
                ),
            ));
        }
        Ok(Self {
            name: clip.name.clone(),
            frames,
            targets: prepared,
        })
    }
}

/// Scalar values of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub lr: f64,
    pub cycle: f64,
    pub semantic: f64,
    pub patch: f64,
    pub structure: f64,
    pub occlusion: f64,
    pub iou: f64,
    pub total: f64,
}

impl LossReport {
    /// `step, lr, L_cyc, L_sem, L_patch, L_struct, total`, tab-separated.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.step, self.lr, self.cycle, self.semantic, self.patch, self.structure, self.total
        )
    }
}

/// One sampled cycle: clip, target, cycle length and first-frame prompts.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub clip: &'a PreparedClip,
    pub target: usize,
    pub t: usize,
    pub prompts: &'a [Prompt],
}

/// Runs every sample's cycle, averages the total loss over the batch and
/// applies one optimizer update.
pub fn train_step(model: &mut Model, opt: &mut Adam, batch: &[Sample<'_>]) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(contract("train_step", "empty batch"));
    }
    let cfg = &model.config;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut sums = [0.0; 7];
    let scale = 1.0 / batch.len() as f64;
    for sample in batch {
        let target = &sample.clip.targets[sample.target];
        let g = Graph::new();
        let bound = model.params.bind(&g, true);
        let mut session = Session::new(&g, &bound, cfg, target.target)?;
        let trace = run_cycle(
            &mut session,
            &sample.clip.frames,
            &target.g0,
            sample.t,
            sample.prompts,
        )?;
        let c = cycle_losses(&trace, &target.g0, &target.pseudo, cfg)?;
        let total = loss_total(&c, cfg)?;
        let named = [
            ("cycle", &c.cycle),
            ("semantic", &c.semantic),
            ("patch", &c.patch),
            ("structure", &c.structure),
            ("occlusion", &c.occlusion),
            ("iou", &c.iou),
            ("total", &total),
        ];
        for (i, (name, v)) in named.iter().enumerate() {
            if !v.item().is_finite() {
                return Err(Error::NonFinite(name));
            }
            sums[i] += v.item() * scale;
        }
        let step_grads = g.backward(&total.scale(scale))?;
        for (name, grad) in bound.gradients(&step_grads) {
            if !grad.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
            match grads.get_mut(&name) {
                Some(acc) => acc.add_assign(&grad),
                None => {
                    grads.insert(name, grad);
                }
            }
        }
    }
    let lr = opt.current_lr().0;
    let step = opt.steps_taken();
    opt.update(&mut model.params, &grads)?;
    Ok(LossReport {
        step,
        lr,
        cycle: sums[0],
        semantic: sums[1],
        patch: sums[2],
        structure: sums[3],
        occlusion: sums[4],
        iou: sums[5],
        total: sums[6],
    })
}

/// Draws a batch: clip and target uniformly, cycle length uniformly in
/// `[1, min(cycle_max, frames − 1)]`. With probability `prompt_rate` a cycle
/// starts from one of the target's prompt sets instead of no prompts.
pub fn sample_batch<'a>(
    clips: &'a [PreparedClip],
    batch: usize,
    cycle_max: usize,
    prompt_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Sample<'a>> {
    (0..batch)
        .map(|_| {
            let clip = &clips[rng.gen_range(0..clips.len())];
            let target = rng.gen_range(0..clip.targets.len());
            let bound = cycle_max.min(clip.frames.len() - 1).max(1);
            let t = rng.gen_range(1..=bound);
            let sets = &clip.targets[target].prompt_sets;
            let prompts = if prompt_rate > 0.0 && sets.len() > 1 && rng.gen_bool(prompt_rate) {
                &sets[rng.gen_range(1..sets.len())]
            } else {
                &sets[0]
            };
            Sample {
                clip,
                target,
                t,
                prompts,
            }
        })
        .collect()
}

/// Full training run of `model.config.steps` steps; one log line per step is
/// written to `log` when given.
pub fn train(
    model: &mut Model,
    clips: &[PreparedClip],
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<LossReport>> {
    if clips.is_empty() {
        return Err(contract("train", "no training clips"));
    }
    if let Some(c) = clips.iter().find(|c| c.frames.len() < 2) {
        return Err(contract(
            "train",
            format!("clip `{}` has fewer than two frames", c.name),
        ));
    }
    let mut opt = Adam::new(&model.config);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x7261_696e);
    let mut reports = Vec::with_capacity(model.config.steps);
    for _ in 0..model.config.steps {
        let batch = sample_batch(
            clips,
            model.config.batch_size,
            model.config.cycle_max,
            model.config.prompt_rate,
            &mut rng,
        );
        let report = train_step(model, &mut opt, &batch)?;
        log::debug!("{}", report.log_line());
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", report.log_line()).map_err(|source| Error::Io {
                path: "<training log>".into(),
                source,
            })?;
        }
        reports.push(report);
    }
    Ok(reports)
}
