use robomask_tensor::{Tensor, Var};

use crate::associator::structure_loss;
use crate::config::Config;
use crate::error::{contract, Result};
use crate::eval::iou;
use crate::imaging::{downsample_mask_16, BinaryMask};
use crate::model::Prompt;
use crate::tracker::{FrameData, Prediction, Tracker};
use crate::training::losses::{
    bce, loss_cycle, loss_patch, loss_semantic, mask_loss, object_embedding, LossComponents,
};
use crate::training::pseudo::PseudoLabels;

/// Predictions of one forward–backward pass.
#[derive(Clone, Debug)]
pub struct CycleTrace {
    /// Frames `0..=t`; frame 0 is predicted without memory.
    pub forward: Vec<Prediction>,
    /// Frames `t−1` down to `0`.
    pub backward: Vec<Prediction>,
    pub t: usize,
}

impl CycleTrace {
    /// Intermediate predictions `M_1^f … M_t^f, M_{t−1}^b … M_1^b` with their
    /// frame indices.
    pub fn intermediate(&self) -> Vec<(usize, &Prediction)> {
        let fwd = (1..=self.t).map(|x| (x, &self.forward[x]));
        let bwd = self.backward[..self.t - 1]
            .iter()
            .enumerate()
            .map(|(i, p)| (self.t - 1 - i, p));
        fwd.chain(bwd).collect()
    }

    pub fn m0_forward(&self) -> &Prediction {
        &self.forward[0]
    }

    pub fn m0_backward(&self) -> &Prediction {
        self.backward.last().expect("t ≥ 1")
    }
}

/// Forward from frame 0 to `t`, then backward to frame 0.
///
/// Frame 0 is first predicted with an empty memory (and `prompts`, if any),
/// then memorized with its ground truth `g0` (padded resolution). The
/// backward leg restarts the memory from the forward prediction at frame `t`.
pub fn run_cycle(
    tracker: &mut dyn Tracker,
    frames: &[FrameData],
    g0: &BinaryMask,
    t: usize,
    prompts: &[Prompt],
) -> Result<CycleTrace> {
    if frames.len() < 2 {
        return Err(contract("run_cycle", "a cycle needs at least two frames"));
    }
    if t == 0 {
        return Err(contract("run_cycle", "cycle length must be at least 1"));
    }
    let t = if t >= frames.len() {
        log::warn!("cycle length {t} shortened to {}", frames.len() - 1);
        frames.len() - 1
    } else {
        t
    };
    let g = tracker.graph().clone();
    tracker.reset_memory();
    let mut forward = vec![tracker.predict(&frames[0], prompts)?];
    tracker.memorize(&frames[0], &g.constant(g0.to_tensor()))?;
    for frame in &frames[1..=t] {
        let p = tracker.predict(frame, &[])?;
        tracker.memorize(frame, &p.prob)?;
        forward.push(p);
    }
    tracker.reset_memory();
    tracker.memorize(&frames[t], &forward[t].prob)?;
    let mut backward = Vec::with_capacity(t);
    for x in (0..t).rev() {
        let p = tracker.predict(&frames[x], &[])?;
        if x > 0 {
            tracker.memorize(&frames[x], &p.prob)?;
        }
        backward.push(p);
    }
    Ok(CycleTrace {
        forward,
        backward,
        t,
    })
}

/// The candidate closest to `target` under the mask loss; ties go to the
/// lowest index.
fn best_candidate(p: &Prediction, target: &Tensor, cfg: &Config) -> Result<Var> {
    let k = p.candidates.shape()[0];
    let (h, w) = (target.shape()[0], target.shape()[1]);
    let mut best: Option<(f64, Var)> = None;
    for i in 0..k {
        let cand = p.candidates.narrow(0, i, 1)?.reshape([h, w])?;
        let loss = mask_loss(&cand, target, cfg)?.item();
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, cand));
        }
    }
    Ok(best.expect("K ≥ 1").1)
}

/// Endpoint terms that compare a prediction with the ground truth: the IoU
/// head regresses each candidate's true IoU and the occlusion head the
/// emptiness of the target.
fn head_losses(p: &Prediction, gt: &BinaryMask) -> Result<(Var, Var)> {
    let g = p.prob.graph();
    let k = p.candidates.shape()[0];
    let [h, w] = gt.shape();
    let mut actual = Vec::with_capacity(k);
    for i in 0..k {
        let cand = p.candidates.value().data()[i * h * w..(i + 1) * h * w].to_vec();
        let mask = BinaryMask::from_tensor(&Tensor::new([h, w], cand)?, 0.5)?;
        actual.push(iou(&mask, gt)?);
    }
    let iou_loss = p
        .iou
        .sigmoid()
        .sub(&g.constant(Tensor::new([k], actual)?))?
        .square()
        .mean();
    let occluded = if gt.is_empty() { 1.0 } else { 0.0 };
    let occ_loss = bce(&p.occlusion.sigmoid(), &Tensor::full([1], occluded));
    Ok((iou_loss, occ_loss))
}

/// All loss components of one cycle.
///
/// Endpoints are scored on their best candidate. `pseudo` holds the patch
/// labels of every frame of the clip.
pub fn cycle_losses(
    trace: &CycleTrace,
    g0: &BinaryMask,
    pseudo: &PseudoLabels,
    cfg: &Config,
) -> Result<LossComponents> {
    let graph = trace.m0_forward().prob.graph().clone();
    let target = g0.to_tensor();
    let m0f = best_candidate(trace.m0_forward(), &target, cfg)?;
    let m0b = best_candidate(trace.m0_backward(), &target, cfg)?;
    let cycle = loss_cycle(&m0f, &m0b, &target, cfg)?;

    let f0 = object_embedding(
        &trace.m0_forward().features,
        &downsample_mask_16(&graph.constant(target.clone()))?,
    )?;
    let mids = trace.intermediate();
    let mut embeddings = Vec::with_capacity(mids.len());
    let mut downsampled = Vec::with_capacity(mids.len());
    let mut labels = Vec::with_capacity(mids.len());
    for (x, p) in &mids {
        let down = downsample_mask_16(&p.prob)?;
        embeddings.push(object_embedding(&p.features, &down)?);
        downsampled.push(down);
        labels.push((pseudo.labels[*x].clone(), pseudo.valid[*x].clone()));
    }
    let semantic = loss_semantic(&embeddings, &f0)?;
    let patch = if downsampled.is_empty() {
        graph.scalar(0.0)
    } else {
        loss_patch(&downsampled, &labels)?
    };
    let structure = match &trace.m0_backward().structure {
        Some(s) => structure_loss(s, g0)?,
        None => graph.scalar(0.0),
    };
    let (iou_f, occ_f) = head_losses(trace.m0_forward(), g0)?;
    let (iou_b, occ_b) = head_losses(trace.m0_backward(), g0)?;
    Ok(LossComponents {
        cycle,
        semantic,
        patch,
        structure,
        occlusion: occ_f.add(&occ_b)?.scale(0.5),
        iou: iou_f.add(&iou_b)?.scale(0.5),
    })
}

#[cfg(test)]
mod tests {
    use robomask_tensor::Graph;

    use super::*;
    use crate::imaging::Image;
    use crate::tracker::scripted::Oracle;
    use crate::training::pseudo::{pseudo_labels, PatchStatistics};

    /// Logs every call and predicts the sum of memorized masks so far.
    struct Recorder {
        graph: Graph,
        log: Vec<String>,
    }

    impl Tracker for Recorder {
        fn graph(&self) -> &Graph {
            &self.graph
        }

        fn reset_memory(&mut self) {
            self.log.push("reset".into());
        }

        fn predict(&mut self, frame: &FrameData, prompts: &[Prompt]) -> Result<Prediction> {
            self.log.push(format!(
                "predict {} ({} prompts)",
                frame.index,
                prompts.len()
            ));
            let mut o = Oracle::new(vec![
                BinaryMask::empty(frame.height, frame.width);
                frame.index + 1
            ]);
            o.predict(frame, &[])
        }

        fn memorize(&mut self, frame: &FrameData, prob: &Var) -> Result<()> {
            self.log.push(format!(
                "memorize {} sum={}",
                frame.index,
                prob.value().sum()
            ));
            Ok(())
        }
    }

    fn frames(n: usize) -> Vec<FrameData> {
        (0..n)
            .map(|i| {
                FrameData::new(
                    i,
                    &Image::from_fn(32, 32, 3, |c, y, x| ((c + y * 2 + x + i) % 9) as f64 / 8.0),
                )
            })
            .collect()
    }

    #[test]
    fn memory_follows_the_cycle_protocol() {
        let fs = frames(4);
        let g0 = BinaryMask::from_fn(32, 32, |y, _| y < 2);
        let mut rec = Recorder {
            graph: Graph::new(),
            log: Vec::new(),
        };
        let click = [Prompt::Click {
            x: 1,
            y: 1,
            positive: true,
        }];
        let trace = run_cycle(&mut rec, &fs, &g0, 2, &click).unwrap();
        let expected = [
            "reset",
            "predict 0 (1 prompts)",
            "memorize 0 sum=64",
            "predict 1 (0 prompts)",
            "memorize 1 sum=0",
            "predict 2 (0 prompts)",
            "memorize 2 sum=0",
            "reset",
            "memorize 2 sum=0",
            "predict 1 (0 prompts)",
            "memorize 1 sum=0",
            "predict 0 (0 prompts)",
        ];
        assert_eq!(rec.log, expected);
        assert_eq!((trace.forward.len(), trace.backward.len()), (3, 2));
        let mids: Vec<usize> = trace.intermediate().iter().map(|(x, _)| *x).collect();
        assert_eq!(mids, vec![1, 2, 1]);
    }

    #[test]
    fn cycle_length_is_clamped_and_validated() {
        let fs = frames(3);
        let g0 = BinaryMask::empty(32, 32);
        let mut o = Oracle::new(vec![g0.clone(); 3]);
        assert_eq!(run_cycle(&mut o, &fs, &g0, 9, &[]).unwrap().t, 2);
        assert!(run_cycle(&mut o, &fs, &g0, 0, &[]).is_err());
        assert!(run_cycle(&mut o, &fs[..1], &g0, 1, &[]).is_err());
    }

    #[test]
    fn perfect_tracking_has_vanishing_consistency_losses() {
        // Patch-aligned blocks keep the ×16 downsampling binary.
        let fs = frames(3);
        let gt = BinaryMask::from_fn(32, 32, |y, x| y < 16 && x >= 16);
        let mut o = Oracle::new(vec![gt.clone(); 3]);
        let trace = run_cycle(&mut o, &fs, &gt, 2, &[]).unwrap();
        let images: Vec<Image> = vec![fs[0].image.clone(); 3];
        let pseudo = pseudo_labels(&PatchStatistics, &images, &gt, 0.7).unwrap();
        let c = cycle_losses(&trace, &gt, &pseudo, &Config::default()).unwrap();
        assert!(c.cycle.item() < 1e-3, "cycle {}", c.cycle.item());
        assert_eq!(c.patch.item(), 0.0);
        assert!(c.semantic.item().abs() < 1e-12);
        assert_eq!(c.structure.item(), 0.0);
    }
}
