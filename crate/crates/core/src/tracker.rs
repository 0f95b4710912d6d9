//! Frame-by-frame inference state shared by training and evaluation.

use std::collections::HashMap;

use robomask_tensor::{concat, Graph, Tensor, Var};

use crate::config::{Config, TargetClass};
use crate::error::{contract, Result};
use crate::imaging::{BinaryMask, Image};
use crate::layers::ParamSource;
use crate::model::{
    decode_masks, embed_prompts, encode_frame, encode_memory, select_mask, FrameFeatures,
    MemoryBank, Prompt, FINE, PATCH,
};
use crate::{associator, autoprompt};

/// A frame ready for the network: padded to multiples of 16.
#[derive(Clone, Debug)]
pub struct FrameData {
    pub index: usize,
    pub image: Image,
    pub height: usize,
    pub width: usize,
}

impl FrameData {
    pub fn new(index: usize, image: &Image) -> Self {
        Self {
            index,
            image: image.pad_to_multiple(PATCH),
            height: image.height(),
            width: image.width(),
        }
    }

    pub fn padded_shape(&self) -> [usize; 2] {
        [self.image.height(), self.image.width()]
    }

    /// Pads a mask at original resolution to this frame's padded size.
    pub fn pad_mask(&self, mask: &BinaryMask) -> Result<BinaryMask> {
        if mask.shape() != [self.height, self.width] {
            return Err(crate::error::dims(
                "pad_mask",
                &[self.height, self.width],
                &mask.shape(),
            ));
        }
        Ok(mask.pad_to_multiple(PATCH))
    }
}

/// One frame's network output.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// Selected mask probabilities at padded resolution, `[H, W]`.
    pub prob: Var,
    /// All candidates' probabilities, `[K, H, W]`.
    pub candidates: Var,
    /// `[K]` predicted IoU logits.
    pub iou: Var,
    /// `[1]` occlusion logit.
    pub occlusion: Var,
    /// Encoder features `[C, h, w]` of the frame.
    pub features: Var,
    /// Structure map `[1, h, w]` when memory was available.
    pub structure: Option<Var>,
    pub selected: usize,
}

impl Prediction {
    /// Hard mask at original resolution; empty when occlusion is predicted.
    pub fn binary(&self, height: usize, width: usize) -> Result<BinaryMask> {
        if self.occlusion.value().data()[0] > 0.0 {
            return Ok(BinaryMask::empty(height, width));
        }
        Ok(BinaryMask::from_tensor(self.prob.value(), 0.5)?.crop(height, width))
    }
}

/// A video segmentation model driven one frame at a time.
pub trait Tracker {
    fn graph(&self) -> &Graph;
    fn reset_memory(&mut self);
    fn predict(&mut self, frame: &FrameData, prompts: &[Prompt]) -> Result<Prediction>;
    /// Stores `prob` (`[H, W]` at padded resolution) as memory of `frame`.
    fn memorize(&mut self, frame: &FrameData, prob: &Var) -> Result<()>;
}

/// The network with its memory bank for one clip.
pub struct Session<'a> {
    graph: Graph,
    params: &'a dyn ParamSource,
    config: &'a Config,
    target: TargetClass,
    bank: MemoryBank,
    cache: HashMap<usize, FrameFeatures>,
}

impl<'a> Session<'a> {
    pub fn new(
        graph: &Graph,
        params: &'a dyn ParamSource,
        config: &'a Config,
        target: TargetClass,
    ) -> Result<Self> {
        Ok(Self {
            graph: graph.clone(),
            params,
            config,
            target,
            bank: MemoryBank::new(config.memory_size)?,
            cache: HashMap::new(),
        })
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    /// Encoder output for a frame, computed once per session.
    pub fn features(&mut self, frame: &FrameData) -> Result<FrameFeatures> {
        if let Some(f) = self.cache.get(&frame.index) {
            return Ok(f.clone());
        }
        let f = encode_frame(
            self.params,
            &self.graph,
            self.config,
            &frame.image,
            frame.index,
        )?;
        self.cache.insert(frame.index, f.clone());
        Ok(f)
    }

    /// Class token, object tokens from memory and embedded user prompts.
    fn prompt_tokens(&self, frame: &FrameData, prompts: &[Prompt]) -> Result<Var> {
        let mut parts = vec![autoprompt::class_tokens(self.params, self.target)?];
        let (feats, masks): (Vec<Tensor>, Vec<BinaryMask>) = self
            .bank
            .entries()
            .filter(|e| !e.mask_grid.is_empty())
            .map(|e| (e.frame_features.clone(), e.mask_grid.clone()))
            .unzip();
        if !feats.is_empty() {
            let tokens = autoprompt::object_tokens(
                &feats,
                &masks,
                self.config.regions,
                self.config.subclusters,
                self.config.kmeans_iters,
            )?;
            parts.push(autoprompt::project_tokens(
                self.params,
                &self.graph.constant(tokens.values),
            )?);
        }
        let [h, w] = frame.padded_shape();
        if let Some(user) = embed_prompts(
            self.params,
            &self.graph,
            prompts,
            h,
            w,
            self.config.channels,
        )? {
            parts.push(user);
        }
        Ok(concat(&parts, 0)?)
    }
}

impl Tracker for Session<'_> {
    fn graph(&self) -> &Graph {
        &self.graph
    }

    fn reset_memory(&mut self) {
        self.bank.clear();
    }

    fn predict(&mut self, frame: &FrameData, prompts: &[Prompt]) -> Result<Prediction> {
        let feat = self.features(frame)?;
        let assoc = associator::associate(self.params, &feat, &self.bank)?;
        let tokens = self.prompt_tokens(frame, prompts)?;
        let out = decode_masks(
            self.params,
            self.config,
            &assoc.features,
            &feat.fine,
            &tokens,
        )?;
        let selected = select_mask(out.iou.value().data());
        let candidates = out.masks.upsample_bilinear(FINE)?.sigmoid();
        let [h, w] = frame.padded_shape();
        let prob = candidates.narrow(0, selected, 1)?.reshape([h, w])?;
        Ok(Prediction {
            prob,
            candidates,
            iou: out.iou,
            occlusion: out.occlusion,
            features: feat.grid,
            structure: assoc.structure,
            selected,
        })
    }

    fn memorize(&mut self, frame: &FrameData, prob: &Var) -> Result<()> {
        let feat = self.features(frame)?;
        let entry = encode_memory(self.params, &feat, prob)?;
        self.bank.push(entry);
        Ok(())
    }
}

/// Scripted trackers for protocol tests and the self-check.
pub mod scripted {
    use super::*;

    fn constant_prediction(
        g: &Graph,
        frame: &FrameData,
        mask: &BinaryMask,
        occluded: bool,
    ) -> Result<Prediction> {
        let [h, w] = frame.padded_shape();
        if mask.shape() != [h, w] {
            return Err(contract("scripted", "mask does not match padded frame"));
        }
        let prob = g.constant(mask.to_tensor());
        Ok(Prediction {
            candidates: prob.reshape([1, h, w])?,
            prob,
            iou: g.constant(Tensor::zeros([1])),
            occlusion: g.constant(Tensor::full([1], if occluded { 1.0 } else { -1.0 })),
            features: g.constant(Tensor::ones([1, h / PATCH, w / PATCH])),
            structure: None,
            selected: 0,
        })
    }

    /// Predicts nothing, ever.
    pub struct AlwaysEmpty {
        graph: Graph,
    }

    impl AlwaysEmpty {
        pub fn new() -> Self {
            Self {
                graph: Graph::new(),
            }
        }
    }

    impl Default for AlwaysEmpty {
        fn default() -> Self {
            Self::new()
        }
    }

    impl Tracker for AlwaysEmpty {
        fn graph(&self) -> &Graph {
            &self.graph
        }

        fn reset_memory(&mut self) {}

        fn predict(&mut self, frame: &FrameData, _: &[Prompt]) -> Result<Prediction> {
            let [h, w] = frame.padded_shape();
            constant_prediction(&self.graph, frame, &BinaryMask::empty(h, w), false)
        }

        fn memorize(&mut self, _: &FrameData, _: &Var) -> Result<()> {
            Ok(())
        }
    }

    /// Returns the ground truth of every frame (original resolution masks,
    /// indexed by frame).
    pub struct Oracle {
        graph: Graph,
        truth: Vec<BinaryMask>,
    }

    impl Oracle {
        pub fn new(truth: Vec<BinaryMask>) -> Self {
            Self {
                graph: Graph::new(),
                truth,
            }
        }
    }

    impl Tracker for Oracle {
        fn graph(&self) -> &Graph {
            &self.graph
        }

        fn reset_memory(&mut self) {}

        fn predict(&mut self, frame: &FrameData, _: &[Prompt]) -> Result<Prediction> {
            let gt = self
                .truth
                .get(frame.index)
                .ok_or_else(|| contract("oracle", format!("no mask for frame {}", frame.index)))?;
            constant_prediction(&self.graph, frame, &frame.pad_mask(gt)?, gt.is_empty())
        }

        fn memorize(&mut self, _: &FrameData, _: &Var) -> Result<()> {
            Ok(())
        }
    }

    /// Repeats the most recently memorized mask; predicts empty before any
    /// memory exists.
    pub struct CopyMemory {
        graph: Graph,
        last: Option<BinaryMask>,
    }

    impl CopyMemory {
        pub fn new() -> Self {
            Self {
                graph: Graph::new(),
                last: None,
            }
        }
    }

    impl Default for CopyMemory {
        fn default() -> Self {
            Self::new()
        }
    }

    impl Tracker for CopyMemory {
        fn graph(&self) -> &Graph {
            &self.graph
        }

        fn reset_memory(&mut self) {
            self.last = None;
        }

        fn predict(&mut self, frame: &FrameData, _: &[Prompt]) -> Result<Prediction> {
            let [h, w] = frame.padded_shape();
            let mask = self.last.clone().unwrap_or_else(|| BinaryMask::empty(h, w));
            constant_prediction(&self.graph, frame, &mask, false)
        }

        fn memorize(&mut self, _: &FrameData, prob: &Var) -> Result<()> {
            self.last = Some(BinaryMask::from_tensor(prob.value(), 0.5)?);
            Ok(())
        }
    }

    /// Paints disks of `radius` around positive clicks, clipped to the
    /// ground truth; negative clicks and memory are ignored.
    pub struct ClickPainter {
        graph: Graph,
        truth: Vec<BinaryMask>,
        radius: usize,
    }

    impl ClickPainter {
        pub fn new(truth: Vec<BinaryMask>, radius: usize) -> Self {
            Self {
                graph: Graph::new(),
                truth,
                radius,
            }
        }
    }

    impl Tracker for ClickPainter {
        fn graph(&self) -> &Graph {
            &self.graph
        }

        fn reset_memory(&mut self) {}

        fn predict(&mut self, frame: &FrameData, prompts: &[Prompt]) -> Result<Prediction> {
            let gt = frame.pad_mask(self.truth.get(frame.index).ok_or_else(|| {
                contract("painter", format!("no mask for frame {}", frame.index))
            })?)?;
            let r2 = (self.radius * self.radius) as isize;
            let clicks: Vec<(isize, isize)> = prompts
                .iter()
                .filter_map(|p| match *p {
                    Prompt::Click {
                        x,
                        y,
                        positive: true,
                    } => Some((x as isize, y as isize)),
                    _ => None,
                })
                .collect();
            let mask = BinaryMask::from_fn(gt.height(), gt.width(), |y, x| {
                gt.get(y, x)
                    && clicks.iter().any(|&(cx, cy)| {
                        let (dx, dy) = (x as isize - cx, y as isize - cy);
                        dx * dx + dy * dy <= r2
                    })
            });
            constant_prediction(&self.graph, frame, &mask, false)
        }

        fn memorize(&mut self, _: &FrameData, _: &Var) -> Result<()> {
            Ok(())
        }
    }
}
