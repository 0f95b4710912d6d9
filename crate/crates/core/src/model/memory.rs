use std::collections::VecDeque;

use robomask_tensor::{concat, linear, Tensor, Var};

use crate::config::Config;
use crate::error::{contract, dims, Result};
use crate::imaging::{downsample_mask_16, BinaryMask};
use crate::layers::{grid_to_tokens, tokens_to_grid, ParamSource, ParamSpec};
use crate::model::encoder::{FrameFeatures, PATCH};

/// Encoded (feature, mask) memory of one past frame.
#[derive(Clone, Debug)]
pub struct MemoryEntry {
    /// `[C, h, w]`.
    pub feature: Var,
    /// Detached encoder features of the source frame, `[C, h, w]`.
    pub frame_features: Tensor,
    /// The memorized mask downsampled to `(h, w)` and binarized at 0.5.
    pub mask_grid: BinaryMask,
    pub source_frame: usize,
}

pub(crate) fn specs(cfg: &Config) -> Vec<ParamSpec> {
    let c = cfg.channels;
    vec![
        ParamSpec::uniform("mem.feat.w", &[c, c], c),
        ParamSpec::uniform("mem.mask.w", &[1, c], 1),
        ParamSpec::zeros("mem.mask.b", &[c]),
        ParamSpec::uniform("mem.conv1.w", &[c, c, 3, 3], 9 * c),
        ParamSpec::zeros("mem.conv1.b", &[c, 1, 1]),
        ParamSpec::uniform("mem.conv2.w", &[c, c, 3, 3], 9 * c),
        ParamSpec::zeros("mem.conv2.b", &[c, 1, 1]),
        ParamSpec::uniform("mem.out.w", &[c, c], c),
        ParamSpec::zeros("mem.out.b", &[c]),
    ]
}

/// Fuses frame features with a full-resolution probability mask.
///
/// The mask is average-pooled ×16 and projected to `C` channels, added to
/// the projected features, passed through two 3×3 convolutions and a final
/// projection.
pub fn encode_memory(p: &dyn ParamSource, feat: &FrameFeatures, mask: &Var) -> Result<MemoryEntry> {
    let (gh, gw) = feat.grid_size();
    if mask.shape() != [gh * PATCH, gw * PATCH] {
        return Err(dims(
            "encode_memory",
            &[gh * PATCH, gw * PATCH],
            mask.shape(),
        ));
    }
    let pooled = downsample_mask_16(mask)?;
    let m_tokens = pooled.reshape([gh * gw, 1])?;
    let f_tokens = grid_to_tokens(&feat.grid)?;
    let x = f_tokens.matmul(&p.param("mem.feat.w")?)?.add(&linear(
        &m_tokens,
        &p.param("mem.mask.w")?,
        &p.param("mem.mask.b")?,
    )?)?;
    let x = tokens_to_grid(&x, gh, gw)?;
    let x = x
        .conv2d(&p.param("mem.conv1.w")?)?
        .add(&p.param("mem.conv1.b")?)?
        .relu();
    let x = x
        .conv2d(&p.param("mem.conv2.w")?)?
        .add(&p.param("mem.conv2.b")?)?;
    let out = linear(
        &grid_to_tokens(&x)?,
        &p.param("mem.out.w")?,
        &p.param("mem.out.b")?,
    )?;
    let mask_grid = BinaryMask::from_tensor(&pooled.value().reshape([gh, gw])?, 0.5)?;
    Ok(MemoryEntry {
        feature: tokens_to_grid(&out, gh, gw)?,
        frame_features: feat.grid.value().clone(),
        mask_grid,
        source_frame: feat.frame_index,
    })
}

/// Bounded memory: the first entry after a reset is pinned, later entries
/// form a FIFO so that at most `capacity` entries are held in total.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    capacity: usize,
    pinned: Option<MemoryEntry>,
    recent: VecDeque<MemoryEntry>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(contract("memory", "capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            pinned: None,
            recent: VecDeque::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        usize::from(self.pinned.is_some()) + self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pinned.is_none()
    }

    pub fn clear(&mut self) {
        self.pinned = None;
        self.recent.clear();
    }

    pub fn push(&mut self, entry: MemoryEntry) {
        if self.pinned.is_none() {
            self.pinned = Some(entry);
            return;
        }
        self.recent.push_back(entry);
        while self.len() > self.capacity {
            self.recent.pop_front();
        }
    }

    /// Entries from oldest to newest, the pinned entry first.
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.pinned.iter().chain(self.recent.iter())
    }

    /// All entries concatenated along the token axis, `[len·h·w, C]`.
    pub fn tokens(&self) -> Result<Var> {
        if self.is_empty() {
            return Err(contract("memory", "bank is empty"));
        }
        let parts = self
            .entries()
            .map(|e| grid_to_tokens(&e.feature))
            .collect::<Result<Vec<_>>>()?;
        Ok(concat(&parts, 0)?)
    }
}
