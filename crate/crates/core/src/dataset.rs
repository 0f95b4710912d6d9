//! On-disk video datasets.
//!
//! Layout: `<root>/<split>/<category>/<video>/frames/%05d.png` with optional
//! sibling directories `masks_robot/`, `masks_arm/` and `masks_gripper/`
//! holding `%05d.png` masks for some or all frames.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::TargetClass;
use crate::error::{contract, dims, io_err, Error, Result};
use crate::imaging::{load_mask, load_rgb, save_mask, save_rgb, BinaryMask, Image};

/// Directory name holding the masks of `target`.
pub fn mask_dir_name(target: TargetClass) -> String {
    format!("masks_{}", target.name())
}

/// File name of frame `index`.
pub fn frame_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

/// Ordered RGB frames with optional per-frame masks per target class.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub name: String,
    pub category: String,
    pub frames: Vec<Image>,
    /// One slot per frame for every class that has a mask directory.
    pub masks: BTreeMap<TargetClass, Vec<Option<BinaryMask>>>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn mask(&self, target: TargetClass, frame: usize) -> Option<&BinaryMask> {
        self.masks.get(&target)?.get(frame)?.as_ref()
    }

    /// Keeps only the frame-0 masks, as in first-frame-supervised training.
    pub fn first_frame_only(mut self) -> Self {
        for slots in self.masks.values_mut() {
            for m in slots.iter_mut().skip(1) {
                *m = None;
            }
        }
        self
    }

    /// Writes the clip under `dir` (frames plus one directory per class).
    pub fn write(&self, dir: &Path) -> Result<()> {
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
        for (i, frame) in self.frames.iter().enumerate() {
            save_rgb(frame, &frames_dir.join(frame_file_name(i)))?;
        }
        for (target, slots) in &self.masks {
            let mdir = dir.join(mask_dir_name(*target));
            fs::create_dir_all(&mdir).map_err(io_err(&mdir))?;
            for (i, m) in slots.iter().enumerate() {
                if let Some(m) = m {
                    save_mask(m, &mdir.join(frame_file_name(i)))?;
                }
            }
        }
        Ok(())
    }
}

/// One video directory found by [`DatasetIndex::scan`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoEntry {
    pub split: String,
    pub category: String,
    pub name: String,
    pub frames: Vec<PathBuf>,
    /// Mask paths per class, one slot per frame.
    pub masks: BTreeMap<TargetClass, Vec<Option<PathBuf>>>,
}

impl VideoEntry {
    /// Reads a single video directory (`frames/` plus mask directories).
    pub fn from_dir(dir: &Path, split: &str, category: &str) -> Result<Self> {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| {
                Error::Config(format!("`{}` is not a video directory", dir.display()))
            })?;
        let frames_dir = dir.join("frames");
        let frames = numbered_files(&frames_dir)?;
        if frames.is_empty() {
            return Err(Error::Config(format!(
                "`{}` has no frames",
                frames_dir.display()
            )));
        }
        for (i, (idx, _)) in frames.iter().enumerate() {
            if *idx != i {
                return Err(Error::Config(format!(
                    "`{}`: frame indices must be contiguous from 0, found {idx} at position {i}",
                    frames_dir.display()
                )));
            }
        }
        let mut masks = BTreeMap::new();
        for target in TargetClass::ALL {
            let mdir = dir.join(mask_dir_name(target));
            if !mdir.is_dir() {
                continue;
            }
            let mut slots = vec![None; frames.len()];
            for (idx, path) in numbered_files(&mdir)? {
                if idx >= frames.len() {
                    return Err(Error::Config(format!(
                        "`{}` has no matching frame",
                        path.display()
                    )));
                }
                slots[idx] = Some(path);
            }
            masks.insert(target, slots);
        }
        Ok(Self {
            split: split.to_string(),
            category: category.to_string(),
            name,
            frames: frames.into_iter().map(|(_, p)| p).collect(),
            masks,
        })
    }

    pub fn has_mask(&self, target: TargetClass, frame: usize) -> bool {
        self.masks
            .get(&target)
            .and_then(|s| s.get(frame))
            .is_some_and(Option::is_some)
    }

    /// Loads frames and masks, checking that every mask matches its frame.
    pub fn load(&self) -> Result<VideoClip> {
        let frames = self
            .frames
            .iter()
            .map(|p| load_rgb(p))
            .collect::<Result<Vec<_>>>()?;
        let mut masks = BTreeMap::new();
        for (target, slots) in &self.masks {
            let mut loaded = Vec::with_capacity(slots.len());
            for (frame, slot) in frames.iter().zip(slots) {
                let m = slot.as_deref().map(load_mask).transpose()?;
                if let Some(m) = &m {
                    let want = [frame.height(), frame.width()];
                    if m.shape() != want {
                        return Err(dims("load mask", &m.shape(), &want));
                    }
                }
                loaded.push(m);
            }
            masks.insert(*target, loaded);
        }
        Ok(VideoClip {
            name: self.name.clone(),
            category: self.category.clone(),
            frames,
            masks,
        })
    }
}

/// `(index, path)` for every `NNNNN.png`/`.ppm` in `dir`, sorted by index.
fn numbered_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "png" | "ppm") {
            continue;
        }
        let Some(idx) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        out.push((idx, path));
    }
    out.sort();
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Config(format!(
            "duplicate frame index {} in `{}`",
            w[0].0,
            dir.display()
        )));
    }
    Ok(out)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// All videos under a dataset root, in split/category/video order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub videos: Vec<VideoEntry>,
}

impl DatasetIndex {
    pub fn scan(root: &Path) -> Result<Self> {
        let mut videos = Vec::new();
        for split in sorted_subdirs(root)? {
            for category in sorted_subdirs(&split)? {
                for video in sorted_subdirs(&category)? {
                    videos.push(VideoEntry::from_dir(
                        &video,
                        &dir_name(&split),
                        &dir_name(&category),
                    )?);
                }
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            videos,
        })
    }

    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a VideoEntry> + 'a {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.videos.iter().map(|v| v.category.clone()).collect();
        c.dedup();
        c.sort();
        c.dedup();
        c
    }

    /// Checks the annotation contract for `targets`: every `train` video has
    /// a frame-0 mask, every `test` video a mask on every frame.
    pub fn validate(&self, targets: &[TargetClass]) -> Result<()> {
        for v in &self.videos {
            for &t in targets {
                let ok = match v.split.as_str() {
                    "train" => v.has_mask(t, 0),
                    "test" => (0..v.frames.len()).all(|i| v.has_mask(t, i)),
                    _ => true,
                };
                if !ok {
                    return Err(contract(
                        "dataset",
                        format!("{}/{}/{}: missing {t} masks", v.split, v.category, v.name),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Loads every video of `split`.
    pub fn load_split(&self, split: &str) -> Result<Vec<VideoClip>> {
        self.split(split).map(VideoEntry::load).collect()
    }
}
