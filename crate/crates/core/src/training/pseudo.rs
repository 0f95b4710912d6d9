use std::io::Read;
use std::path::Path;

use robomask_tensor::Tensor;

use crate::error::{contract, io_err, Error, Result};
use crate::imaging::{sobel, BinaryMask, Image};
use crate::model::PATCH;

/// Per-patch descriptors for a frame, `[h, w, D]`.
pub trait PatchFeatureProvider {
    fn features(&self, frame_index: usize, frame: &Image) -> Result<Tensor>;
}

/// Color and texture statistics of each 16×16 patch: mean RGB, RGB standard
/// deviation and mean Sobel magnitude of the luma, L2-normalized.
#[derive(Clone, Copy, Debug, Default)]
pub struct PatchStatistics;

pub const STATISTICS_DIM: usize = 7;

impl PatchFeatureProvider for PatchStatistics {
    fn features(&self, _: usize, frame: &Image) -> Result<Tensor> {
        let (h, w) = (frame.height(), frame.width());
        if frame.channels() != 3 || h % PATCH != 0 || w % PATCH != 0 {
            return Err(contract(
                "patch_features",
                format!("expected padded RGB, got {}x{}x{}", frame.channels(), h, w),
            ));
        }
        let (gy, gx) = sobel(&frame.luma(), h, w);
        let (ph, pw) = (h / PATCH, w / PATCH);
        let n = (PATCH * PATCH) as f64;
        let mut out = Vec::with_capacity(ph * pw * STATISTICS_DIM);
        for py in 0..ph {
            for px in 0..pw {
                let mut d = [0.0; STATISTICS_DIM];
                for c in 0..3 {
                    let mut sum = 0.0;
                    let mut sq = 0.0;
                    for y in py * PATCH..(py + 1) * PATCH {
                        for x in px * PATCH..(px + 1) * PATCH {
                            let v = frame.get(c, y, x);
                            sum += v;
                            sq += v * v;
                        }
                    }
                    let mean = sum / n;
                    d[c] = mean;
                    d[3 + c] = (sq / n - mean * mean).max(0.0).sqrt();
                }
                let mut mag = 0.0;
                for y in py * PATCH..(py + 1) * PATCH {
                    for x in px * PATCH..(px + 1) * PATCH {
                        mag += gx[y * w + x].hypot(gy[y * w + x]);
                    }
                }
                d[6] = mag / n;
                let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    d.iter_mut().for_each(|v| *v /= norm);
                }
                out.extend(d);
            }
        }
        Ok(Tensor::new([ph, pw, STATISTICS_DIM], out)?)
    }
}

const RSPF_MAGIC: &[u8; 4] = b"RSPF";

/// Precomputed descriptors read from a file, indexed by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputedFeatures {
    pub frames: Vec<Tensor>,
}

impl PrecomputedFeatures {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = RSPF_MAGIC.to_vec();
        out.extend((self.frames.len() as u32).to_le_bytes());
        for f in &self.frames {
            for d in f.shape() {
                out.extend((*d as u32).to_le_bytes());
            }
            for v in f.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(path))?;
        Self::decode(&bytes).map_err(|msg| Error::Image {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or("truncated patch-feature file")?;
            pos += n;
            Ok(s)
        };
        if take(4)? != RSPF_MAGIC {
            return Err("not a patch-feature file (bad magic)".into());
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
        let count = u32_at(take(4)?);
        let mut frames = Vec::with_capacity(count);
        for _ in 0..count {
            let (h, w, d) = (u32_at(take(4)?), u32_at(take(4)?), u32_at(take(4)?));
            let n = h * w * d;
            let raw = take(n.checked_mul(8).ok_or("size overflow")?)?;
            let data = raw
                .chunks(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            frames.push(Tensor::new([h, w, d], data).map_err(|e| e.to_string())?);
        }
        Ok(Self { frames })
    }
}

impl PatchFeatureProvider for PrecomputedFeatures {
    fn features(&self, frame_index: usize, _: &Image) -> Result<Tensor> {
        self.frames.get(frame_index).cloned().ok_or_else(|| {
            contract(
                "patch_features",
                format!("no precomputed features for frame {frame_index}"),
            )
        })
    }
}

/// Patch labels propagated from frame 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    /// Per frame `[h, w]` labels in `{0, 1}`.
    pub labels: Vec<Tensor>,
    /// Per frame, row-major validity of each patch.
    pub valid: Vec<Vec<bool>>,
}

fn unit_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let d = t.shape()[2];
    t.data()
        .chunks(d)
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-12 {
                vec![0.0; d]
            } else {
                r.iter().map(|v| v / n).collect()
            }
        })
        .collect()
}

/// Transfers the ×16-downsampled, 0.5-binarized first-frame mask to every
/// frame by nearest-neighbor cosine similarity of patch descriptors.
///
/// A patch whose best similarity is below `tau` is marked invalid. Ties go
/// to the lowest frame-0 patch index.
pub fn pseudo_labels(
    provider: &dyn PatchFeatureProvider,
    frames: &[Image],
    g0: &BinaryMask,
    tau: f64,
) -> Result<PseudoLabels> {
    let Some(first) = frames.first() else {
        return Err(contract("pseudo_labels", "no frames"));
    };
    let reference = provider.features(0, first)?;
    let (h, w) = (reference.shape()[0], reference.shape()[1]);
    if g0.shape() != [h * PATCH, w * PATCH] {
        return Err(crate::error::dims(
            "pseudo_labels",
            &[h * PATCH, w * PATCH],
            &g0.shape(),
        ));
    }
    let coarse: Vec<f64> = g0
        .to_tensor()
        .reshape([h, PATCH, w, PATCH])?
        .permute(&[0, 2, 1, 3])?
        .data()
        .chunks(PATCH * PATCH)
        .map(|c| {
            if c.iter().sum::<f64>() / (PATCH * PATCH) as f64 >= 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let ref_rows = unit_rows(&reference);
    let mut labels = Vec::with_capacity(frames.len());
    let mut valid = Vec::with_capacity(frames.len());
    for (x, frame) in frames.iter().enumerate() {
        let feats = if x == 0 {
            reference.clone()
        } else {
            provider.features(x, frame)?
        };
        if feats.shape() != reference.shape() {
            return Err(crate::error::dims(
                "pseudo_labels",
                reference.shape(),
                feats.shape(),
            ));
        }
        let mut lab = Vec::with_capacity(h * w);
        let mut ok = Vec::with_capacity(h * w);
        for row in unit_rows(&feats) {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (j, r) in ref_rows.iter().enumerate() {
                let s: f64 = row.iter().zip(r).map(|(a, b)| a * b).sum();
                if s > best.1 {
                    best = (j, s);
                }
            }
            if best.1 >= tau {
                lab.push(coarse[best.0]);
                ok.push(true);
            } else {
                lab.push(0.0);
                ok.push(false);
            }
        }
        labels.push(Tensor::new([h, w], lab)?);
        valid.push(ok);
    }
    Ok(PseudoLabels { labels, valid })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Noise around a distinct color per patch.
    fn noisy(seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(48, 64, 3, |c, y, x| {
            let patch = (y / PATCH) * 4 + x / PATCH;
            let base = ((patch * (c + 3) * 37) % 97) as f64 / 97.0;
            (base + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0)
        })
    }

    /// Covers half of patch column 0 and all of column 1 in patch row 0.
    fn blob() -> BinaryMask {
        BinaryMask::from_fn(48, 64, |y, x| y < 16 && (8..32).contains(&x))
    }

    #[test]
    fn statistics_are_unit_descriptors() {
        let f = PatchStatistics.features(0, &noisy(1)).unwrap();
        assert_eq!(f.shape(), &[3, 4, STATISTICS_DIM]);
        for row in f.data().chunks(STATISTICS_DIM) {
            let n: f64 = row.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(PatchStatistics
            .features(0, &Image::from_fn(20, 32, 3, |_, _, _| 0.0))
            .is_err());
    }

    #[test]
    fn repeated_frames_copy_the_first_frame_labels() {
        let frames = vec![noisy(2); 3];
        let p = pseudo_labels(&PatchStatistics, &frames, &blob(), 0.7).unwrap();
        let expected: Vec<f64> = (0..12).map(|i| if i < 2 { 1.0 } else { 0.0 }).collect();
        for (l, v) in p.labels.iter().zip(&p.valid) {
            assert_eq!(l.data(), &expected[..]);
            assert!(v.iter().all(|b| *b));
        }
    }

    #[test]
    fn threshold_above_one_invalidates_everything() {
        let frames = vec![noisy(3), noisy(4)];
        let p = pseudo_labels(&PatchStatistics, &frames, &blob(), 1.01).unwrap();
        assert!(p.valid.iter().flatten().all(|b| !b));
        assert!(p.labels.iter().all(|l| l.sum() == 0.0));
    }

    #[test]
    fn labels_follow_translated_content() {
        // One-hot descriptors keyed by content, so the provider ignores position.
        let code = |id: usize| Tensor::from_fn([4], |i| if i == id { 1.0 } else { 0.0 });
        let layout = |ids: [usize; 4]| {
            let data: Vec<f64> = ids.iter().flat_map(|&id| code(id).into_data()).collect();
            Tensor::new([1, 4, 4], data).unwrap()
        };
        let provider = PrecomputedFeatures {
            frames: vec![layout([0, 1, 2, 3]), layout([3, 0, 1, 2])],
        };
        let g0 = BinaryMask::from_fn(16, 64, |_, x| x < 16);
        let frames = vec![Image::from_fn(16, 64, 3, |_, _, _| 0.0); 2];
        let p = pseudo_labels(&provider, &frames, &g0, 0.5).unwrap();
        assert_eq!(p.labels[1].data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn feature_file_roundtrip_and_corruption() {
        let feats = PrecomputedFeatures {
            frames: vec![
                Tensor::from_fn([2, 3, 4], |i| i as f64 * 0.5 - 3.0),
                Tensor::zeros([2, 3, 4]),
            ],
        };
        let bytes = feats.encode();
        assert_eq!(&bytes[..4], b"RSPF");
        assert_eq!(PrecomputedFeatures::decode(&bytes).unwrap(), feats);
        assert!(PrecomputedFeatures::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(PrecomputedFeatures::decode(&bad).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.rspf");
        feats.save(&path).unwrap();
        assert_eq!(PrecomputedFeatures::load(&path).unwrap(), feats);
        assert!(feats.features(2, &noisy(0)).is_err());
    }
}
