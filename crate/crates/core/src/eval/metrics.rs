use crate::error::{contract, dims, Result};
use crate::imaging::{boundary_map, squared_distance_to, BinaryMask};

fn same_shape(op: &'static str, a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dims(op, &a.shape(), &b.shape()));
    }
    Ok(())
}

fn overlap(op: &'static str, pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize)> {
    same_shape(op, pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        inter += usize::from(*p && *g);
        union += usize::from(*p || *g);
    }
    Ok((inter, union))
}

/// Intersection over union in `[0, 1]`; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, union) = overlap("iou", pred, gt)?;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Region similarity `J = 100·|pred ∩ gt| / |pred ∪ gt|`; two empty masks
/// score 100.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, union) = overlap("jaccard", pred, gt)?;
    Ok(if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    })
}

/// Boundary tolerance in pixels: `ceil(0.008 · diagonal)`.
pub fn boundary_tolerance(height: usize, width: usize) -> usize {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil() as usize
}

/// Fraction of `from` boundary pixels within `tol` of a `to` boundary pixel.
fn matched_fraction(from: &BinaryMask, to: &BinaryMask, tol: usize) -> f64 {
    let d2 = squared_distance_to(to.data(), to.height(), to.width());
    let limit = (tol * tol) as f64;
    let total = from.count();
    let hit = from
        .data()
        .iter()
        .zip(&d2)
        .filter(|(b, d)| **b && **d <= limit)
        .count();
    hit as f64 / total as f64
}

/// Boundary F-measure in `[0, 100]` with pixel tolerance `tol`.
///
/// Two empty boundaries score 100, exactly one empty scores 0.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tol: usize) -> Result<f64> {
    same_shape("boundary_f", pred, gt)?;
    let (bp, bg) = (boundary_map(pred), boundary_map(gt));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return Ok(100.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&bp, &bg, tol);
    let recall = matched_fraction(&bg, &bp, tol);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(200.0 * precision * recall / (precision + recall))
}

/// Per-frame J and F of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoMetrics {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub per_frame: Vec<(f64, f64)>,
}

/// Frame-averaged J and F, and their mean. Tolerance follows the frame size.
pub fn jf_video(preds: &[BinaryMask], gts: &[BinaryMask]) -> Result<VideoMetrics> {
    if preds.len() != gts.len() {
        return Err(contract(
            "jf_video",
            format!(
                "{} predictions for {} ground truths",
                preds.len(),
                gts.len()
            ),
        ));
    }
    if preds.is_empty() {
        return Err(contract("jf_video", "no frames"));
    }
    let mut per_frame = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(gts) {
        let tol = boundary_tolerance(g.height(), g.width());
        per_frame.push((jaccard(p, g)?, boundary_f(p, g, tol)?));
    }
    let n = per_frame.len() as f64;
    let j = per_frame.iter().map(|x| x.0).sum::<f64>() / n;
    let f = per_frame.iter().map(|x| x.1).sum::<f64>() / n;
    Ok(VideoMetrics {
        j,
        f,
        jf: (j + f) / 2.0,
        per_frame,
    })
}
