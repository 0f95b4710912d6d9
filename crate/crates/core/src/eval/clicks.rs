use crate::error::{contract, Result};
use crate::imaging::{distance_transform, BinaryMask};
use crate::model::Prompt;

/// A simulated click in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Click {
    pub x: usize,
    pub y: usize,
    pub positive: bool,
}

impl From<Click> for Prompt {
    fn from(c: Click) -> Self {
        Prompt::Click {
            x: c.x,
            y: c.y,
            positive: c.positive,
        }
    }
}

/// 4-connected components as lists of row-major pixel indices, in order of
/// their first pixel.
pub fn components(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let i = comp[head];
            head += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask.data()[j] && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        out.push(comp);
    }
    out
}

/// Interior-most pixel of a non-empty mask (distance-transform argmax,
/// lowest row-major index on ties).
fn center(mask: &BinaryMask) -> Option<(usize, usize)> {
    if mask.is_empty() {
        return None;
    }
    distance_transform(mask).argmax()
}

/// Up to `n` clicks on the error regions between `pred` and `gt`.
///
/// Regions are 4-connected components of the symmetric difference, taken
/// largest first (earliest first pixel on ties); each click sits at its
/// region's interior-most pixel and is positive for a missed region.
pub fn corrective_clicks(gt: &BinaryMask, pred: &BinaryMask, n: usize) -> Result<Vec<Click>> {
    if gt.shape() != pred.shape() {
        return Err(crate::error::dims(
            "corrective_clicks",
            &gt.shape(),
            &pred.shape(),
        ));
    }
    let error = BinaryMask::from_fn(gt.height(), gt.width(), |y, x| {
        gt.get(y, x) != pred.get(y, x)
    });
    Ok(clicks_on_regions(gt, &error, None, n))
}

fn clicks_on_regions(
    gt: &BinaryMask,
    error: &BinaryMask,
    skip: Option<usize>,
    n: usize,
) -> Vec<Click> {
    let mut regions = components(error);
    if let Some(pixel) = skip {
        regions.retain(|r| !r.contains(&pixel));
    }
    // Stable sort keeps first-pixel order among equal sizes.
    regions.sort_by_key(|r| std::cmp::Reverse(r.len()));
    let w = gt.width();
    regions
        .into_iter()
        .take(n)
        .filter_map(|r| {
            let mut region = BinaryMask::empty(gt.height(), w);
            for &i in &r {
                region.set(i / w, i % w, true);
            }
            let (y, x) = center(&region)?;
            Some(Click {
                x,
                y,
                positive: gt.get(y, x),
            })
        })
        .collect()
}

/// The initial click at the interior-most ground-truth pixel, followed by up
/// to `n − 1` corrective clicks against `pred`. Without a prediction the
/// remaining ground-truth components (other than the clicked one) are
/// treated as missed.
pub fn simulate_clicks(gt: &BinaryMask, pred: Option<&BinaryMask>, n: usize) -> Result<Vec<Click>> {
    let Some((y, x)) = center(gt) else {
        return Ok(Vec::new());
    };
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut clicks = vec![Click {
        x,
        y,
        positive: true,
    }];
    match pred {
        Some(p) => clicks.extend(corrective_clicks(gt, p, n - 1)?),
        None => clicks.extend(clicks_on_regions(gt, gt, Some(y * gt.width() + x), n - 1)),
    }
    Ok(clicks)
}

/// Tight box `(x0, y0, x1, y1)` around the foreground, inclusive.
pub fn simulate_bbox(gt: &BinaryMask) -> Result<(usize, usize, usize, usize)> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if gt.get(y, x) {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    bounds.ok_or_else(|| contract("simulate_bbox", "the box setting needs a non-empty target"))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn two_blobs() -> BinaryMask {
        BinaryMask::from_fn(20, 20, |y, x| {
            ((2..9).contains(&y) && (2..9).contains(&x))
                || ((14..17).contains(&y) && (14..17).contains(&x))
        })
    }

    #[test]
    fn components_are_four_connected() {
        let mut m = BinaryMask::empty(4, 4);
        m.set(0, 0, true);
        m.set(1, 1, true);
        m.set(1, 2, true);
        let c = components(&m);
        assert_eq!(c, vec![vec![0], vec![5, 6]]);
        assert_eq!(components(&two_blobs()).len(), 2);
    }

    #[test]
    fn first_click_lands_in_the_interior() {
        let clicks = simulate_clicks(&two_blobs(), None, 1).unwrap();
        assert_eq!(
            clicks,
            vec![Click {
                x: 5,
                y: 5,
                positive: true
            }]
        );
        let three = simulate_clicks(&two_blobs(), None, 3).unwrap();
        assert_eq!(three.len(), 2);
        assert_eq!(
            three[1],
            Click {
                x: 15,
                y: 15,
                positive: true
            }
        );
        assert!(simulate_clicks(&BinaryMask::empty(5, 5), None, 3)
            .unwrap()
            .is_empty());
        assert!(simulate_clicks(&two_blobs(), None, 0).unwrap().is_empty());
    }

    #[test]
    fn corrections_target_the_largest_error_first() {
        let gt = two_blobs();
        let mut pred =
            BinaryMask::from_fn(20, 20, |y, x| (2..9).contains(&y) && (2..9).contains(&x));
        // A larger false positive than the missed 3×3 blob.
        for y in 12..17 {
            for x in 2..7 {
                pred.set(y, x, true);
            }
        }
        let c = corrective_clicks(&gt, &pred, 2).unwrap();
        assert_eq!(
            c[0],
            Click {
                x: 4,
                y: 14,
                positive: false
            }
        );
        assert_eq!(
            c[1],
            Click {
                x: 15,
                y: 15,
                positive: true
            }
        );
        assert!(corrective_clicks(&gt, &gt, 3).unwrap().is_empty());
        assert!(corrective_clicks(&gt, &BinaryMask::empty(3, 3), 1).is_err());
    }

    #[test]
    fn box_is_tight_and_inclusive() {
        assert_eq!(simulate_bbox(&two_blobs()).unwrap(), (2, 2, 16, 16));
        assert!(simulate_bbox(&BinaryMask::empty(4, 4)).is_err());
    }

    proptest! {
        #[test]
        fn clicks_sit_on_error_pixels(
            gt in prop::collection::vec(prop::bool::weighted(0.4), 100),
            pred in prop::collection::vec(prop::bool::weighted(0.4), 100),
            n in 1usize..5,
        ) {
            let gt = BinaryMask::new(10, 10, gt).unwrap();
            let pred = BinaryMask::new(10, 10, pred).unwrap();
            let clicks = corrective_clicks(&gt, &pred, n).unwrap();
            prop_assert!(clicks.len() <= n);
            for c in clicks {
                prop_assert!(gt.get(c.y, c.x) != pred.get(c.y, c.x));
                prop_assert_eq!(c.positive, gt.get(c.y, c.x));
            }
        }
    }
}
