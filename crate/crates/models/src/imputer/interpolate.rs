use sparsepose_core::VisibilityMask;

use crate::error::{Error, Result};

/// Per-hand linear interpolation between visible frames, constant beyond the
/// first and last visible frame, zeros for a hand that is never visible.
/// `hands` is `frames × 2 × width`; invisible entries are ignored.
pub fn interpolate_baseline(hands: &[f64], mask: &VisibilityMask, width: usize) -> Result<Vec<f64>> {
    let frames = mask.frames();
    if hands.len() != frames * 2 * width {
        return Err(Error::Shape(format!(
            "{} hand values for {frames} frames of width {width}",
            hands.len()
        )));
    }
    let mut out = vec![0.0; hands.len()];
    let at = |t: usize, s: usize| (t * 2 + s) * width;
    for s in 0..2 {
        let known: Vec<usize> = (0..frames).filter(|&t| mask.visible[t][s]).collect();
        let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
            continue;
        };
        for t in 0..frames {
            let (a, b, u) = if t <= first {
                (first, first, 0.0)
            } else if t >= last {
                (last, last, 0.0)
            } else {
                let i = known.partition_point(|&k| k <= t);
                let (a, b) = (known[i - 1], known[i.min(known.len() - 1)]);
                if a == t {
                    (a, a, 0.0)
                } else {
                    (a, b, (t - a) as f64 / (b - a) as f64)
                }
            };
            for c in 0..width {
                let (va, vb) = (hands[at(a, s) + c], hands[at(b, s) + c]);
                out[at(t, s) + c] = va + (vb - va) * u;
            }
        }
    }
    Ok(out)
}
