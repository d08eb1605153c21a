//! Sliding windows over full sequences and stitching of per-window outputs.

use serde::{Deserialize, Serialize};

use sparsepose_core::synth::tracking::head_layout;
use sparsepose_core::TrackingSignal;

use crate::error::{Error, Result};

/// Horizontal head position at `frame`.
pub fn head_origin(signal: &TrackingSignal, frame: usize) -> [f64; 2] {
    let row = signal.head_frame(frame);
    let p = head_layout::POSITION.start;
    [row[p], row[p + 2]]
}

/// Horizontal head positions over `[start, start + len)`.
pub fn head_anchors(signal: &TrackingSignal, start: usize, len: usize) -> Vec<[f64; 2]> {
    (start..start + len).map(|t| head_origin(signal, t)).collect()
}

/// Window start frames covering `0..frames` with the given stride. The last
/// window is pulled back to end exactly at `frames`.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be positive".into()));
    }
    if frames < window {
        return Err(Error::Shape(format!("sequence of {frames} frames is shorter than the {window}-frame window")));
    }
    let last = frames - window;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    Ok(starts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StitchMode {
    /// Per-frame mean over every window covering the frame.
    Average,
    /// Each window owns the frames after the previous window's end; the first owns all of its frames.
    Tile,
}

impl StitchMode {
    pub fn for_stride(stride: usize) -> Self {
        if stride == 1 {
            StitchMode::Average
        } else {
            StitchMode::Tile
        }
    }
}

/// Combines per-window rows (`window × width` values each) into `frames × width`.
pub fn stitch(
    outputs: &[Vec<f64>],
    starts: &[usize],
    frames: usize,
    window: usize,
    width: usize,
    mode: StitchMode,
) -> Result<Vec<f64>> {
    if outputs.len() != starts.len() {
        return Err(Error::Shape(format!("{} outputs for {} windows", outputs.len(), starts.len())));
    }
    if outputs.iter().any(|o| o.len() != window * width) {
        return Err(Error::Shape("window output has the wrong size".into()));
    }
    let mut sum = vec![0.0; frames * width];
    let mut count = vec![0usize; frames];
    let mut covered_to = 0;
    for (out, &s) in outputs.iter().zip(starts) {
        let from = match mode {
            StitchMode::Average => s,
            StitchMode::Tile => covered_to.max(s),
        };
        for f in from..s + window {
            for c in 0..width {
                sum[f * width + c] += out[(f - s) * width + c];
            }
            count[f] += 1;
        }
        covered_to = covered_to.max(s + window);
    }
    if let Some(f) = count.iter().position(|&c| c == 0) {
        return Err(Error::Shape(format!("frame {f} is not covered by any window")));
    }
    for f in 0..frames {
        for c in 0..width {
            sum[f * width + c] /= count[f] as f64;
        }
    }
    Ok(sum)
}
