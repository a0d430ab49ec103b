//! Built-in image context features.
//!
//! [`extract_builtin`] maps any RGB image to an 88-dimensional vector:
//!
//! - 64 values: an 8×8 grayscale thumbnail, each cell the exact area
//!   average of BT.601 luma over its eighth of the canvas, scaled to
//!   [0, 1];
//! - 24 values: three per-channel 8-bin histograms (bin = value / 32),
//!   each normalised to sum to 1.
//!
//! Thumbnail cells are laid out in *eighth-of-a-pixel* units: pixel `x`
//! spans `[8x, 8x + 8)` and cell `i` spans `[i·len, (i+1)·len)`, so a
//! pixel straddling a cell boundary contributes to both cells with exact
//! integer weights. Because the weights are integers and mirror under
//! `x ↦ len − 1 − x`, a horizontally flipped image produces a bitwise
//! mirrored thumbnail at any image size.

use alloc::vec::Vec;

use crate::context::ContextVector;
use crate::relations::{luma_millis, RasterImage};

/// Dimensionality of [`extract_builtin`]'s output.
pub const BUILTIN_DIM: usize = 88;

const CELLS: usize = 8;
const BINS: usize = 8;

/// The thumbnail cells pixel `p` touches on an axis of length `len`,
/// with their overlap weights in eighth-pixel units (summing to 8).
#[inline]
fn axis_cells(p: u32, len: u64) -> impl Iterator<Item = (usize, u64)> {
    let start = 8 * p as u64;
    let end = start + 8;
    let first = (start / len) as usize;
    let last = ((end - 1) / len) as usize;
    (first..=last).map(move |i| {
        let cell_start = i as u64 * len;
        let cell_end = cell_start + len;
        let w = end.min(cell_end) - start.max(cell_start);
        (i, w)
    })
}

/// Extracts the built-in 88-dimensional context for `image`.
pub fn extract_builtin(image: &RasterImage) -> ContextVector {
    let (w, h) = (image.width(), image.height());

    // Integer-weighted 8×8 luma sums; every cell's total weight is
    // exactly (8w/8)·(8h/8)·64 / 64 = w·h in squared eighth-pixels.
    let mut cell_sums = [[0u64; CELLS]; CELLS];
    let mut hist = [[0u64; BINS]; 3];
    for y in 0..h {
        for x in 0..w {
            let rgb = image.get(x, y);
            let luma = luma_millis(rgb) as u64;
            for (cy, wy) in axis_cells(y, h as u64) {
                for (cx, wx) in axis_cells(x, w as u64) {
                    cell_sums[cy][cx] += wx * wy * luma;
                }
            }
            for (c, &v) in rgb.iter().enumerate() {
                hist[c][(v / 32) as usize] += 1;
            }
        }
    }

    let mut values = Vec::with_capacity(BUILTIN_DIM);
    // Each cell covers w·h square eighth-pixels of weight; full luma is
    // 255 000 per unit weight.
    let denom = w as f64 * h as f64 * 255_000.0;
    for row in &cell_sums {
        for &sum in row {
            values.push(sum as f64 / denom);
        }
    }

    let total = (w as u64 * h as u64) as f64;
    for channel in &hist {
        for &count in channel {
            values.push(count as f64 / total);
        }
    }

    ContextVector::new(values).expect("built-in features are finite")
}
