//! Metamorphic relations on raster images.
//!
//! Seven relations are registered, indexed in a fixed order that the
//! bandit layer relies on: blur, horizontal flip, vertical flip,
//! grayscale, invert, rotation, shear. The last two take an angle
//! parameter drawn from a fixed grid of 5° steps with 0° excluded
//! ([`ROTATION_GRID`], [`SHEAR_GRID`]).
//!
//! Geometry conventions, shared by the pixel and bounding-box paths:
//!
//! - images are RGB8, row-major, origin at the top-left, `y` growing
//!   downward;
//! - rotation by +90° maps `[[A, B], [C, D]]` to `[[C, A], [D, B]]`
//!   (continuous form: a point `(x, y)` goes to `(H − y, x)`);
//! - shear is horizontal: `x' = x + tan(φ)·(y − c_y)` about the image
//!   centre, rows keep their `y`;
//! - rotation and shear keep the canvas size, resample bilinearly at
//!   pixel centres, and fill uncovered pixels with black. Multiples of
//!   90° on square images reduce to exact pixel permutations.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Degrees-to-radians factor.
const DEG: f64 = core::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelationError {
    #[error("image dimensions {width}x{height} need {expected} bytes, got {got}")]
    PixelCount {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("image dimensions must be non-zero")]
    EmptyImage,
    #[error("{mr} takes no parameter")]
    UnexpectedParam { mr: MrKind },
    #[error("{mr} requires a parameter")]
    MissingParam { mr: MrKind },
    #[error("{param} is not on the {mr} grid")]
    OffGrid { mr: MrKind, param: i32 },
    #[error("bounding box ({x_min}, {y_min}, {x_max}, {y_max}) is degenerate or non-finite")]
    BadBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
}

// ───────────────────────── relation registry ─────────────────────────

/// The seven metamorphic relations, in registry order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MrKind {
    Blur,
    FlipLr,
    FlipUd,
    Grayscale,
    Invert,
    Rotation,
    Shear,
}

/// Number of registered relations.
pub const MR_COUNT: usize = 7;

/// All relations in registry order (index ↔ position).
pub const ALL_MRS: [MrKind; MR_COUNT] = [
    MrKind::Blur,
    MrKind::FlipLr,
    MrKind::FlipUd,
    MrKind::Grayscale,
    MrKind::Invert,
    MrKind::Rotation,
    MrKind::Shear,
];

impl MrKind {
    /// Position in the registry order.
    pub fn index(self) -> usize {
        match self {
            MrKind::Blur => 0,
            MrKind::FlipLr => 1,
            MrKind::FlipUd => 2,
            MrKind::Grayscale => 3,
            MrKind::Invert => 4,
            MrKind::Rotation => 5,
            MrKind::Shear => 6,
        }
    }

    pub fn from_index(index: usize) -> Option<MrKind> {
        ALL_MRS.get(index).copied()
    }

    /// Stable lowercase name, matching the serialised form.
    pub fn name(self) -> &'static str {
        match self {
            MrKind::Blur => "blur",
            MrKind::FlipLr => "flip_lr",
            MrKind::FlipUd => "flip_ud",
            MrKind::Grayscale => "grayscale",
            MrKind::Invert => "invert",
            MrKind::Rotation => "rotation",
            MrKind::Shear => "shear",
        }
    }

    /// Whether the relation takes an angle parameter.
    pub fn parameterized(self) -> bool {
        matches!(self, MrKind::Rotation | MrKind::Shear)
    }
}

impl core::fmt::Display for MrKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

const fn degree_grid<const N: usize>(max: i32) -> [i32; N] {
    let mut grid = [0i32; N];
    let mut value = -max;
    let mut i = 0;
    while value <= max {
        if value != 0 {
            grid[i] = value;
            i += 1;
        }
        value += 5;
    }
    grid
}

/// Rotation angles: −90°..90° in 5° steps, 0° excluded (36 values,
/// ascending).
pub const ROTATION_GRID: [i32; 36] = degree_grid::<36>(90);

/// Shear angles: −45°..45° in 5° steps, 0° excluded (18 values,
/// ascending).
pub const SHEAR_GRID: [i32; 18] = degree_grid::<18>(45);

/// The parameter grid of a relation, if it has one.
pub fn param_grid(mr: MrKind) -> Option<&'static [i32]> {
    match mr {
        MrKind::Rotation => Some(&ROTATION_GRID),
        MrKind::Shear => Some(&SHEAR_GRID),
        _ => None,
    }
}

/// Index of `param` on `mr`'s grid, if both exist.
pub fn grid_index(mr: MrKind, param: i32) -> Option<usize> {
    param_grid(mr).and_then(|grid| grid.binary_search(&param).ok())
}

/// Checks that `param` agrees with what `mr` expects: present and on the
/// grid for parameterized relations, absent otherwise.
pub fn validate_param(mr: MrKind, param: Option<i32>) -> Result<(), RelationError> {
    match (mr.parameterized(), param) {
        (false, None) => Ok(()),
        (false, Some(_)) => Err(RelationError::UnexpectedParam { mr }),
        (true, None) => Err(RelationError::MissingParam { mr }),
        (true, Some(p)) => {
            if grid_index(mr, p).is_some() {
                Ok(())
            } else {
                Err(RelationError::OffGrid { mr, param: p })
            }
        }
    }
}

// ───────────────────────── images ─────────────────────────

/// RGB8 raster, row-major from the top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RelationError> {
        if width == 0 || height == 0 {
            return Err(RelationError::EmptyImage);
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(RelationError::PixelCount {
                width,
                height,
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniformly filled image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, RelationError> {
        if width == 0 || height == 0 {
            return Err(RelationError::EmptyImage);
        }
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    /// Pixel at `(x, y)`; callers must stay in bounds.
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

// ───────────────────────── bounding boxes ─────────────────────────

/// Axis-aligned box in pixel coordinates, `(x_min, y_min)` top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, RelationError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite())
            && x_min < x_max
            && y_min < y_max
        {
            Ok(b)
        } else {
            Err(RelationError::BadBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

// ───────────────────────── pixel transforms ─────────────────────────

/// Applies relation `mr` (with `param` degrees where applicable) to
/// `image`, producing a same-sized image.
pub fn apply_mr(
    mr: MrKind,
    param: Option<i32>,
    image: &RasterImage,
) -> Result<RasterImage, RelationError> {
    validate_param(mr, param)?;
    Ok(match mr {
        MrKind::Blur => blur(image),
        MrKind::FlipLr => flip_lr(image),
        MrKind::FlipUd => flip_ud(image),
        MrKind::Grayscale => grayscale(image),
        MrKind::Invert => invert(image),
        MrKind::Rotation => rotate(image, param.expect("validated")),
        MrKind::Shear => shear(image, param.expect("validated")),
    })
}

/// Scaled BT.601 luma: `299·r + 587·g + 114·b`, i.e. luma in units of
/// 1/1000 of a channel value. Integer so that symmetric pixel sets sum
/// identically regardless of traversal order.
#[inline]
pub(crate) fn luma_millis(rgb: [u8; 3]) -> u32 {
    299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32
}

/// 3×3 box mean; pixels at the border average over the neighbours that
/// exist. Integer arithmetic with round-half-up.
fn blur(image: &RasterImage) -> RasterImage {
    let (w, h) = (image.width, image.height);
    let mut out = image.clone();
    for y in 0..h {
        let y0 = y.saturating_sub(1);
        let y1 = (y + 1).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(w - 1);
            let mut sum = [0u32; 3];
            let mut count = 0u32;
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    let p = image.get(nx, ny);
                    sum[0] += p[0] as u32;
                    sum[1] += p[1] as u32;
                    sum[2] += p[2] as u32;
                    count += 1;
                }
            }
            let avg = sum.map(|s| ((2 * s + count) / (2 * count)) as u8);
            out.set(x, y, avg);
        }
    }
    out
}

fn flip_lr(image: &RasterImage) -> RasterImage {
    let (w, h) = (image.width, image.height);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, image.get(w - 1 - x, y));
        }
    }
    out
}

fn flip_ud(image: &RasterImage) -> RasterImage {
    let (w, h) = (image.width, image.height);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, image.get(x, h - 1 - y));
        }
    }
    out
}

fn grayscale(image: &RasterImage) -> RasterImage {
    let mut out = image.clone();
    for chunk in out.pixels.chunks_exact_mut(3) {
        let y = ((luma_millis([chunk[0], chunk[1], chunk[2]]) + 500) / 1000) as u8;
        chunk.copy_from_slice(&[y, y, y]);
    }
    out
}

fn invert(image: &RasterImage) -> RasterImage {
    let mut out = image.clone();
    for v in &mut out.pixels {
        *v = 255 - *v;
    }
    out
}

/// `(sin φ, cos φ)` for a grid angle, exact at multiples of 90° so that
/// quarter turns behave as true permutations in every code path.
fn grid_trig(param: i32) -> (f64, f64) {
    match param.rem_euclid(360) {
        0 => (0.0, 1.0),
        90 => (1.0, 0.0),
        180 => (0.0, -1.0),
        270 => (-1.0, 0.0),
        _ => {
            let rad = param as f64 * DEG;
            (libm::sin(rad), libm::cos(rad))
        }
    }
}

/// Bilinear sample at continuous coordinates (black outside the canvas).
/// `(sx, sy)` are in pixel-centre space: the centre of pixel `(i, j)`
/// sits at `(i + 0.5, j + 0.5)`.
fn sample_bilinear(image: &RasterImage, sx: f64, sy: f64) -> [u8; 3] {
    let fx = sx - 0.5;
    let fy = sy - 0.5;
    let x0 = libm::floor(fx);
    let y0 = libm::floor(fy);
    let tx = fx - x0;
    let ty = fy - y0;
    let (w, h) = (image.width as i64, image.height as i64);
    let mut acc = [0.0f64; 3];
    for (dy, wy) in [(0i64, 1.0 - ty), (1, ty)] {
        for (dx, wx) in [(0i64, 1.0 - tx), (1, tx)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let px = x0 as i64 + dx;
            let py = y0 as i64 + dy;
            if px >= 0 && px < w && py >= 0 && py < h {
                let p = image.get(px as u32, py as u32);
                for c in 0..3 {
                    acc[c] += weight * p[c] as f64;
                }
            }
        }
    }
    acc.map(|v| libm::round(v.clamp(0.0, 255.0)) as u8)
}

/// Rotation about the image centre by `param` degrees, positive angles
/// turning the +90 pinned direction. Same-size canvas, bilinear, black
/// fill; quarter turns on square canvases take an exact permutation
/// path.
fn rotate(image: &RasterImage, param: i32) -> RasterImage {
    let (w, h) = (image.width, image.height);
    if w == h && param.rem_euclid(360) % 90 == 0 {
        return rotate_quarter_square(image, param.rem_euclid(360) / 90);
    }
    let (sin, cos) = grid_trig(param);
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let mut out = image.clone();
    for y in 0..h {
        let dy = (y as f64 + 0.5) - cy;
        for x in 0..w {
            let dx = (x as f64 + 0.5) - cx;
            // Inverse map: rotate the output pixel centre by −φ.
            let sx = cx + dx * cos + dy * sin;
            let sy = cy - dx * sin + dy * cos;
            out.set(x, y, sample_bilinear(image, sx, sy));
        }
    }
    out
}

/// Exact quarter-turn permutation on a square image; `quarters` is the
/// number of +90° turns (0..4).
fn rotate_quarter_square(image: &RasterImage, quarters: i32) -> RasterImage {
    let n = image.width;
    let mut out = image.clone();
    for y in 0..n {
        for x in 0..n {
            let src = match quarters {
                1 => (y, n - 1 - x),
                2 => (n - 1 - x, n - 1 - y),
                3 => (n - 1 - y, x),
                _ => (x, y),
            };
            out.set(x, y, image.get(src.0, src.1));
        }
    }
    out
}

/// Horizontal shear about the image centre: `x' = x + tan(φ)·(y − c_y)`.
fn shear(image: &RasterImage, param: i32) -> RasterImage {
    let rad = param as f64 * DEG;
    let t = libm::tan(rad);
    let (w, h) = (image.width, image.height);
    let cy = h as f64 / 2.0;
    let mut out = image.clone();
    for y in 0..h {
        let shift = t * ((y as f64 + 0.5) - cy);
        for x in 0..w {
            let sx = (x as f64 + 0.5) - shift;
            let sy = y as f64 + 0.5;
            out.set(x, y, sample_bilinear(image, sx, sy));
        }
    }
    out
}

// ───────────────────────── box transport ─────────────────────────

/// Forward map of a single point under a geometric relation.
fn forward_point(mr: MrKind, param: i32, x: f64, y: f64, w: f64, h: f64) -> (f64, f64) {
    match mr {
        MrKind::FlipLr => (w - x, y),
        MrKind::FlipUd => (x, h - y),
        MrKind::Rotation => {
            let (sin, cos) = grid_trig(param);
            let (cx, cy) = (w / 2.0, h / 2.0);
            let (dx, dy) = (x - cx, y - cy);
            (cx + dx * cos - dy * sin, cy + dx * sin + dy * cos)
        }
        MrKind::Shear => {
            let t = libm::tan(param as f64 * DEG);
            let cy = h / 2.0;
            (x + t * (y - cy), y)
        }
        // Pixel-value relations leave geometry alone.
        MrKind::Blur | MrKind::Grayscale | MrKind::Invert => (x, y),
    }
}

/// Transports ground-truth boxes through a relation: maps the four
/// corners forward, takes their axis-aligned hull, clips to the canvas,
/// and drops boxes whose clipped area is zero.
pub fn transform_boxes(
    mr: MrKind,
    param: Option<i32>,
    boxes: &[BoundingBox],
    width: u32,
    height: u32,
) -> Result<Vec<BoundingBox>, RelationError> {
    validate_param(mr, param)?;
    let (w, h) = (width as f64, height as f64);
    let angle = param.unwrap_or(0);
    let mut out = Vec::with_capacity(boxes.len());
    for b in boxes {
        BoundingBox::new(b.x_min, b.y_min, b.x_max, b.y_max)?;
        let corners = [
            forward_point(mr, angle, b.x_min, b.y_min, w, h),
            forward_point(mr, angle, b.x_max, b.y_min, w, h),
            forward_point(mr, angle, b.x_min, b.y_max, w, h),
            forward_point(mr, angle, b.x_max, b.y_max, w, h),
        ];
        let mut x_min = f64::INFINITY;
        let mut y_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for (x, y) in corners {
            x_min = if x < x_min { x } else { x_min };
            y_min = if y < y_min { y } else { y_min };
            x_max = if x > x_max { x } else { x_max };
            y_max = if y > y_max { y } else { y_max };
        }
        // Clip to the canvas and keep only boxes with positive area.
        x_min = x_min.clamp(0.0, w);
        x_max = x_max.clamp(0.0, w);
        y_min = y_min.clamp(0.0, h);
        y_max = y_max.clamp(0.0, h);
        if x_min < x_max && y_min < y_max {
            out.push(BoundingBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
    }
    Ok(out)
}
