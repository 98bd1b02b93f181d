//! Visual attention refinement: turn question→visual attention into a mask
//! and blend it into the input image.
//!
//! Pipeline: per-visual-token salience (max over question rows), min-max
//! normalization, inversion, bilinear upsampling to the image size, separable
//! Gaussian blur, and the blend `out = alpha * pixel + beta * mask`.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::adapter::{AttentionDump, SegmentLengths};
use crate::analytics::{average_heads, AttentionMatrix};
use crate::error::{AnalyticsError, VarError};

pub const DEFAULT_ALPHA: f64 = 0.85;
pub const DEFAULT_BETA: f64 = 0.15;
pub const DEFAULT_KERNEL: usize = 5;
pub const DEFAULT_SIGMA: f64 = 1.0;

/// Per-visual-token salience on the patch grid, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMask {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl HeatMask {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, VarError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(VarError::InvalidParameter(format!(
                "{} values cannot form a {rows}x{cols} grid",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VarError::InvalidParameter(format!(
                "mask value {v} outside [0, 1]"
            )));
        }
        Ok(HeatMask { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Min-max normalization; a constant input maps to all zeros.
fn min_max_normalize(values: &mut [f64]) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range > 0.0 {
        values.iter_mut().for_each(|v| *v = (*v - min) / range);
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Salience of each visual token: the maximum attention any question token
/// pays it, laid out row-major on the patch grid and min-max normalized.
pub fn salience_from_attention(
    a: &AttentionMatrix,
    seg: &SegmentLengths,
) -> Result<HeatMask, AnalyticsError> {
    if a.size() != seg.total() {
        return Err(AnalyticsError::Shape(format!(
            "segments sum to {} tokens but the matrix is {n}x{n}",
            seg.total(),
            n = a.size()
        )));
    }
    let mut data: Vec<f64> = seg
        .visual()
        .map(|col| {
            seg.question()
                .map(|row| a.get(row, col))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    min_max_normalize(&mut data);
    Ok(HeatMask {
        rows: seg.grid_rows as usize,
        cols: seg.grid_cols as usize,
        data,
    })
}

pub fn invert_mask(m: &HeatMask) -> HeatMask {
    HeatMask {
        rows: m.rows,
        cols: m.cols,
        data: m.data.iter().map(|v| 1.0 - v).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Odd kernel width.
    pub kernel: usize,
    pub sigma: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            kernel: DEFAULT_KERNEL,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), VarError> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(VarError::InvalidParameter(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(VarError::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian weights, centre at `kernel / 2`.
    pub fn weights(&self) -> Vec<f64> {
        let r = (self.kernel / 2) as isize;
        let w: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = w.iter().sum();
        w.into_iter().map(|x| x / sum).collect()
    }
}

/// Mask at image resolution, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl FullMask {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }
}

/// Source sample positions along one axis: for each output pixel, the two
/// neighbouring grid cells and the interpolation weight of the second.
fn axis_samples(grid: usize, pixels: u32) -> Vec<(usize, usize, f64)> {
    let scale = grid as f64 / pixels as f64;
    (0..pixels)
        .map(|p| {
            let g = ((p as f64 + 0.5) * scale - 0.5).clamp(0.0, (grid - 1) as f64);
            let i0 = g.floor() as usize;
            let i1 = (i0 + 1).min(grid - 1);
            (i0, i1, g - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling with cell centres aligned to patch centres, then a
/// separable Gaussian blur with edge clamping, then a clamp to `[0, 1]`.
pub fn spatialize_and_filter(
    m: &HeatMask,
    width: u32,
    height: u32,
    filter: &FilterParams,
) -> Result<FullMask, VarError> {
    if width == 0 || height == 0 {
        return Err(VarError::InvalidParameter(format!(
            "image size {width}x{height}"
        )));
    }
    filter.validate()?;
    let (w, h) = (width as usize, height as usize);

    let xs = axis_samples(m.cols, width);
    let ys = axis_samples(m.rows, height);
    let mut up = vec![0.0; w * h];
    for (y, &(r0, r1, ty)) in ys.iter().enumerate() {
        for (x, &(c0, c1, tx)) in xs.iter().enumerate() {
            let top = m.get(r0, c0) * (1.0 - tx) + m.get(r0, c1) * tx;
            let bottom = m.get(r1, c0) * (1.0 - tx) + m.get(r1, c1) * tx;
            up[y * w + x] = top * (1.0 - ty) + bottom * ty;
        }
    }

    let weights = filter.weights();
    let r = (filter.kernel / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0.0; w * h];
    for y in 0..h {
        let row = &up[y * w..(y + 1) * w];
        for x in 0..w {
            horiz[y * w + x] = weights
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * row[clamp(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = weights
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * horiz[clamp(y as isize + k as isize - r, h) * w + x])
                .sum();
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    Ok(FullMask {
        width,
        height,
        data: out,
    })
}

/// Round half away from zero to an 8-bit channel.
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `out = alpha * pixel + beta * mask` per channel in `[0, 1]`, clamped and
/// quantized back to 8 bits.
pub fn blend(
    image: &RgbImage,
    mask: &FullMask,
    alpha: f64,
    beta: f64,
) -> Result<RgbImage, VarError> {
    if image.width() != mask.width || image.height() != mask.height {
        return Err(VarError::DimensionMismatch {
            image_w: image.width(),
            image_h: image.height(),
            mask_w: mask.width,
            mask_h: mask.height,
        });
    }
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(VarError::InvalidParameter(format!(
            "alpha {alpha} and beta {beta} must be non-negative"
        )));
    }
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let m = beta * mask.get(x, y);
        for c in px.0.iter_mut() {
            *c = quantize(alpha * (*c as f64 / 255.0) + m);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarParams {
    pub alpha: f64,
    pub beta: f64,
    pub filter: FilterParams,
    /// Apply `1 - M` before filtering.
    pub invert: bool,
}

impl Default for VarParams {
    fn default() -> Self {
        VarParams {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            filter: FilterParams::default(),
            invert: true,
        }
    }
}

/// Full refinement of one image from one attention dump.
pub fn refine(
    image: &RgbImage,
    dump: &AttentionDump,
    params: &VarParams,
) -> Result<RgbImage, VarError> {
    let averaged = average_heads(dump);
    let salience = salience_from_attention(&averaged, dump.segments())?;
    let mask = if params.invert {
        invert_mask(&salience)
    } else {
        salience
    };
    let full = spatialize_and_filter(&mask, image.width(), image.height(), &params.filter)?;
    blend(image, &full, params.alpha, params.beta)
}

/// Decodes any supported format to 8-bit RGB, dropping alpha.
pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, VarError> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage, VarError> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, VarError> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Refines encoded image bytes and returns PNG bytes.
pub fn refine_encoded(
    image: &[u8],
    dump: &AttentionDump,
    params: &VarParams,
) -> Result<Vec<u8>, VarError> {
    encode_png(&refine(&decode_rgb(image)?, dump, params)?)
}

/// Parameters recorded next to a refined image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSidecar {
    pub input: String,
    pub attention: String,
    pub alpha: f64,
    pub beta: f64,
    pub kernel: usize,
    pub sigma: f64,
    pub invert: bool,
    pub normalization: String,
    pub salience_reduction: String,
    pub width: u32,
    pub height: u32,
}
