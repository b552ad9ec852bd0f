//! Single-channel float rasters and the resampling needed to cut network
//! patches out of them.

use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::geometry::{PatchTransform, Rect};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Zero outside the image.
    #[inline]
    fn get_or_zero(&self, x: i64, y: i64) -> f32 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Full-image rectangle in continuous pixel coordinates.
    pub fn bounds(&self) -> Rect {
        Rect {
            x0: 0.0,
            y0: 0.0,
            x1: self.width as f64,
            y1: self.height as f64,
        }
    }

    /// Rescales intensities linearly so the minimum maps to 0 and the
    /// maximum to 1. Constant images become all zero.
    pub fn normalize_min_max(&mut self) {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        for v in &mut self.data {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Cuts `r` out of `img` on the integer pixel grid. The origin and size are
/// rounded to whole pixels; samples outside the image are zero.
pub fn crop_pad(img: &GrayImage, r: &Rect) -> GrayImage {
    let ox = r.x0.round() as i64;
    let oy = r.y0.round() as i64;
    let w = (r.width().round() as usize).max(1);
    let h = (r.height().round() as usize).max(1);
    GrayImage::from_fn(w, h, |x, y| img.get_or_zero(ox + x as i64, oy + y as i64))
}

/// Catmull-Rom kernel (a = -0.5).
#[inline]
pub fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four taps `(first_index, weights)` for sampling at index-space position `s`.
#[inline]
fn cubic_taps(s: f64) -> (i64, [f64; 4]) {
    let base = s.floor();
    let frac = s - base;
    let w = [
        cubic_weight(frac + 1.0),
        cubic_weight(frac),
        cubic_weight(1.0 - frac),
        cubic_weight(2.0 - frac),
    ];
    (base as i64 - 1, w)
}

/// Separable bicubic resampling. `col_pos(u)` and `row_pos(v)` give the
/// source index-space coordinate of output pixel `(u, v)`; `fetch` reads a
/// (possibly out-of-range) source pixel.
fn resample(
    out_w: usize,
    out_h: usize,
    col_pos: impl Fn(usize) -> f64,
    row_pos: impl Fn(usize) -> f64,
    fetch: impl Fn(i64, i64) -> f32,
) -> GrayImage {
    let cols: Vec<(i64, [f64; 4])> = (0..out_w).map(|u| cubic_taps(col_pos(u))).collect();
    let rows: Vec<(i64, [f64; 4])> = (0..out_h).map(|v| cubic_taps(row_pos(v))).collect();
    let Some(row_lo) = rows.iter().map(|r| r.0).min() else {
        return GrayImage::new(out_w, 0);
    };
    let row_hi = rows.iter().map(|r| r.0 + 3).max().unwrap_or(row_lo);

    // horizontal pass over every source row the vertical pass will touch
    let n_rows = (row_hi - row_lo + 1) as usize;
    let mut tmp = vec![0.0f64; n_rows * out_w];
    for (ri, sy) in (row_lo..=row_hi).enumerate() {
        let line = &mut tmp[ri * out_w..(ri + 1) * out_w];
        for (u, (x0, w)) in cols.iter().enumerate() {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                acc += wk * fetch(x0 + k as i64, sy) as f64;
            }
            line[u] = acc;
        }
    }

    let mut out = GrayImage::new(out_w, out_h);
    for (v, (y0, w)) in rows.iter().enumerate() {
        let base = (y0 - row_lo) as usize;
        for u in 0..out_w {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                acc += wk * tmp[(base + k) * out_w + u];
            }
            out.data[v * out_w + u] = acc.clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Catmull-Rom resize with edge-clamped borders; output clamped to `[0, 1]`.
pub fn resize_bicubic(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Config("resize target must be at least 1x1".into()));
    }
    if img.width == 0 || img.height == 0 {
        return Err(Error::Shape("cannot resize an empty image".into()));
    }
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let (w, h) = (img.width as i64, img.height as i64);
    Ok(resample(
        out_w,
        out_h,
        |u| (u as f64 + 0.5) * sx - 0.5,
        |v| (v as f64 + 0.5) * sy - 0.5,
        |x, y| img.data[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize],
    ))
}

/// Samples the `out_size x out_size` patch described by `t` directly from
/// the image with bicubic interpolation and zero padding.
///
/// This is crop + resize fused at sub-pixel precision: patch pixel centre
/// `(u + 0.5, v + 0.5)` reads the image at `t.to_image` of that point, so
/// the raster agrees exactly with the coordinate transform applied to
/// annotations.
pub fn extract_patch(img: &GrayImage, t: &PatchTransform) -> GrayImage {
    let (x0, y0) = (t.crop.x0, t.crop.y0);
    let (sx, sy) = (t.scale_x, t.scale_y);
    resample(
        t.out_size,
        t.out_size,
        |u| x0 + (u as f64 + 0.5) / sx - 0.5,
        |v| y0 + (v as f64 + 0.5) / sy - 0.5,
        |x, y| img.get_or_zero(x, y),
    )
}

fn reflect_index(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Truncated, renormalized Gaussian of standard deviation `sigma`, radius
/// `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with symmetric (edge-repeating) reflection at the
/// borders. `sigma == 0` is the identity.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 || img.data.is_empty() {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width, img.height);

    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * row[reflect_index(x as i64 + j as i64 - r, w as i64)] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * tmp[reflect_index(y as i64 + j as i64 - r, h as i64) * w + x];
            }
            out.data[y * w + x] = acc as f32;
        }
    }
    Ok(out)
}

/// Mirrors columns: pixel `(x, y)` moves to `(width - 1 - x, y)`.
pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let mut out = img.clone();
    for row in out.data.chunks_mut(img.width.max(1)) {
        row.reverse();
    }
    out
}

/// Loads 8/16-bit grayscale PNG or binary PGM and min-max normalizes it.
/// Color images are converted to luma.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let dynimg = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let luma = dynimg.into_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let data = luma
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / u16::MAX as f32)
        .collect();
    let mut img = GrayImage::from_vec(w, h, data)?;
    img.normalize_min_max();
    Ok(img)
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

pub fn save_png16(img: &GrayImage, path: &Path) -> Result<()> {
    let raw: Vec<u16> = img.data.iter().map(|&v| quantize(v, 65535.0) as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::Shape("image buffer size".into()))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_png8(img: &GrayImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v, 255.0) as u8).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::Shape("image buffer size".into()))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
