//! Synthetic chain images with exact ground truth.
//!
//! A chain is a vertical stack of bright rounded rectangles on a dark, noisy
//! background. Bodies shrink geometrically going up, follow a sinusoidal
//! centre line and tilt with it, so a ladder walking up the chain sees the
//! same kind of scale and orientation drift as it would on a spine.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, intersection_area, point_in_quad, Frame, Point2, Quad};
use crate::imaging::GrayImage;
use crate::rng::{rng_for, Rng};

/// Parameters of one rendered chain. Sizes are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub count: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Height of the bottom (seed) body.
    pub base_size: f64,
    /// Body width over height.
    pub aspect: f64,
    /// Size ratio between a body and the one below it.
    pub shrink: f64,
    /// Gap between consecutive bodies as a fraction of their mean height.
    pub gap: f64,
    /// Distance from the bottom body's lower edge to the image bottom.
    pub bottom_margin: f64,
    pub curve_amplitude: f64,
    /// Period of the centre-line sinusoid, in instances.
    pub curve_period: f64,
    pub curve_phase: f64,
    /// Uniform per-body rotation jitter, degrees.
    pub rotation_jitter: f64,
    /// Corner rounding as a fraction of the shorter body side.
    pub corner_radius: f64,
    pub intensity_mean: f64,
    pub intensity_std: f64,
    pub background: f64,
    /// Relative amplitude of the low-frequency background ramp.
    pub background_gradient: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("chain spec: {m}")));
        if self.count < 2 {
            return bad("count must be at least 2");
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return bad("shrink must be in (0, 1]");
        }
        if !(self.base_size > 1.0 && self.aspect > 0.0) {
            return bad("body size must be positive");
        }
        let nonneg = [
            self.gap,
            self.curve_amplitude,
            self.rotation_jitter,
            self.corner_radius,
            self.intensity_std,
            self.noise_std,
            self.background_gradient,
            self.bottom_margin,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("gaps, jitters, noise and margins must be finite and >= 0");
        }
        if !(self.curve_period > 0.0) {
            return bad("curve period must be positive");
        }
        if self.corner_radius > 0.5 {
            return bad("corner radius must be at most half the shorter side");
        }
        // darkest body vs brightest background must clear 3 noise sigmas
        let body_min = self.intensity_mean - 2.0 * self.intensity_std;
        let bg_max = self.background * (1.0 + self.background_gradient);
        if body_min - bg_max < 3.0 * self.noise_std {
            return bad("bodies are not separable from the background (need 3 noise sigmas)");
        }
        Ok(())
    }
}

/// Ground truth for one image: quads bottom to top with ordinal labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainAnnotation {
    pub quads: Vec<Quad>,
    pub labels: Vec<String>,
}

impl ChainAnnotation {
    pub fn new(quads: Vec<Quad>, labels: Vec<String>) -> Result<Self> {
        if quads.len() != labels.len() {
            return Err(Error::Data("annotation has mismatched quads and labels".into()));
        }
        if quads.iter().any(|q| q.frame() != Frame::Image) {
            return Err(Error::Data("annotation quads must be in the image frame".into()));
        }
        Ok(Self { quads, labels })
    }

    pub fn len(&self) -> usize {
        self.quads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }

    pub fn to_file(&self, image: &str) -> AnnotationFile {
        AnnotationFile {
            image: image.to_string(),
            quads: self.quads.iter().map(|q| q.to_xy()).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// On-disk annotation: `{image, quads: [[[x, y] x4] ...], labels}` with
/// corners in TL, TR, BR, BL order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub image: String,
    pub quads: Vec<[[f64; 2]; 4]>,
    pub labels: Vec<String>,
}

impl AnnotationFile {
    pub fn annotation(&self) -> Result<ChainAnnotation> {
        let quads = self
            .quads
            .iter()
            .map(|xy| Quad::from_xy(*xy, Frame::Image))
            .collect::<Result<Vec<_>>>()?;
        ChainAnnotation::new(quads, self.labels.clone())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// A rendered image together with its ground truth.
#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub name: String,
    pub image: GrayImage,
    pub annotation: ChainAnnotation,
}

struct Body {
    center: Point2,
    half_w: f64,
    half_h: f64,
    angle: f64,
    intensity: f64,
}

impl Body {
    fn local(&self, p: Point2) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.angle.sin_cos();
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(sx, sy)| {
            let (lx, ly) = (sx * self.half_w, sy * self.half_h);
            Point2::new(self.center.x + c * lx - s * ly, self.center.y + s * lx + c * ly)
        })
    }

    /// Signed distance to the rounded rectangle, negative inside.
    fn sdf(&self, p: Point2, radius: f64) -> f64 {
        let (lx, ly) = self.local(p);
        let qx = lx.abs() - (self.half_w - radius);
        let qy = ly.abs() - (self.half_h - radius);
        let outside = qx.max(0.0).hypot(qy.max(0.0));
        outside + qx.max(qy).min(0.0) - radius
    }
}

fn layout(spec: &ChainSpec, rng: &mut Rng) -> Vec<Body> {
    let mut heights = Vec::with_capacity(spec.count);
    let mut h = spec.base_size;
    for _ in 0..spec.count {
        heights.push(h);
        h *= spec.shrink;
    }
    let cx = spec.image_width as f64 / 2.0;
    let xs: Vec<f64> = (0..=spec.count)
        .map(|k| cx + spec.curve_amplitude * (2.0 * PI * k as f64 / spec.curve_period + spec.curve_phase).sin())
        .collect();
    let mut ys = Vec::with_capacity(spec.count + 1);
    let mut y = spec.image_height as f64 - spec.bottom_margin - heights[0] / 2.0;
    for &hk in &heights[..spec.count] {
        ys.push(y);
        let hn = hk * spec.shrink;
        y -= 0.5 * hk + spec.gap * 0.5 * (hk + hn) + 0.5 * hn;
    }
    ys.push(y);

    let jitter = spec.rotation_jitter.to_radians();
    let intensity = Normal::new(spec.intensity_mean, spec.intensity_std.max(1e-12)).expect("finite");
    (0..spec.count)
        .map(|k| {
            // tilt follows the local direction of the chain
            let (dx, dy) = if k + 1 < spec.count {
                (xs[k + 1] - xs[k], ys[k + 1] - ys[k])
            } else {
                (xs[k] - xs[k - 1], ys[k] - ys[k - 1])
            };
            let j = if jitter > 0.0 {
                rng.random_range(-jitter..=jitter)
            } else {
                0.0
            };
            let lo = spec.intensity_mean - 2.0 * spec.intensity_std;
            let hi = spec.intensity_mean + 2.0 * spec.intensity_std;
            Body {
                center: Point2::new(xs[k], ys[k]),
                half_h: heights[k] / 2.0,
                half_w: heights[k] * spec.aspect / 2.0,
                angle: dx.atan2(-dy) + j,
                intensity: intensity.sample(rng).clamp(lo, hi),
            }
        })
        .collect()
}

/// Renders a chain and returns the image with exact corner annotations.
/// Pure function of `spec`.
pub fn generate_chain(spec: &ChainSpec) -> Result<(GrayImage, ChainAnnotation)> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, &[0x5e7]);
    let bodies = layout(spec, &mut rng);
    let (w, h) = (spec.image_width as f64, spec.image_height as f64);

    let mut quads = Vec::with_capacity(bodies.len());
    for b in &bodies {
        let corners = b.corners();
        if corners.iter().any(|p| p.x < 0.0 || p.y < 0.0 || p.x > w || p.y > h) {
            return Err(Error::Config(format!(
                "chain of {} bodies does not fit in a {}x{} image",
                spec.count, spec.image_width, spec.image_height
            )));
        }
        quads.push(Quad::new(corners, Frame::Image)?);
    }
    for pair in quads.windows(2) {
        if intersection_area(&pair[0], &pair[1]) > 0.0 {
            return Err(Error::Config("chain bodies overlap; increase the gap".into()));
        }
    }

    let mut img = GrayImage::new(spec.image_width, spec.image_height);
    for y in 0..spec.image_height {
        for x in 0..spec.image_width {
            let (u, v) = ((x as f64 + 0.5) / w - 0.5, (y as f64 + 0.5) / h - 0.5);
            let bg = spec.background * (1.0 + spec.background_gradient * (u + v));
            img.set(x, y, bg as f32);
        }
    }
    for b in &bodies {
        let radius = spec.corner_radius * 2.0 * b.half_w.min(b.half_h);
        let reach = b.half_w.hypot(b.half_h) + 1.0;
        let x0 = (b.center.x - reach).floor().max(0.0) as usize;
        let x1 = ((b.center.x + reach).ceil() as usize).min(spec.image_width);
        let y0 = (b.center.y - reach).floor().max(0.0) as usize;
        let y1 = ((b.center.y + reach).ceil() as usize).min(spec.image_height);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = b.sdf(Point2::new(x as f64 + 0.5, y as f64 + 0.5), radius);
                let cover = (0.5 - d).clamp(0.0, 1.0);
                if cover > 0.0 {
                    let bg = img.get(x, y) as f64;
                    img.set(x, y, (bg + cover * (b.intensity - bg)) as f32);
                }
            }
        }
    }
    if spec.noise_std > 0.0 {
        let noise = Normal::new(0.0, spec.noise_std).expect("finite");
        for v in img.data_mut() {
            *v = (*v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }

    let labels = (0..quads.len()).map(|k| format!("V{k}")).collect();
    Ok((img, ChainAnnotation::new(quads, labels)?))
}

/// Closed interval to sample a spec field from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

/// Distribution over chain specs; image size is derived so the chain fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpecRange {
    pub count: usize,
    pub base_size: Range,
    pub aspect: Range,
    pub shrink: Range,
    pub gap: Range,
    /// Margins above and below the chain, in units of the base size.
    pub margin: Range,
    /// Image width in units of the base size.
    pub width_factor: f64,
    /// Centre-line amplitude in units of the base size.
    pub curve_amplitude: Range,
    pub curve_period: Range,
    pub rotation_jitter: f64,
    pub corner_radius: Range,
    pub intensity_mean: Range,
    pub intensity_std: f64,
    pub background: Range,
    pub background_gradient: Range,
    pub noise_std: Range,
}

impl ChainSpecRange {
    /// Seven-instance chains, the short training chains.
    pub fn lumbar_like() -> Self {
        Self {
            count: 7,
            base_size: Range::new(26.0, 34.0),
            aspect: Range::new(1.3, 1.7),
            shrink: Range::new(0.95, 1.0),
            gap: Range::new(0.25, 0.4),
            margin: Range::new(1.0, 2.5),
            width_factor: 7.0,
            curve_amplitude: Range::new(0.0, 0.6),
            curve_period: Range::new(8.0, 20.0),
            rotation_jitter: 4.0,
            corner_radius: Range::new(0.05, 0.25),
            intensity_mean: Range::new(0.55, 0.8),
            intensity_std: 0.04,
            background: Range::new(0.08, 0.2),
            background_gradient: Range::new(0.0, 0.5),
            noise_std: Range::new(0.02, 0.05),
        }
    }

    /// Twenty-three-instance chains with steady shrinkage, for testing
    /// generalization from short chains.
    pub fn wholespine_like() -> Self {
        Self {
            count: 23,
            base_size: Range::new(28.0, 34.0),
            shrink: Range::new(0.965, 0.98),
            curve_amplitude: Range::new(0.0, 0.8),
            curve_period: Range::new(12.0, 30.0),
            margin: Range::new(1.0, 2.0),
            ..Self::lumbar_like()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "lumbar" | "lumbar-like" => Ok(Self::lumbar_like()),
            "wholespine" | "wholespine-like" => Ok(Self::wholespine_like()),
            other => Err(Error::Config(format!(
                "unknown chain preset '{other}' (expected 'lumbar' or 'wholespine')"
            ))),
        }
    }

    pub fn sample(&self, seed: u64) -> ChainSpec {
        let mut rng = rng_for(seed, &[0xc4a1]);
        let r = &mut rng;
        let base = self.base_size.sample(r);
        let shrink = self.shrink.sample(r);
        let gap = self.gap.sample(r);
        let mut length = 0.0;
        let mut h = base;
        for k in 0..self.count {
            length += h;
            if k + 1 < self.count {
                length += gap * 0.5 * (h + h * shrink);
            }
            h *= shrink;
        }
        let bottom = self.margin.sample(r) * base;
        let top = self.margin.sample(r) * base;
        ChainSpec {
            count: self.count,
            image_width: (self.width_factor * base).round() as usize,
            image_height: (bottom + length + top).ceil() as usize,
            base_size: base,
            aspect: self.aspect.sample(r),
            shrink,
            gap,
            bottom_margin: bottom,
            curve_amplitude: self.curve_amplitude.sample(r) * base,
            curve_period: self.curve_period.sample(r),
            curve_phase: r.random_range(0.0..2.0 * PI),
            rotation_jitter: self.rotation_jitter,
            corner_radius: self.corner_radius.sample(r),
            intensity_mean: self.intensity_mean.sample(r),
            intensity_std: self.intensity_std,
            background: self.background.sample(r),
            background_gradient: self.background_gradient.sample(r),
            noise_std: self.noise_std.sample(r),
            seed: r.random(),
        }
    }
}

/// Generates `n` chains; image `i` uses a spec drawn from `(seed, i)`.
pub fn generate_dataset(n: usize, ranges: &ChainSpecRange, seed: u64) -> Result<Vec<AnnotatedImage>> {
    (0..n)
        .map(|i| {
            let spec = ranges.sample(crate::rng::derive_seed(seed, &[i as u64]));
            let (image, annotation) = generate_chain(&spec)?;
            Ok(AnnotatedImage {
                name: format!("chain_{i:04}"),
                image,
                annotation,
            })
        })
        .collect()
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Shuffles `0..n` with `seed` and cuts it into train/val/test index lists.
/// The three lists are disjoint and cover every index.
pub fn split_indices(n: usize, fractions: SplitFractions, seed: u64) -> Result<[Vec<usize>; 3]> {
    let f = [fractions.train, fractions.val, fractions.test];
    let total: f64 = f.iter().sum();
    if f.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be >= 0 and sum to 1, got {f:?}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &[0x5b17]);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = ((f[0] * n as f64).round() as usize).min(n);
    let n_val = ((f[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok([idx, val, test])
}

pub struct DatasetSplit {
    pub train: Vec<AnnotatedImage>,
    pub val: Vec<AnnotatedImage>,
    pub test: Vec<AnnotatedImage>,
}

pub fn split_dataset(
    n_images: usize,
    ranges: &ChainSpecRange,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    let [tr, va, te] = split_indices(n_images, fractions, seed)?;
    let mut all: Vec<Option<AnnotatedImage>> = generate_dataset(n_images, ranges, seed)?
        .into_iter()
        .map(Some)
        .collect();
    let mut take = |ids: Vec<usize>| {
        ids.into_iter()
            .map(|i| all[i].take().expect("disjoint split"))
            .collect()
    };
    Ok(DatasetSplit {
        train: take(tr),
        val: take(va),
        test: take(te),
    })
}

/// True when every centroid lies inside its own quad and outside all others.
pub fn centroids_are_separated(ann: &ChainAnnotation) -> bool {
    ann.quads.iter().enumerate().all(|(i, q)| {
        let c = centroid(q);
        ann.quads
            .iter()
            .enumerate()
            .all(|(j, other)| point_in_quad(c, other) == (i == j))
    })
}
