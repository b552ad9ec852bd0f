//! Patch/target construction, augmentation and the optimization loop.
//!
//! A training example is built around instance `k` of a chain: the tight
//! rectangle of quad `k` is expanded on every side, cut out and resampled to
//! the network input size. The target holds quad `k` and quad `k + 1`
//! mapped into that patch, 16 values in total.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{expand_rect_sides, make_transform, tight_rect, Frame, PatchTransform, Point2, Quad};
use crate::imaging::{extract_patch, flip_horizontal, gaussian_blur, GrayImage};
use crate::neural::layers::l2_loss;
use crate::neural::{adam_step, AdamConfig, Network, Tensor4, OUTPUT_DIM};
use crate::rng::{rng_for, Rng};
use crate::synth::{AnnotatedImage, ChainAnnotation};

/// Expansion applied to every side of the tight rectangle without augmentation.
pub const PATCH_EXPANSION: f64 = 0.75;

/// Reference patch size the blur range is specified for.
pub const BLUR_REFERENCE_SIZE: f64 = 224.0;

/// Corner order within a quad after a left-right mirror: TL<->TR, BR<->BL.
const FLIP_ORDER: [usize; 4] = [1, 0, 3, 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Crop shift bound in image pixels; shifts are integers in `[-t, t]`.
    pub translate_px: i32,
    /// Per-side expansion fraction range.
    pub expand_range: (f64, f64),
    pub flip_prob: f64,
    /// Blur sigma range for a 224-pixel patch; scaled to the actual size.
    pub blur_sigma_range: (f64, f64),
    pub blur_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            translate_px: 10,
            expand_range: (0.60, 0.90),
            flip_prob: 0.5,
            blur_sigma_range: (3.0, 30.0),
            blur_prob: 1.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (e0, e1) = self.expand_range;
        let (b0, b1) = self.blur_sigma_range;
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.translate_px < 0
            || !(0.0 <= e0 && e0 <= e1)
            || !(0.0 <= b0 && b0 <= b1)
            || !prob(self.flip_prob)
            || !prob(self.blur_prob)
        {
            return Err(Error::Config(format!("invalid augmentation settings {self:?}")));
        }
        Ok(())
    }

    /// Draws one concrete augmentation for a patch of side `input_size`.
    pub fn sample(&self, rng: &mut Rng, input_size: usize) -> AugmentDraw {
        let (e0, e1) = self.expand_range;
        let mut expand = [0.0; 4];
        for e in &mut expand {
            *e = if e1 > e0 { rng.random_range(e0..=e1) } else { e0 };
        }
        let t = self.translate_px;
        let shift = (rng.random_range(-t..=t), rng.random_range(-t..=t));
        let flip = rng.random_bool(self.flip_prob);
        let scale = input_size as f64 / BLUR_REFERENCE_SIZE;
        let (b0, b1) = self.blur_sigma_range;
        let sigma = if b1 > b0 { rng.random_range(b0..=b1) } else { b0 };
        let blur_sigma = if rng.random_bool(self.blur_prob) {
            sigma * scale
        } else {
            0.0
        };
        AugmentDraw {
            expand,
            shift,
            flip,
            blur_sigma,
        }
    }
}

/// One realized augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    /// Left, top, right, bottom expansion fractions.
    pub expand: [f64; 4],
    pub shift: (i32, i32),
    pub flip: bool,
    /// In patch pixels.
    pub blur_sigma: f64,
}

impl AugmentDraw {
    pub fn none() -> Self {
        Self {
            expand: [PATCH_EXPANSION; 4],
            shift: (0, 0),
            flip: false,
            blur_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainExample {
    pub patch: GrayImage,
    /// Central quad then upper quad, TL, TR, BR, BL, `x, y` per corner,
    /// patch frame.
    pub target: [f64; OUTPUT_DIM],
    /// Crop used for the patch (before any flip).
    pub transform: PatchTransform,
    pub flipped: bool,
}

/// Flattens two quads into the 16-value target layout.
pub fn quads_to_target(central: &Quad, upper: &Quad) -> [f64; OUTPUT_DIM] {
    let mut t = [0.0; OUTPUT_DIM];
    for (i, p) in central.corners().iter().chain(upper.corners()).enumerate() {
        t[2 * i] = p.x;
        t[2 * i + 1] = p.y;
    }
    t
}

/// Splits 16 values into raw `(central, upper)` corner arrays.
pub fn target_points(t: &[f64; OUTPUT_DIM]) -> ([Point2; 4], [Point2; 4]) {
    let pt = |i: usize| Point2::new(t[2 * i], t[2 * i + 1]);
    ([pt(0), pt(1), pt(2), pt(3)], [pt(4), pt(5), pt(6), pt(7)])
}

/// Undoes a horizontal flip of a `size`-wide patch on a 16-value target,
/// including the corner re-ordering.
pub fn mirror_target(t: &[f64; OUTPUT_DIM], size: usize) -> [f64; OUTPUT_DIM] {
    let mut out = [0.0; OUTPUT_DIM];
    for q in 0..2 {
        for (dst, &src) in FLIP_ORDER.iter().enumerate() {
            let (s, d) = (q * 4 + src, q * 4 + dst);
            out[2 * d] = size as f64 - t[2 * s];
            out[2 * d + 1] = t[2 * s + 1];
        }
    }
    out
}

/// Builds the patch and target for instance `index` of `ann`.
///
/// Order of operations: tight rect, per-side expansion, integer crop shift,
/// sub-pixel crop + bicubic resize, optional mirror, optional blur. Targets
/// go through the same transform and mirror.
pub fn make_example(
    img: &GrayImage,
    ann: &ChainAnnotation,
    index: usize,
    aug: Option<&AugmentDraw>,
    input_size: usize,
) -> Result<TrainExample> {
    if index + 1 >= ann.len() {
        return Err(Error::Data(format!(
            "instance {index} has no instance above it (chain of {})",
            ann.len()
        )));
    }
    let draw = aug.copied().unwrap_or_else(AugmentDraw::none);
    let central = &ann.quads[index];
    let upper = &ann.quads[index + 1];
    let crop =
        expand_rect_sides(&tight_rect(central)?, draw.expand).translate(draw.shift.0 as f64, draw.shift.1 as f64);
    let transform = make_transform(crop, input_size)?;
    let mut patch = extract_patch(img, &transform);
    let mut target = quads_to_target(&transform.quad_to_patch(central)?, &transform.quad_to_patch(upper)?);
    if draw.flip {
        patch = flip_horizontal(&patch);
        target = mirror_target(&target, input_size);
    }
    if draw.blur_sigma > 0.0 {
        patch = gaussian_blur(&patch, draw.blur_sigma)?;
    }
    Ok(TrainExample {
        patch,
        target,
        transform,
        flipped: draw.flip,
    })
}

/// Maps a (possibly mirrored) patch-frame target back to image-frame quads.
pub fn target_to_image_quads(ex: &TrainExample, target: &[f64; OUTPUT_DIM]) -> Result<(Quad, Quad)> {
    let t = if ex.flipped {
        mirror_target(target, ex.transform.out_size)
    } else {
        *target
    };
    let (c, u) = target_points(&t);
    let to_img = |pts: [Point2; 4]| Quad::new(pts.map(|p| ex.transform.to_image(p)), Frame::Image);
    Ok((to_img(c)?, to_img(u)?))
}

/// Packs patches into an `[N, 1, S, S]` tensor and targets into `[N, 16]`.
pub fn batch_tensors(examples: &[&TrainExample]) -> Result<(Tensor4<f32>, Vec<f32>)> {
    let Some(first) = examples.first() else {
        return Err(Error::Data("empty batch".into()));
    };
    let s = first.patch.width();
    let mut data = Vec::with_capacity(examples.len() * s * s);
    let mut targets = Vec::with_capacity(examples.len() * OUTPUT_DIM);
    for ex in examples {
        if ex.patch.width() != s || ex.patch.height() != s {
            return Err(Error::Shape("batch mixes patch sizes".into()));
        }
        data.extend_from_slice(ex.patch.data());
        targets.extend(ex.target.iter().map(|&v| v as f32));
    }
    Ok((Tensor4::from_vec([examples.len(), 1, s, s], data)?, targets))
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn train_step(net: &mut Network<f32>, batch: &[&TrainExample], adam: &AdamConfig) -> Result<f64> {
    let (x, y) = batch_tensors(batch)?;
    let (out, cache) = net.forward_train(&x)?;
    let (loss, grad) = l2_loss(&out, &y, batch.len())?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grads = net.backward(&cache, &grad)?;
    adam_step(&mut net.params, &grads, adam)?;
    Ok(loss)
}

/// Mean per-example loss in inference mode.
pub fn evaluate_loss(net: &Network<f32>, examples: &[TrainExample], batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainExample> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs)?;
        let out = net.forward(&x)?;
        total += l2_loss(&out, &y, chunk.len())?.0 * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

/// Sets the output bias to the mean target so training starts from the
/// average corner layout instead of the patch origin.
pub fn calibrate_output_bias(net: &mut Network<f32>, examples: &[TrainExample]) {
    if examples.is_empty() {
        return;
    }
    let mut mean = [0.0f64; OUTPUT_DIM];
    for ex in examples {
        for (m, t) in mean.iter_mut().zip(ex.target) {
            *m += t;
        }
    }
    if let Some(head) = net.params.fcs.last_mut() {
        for (b, m) in head.bias.iter_mut().zip(mean) {
            *b = (m / examples.len() as f64) as f32;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without sufficient validation improvement before stopping.
    pub patience: usize,
    /// Relative validation improvement that counts as progress.
    pub min_improvement: f64,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            min_improvement: 1e-3,
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network from the epoch with the lowest validation loss.
    pub network: Network<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    pub fn best_val_loss(&self) -> Option<f64> {
        let e = self.best_epoch?;
        self.history.iter().find(|r| r.epoch == e).map(|r| r.val_loss)
    }
}

/// Every `(image, instance)` pair that has an instance above it.
pub fn example_keys(set: &[AnnotatedImage]) -> Vec<(usize, usize)> {
    set.iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.annotation.len().saturating_sub(1)).map(move |k| (i, k)))
        .collect()
}

/// Builds examples for `keys`; with augmentation each key gets its own RNG
/// stream derived from `(seed, epoch, image, instance)`.
pub fn build_examples(
    set: &[AnnotatedImage],
    keys: &[(usize, usize)],
    aug: Option<(&AugmentConfig, usize)>,
    input_size: usize,
) -> Result<Vec<TrainExample>> {
    keys.par_iter()
        .map(|&(i, k)| {
            let draw = aug.map(|(cfg, epoch)| {
                let mut rng = rng_for(cfg.seed, &[epoch as u64, i as u64, k as u64]);
                cfg.sample(&mut rng, input_size)
            });
            make_example(&set[i].image, &set[i].annotation, k, draw.as_ref(), input_size)
        })
        .collect()
}

/// Mini-batch Adam with early stopping on validation loss. Returns the
/// network from the best validation epoch.
pub fn train(
    mut net: Network<f32>,
    train_set: &[AnnotatedImage],
    val_set: &[AnnotatedImage],
    adam: &AdamConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    adam.validate()?;
    if let Some(a) = &cfg.augment {
        a.validate()?;
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let size = net.input_size();
    let train_keys = example_keys(train_set);
    let val_keys = example_keys(val_set);
    if train_keys.is_empty() || val_keys.is_empty() {
        return Err(Error::Data(
            "training and validation sets must both contain examples".into(),
        ));
    }
    let val_examples = build_examples(val_set, &val_keys, None, size)?;
    let fixed_train = match cfg.augment {
        None => Some(build_examples(train_set, &train_keys, None, size)?),
        Some(_) => None,
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let fresh;
        let examples = match (&fixed_train, &cfg.augment) {
            (Some(ex), _) => ex,
            (None, Some(a)) => {
                fresh = build_examples(train_set, &train_keys, Some((a, epoch)), size)?;
                &fresh
            }
            (None, None) => unreachable!(),
        };
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = rng_for(cfg.seed, &[0x0dde, epoch as u64]);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let loss = match train_step(&mut net, &batch, adam) {
                Ok(l) => l,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch, history }),
                Err(e) => return Err(e),
            };
            total += loss * batch.len() as f64;
        }
        let train_loss = total / examples.len() as f64;
        let val_loss = evaluate_loss(&net, &val_examples, cfg.batch_size)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, history });
        }
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val_loss < b * (1.0 - cfg.min_improvement),
        };
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, net.clone()));
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(match best {
        Some((_, epoch, network)) => TrainOutcome {
            network,
            history,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            network: net,
            history,
            best_epoch: None,
        },
    })
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,train_loss,val_loss").expect("write to vec");
    for r in history {
        writeln!(out, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.val_loss).expect("write to vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::centroid;
    use crate::synth::{generate_chain, ChainSpecRange};

    fn sample_chain(seed: u64) -> AnnotatedImage {
        let spec = ChainSpecRange::lumbar_like().sample(seed);
        let (image, annotation) = generate_chain(&spec).unwrap();
        AnnotatedImage {
            name: format!("s{seed}"),
            image,
            annotation,
        }
    }

    #[test]
    fn plain_example_is_centered_and_round_trips() {
        let s = sample_chain(1);
        for k in 0..6 {
            let ex = make_example(&s.image, &s.annotation, k, None, 56).unwrap();
            assert_eq!((ex.patch.width(), ex.patch.height()), (56, 56));
            let (c, _) = target_points(&ex.target);
            let q = Quad::new(c, Frame::Patch).unwrap();
            let m = centroid(&q);
            assert!((m.x - 28.0).abs() < 1e-6 && (m.y - 28.0).abs() < 1e-6);
            let (ci, ui) = target_to_image_quads(&ex, &ex.target).unwrap();
            assert!(ci.max_corner_distance(&s.annotation.quads[k]) < 1e-6);
            assert!(ui.max_corner_distance(&s.annotation.quads[k + 1]) < 1e-6);
        }
        assert!(make_example(&s.image, &s.annotation, 6, None, 56).is_err());
    }

    #[test]
    fn flip_mirrors_targets_and_keeps_order_canonical() {
        let s = sample_chain(2);
        let plain = make_example(&s.image, &s.annotation, 2, None, 56).unwrap();
        let draw = AugmentDraw {
            flip: true,
            ..AugmentDraw::none()
        };
        let flipped = make_example(&s.image, &s.annotation, 2, Some(&draw), 56).unwrap();
        assert_eq!(flipped.patch, flip_horizontal(&plain.patch));
        // x' = size - x on the matching (swapped) corner
        for q in 0..2 {
            for (dst, &src) in FLIP_ORDER.iter().enumerate() {
                let (s_, d) = (q * 4 + src, q * 4 + dst);
                assert!((flipped.target[2 * d] - (56.0 - plain.target[2 * s_])).abs() < 1e-9);
                assert_eq!(flipped.target[2 * d + 1], plain.target[2 * s_ + 1]);
            }
        }
        let (c, u) = target_points(&flipped.target);
        Quad::new(c, Frame::Patch).unwrap();
        Quad::new(u, Frame::Patch).unwrap();
    }

    #[test]
    fn augmented_targets_recover_annotation() {
        let s = sample_chain(3);
        let cfg = AugmentConfig::default();
        let mut rng = rng_for(9, &[]);
        for k in 0..6 {
            let draw = cfg.sample(&mut rng, 56);
            let ex = make_example(&s.image, &s.annotation, k, Some(&draw), 56).unwrap();
            let (c, u) = target_to_image_quads(&ex, &ex.target).unwrap();
            assert!(c.max_corner_distance(&s.annotation.quads[k]) < 1e-6);
            assert!(u.max_corner_distance(&s.annotation.quads[k + 1]) < 1e-6);
        }
    }

    #[test]
    fn augment_draws_respect_ranges() {
        let cfg = AugmentConfig::default();
        let mut rng = rng_for(4, &[]);
        let mut flips = 0;
        for _ in 0..500 {
            let d = cfg.sample(&mut rng, 224);
            assert!(d.expand.iter().all(|e| (0.6..=0.9).contains(e)));
            assert!(d.shift.0.abs() <= 10 && d.shift.1.abs() <= 10);
            assert!((3.0..=30.0).contains(&d.blur_sigma));
            flips += d.flip as usize;
        }
        assert!((150..350).contains(&flips));
        let d = cfg.sample(&mut rng, 56);
        assert!((0.75..=7.5).contains(&d.blur_sigma));
    }

    #[test]
    fn zero_epochs_returns_initial_network() {
        let set = vec![sample_chain(5)];
        let net = Network::<f32>::new(crate::neural::NetConfig::desk(), 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let out = train(net.clone(), &set, &set, &AdamConfig::default(), &cfg).unwrap();
        assert_eq!(out.network, net);
        assert!(out.history.is_empty());
        assert!(train(net, &[], &set, &AdamConfig::default(), &cfg).is_err());
    }
}
