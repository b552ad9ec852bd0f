//! The recurrent detection loop.
//!
//! Each step crops around the current proposal exactly like a training
//! patch, asks the predictor for 16 values, keeps the central quad as a
//! detection and hands the upper quad to the next step.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, expand_rect, make_transform, tight_rect, Frame, PatchTransform, Point2, Quad, Rect};
use crate::imaging::{extract_patch, GrayImage};
use crate::neural::{Network, Tensor4, OUTPUT_DIM};
use crate::training::{quads_to_target, target_points, PATCH_EXPANSION};

/// Maps a network-sized patch to 16 patch-frame corner values.
pub trait CornerPredictor: Sync {
    fn input_size(&self) -> usize;

    /// `transform` is the crop the patch was cut with. Learned predictors
    /// ignore it.
    fn predict(&self, patch: &GrayImage, transform: &PatchTransform) -> Result<[f64; OUTPUT_DIM]>;
}

/// A trained network in inference mode.
#[derive(Debug, Clone)]
pub struct NetPredictor {
    pub network: Network<f32>,
}

impl NetPredictor {
    pub fn new(network: Network<f32>) -> Self {
        Self { network }
    }
}

impl CornerPredictor for NetPredictor {
    fn input_size(&self) -> usize {
        self.network.input_size()
    }

    fn predict(&self, patch: &GrayImage, _: &PatchTransform) -> Result<[f64; OUTPUT_DIM]> {
        let s = self.input_size();
        if patch.width() != s || patch.height() != s {
            return Err(Error::Shape(format!(
                "patch is {}x{}, network expects {s}x{s}",
                patch.width(),
                patch.height()
            )));
        }
        let x = Tensor4::from_vec([1, 1, s, s], patch.data().to_vec())?;
        let out = self.network.forward(&x)?;
        let mut raw = [0.0; OUTPUT_DIM];
        for (r, o) in raw.iter_mut().zip(out) {
            *r = o as f64;
        }
        Ok(raw)
    }
}

/// Answers with ground truth: the truth quad nearest the crop centre and
/// the one above it. Past the top of the chain the last spacing is
/// extrapolated.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub truth: Vec<Quad>,
    pub size: usize,
}

impl OraclePredictor {
    pub fn new(truth: Vec<Quad>, size: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Data("oracle needs at least one truth quad".into()));
        }
        Ok(Self { truth, size })
    }
}

impl CornerPredictor for OraclePredictor {
    fn input_size(&self) -> usize {
        self.size
    }

    fn predict(&self, _: &GrayImage, t: &PatchTransform) -> Result<[f64; OUTPUT_DIM]> {
        let c = t.crop.center();
        let k = (0..self.truth.len())
            .min_by(|&a, &b| {
                let da = centroid(&self.truth[a]).distance(&c);
                let db = centroid(&self.truth[b]).distance(&c);
                da.total_cmp(&db)
            })
            .expect("non-empty truth");
        let central = self.truth[k];
        let upper = match (self.truth.get(k + 1), k.checked_sub(1)) {
            (Some(u), _) => *u,
            (None, Some(j)) => {
                let (a, b) = (centroid(&self.truth[j]), centroid(&central));
                central.translate(b.x - a.x, b.y - a.y)
            }
            (None, None) => central.translate(0.0, -tight_rect(&central)?.height()),
        };
        Ok(quads_to_target(&t.quad_to_patch(&central)?, &t.quad_to_patch(&upper)?))
    }
}

/// Called after every step with the raw outputs and the mapped central and
/// upper quads; returning `true` ends the run after that step.
pub type StopHook = Arc<dyn Fn(&[f64; OUTPUT_DIM], &Quad, &Quad) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct LadderConfig {
    pub iterations: usize,
    /// Per-side expansion of the proposal's tight rectangle.
    pub expansion: f64,
    pub patch_size: usize,
    pub stop_hook: Option<StopHook>,
}

impl fmt::Debug for LadderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LadderConfig")
            .field("iterations", &self.iterations)
            .field("expansion", &self.expansion)
            .field("patch_size", &self.patch_size)
            .field("stop_hook", &self.stop_hook.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

pub const LUMBAR_ITERATIONS: usize = 6;
pub const WHOLE_SPINE_ITERATIONS: usize = 23;

impl LadderConfig {
    pub fn new(iterations: usize, patch_size: usize) -> Self {
        Self {
            iterations,
            expansion: PATCH_EXPANSION,
            patch_size,
            stop_hook: None,
        }
    }

    pub fn lumbar(patch_size: usize) -> Self {
        Self::new(LUMBAR_ITERATIONS, patch_size)
    }

    pub fn whole_spine(patch_size: usize) -> Self {
        Self::new(WHOLE_SPINE_ITERATIONS, patch_size)
    }

    pub fn preset(name: &str, patch_size: usize) -> Result<Self> {
        match name {
            "lumbar" => Ok(Self::lumbar(patch_size)),
            "wholespine" | "whole-spine" => Ok(Self::whole_spine(patch_size)),
            other => Err(Error::Config(format!(
                "unknown iteration preset '{other}' (expected lumbar or wholespine)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.expansion.is_finite() && self.expansion > -0.5) {
            return Err(Error::Config(format!("invalid expansion {}", self.expansion)));
        }
        if self.patch_size == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        Ok(())
    }
}

/// Record of one step. Corner arrays are stored unvalidated so a failing
/// step can still be inspected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub iteration: usize,
    pub proposal: [[f64; 2]; 4],
    pub crop: Rect,
    pub raw: Vec<f64>,
    pub central: [[f64; 2]; 4],
    pub upper: [[f64; 2]; 4],
}

#[derive(Debug, Clone)]
pub struct LadderState {
    pub current_proposal: Quad,
    pub detections: Vec<Quad>,
    pub iteration: usize,
    pub trace: Vec<StepTrace>,
}

/// Detection, next proposal and raw network output of one step.
type StepOutput = (Quad, Quad, [f64; OUTPUT_DIM]);

fn step(
    img: &GrayImage,
    proposal: &Quad,
    predictor: &dyn CornerPredictor,
    cfg: &LadderConfig,
    iteration: usize,
) -> (Option<StepTrace>, Result<StepOutput>) {
    let prepared = (|| {
        if proposal.frame() != Frame::Image {
            return Err(Error::Geometry("proposal must be an image-frame quad".into()));
        }
        if predictor.input_size() != cfg.patch_size {
            return Err(Error::Config(format!(
                "predictor takes {} px patches, ladder configured for {}",
                predictor.input_size(),
                cfg.patch_size
            )));
        }
        let tight = tight_rect(proposal)?;
        if !tight.overlaps(&img.bounds()) {
            return Err(Error::OutsideImage(format!("{tight:?}")));
        }
        let t = make_transform(expand_rect(&tight, cfg.expansion), cfg.patch_size)?;
        let raw = predictor.predict(&extract_patch(img, &t), &t)?;
        Ok((t, raw))
    })();
    let (t, raw) = match prepared {
        Ok(v) => v,
        Err(e) => return (None, Err(e)),
    };
    let (c, u) = target_points(&raw);
    let to_img = |pts: [Point2; 4]| pts.map(|p| t.to_image(p));
    let (c, u) = (to_img(c), to_img(u));
    let xy = |pts: [Point2; 4]| pts.map(|p| [p.x, p.y]);
    let trace = StepTrace {
        iteration,
        proposal: proposal.to_xy(),
        crop: t.crop,
        raw: raw.to_vec(),
        central: xy(c),
        upper: xy(u),
    };
    let result = if raw.iter().any(|v| !v.is_finite()) {
        Err(Error::NonFinite("predictor output".into()))
    } else {
        Quad::new(c, Frame::Image).and_then(|c| Ok((c, Quad::new(u, Frame::Image)?, raw)))
    };
    (Some(trace), result)
}

/// One induction step: returns the detection, the next proposal and the
/// step record. Errors carry the partial trace.
pub fn ladder_step(
    img: &GrayImage,
    proposal: &Quad,
    predictor: &dyn CornerPredictor,
    cfg: &LadderConfig,
) -> Result<(Quad, Quad, StepTrace)> {
    match step(img, proposal, predictor, cfg, 0) {
        (Some(trace), Ok((d, n, _))) => Ok((d, n, trace)),
        (trace, Err(e)) => Err(Error::Ladder {
            iteration: 0,
            source: Box::new(e),
            trace: trace.into_iter().collect(),
        }),
        (None, Ok(_)) => unreachable!("successful steps always record a trace"),
    }
}

/// Runs `cfg.iterations` steps from `seed`, or fewer if the stop hook fires.
pub fn run_ladder(
    img: &GrayImage,
    seed: &Quad,
    predictor: &dyn CornerPredictor,
    cfg: &LadderConfig,
) -> Result<LadderState> {
    cfg.validate()?;
    let mut state = LadderState {
        current_proposal: *seed,
        detections: Vec::with_capacity(cfg.iterations),
        iteration: 0,
        trace: Vec::with_capacity(cfg.iterations),
    };
    while state.iteration < cfg.iterations {
        let (trace, result) = step(img, &state.current_proposal, predictor, cfg, state.iteration);
        state.trace.extend(trace);
        let (detection, next, raw) = result.map_err(|e| Error::Ladder {
            iteration: state.iteration,
            source: Box::new(e),
            trace: state.trace.clone(),
        })?;
        state.detections.push(detection);
        state.current_proposal = next;
        state.iteration += 1;
        if let Some(hook) = &cfg.stop_hook {
            if hook(&raw, &detection, &next) {
                break;
            }
        }
    }
    Ok(state)
}

/// Anatomical order walked by the ladder, bottom to top.
const VERTEBRAE: [&str; 24] = [
    "S1", "L5", "L4", "L3", "L2", "L1", "T12", "T11", "T10", "T9", "T8", "T7", "T6", "T5", "T4", "T3", "T2", "T1",
    "C7", "C6", "C5", "C4", "C3", "C2",
];

/// Labels for `n` detections starting at `seed_label`. Vertebral names
/// continue up the spine, `name7` style labels count upwards, anything else
/// gets a `+k` suffix.
pub fn ordinal_labels(seed_label: &str, n: usize) -> Vec<String> {
    if let Some(start) = VERTEBRAE.iter().position(|v| *v == seed_label) {
        if start + n <= VERTEBRAE.len() {
            return VERTEBRAE[start..start + n].iter().map(|s| s.to_string()).collect();
        }
    }
    let digits = seed_label.len() - seed_label.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let (prefix, num) = seed_label.split_at(seed_label.len() - digits);
        if let Ok(k) = num.parse::<u64>() {
            return (0..n as u64).map(|i| format!("{prefix}{}", k + i)).collect();
        }
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                seed_label.to_string()
            } else {
                format!("{seed_label}+{i}")
            }
        })
        .collect()
}

/// On-disk detection result for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub image: String,
    pub seed: [[f64; 2]; 4],
    pub seed_label: String,
    pub iterations: usize,
    pub detections: Vec<[[f64; 2]; 4]>,
    pub labels: Vec<String>,
}

impl DetectionFile {
    pub fn from_state(image: &str, seed: &Quad, seed_label: &str, iterations: usize, state: &LadderState) -> Self {
        Self {
            image: image.to_string(),
            seed: seed.to_xy(),
            seed_label: seed_label.to_string(),
            iterations,
            detections: state.detections.iter().map(Quad::to_xy).collect(),
            labels: ordinal_labels(seed_label, state.detections.len()),
        }
    }

    pub fn quads(&self) -> Result<Vec<Quad>> {
        self.detections
            .iter()
            .map(|q| Quad::from_xy(*q, Frame::Image))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut b = serde_json::to_vec_pretty(self)?;
        b.push(b'\n');
        std::fs::write(path, b).map_err(|e| Error::io(path, e))
    }
}

pub fn save_trace(trace: &[StepTrace], path: &Path) -> Result<()> {
    let mut b = serde_json::to_vec_pretty(trace)?;
    b.push(b'\n');
    std::fs::write(path, b).map_err(|e| Error::io(path, e))
}
