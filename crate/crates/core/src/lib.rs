//! Iterative ("ladder") detection of chains of repetitive structures.
//!
//! A chain detector starts from a seed quadrilateral around the first
//! instance, extracts a scale-normalized patch around it and asks a corner
//! regressor for two quads: the instance in the middle of the patch and the
//! one directly above. The first is kept as a detection, the second becomes
//! the proposal for the next patch. Repeating this N times walks the chain.
//!
//! Crate layout:
//!
//! - [`geometry`]: points, quads, rectangles, the image/patch transform and
//!   polygon overlap.
//! - [`imaging`]: grayscale rasters, patch extraction, bicubic resize, blur.
//! - [`neural`]: a small CNN engine with hand-written backward passes and Adam.
//! - [`synth`]: synthetic chain images with exact ground truth.
//! - [`training`]: patch/target construction, augmentation and the fit loop.
//! - [`ladder`]: the recurrent inference loop.
//! - [`evaluation`]: TP/FP/FN matching, recall, precision, Dice and
//!   localization error.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod ladder;
pub mod neural;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use evaluation::{aggregate, match_detections, report, DetectionReport, Matching};
pub use geometry::{Frame, PatchTransform, Point2, Quad, Rect};
pub use imaging::GrayImage;
pub use ladder::{run_ladder, CornerPredictor, LadderConfig, LadderState, NetPredictor, OraclePredictor};
pub use neural::{AdamConfig, NetConfig, NetParams, Network};
pub use synth::{ChainAnnotation, ChainSpec, ChainSpecRange};
pub use training::{AugmentConfig, TrainConfig, TrainExample};
