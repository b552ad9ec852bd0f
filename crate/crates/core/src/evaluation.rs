//! Detection scoring: centroid-in-box matching, recall, precision, Dice on
//! true positives and centroid localization error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, point_in_quad, quad_dice, Quad};

/// Assignment of predictions to truth quads.
#[derive(Debug, Clone)]
pub struct Matching {
    pub predicted: Vec<Quad>,
    pub truth: Vec<Quad>,
    /// Per prediction: the truth index it is a true positive for, if any.
    pub assignment: Vec<Option<usize>>,
}

impl Matching {
    pub fn tp(&self) -> usize {
        self.assignment.iter().flatten().count()
    }

    pub fn fp(&self) -> usize {
        self.predicted.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.truth.len() - self.tp()
    }

    /// `(prediction, truth)` index pairs in prediction order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(p, t)| t.map(|t| (p, t)))
    }
}

/// A prediction is a candidate for every truth quad containing its
/// centroid (the best-overlapping one if several do). Each truth keeps the
/// candidate with the highest Dice, earlier prediction on ties; all other
/// predictions are false positives.
pub fn match_detections(predicted: &[Quad], truth: &[Quad]) -> Matching {
    let mut best: Vec<Option<(usize, f64)>> = vec![None; truth.len()];
    for (p, q) in predicted.iter().enumerate() {
        let c = centroid(q);
        let candidate = truth
            .iter()
            .enumerate()
            .filter(|(_, t)| point_in_quad(c, t))
            .map(|(t, tq)| (t, quad_dice(q, tq)))
            .fold(None, |acc: Option<(usize, f64)>, (t, d)| match acc {
                Some((_, bd)) if bd >= d => acc,
                _ => Some((t, d)),
            });
        if let Some((t, d)) = candidate {
            if best[t].is_none_or(|(_, bd)| d > bd) {
                best[t] = Some((p, d));
            }
        }
    }
    let mut assignment = vec![None; predicted.len()];
    for (t, b) in best.iter().enumerate() {
        if let Some((p, _)) = b {
            assignment[*p] = Some(t);
        }
    }
    Matching {
        predicted: predicted.to_vec(),
        truth: truth.to_vec(),
        assignment,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub prediction: usize,
    pub truth: usize,
    pub dice: f64,
    /// Centroid distance in `DetectionReport::units`.
    pub le: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub recall: f64,
    pub precision: f64,
    pub dice_mean: f64,
    pub le_mean: f64,
    pub le_std: f64,
    /// "mm" when a pixel spacing was given, otherwise "px".
    pub units: String,
    pub per_instance: Vec<InstanceRecord>,
}

/// `num / den`, with an empty denominator reported as 0.
pub fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn finish(tp: usize, fp: usize, fn_: usize, units: String, per_instance: Vec<InstanceRecord>) -> DetectionReport {
    let (dice_mean, _) = mean_std(per_instance.iter().map(|r| r.dice));
    let (le_mean, le_std) = mean_std(per_instance.iter().map(|r| r.le));
    DetectionReport {
        tp,
        fp,
        fn_,
        recall: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
        dice_mean,
        le_mean,
        le_std,
        units,
        per_instance,
    }
}

/// Scores a matching. LE uses the population standard deviation.
pub fn report(m: &Matching, pixel_spacing: Option<f64>) -> Result<DetectionReport> {
    if let Some(s) = pixel_spacing {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Config(format!("pixel spacing must be positive, got {s}")));
        }
    }
    let scale = pixel_spacing.unwrap_or(1.0);
    let per_instance = m
        .pairs()
        .map(|(p, t)| {
            let (pq, tq) = (&m.predicted[p], &m.truth[t]);
            InstanceRecord {
                prediction: p,
                truth: t,
                dice: quad_dice(pq, tq),
                le: centroid(pq).distance(&centroid(tq)) * scale,
            }
        })
        .collect();
    let units = if pixel_spacing.is_some() { "mm" } else { "px" };
    Ok(finish(m.tp(), m.fp(), m.fn_count(), units.into(), per_instance))
}

/// Pools instance-level records across images, then recomputes ratios and
/// statistics, so every instance weighs the same regardless of its image.
pub fn aggregate(reports: &[DetectionReport]) -> Result<DetectionReport> {
    let units = reports.first().map_or("px".to_string(), |r| r.units.clone());
    if reports.iter().any(|r| r.units != units) {
        return Err(Error::Data("cannot pool reports with different units".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut per_instance = Vec::new();
    for r in reports {
        tp += r.tp;
        fp += r.fp;
        fn_ += r.fn_;
        per_instance.extend_from_slice(&r.per_instance);
    }
    Ok(finish(tp, fp, fn_, units, per_instance))
}

pub const CSV_HEADER: &str =
    "subset,recall_pct,recall_counts,precision_pct,precision_counts,dice_pct,le_mean,le_std,le_units";

/// One summary row; percentages to one decimal, counts as `tp/denominator`.
pub fn csv_row(subset: &str, r: &DetectionReport) -> String {
    let mut s = String::new();
    write!(
        s,
        "{subset},{:.1},{}/{},{:.1},{}/{},{:.1},{:.3},{:.3},{}",
        100.0 * r.recall,
        r.tp,
        r.tp + r.fn_,
        100.0 * r.precision,
        r.tp,
        r.tp + r.fp,
        100.0 * r.dice_mean,
        r.le_mean,
        r.le_std,
        r.units
    )
    .expect("write to string");
    s
}
