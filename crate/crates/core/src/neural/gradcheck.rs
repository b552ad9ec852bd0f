//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use crate::rng::rng_for;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates checked per tensor; `None` checks all of them.
    pub max_per_tensor: Option<usize>,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_per_tensor: None,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(f, "{:<16} n={:<5} max_rel={:.3e}", e.name, e.checked, e.max_rel_error)?;
        }
        Ok(())
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic[i]` with central differences of `f` around `params`.
///
/// `f` is evaluated with `params` perturbed one coordinate at a time; the
/// coordinate is restored before the next evaluation.
pub fn grad_check(
    names: &[String],
    params: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    mut f: impl FnMut(&[Vec<f64>]) -> f64,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for t in 0..params.len() {
        let len = params[t].len();
        let idx: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < len => {
                let mut rng = rng_for(opts.seed, &[t as u64]);
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut worst = 0.0f64;
        for &i in &idx {
            let orig = params[t][i];
            params[t][i] = orig + opts.step;
            let up = f(params);
            params[t][i] = orig - opts.step;
            let down = f(params);
            params[t][i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[t][i], numeric, opts.floor));
        }
        report.entries.push(GradCheckEntry {
            name: names.get(t).cloned().unwrap_or_else(|| format!("tensor{t}")),
            checked: idx.len(),
            max_rel_error: worst,
        });
    }
    report
}
