use rayon::prelude::*;
use serde::Serialize;

use super::{Criterion, StabilityReport, Verdict};
use crate::error::{Error, Result};

/// Width to which stability-boundary brackets are refined.
pub const CROSSING_WIDTH: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub indicator: Option<f64>,
    pub normalized_indicator: Option<f64>,
    pub margin: Option<f64>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub parameter: String,
    pub degree: usize,
    pub criterion: Option<Criterion>,
    pub points: Vec<SweepPoint>,
    /// Brackets `(lo, hi)` of width at most [`CROSSING_WIDTH`] around each
    /// sign change of the stability margin along the grid.
    pub crossings: Vec<(f64, f64)>,
}

/// Inclusive grid `lo, lo + step, …, hi`.
pub fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bad grid ({lo}, {hi}, {step})"
        )));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| lo + k as f64 * step).collect())
}

/// Evaluates `eval` at every grid value (in parallel) and brackets the
/// stability boundary by bisection between grid neighbours whose margins
/// differ in sign. A grid point with zero margin is its own bracket.
/// Failed points are recorded and skipped.
pub fn sweep<F>(parameter: &str, degree: usize, values: &[f64], eval: F) -> SweepTable
where
    F: Fn(f64) -> Result<StabilityReport> + Sync,
{
    let results: Vec<(f64, Result<StabilityReport>)> =
        values.par_iter().map(|&v| (v, eval(v))).collect();

    let mut criterion = None;
    let points: Vec<SweepPoint> = results
        .into_iter()
        .map(|(value, r)| match r {
            Ok(rep) => {
                criterion = Some(rep.criterion);
                SweepPoint {
                    value,
                    indicator: Some(rep.indicator),
                    normalized_indicator: Some(rep.normalized_indicator),
                    margin: Some(rep.margin),
                    verdict: Some(rep.verdict),
                    error: None,
                }
            }
            Err(e) => SweepPoint {
                value,
                indicator: None,
                normalized_indicator: None,
                margin: None,
                verdict: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let mut crossings = Vec::new();
    for p in &points {
        if p.margin == Some(0.0) {
            crossings.push((p.value, p.value));
        }
    }
    for pair in points.windows(2) {
        let (Some(m0), Some(m1)) = (pair[0].margin, pair[1].margin) else {
            continue;
        };
        if m0.signum() == m1.signum() || m0 == 0.0 || m1 == 0.0 {
            continue;
        }
        if let Some(b) = bisect(&eval, pair[0].value, m0, pair[1].value) {
            crossings.push(b);
        }
    }

    SweepTable {
        parameter: parameter.to_string(),
        degree,
        criterion,
        points,
        crossings,
    }
}

fn bisect<F>(eval: &F, mut lo: f64, margin_lo: f64, mut hi: f64) -> Option<(f64, f64)>
where
    F: Fn(f64) -> Result<StabilityReport>,
{
    while (hi - lo).abs() > CROSSING_WIDTH {
        let mid = 0.5 * (lo + hi);
        let m = eval(mid).ok()?.margin;
        if m.signum() == margin_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(if lo <= hi { (lo, hi) } else { (hi, lo) })
}
