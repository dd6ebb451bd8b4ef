//! Per-method log-log regression of error against element count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::evaluate::EvaluationRecord;

/// Arithmetic means over the problems of one (method, sweep value, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub method: String,
    pub sweep_value: f64,
    pub seed: u64,
    pub problems: usize,
    pub mean_elements: f64,
    pub mean_squared_error: f64,
}

/// `log10(error) = intercept + slope · log10(elements)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    pub method: String,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares through `(x, y)`; `None` for fewer than two
/// distinct abscissae.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Fit of `y = 10^intercept · x^slope` on points with positive coordinates.
pub fn fit_power_law(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let logs: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.log10(), p.1.log10())).collect();
    linear_fit(&logs)
}

pub fn scatter(records: &[EvaluationRecord]) -> Vec<ScatterPoint> {
    let mut cells: BTreeMap<(String, u64, u64), Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.method.clone(), r.sweep_value.to_bits(), r.seed)).or_default().push(r);
    }
    let mut points: Vec<ScatterPoint> = cells
        .into_iter()
        .map(|((method, value, seed), rs)| {
            let n = rs.len() as f64;
            ScatterPoint {
                method,
                sweep_value: f64::from_bits(value),
                seed,
                problems: rs.len(),
                mean_elements: rs.iter().map(|r| r.final_elements as f64).sum::<f64>() / n,
                mean_squared_error: rs.iter().map(|r| r.squared_error).sum::<f64>() / n,
            }
        })
        .collect();
    points.sort_by(|a, b| a.method.cmp(&b.method).then(a.sweep_value.total_cmp(&b.sweep_value)).then(a.seed.cmp(&b.seed)));
    points
}

/// One fit per method, pooling its points over seeds and sweep values.
pub fn fit_methods(points: &[ScatterPoint]) -> Vec<PowerLawFit> {
    let mut by_method: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        by_method.entry(&p.method).or_default().push((p.mean_elements, p.mean_squared_error));
    }
    by_method
        .into_iter()
        .map(|(method, pts)| {
            let (slope, intercept) = fit_power_law(&pts).unwrap_or((f64::NAN, f64::NAN));
            PowerLawFit { method: method.to_string(), points: pts.len(), slope, intercept }
        })
        .collect()
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from("method,sweep_value,seed,problems,mean_elements,mean_squared_error\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{},{},{}", p.method, p.sweep_value, p.seed, p.problems, p.mean_elements, p.mean_squared_error);
    }
    out
}

pub fn fits_csv(fits: &[PowerLawFit]) -> String {
    let mut out = String::from("method,points,slope,log10_intercept\n");
    for f in fits {
        let _ = writeln!(out, "{},{},{},{}", f.method, f.points, f.slope, f.intercept);
    }
    out
}
