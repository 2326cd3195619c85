//! Curve fits for convergence series.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Geometric decay toward a plateau, `W2_n ≈ level + C ρ^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `ρ`, or `None` when the transient is too short to fit.
    pub rate: Option<f64>,
    /// Mean of the trailing 25% of the series.
    pub level: f64,
    /// Number of leading points used for the log-linear fit.
    pub transient_points: usize,
}

/// Fits `ρ` and the plateau of a W2 series given as `(iteration, W2)` pairs.
///
/// The plateau is the trailing-quarter mean. The transient is the longest
/// prefix whose excess over the plateau stays above
/// `max(3·sd_tail, 1e-9·max excess)`, and `ρ = exp(slope)` of a least-squares
/// line through `log(excess)` on that prefix.
pub fn rate_fit(series: &[(f64, f64)]) -> Result<RateFit> {
    if series.len() < 10 {
        return Err(Error::Usage(format!(
            "rate fit needs at least 10 points, got {}",
            series.len()
        )));
    }
    if series.iter().any(|(n, w)| !n.is_finite() || !w.is_finite()) {
        return Err(Error::Usage("rate fit series contains non-finite values".into()));
    }
    let k = series.len().div_ceil(4);
    let tail = &series[series.len() - k..];
    let level = tail.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sd = (tail.iter().map(|p| (p.1 - level).powi(2)).sum::<f64>() / k as f64).sqrt();
    let scale = series.iter().map(|p| (p.1 - level).abs()).fold(0.0, f64::max);
    let threshold = (3.0 * sd).max(1e-9 * scale);
    let transient: Vec<(f64, f64)> = series
        .iter()
        .take_while(|p| p.1 - level > threshold)
        .map(|p| (p.0, (p.1 - level).ln()))
        .collect();
    let rate = if transient.len() < 3 {
        None
    } else {
        let (slope, _) = least_squares(&transient);
        let rho = slope.exp();
        (rho.is_finite() && rho < 1.0).then_some(rho)
    };
    Ok(RateFit { rate, level, transient_points: transient.len() })
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// Two-sided 95% confidence interval for the slope.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Least-squares slope of `log y` on `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() {
        return Err(Error::Usage("log-log fit needs equally many x and y values".into()));
    }
    if x.len() < 3 {
        return Err(Error::Usage(format!("log-log fit needs at least 3 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Usage("log-log fit needs positive finite values".into()));
    }
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    let (slope, intercept) = least_squares(&pts);
    if !slope.is_finite() {
        return Err(Error::Usage("log-log fit needs at least two distinct x values".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| Error::Usage(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        ci_low: slope - t * stderr,
        ci_high: slope + t * stderr,
    })
}
