//! Forecast error metrics on held-out losses.
//!
//! All log-space quantities use the natural logarithm and the residual
//! convention `r_i = ln(pred_i) - ln(obs_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HUBER_DELTA: f64 = 0.02;
pub const DEFAULT_Y_CLIP: f64 = 1e-8;

/// Huber penalty: `r^2 / 2` inside `[-delta, delta]`, `delta * (|r| - delta / 2)` outside.
#[inline]
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to `r`.
#[inline]
pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

fn check_pairs(preds: &[f64], obs: &[f64]) -> Result<()> {
    if preds.len() != obs.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} predictions vs {} observations",
            preds.len(),
            obs.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Metric("no points to score".into()));
    }
    if preds.iter().chain(obs).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Metric("all predictions and observations must be > 0".into()));
    }
    Ok(())
}

fn log_residuals<'a>(preds: &'a [f64], obs: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    preds.iter().zip(obs).map(|(p, y)| p.ln() - y.ln())
}

pub fn huber_log(preds: &[f64], obs: &[f64], delta: f64) -> Result<f64> {
    check_pairs(preds, obs)?;
    if !(delta > 0.0) {
        return Err(Error::Metric("huber delta must be > 0".into()));
    }
    let sum: f64 = log_residuals(preds, obs).map(|r| huber(r, delta)).sum();
    Ok(sum / preds.len() as f64)
}

pub fn rmse_log(preds: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(preds, obs)?;
    let sum: f64 = log_residuals(preds, obs).map(|r| r * r).sum();
    Ok((sum / preds.len() as f64).sqrt())
}

pub fn mae_rel(preds: &[f64], obs: &[f64]) -> Result<f64> {
    check_pairs(preds, obs)?;
    let sum: f64 = preds.iter().zip(obs).map(|(p, y)| (p - y).abs() / y).sum();
    Ok(sum / preds.len() as f64)
}

pub fn mape_clip(preds: &[f64], obs: &[f64], y_clip: f64) -> Result<f64> {
    check_pairs(preds, obs)?;
    if !(y_clip > 0.0) {
        return Err(Error::Metric("y_clip must be > 0".into()));
    }
    let sum: f64 = preds
        .iter()
        .zip(obs)
        .map(|(p, y)| (p - y).abs() / y.max(y_clip))
        .sum();
    Ok(sum / preds.len() as f64)
}

/// OLS of `ln obs` on `ln preds`; returns `(intercept, slope)`.
pub fn calibration_ols(preds: &[f64], obs: &[f64]) -> Result<(f64, f64)> {
    check_pairs(preds, obs)?;
    let n = preds.len();
    if n < 2 {
        return Err(Error::Metric("calibration needs at least two points".into()));
    }
    let x: Vec<f64> = preds.iter().map(|p| p.ln()).collect();
    let y: Vec<f64> = obs.iter().map(|v| v.ln()).collect();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(&y) {
        let dx = xi - mx;
        sxx += dx * dx;
        sxy += dx * (yi - my);
    }
    // relative test: a design whose spread is rounding noise is still degenerate
    let scale = x.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if sxx <= scale * 1e-24 {
        return Err(Error::Metric(
            "degenerate calibration design: predictions are constant".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok((my - slope * mx, slope))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub huber_log: f64,
    pub rmse_log: f64,
    pub mae_rel: f64,
    pub mape_clip: f64,
    pub intercept: f64,
    pub slope: f64,
    #[serde(rename = "n")]
    pub n_points: usize,
}

pub fn metrics_report(preds: &[f64], obs: &[f64], delta: f64, y_clip: f64) -> Result<MetricsReport> {
    let (intercept, slope) = calibration_ols(preds, obs)?;
    Ok(MetricsReport {
        huber_log: huber_log(preds, obs, delta)?,
        rmse_log: rmse_log(preds, obs)?,
        mae_rel: mae_rel(preds, obs)?,
        mape_clip: mape_clip(preds, obs, y_clip)?,
        intercept,
        slope,
        n_points: preds.len(),
    })
}

/// Scientific notation with a two-decimal mantissa, e.g. `4.43e-5`.
pub fn sci(v: f64) -> String {
    format!("{v:.2e}")
}
