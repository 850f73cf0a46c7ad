//! Depth and angular-velocity error metrics.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::warp::AngularVelocity3;

/// Depth errors over matched regions. Deltas are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub rmse_lin: f64,
    pub rmse_log: f64,
    pub ard: f64,
    pub srd: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Number of matched pairs.
    pub n: usize,
}

/// Angular-velocity errors in deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngVelMetrics {
    pub e_wx: f64,
    pub e_wy: f64,
    pub e_wz: f64,
    pub sigma_ew: f64,
    pub rms: f64,
    pub rms_pct: f64,
}

/// Metrics over the regions present in both maps.
pub fn depth_metrics(pred: &BTreeMap<u32, f64>, gt: &BTreeMap<u32, f64>) -> Result<DepthMetrics> {
    let pairs: Vec<(f64, f64)> = pred
        .iter()
        .filter_map(|(id, &p)| gt.get(id).map(|&g| (p, g)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Validation("prediction and ground truth share no region".into()));
    }
    depth_metrics_pairs(&pairs)
}

/// Metrics over `(pred, gt)` pairs.
pub fn depth_metrics_pairs(pairs: &[(f64, f64)]) -> Result<DepthMetrics> {
    if pairs.is_empty() {
        return Err(Error::Validation("no depth pairs".into()));
    }
    for &(p, g) in pairs {
        if !(p > 0.0 && g > 0.0 && p.is_finite() && g.is_finite()) {
            return Err(Error::Validation(format!(
                "depths must be positive and finite (pred {p}, gt {g})"
            )));
        }
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| pairs.iter().map(|&(p, g)| f(p, g)).sum::<f64>() / n;
    let pct = |k: i32| {
        let th = 1.25f64.powi(k);
        100.0 * pairs.iter().filter(|&&(p, g)| (p / g).max(g / p) < th).count() as f64 / n
    };
    Ok(DepthMetrics {
        rmse_lin: mean(&|p, g| (p - g).powi(2)).sqrt(),
        rmse_log: mean(&|p, g| (p.ln() - g.ln()).powi(2)).sqrt(),
        ard: mean(&|p, g| (p - g).abs() / g),
        srd: mean(&|p, g| (p - g).powi(2) / g),
        delta1: pct(1),
        delta2: pct(2),
        delta3: pct(3),
        n: pairs.len(),
    })
}

/// Errors of `pred` against `gt` (both rad/s); reported in deg/s.
pub fn angvel_metrics(
    pred: &[AngularVelocity3],
    gt: &[AngularVelocity3],
    max_rate_deg: f64,
) -> Result<AngVelMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::Validation(format!(
            "sequence lengths differ ({} vs {})",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Validation("empty sequences".into()));
    }
    if !(max_rate_deg > 0.0) {
        return Err(Error::InvalidParam("max rate must be > 0".into()));
    }
    let n = pred.len() as f64;
    let errs: Vec<[f64; 3]> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (*p - *g).as_array().map(f64::to_degrees))
        .collect();
    let axis = |k: usize| (errs.iter().map(|e| e[k] * e[k]).sum::<f64>() / n).sqrt();
    let norms: Vec<f64> = errs
        .iter()
        .map(|e| (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt())
        .collect();
    let rms = (norms.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(AngVelMetrics {
        e_wx: axis(0),
        e_wy: axis(1),
        e_wz: axis(2),
        sigma_ew: var.max(0.0).sqrt(),
        rms,
        rms_pct: 100.0 * rms / max_rate_deg,
    })
}
