//! Reversible instance normalization: per-window standardization whose
//! stored state exactly inverts on model outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TidesError};

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RevinState {
    pub mean: f64,
    /// Population std floored at `eps`.
    pub std: f64,
    pub eps: f64,
}

/// Standardize a window to zero mean and unit population std,
/// capturing the state needed to invert.
pub fn normalize(window: &[f64]) -> Result<(Vec<f64>, RevinState)> {
    normalize_eps(window, DEFAULT_EPS)
}

pub fn normalize_eps(window: &[f64], eps: f64) -> Result<(Vec<f64>, RevinState)> {
    if window.is_empty() {
        return Err(TidesError::validation("revin: empty window"));
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(eps);
    let out = window.iter().map(|v| (v - mean) / std).collect();
    Ok((out, RevinState { mean, std, eps }))
}

/// Invert: `v·std + mean` elementwise.
pub fn denormalize(values: &[f64], state: &RevinState) -> Vec<f64> {
    values.iter().map(|v| v * state.std + state.mean).collect()
}
