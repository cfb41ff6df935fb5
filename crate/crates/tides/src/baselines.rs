//! Reference forecasters: a DLinear-style linear decomposition model and
//! the seasonal-naive repeat-last-period rule.
//!
//! DLinear splits each window into a moving-average trend and the residual
//! remainder, maps each through its own `H -> P` linear layer, and sums the
//! two forecasts. The linear layers are [`Param`]s so the shared training
//! loop can fit them with the same optimizer and loss as the main model.

use rand_chacha::ChaCha8Rng;

use crate::attention::Param;
use crate::error::{Result, TidesError};
use crate::tensor::{Tape, Tensor};

/// Moving-average window used by the trend extractor.
pub const DEFAULT_KERNEL: usize = 25;

/// Split `window` into (trend, remainder) via an edge-replicated centered
/// moving average. The two parts sum back to the window exactly.
pub fn decompose(window: &[f64], kernel: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(TidesError::validation("decompose: kernel must be odd and > 0"));
    }
    if window.len() < kernel {
        return Err(TidesError::validation(format!(
            "decompose: window length {} shorter than kernel {kernel}",
            window.len()
        )));
    }
    let h = window.len();
    let half = kernel as i64 / 2;
    let mut trend = Vec::with_capacity(h);
    for i in 0..h as i64 {
        let mut acc = 0.0;
        for o in -half..=half {
            let idx = (i + o).clamp(0, h as i64 - 1) as usize;
            acc += window[idx];
        }
        trend.push(acc / kernel as f64);
    }
    let remainder = window.iter().zip(&trend).map(|(v, t)| v - t).collect();
    Ok((trend, remainder))
}

/// Parameters of the DLinear baseline: one `H x P` map per component.
#[derive(Debug, Clone)]
pub struct DlinearParams {
    pub kernel: usize,
    pub history: usize,
    pub horizon: usize,
    pub w_trend: Param,
    pub w_seasonal: Param,
}

impl DlinearParams {
    pub fn init(history: usize, horizon: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            kernel,
            history,
            horizon,
            w_trend: Param::xavier("dlinear.w_trend", history, horizon, false, rng),
            w_seasonal: Param::xavier("dlinear.w_seasonal", history, horizon, false, rng),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w_trend, &self.w_seasonal]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_trend, &mut self.w_seasonal]
    }

    /// Differentiable forward pass for the training loop: returns the
    /// `1 x P` forecast and the bound weight tensors (in `params` order).
    pub fn forward(&self, tape: &Tape, window: &[f64]) -> Result<(Tensor, Vec<Tensor>)> {
        if window.len() != self.history {
            return Err(TidesError::validation(format!(
                "dlinear: window length {} != configured history {}",
                window.len(),
                self.history
            )));
        }
        let (trend, remainder) = decompose(window, self.kernel)?;
        let wt = self.w_trend.bind(tape);
        let ws = self.w_seasonal.bind(tape);
        let t_row = tape.constant(trend, &[1, self.history]);
        let s_row = tape.constant(remainder, &[1, self.history]);
        let yhat = t_row.matmul(&wt)?.add(&s_row.matmul(&ws)?)?;
        Ok((yhat, vec![wt, ws]))
    }

    /// Plain forecast without tape bookkeeping.
    pub fn forecast(&self, window: &[f64]) -> Result<Vec<f64>> {
        if window.len() != self.history {
            return Err(TidesError::validation(format!(
                "dlinear: window length {} != configured history {}",
                window.len(),
                self.history
            )));
        }
        let (trend, remainder) = decompose(window, self.kernel)?;
        let p = self.horizon;
        let mut out = vec![0.0; p];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..self.history {
                *o += trend[j] * self.w_trend.data[j * p + i]
                    + remainder[j] * self.w_seasonal.data[j * p + i];
            }
        }
        Ok(out)
    }
}

/// Repeat the same-phase values from one period back:
/// `yhat[i] = window[H - period + i]`.
pub fn seasonal_naive(window: &[f64], period: usize, horizon: usize) -> Result<Vec<f64>> {
    if period == 0 || period > window.len() {
        return Err(TidesError::validation(format!(
            "seasonal_naive: period {period} invalid for window length {}",
            window.len()
        )));
    }
    if horizon > period {
        return Err(TidesError::validation(format!(
            "seasonal_naive: horizon {horizon} exceeds period {period}"
        )));
    }
    let start = window.len() - period;
    Ok(window[start..start + horizon].to_vec())
}
