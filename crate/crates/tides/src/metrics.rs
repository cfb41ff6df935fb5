//! Forecast quality metrics and the evaluation report.
//!
//! MAE, RMSE, floored MAPE, and Pearson correlation, plus [`EvalReport`],
//! which keeps the raw (truth, prediction) pairs so every aggregate can be
//! recomputed and audited. Reports serialize to JSON and to plain CSV
//! tables for external plotting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TidesError};

/// Default MAPE denominator floor, in original traffic units.
pub const MAPE_FLOOR: f64 = 1e-2;

/// Histogram range (in standard deviations of the truth) and bin count.
const HIST_RANGE: f64 = 3.0;
const HIST_BINS: usize = 21;

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(TidesError::validation(format!(
            "metric inputs must be equal nonzero lengths, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let ms = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(ms.sqrt())
}

/// Mean absolute percentage error with a denominator floor.
///
/// Returns the percentage and an `unreliable` flag that is set when every
/// truth value sits below the floor, i.e. the denominators were all clamped.
pub fn mape_percent(y: &[f64], yhat: &[f64], floor: f64) -> Result<(f64, bool)> {
    check_pair(y, yhat)?;
    if floor <= 0.0 {
        return Err(TidesError::validation("mape floor must be > 0"));
    }
    let value = 100.0
        * y.iter()
            .zip(yhat)
            .map(|(a, b)| (a - b).abs() / a.abs().max(floor))
            .sum::<f64>()
        / y.len() as f64;
    let unreliable = y.iter().all(|a| a.abs() < floor);
    Ok((value, unreliable))
}

/// Pearson product-moment correlation.
pub fn pearson_r(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = yhat.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vp = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        cov += (a - my) * (b - mp);
        vy += (a - my) * (a - my);
        vp += (b - mp) * (b - mp);
    }
    if vy == 0.0 || vp == 0.0 {
        return Err(TidesError::Numeric(
            "pearson_r undefined: an input has zero variance".into(),
        ));
    }
    Ok((cov / (vy * vp).sqrt()).clamp(-1.0, 1.0))
}

/// One bundle of metrics over a set of (truth, prediction) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub rmse: f64,
    pub mape_percent: f64,
    pub mape_unreliable: bool,
    /// `None` when either series has zero variance.
    pub pearson_r: Option<f64>,
}

impl MetricSet {
    pub fn compute(y: &[f64], yhat: &[f64], floor: f64) -> Result<Self> {
        let (mape, unreliable) = mape_percent(y, yhat, floor)?;
        Ok(Self {
            mae: mae(y, yhat)?,
            rmse: rmse(y, yhat)?,
            mape_percent: mape,
            mape_unreliable: unreliable,
            pearson_r: pearson_r(y, yhat).ok(),
        })
    }
}

/// Histogram of prediction errors normalized by the truth's standard
/// deviation; fixed bins over `[-3, 3]` sigma with clamped overflow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl ErrorHistogram {
    fn from_errors(normalized: &[f64]) -> Self {
        let width = 2.0 * HIST_RANGE / HIST_BINS as f64;
        let bin_edges: Vec<f64> =
            (0..=HIST_BINS).map(|i| -HIST_RANGE + i as f64 * width).collect();
        let mut counts = vec![0u64; HIST_BINS];
        for &e in normalized {
            let idx = (((e + HIST_RANGE) / width).floor() as i64)
                .clamp(0, HIST_BINS as i64 - 1) as usize;
            counts[idx] += 1;
        }
        Self { bin_edges, counts }
    }
}

/// Forecast pairs keyed by region id; each entry is one `(truth, prediction)`
/// horizon of equal length.
pub type RegionPairs = BTreeMap<String, Vec<(Vec<f64>, Vec<f64>)>>;

/// Full evaluation report: raw pairs, per-region and aggregate metrics,
/// a per-horizon-step MAE curve, and a normalized error histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_region: BTreeMap<String, MetricSet>,
    pub aggregate: MetricSet,
    pub per_timestep_mae: Vec<f64>,
    pub histogram: ErrorHistogram,
    pub mape_floor: f64,
    pub horizon: usize,
    /// Raw pairs backing every aggregate, keyed by region.
    pub pairs: RegionPairs,
}

impl EvalReport {
    /// Build a report from per-region forecast pairs. Every pair is one
    /// `(truth, prediction)` horizon of length `horizon`.
    pub fn from_pairs(
        pairs: RegionPairs,
        horizon: usize,
        mape_floor: f64,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(TidesError::validation("EvalReport: no forecast pairs"));
        }
        let mut all_y = Vec::new();
        let mut all_p = Vec::new();
        let mut per_region = BTreeMap::new();
        let mut step_abs = vec![0.0; horizon];
        let mut step_count = vec![0u64; horizon];
        for (region, list) in &pairs {
            let mut ry = Vec::new();
            let mut rp = Vec::new();
            for (y, p) in list {
                if y.len() != horizon || p.len() != horizon {
                    return Err(TidesError::validation(format!(
                        "EvalReport: region {region} pair has lengths {}/{} but horizon {horizon}",
                        y.len(),
                        p.len()
                    )));
                }
                for i in 0..horizon {
                    step_abs[i] += (y[i] - p[i]).abs();
                    step_count[i] += 1;
                }
                ry.extend_from_slice(y);
                rp.extend_from_slice(p);
            }
            per_region.insert(region.clone(), MetricSet::compute(&ry, &rp, mape_floor)?);
            all_y.extend(ry);
            all_p.extend(rp);
        }
        let aggregate = MetricSet::compute(&all_y, &all_p, mape_floor)?;
        let per_timestep_mae: Vec<f64> = step_abs
            .iter()
            .zip(&step_count)
            .map(|(s, &c)| s / c.max(1) as f64)
            .collect();
        let n = all_y.len() as f64;
        let mean = all_y.iter().sum::<f64>() / n;
        let std = (all_y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
            .sqrt()
            .max(1e-12);
        let normalized: Vec<f64> =
            all_y.iter().zip(&all_p).map(|(y, p)| (p - y) / std).collect();
        Ok(Self {
            per_region,
            aggregate,
            per_timestep_mae,
            histogram: ErrorHistogram::from_errors(&normalized),
            mape_floor,
            horizon,
            pairs,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Write `per_region.csv`, `per_timestep_mae.csv`, and `histogram.csv`
    /// into `dir`.
    pub fn write_csv_tables(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("per_region.csv"))?;
        w.write_record(["region_id", "mae", "rmse", "mape_percent", "mape_unreliable", "pearson_r"])?;
        for (region, m) in &self.per_region {
            w.write_record([
                region.as_str(),
                &format!("{:.6}", m.mae),
                &format!("{:.6}", m.rmse),
                &format!("{:.6}", m.mape_percent),
                &m.mape_unreliable.to_string(),
                &m.pearson_r.map(|r| format!("{r:.6}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("per_timestep_mae.csv"))?;
        w.write_record(["step", "mae"])?;
        for (i, m) in self.per_timestep_mae.iter().enumerate() {
            w.write_record([&(i + 1).to_string(), &format!("{m:.6}")])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("histogram.csv"))?;
        w.write_record(["bin_low", "bin_high", "count"])?;
        for i in 0..self.histogram.counts.len() {
            w.write_record([
                &format!("{:.4}", self.histogram.bin_edges[i]),
                &format!("{:.4}", self.histogram.bin_edges[i + 1]),
                &self.histogram.counts[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
