//! Prompt engineering: statistical descriptor families computed from a
//! normalized input window, a deterministic text rendering, and a tiny
//! closed-vocabulary tokenizer for the backbone.
//!
//! Numeric values are rendered at two decimals, clamped to
//! `[-99.99, 99.99]`, and tokenized as an integer-part token plus a
//! fraction token so the vocabulary stays closed and encode∘decode is
//! the identity on rendered prompts.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TidesError};
use crate::geo::TodWindows;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MAX_LEN: usize = 64;
pub const MAX_VOCAB: usize = 512;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Peak-to-average-ratio formula choice. `Paper` is the literal
/// `max/(max+eps)` form; `MaxOverMean` is the `max/(mean+eps)` variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ParMode {
    #[default]
    Paper,
    MaxOverMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendDirection {
    Upward,
    Downward,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatFamily {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendFamily {
    pub trend_sum: f64,
    pub direction: TrendDirection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TodFamily {
    pub am: f64,
    pub pm: f64,
    pub night: f64,
    pub non_rush: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DsmFamily {
    pub par: f64,
    pub rhi: f64,
    pub mer: f64,
    pub burst: f64,
    pub vc: f64,
}

/// The structured STAT/TND/TOD/DSM bundle plus its rendered form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptDescriptor {
    pub stat: StatFamily,
    pub tnd: TrendFamily,
    pub tod: TodFamily,
    pub dsm: DsmFamily,
    pub epsilon: f64,
    pub rendered_text: String,
    pub token_ids: Vec<usize>,
}

fn pop_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Compute all four descriptor families. `rendered_text` and
/// `token_ids` stay empty until [`render_prompt`] / [`tokenize`] run.
pub fn compute_descriptor(
    window: &[f64],
    timestamps: &[NaiveDateTime],
    eps: f64,
    tod_windows: &TodWindows,
    par_mode: ParMode,
) -> Result<PromptDescriptor> {
    let h = window.len();
    if h < 2 {
        return Err(TidesError::validation("descriptor window needs at least 2 samples"));
    }
    if timestamps.len() != h {
        return Err(TidesError::validation("timestamps not aligned with window"));
    }
    if eps <= 0.0 {
        return Err(TidesError::validation("descriptor eps must be > 0"));
    }

    let mut sorted = window.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = sorted[0];
    let max = sorted[h - 1];
    // lower-middle element for even lengths
    let median = sorted[(h - 1) / 2];
    let mean = window.iter().sum::<f64>() / h as f64;
    let std = pop_std(window);

    // telescoping sum of first differences
    let trend_sum = window[h - 1] - window[0];
    let direction =
        if trend_sum >= 0.0 { TrendDirection::Upward } else { TrendDirection::Downward };

    let tod_mean = |pred: &dyn Fn(u32) -> bool| -> f64 {
        let vals: Vec<f64> = window
            .iter()
            .zip(timestamps)
            .filter(|(_, t)| pred(t.hour()))
            .map(|(v, _)| *v)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let am = tod_mean(&|hr| tod_windows.in_am(hr));
    let pm = tod_mean(&|hr| tod_windows.in_pm(hr));
    let night = tod_mean(&|hr| tod_windows.in_night(hr));
    let non_rush = tod_mean(&|hr| tod_windows.in_non_rush(hr));

    let par = match par_mode {
        ParMode::Paper => max / (max + eps),
        ParMode::MaxOverMean => max / (mean + eps),
    };
    let first_half = h / 2;
    let dsm = DsmFamily {
        par,
        rhi: (am + pm) / (2.0 * non_rush + eps),
        mer: am / (pm + eps),
        burst: std / (mean + eps),
        vc: pop_std(&window[first_half..]) / (pop_std(&window[..first_half]) + eps),
    };

    Ok(PromptDescriptor {
        stat: StatFamily { min, max, median, mean, std },
        tnd: TrendFamily { trend_sum, direction },
        tod: TodFamily { am, pm, night, non_rush },
        dsm,
        epsilon: eps,
        rendered_text: String::new(),
        token_ids: Vec::new(),
    })
}

fn fmt(v: f64) -> String {
    format!("{:.2}", v.clamp(-99.99, 99.99))
}

/// Deterministic fixed-template rendering; byte-identical across runs
/// for identical inputs.
pub fn render_prompt(d: &PromptDescriptor, region_id: &str, horizon: usize) -> String {
    let direction = match d.tnd.direction {
        TrendDirection::Upward => "upward",
        TrendDirection::Downward => "downward",
    };
    format!(
        "traffic history for region {} : stat min {} max {} median {} mean {} std {} \
         tnd trend {} direction {} \
         tod am {} pm {} night {} non_rush {} \
         dsm par {} rhi {} mer {} burst {} vc {} \
         task predict the next {} steps",
        region_id,
        fmt(d.stat.min),
        fmt(d.stat.max),
        fmt(d.stat.median),
        fmt(d.stat.mean),
        fmt(d.stat.std),
        fmt(d.tnd.trend_sum),
        direction,
        fmt(d.tod.am),
        fmt(d.tod.pm),
        fmt(d.tod.night),
        fmt(d.tod.non_rush),
        fmt(d.dsm.par),
        fmt(d.dsm.rhi),
        fmt(d.dsm.mer),
        fmt(d.dsm.burst),
        fmt(d.dsm.vc),
        horizon
    )
}

/// Closed word-level vocabulary with numeric bucketing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTokenizer {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

const TEMPLATE_WORDS: &[&str] = &[
    "traffic", "history", "for", "region", ":", "stat", "min", "max", "median", "mean", "std",
    "tnd", "trend", "direction", "upward", "downward", "tod", "am", "pm", "night", "non_rush",
    "dsm", "par", "rhi", "mer", "burst", "vc", "task", "predict", "the", "next", "steps",
];

fn is_number_word(w: &str) -> Option<(String, String)> {
    let (int_part, frac) = w.split_once('.')?;
    if frac.len() != 2 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = int_part.strip_prefix('-').unwrap_or(int_part);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((int_part.to_string(), format!(".{frac}")))
}

impl PromptTokenizer {
    /// Base vocabulary: specials, template words, integer-part tokens
    /// -99..99, and fraction tokens .00..done.99.
    pub fn new() -> PromptTokenizer {
        Self::with_regions(&[] as &[&str])
    }

    /// Base vocabulary plus region-id tokens, as long as the total stays
    /// within the 512-token cap; surplus ids fall back to `<unk>`.
    pub fn with_regions(region_ids: &[impl AsRef<str>]) -> PromptTokenizer {
        let mut tokens: Vec<String> = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(TEMPLATE_WORDS.iter().map(|w| w.to_string()));
        for i in -99i32..=99 {
            tokens.push(i.to_string());
        }
        tokens.push("-0".to_string());
        for f in 0..100 {
            tokens.push(format!(".{f:02}"));
        }
        for id in region_ids {
            if tokens.len() >= MAX_VOCAB {
                break;
            }
            let id = id.as_ref().to_string();
            if !tokens.contains(&id) {
                tokens.push(id);
            }
        }
        tokens.sort();
        tokens.dedup();
        let token_to_id = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        PromptTokenizer { token_to_id, id_to_token: tokens }
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn pad_id(&self) -> usize {
        self.token_to_id[PAD]
    }

    pub fn unk_id(&self) -> usize {
        self.token_to_id[UNK]
    }

    fn lookup(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or_else(|| self.unk_id())
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = &self.id_to_token[id.min(self.id_to_token.len() - 1)];
            if tok == PAD {
                continue;
            }
            if tok.starts_with('.') {
                out.push_str(tok); // fraction joins its integer part
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out
    }

    /// Serialize one token per line; id = line number.
    pub fn save_vocab(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.id_to_token.join("\n"))?;
        Ok(())
    }

    pub fn load_vocab(path: impl AsRef<Path>) -> Result<PromptTokenizer> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if tokens.is_empty() {
            return Err(TidesError::validation("empty vocabulary file"));
        }
        let token_to_id = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Ok(PromptTokenizer { token_to_id, id_to_token: tokens })
    }
}

impl Default for PromptTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

/// Whitespace tokenization with numeral splitting, truncated or padded
/// to `max_len`.
pub fn tokenize(text: &str, tokenizer: &PromptTokenizer, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(TidesError::validation("tokenize: max_len must be >= 1"));
    }
    let mut ids = Vec::new();
    'words: for word in text.split_whitespace() {
        if let Some((int_part, frac)) = is_number_word(word) {
            ids.push(tokenizer.lookup(&int_part));
            if ids.len() >= max_len {
                break 'words;
            }
            ids.push(tokenizer.lookup(&frac));
        } else {
            ids.push(tokenizer.lookup(word));
        }
        if ids.len() >= max_len {
            break;
        }
    }
    ids.truncate(max_len);
    while ids.len() < max_len {
        ids.push(tokenizer.pad_id());
    }
    Ok(ids)
}

impl PromptDescriptor {
    /// Fill `rendered_text` and `token_ids` in place.
    pub fn finalize(
        &mut self,
        region_id: &str,
        horizon: usize,
        tokenizer: &PromptTokenizer,
        max_len: usize,
    ) -> Result<()> {
        self.rendered_text = render_prompt(self, region_id, horizon);
        self.token_ids = tokenize(&self.rendered_text, tokenizer, max_len)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(n: usize) -> Vec<NaiveDateTime> {
        let start =
            NaiveDateTime::parse_from_str("2024-07-01T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap();
        (0..n).map(|i| start + chrono::Duration::minutes(15 * i as i64)).collect()
    }

    fn descr(window: &[f64]) -> PromptDescriptor {
        compute_descriptor(window, &ts(window.len()), DEFAULT_EPS, &TodWindows::default(), ParMode::Paper)
            .unwrap()
    }

    #[test]
    fn trend_telescoping() {
        let d = descr(&[1.0, 3.0, 2.0]);
        assert_eq!(d.tnd.trend_sum, 1.0);
        assert_eq!(d.tnd.direction, TrendDirection::Upward);
    }

    #[test]
    fn constant_window_dsm() {
        // full day so every time-of-day window is nonempty
        let c = 2.5;
        let d = descr(&[c; 96]);
        assert_eq!(d.dsm.burst, 0.0);
        assert_eq!(d.dsm.vc, 0.0);
        assert!((d.dsm.mer - c / (c + DEFAULT_EPS)).abs() < 1e-12);
        assert!(d.stat.std == 0.0);
    }

    #[test]
    fn alternating_window_burst() {
        // [0,2,0,2,...]: mean 1, population std 1
        let w: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let d = descr(&w);
        assert!((d.stat.mean - 1.0).abs() < 1e-12);
        assert!((d.stat.std - 1.0).abs() < 1e-12);
        assert!((d.dsm.burst - 1.0 / (1.0 + DEFAULT_EPS)).abs() < 1e-12);
    }

    #[test]
    fn median_is_lower_middle_for_even_length() {
        let d = descr(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(d.stat.median, 2.0);
        let d = descr(&[5.0, 1.0, 3.0]);
        assert_eq!(d.stat.median, 3.0);
    }

    #[test]
    fn par_modes() {
        let w = [1.0, 2.0, 4.0];
        let ts = ts(3);
        let paper =
            compute_descriptor(&w, &ts, DEFAULT_EPS, &TodWindows::default(), ParMode::Paper).unwrap();
        assert!((paper.dsm.par - 4.0 / (4.0 + DEFAULT_EPS)).abs() < 1e-12);
        let alt = compute_descriptor(&w, &ts, DEFAULT_EPS, &TodWindows::default(), ParMode::MaxOverMean)
            .unwrap();
        let mean = 7.0 / 3.0;
        assert!((alt.dsm.par - 4.0 / (mean + DEFAULT_EPS)).abs() < 1e-12);
    }

    #[test]
    fn render_deterministic_and_formatted() {
        let d = descr(&[0.0, 0.0, 0.0]);
        let a = render_prompt(&d, "R001", 4);
        let b = render_prompt(&d, "R001", 4);
        assert_eq!(a, b);
        assert!(a.contains("mean 0.00"), "{a}");
        assert!(a.ends_with("predict the next 4 steps"));
    }

    #[test]
    fn tokenizer_vocab_bounds() {
        let t = PromptTokenizer::new();
        assert!(t.vocab_size() <= MAX_VOCAB, "vocab {}", t.vocab_size());
        // ids dense in [0, vocab)
        assert_eq!(t.decode(&[t.pad_id()]), "");
    }

    #[test]
    fn empty_text_is_all_padding() {
        let t = PromptTokenizer::new();
        let ids = tokenize("", &t, 8).unwrap();
        assert_eq!(ids, vec![t.pad_id(); 8]);
    }

    #[test]
    fn truncation_contract() {
        let t = PromptTokenizer::new();
        let long = vec!["mean"; 80].join(" ");
        let ids = tokenize(&long, &t, 64).unwrap();
        assert_eq!(ids.len(), 64);
        assert!(ids.iter().all(|&i| i != t.pad_id()));
    }

    #[test]
    fn roundtrip_rendered_prompt() {
        let t = PromptTokenizer::with_regions(&["R001"]);
        let d = descr(&[1.0, -0.5, 0.25, 2.0]);
        let text = render_prompt(&d, "R001", 4);
        let ids = tokenize(&text, &t, 128).unwrap();
        assert_eq!(t.decode(&ids), text);
    }

    #[test]
    fn unknown_region_maps_to_unk() {
        let t = PromptTokenizer::new();
        let ids = tokenize("zone_xyz", &t, 4).unwrap();
        assert_eq!(ids[0], t.unk_id());
    }

    #[test]
    fn vocab_file_roundtrip() {
        let t = PromptTokenizer::with_regions(&["R001", "R002"]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        t.save_vocab(&p).unwrap();
        let loaded = PromptTokenizer::load_vocab(&p).unwrap();
        assert_eq!(loaded.vocab_size(), t.vocab_size());
        let ids = tokenize("region R001 mean 0.50", &t, 16).unwrap();
        assert_eq!(tokenize("region R001 mean 0.50", &loaded, 16).unwrap(), ids);
    }

    proptest! {
        #[test]
        fn trend_equals_first_diff_sum(w in proptest::collection::vec(-100.0f64..100.0, 2..32)) {
            let d = descr(&w);
            let diff_sum: f64 = w.windows(2).map(|p| p[1] - p[0]).sum();
            prop_assert!((d.tnd.trend_sum - diff_sum).abs() < 1e-9);
        }

        #[test]
        fn dsm_finite_for_all_inputs(w in proptest::collection::vec(-1e3f64..1e3, 2..48)) {
            let d = descr(&w);
            prop_assert!(d.dsm.par.is_finite());
            prop_assert!(d.dsm.rhi.is_finite());
            prop_assert!(d.dsm.mer.is_finite());
            prop_assert!(d.dsm.burst.is_finite());
            prop_assert!(d.dsm.vc.is_finite());
            prop_assert!(d.stat.min <= d.stat.median && d.stat.median <= d.stat.max);
        }

        #[test]
        fn all_zero_window_finite(n in 2usize..32) {
            let w = vec![0.0; n];
            let d = descr(&w);
            prop_assert!(d.dsm.burst.is_finite() && d.dsm.rhi.is_finite());
        }
    }
}
