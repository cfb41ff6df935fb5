//! Dataset ingestion, windowing, chronological splits, and a seeded
//! synthetic city-traffic generator.
//!
//! CSV schemas: `regions.csv` has columns `region_id,lat,lon`;
//! `traffic.csv` has `region_id,timestamp,traffic_mb` with ISO-8601
//! timestamps at a uniform 15-minute interval. The synthetic generator
//! emits the same schema, so real and synthetic data share every
//! downstream path.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TidesError};
use crate::geo::RegionMeta;

/// One region's regularly-sampled downlink traffic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrafficSeries {
    pub region_id: String,
    pub start_time: NaiveDateTime,
    /// Sampling interval in minutes (15 for the reference datasets).
    pub interval_minutes: u32,
    pub values: Vec<f64>,
}

impl TrafficSeries {
    pub fn timestamp(&self, idx: usize) -> NaiveDateTime {
        self.start_time + chrono::Duration::minutes(self.interval_minutes as i64 * idx as i64)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        (0..self.values.len()).map(|i| self.timestamp(i))
    }
}

/// One supervised sample: `input` of length H, `target` of length P
/// immediately following it in time.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub region_id: String,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    /// Index of the first input value in the source series.
    pub start_index: usize,
    pub start_time: NaiveDateTime,
    pub interval_minutes: u32,
}

impl WindowSample {
    pub fn input_timestamps(&self) -> Vec<NaiveDateTime> {
        (0..self.input.len())
            .map(|i| {
                self.start_time
                    + chrono::Duration::minutes(
                        self.interval_minutes as i64 * (self.start_index + i) as i64,
                    )
            })
            .collect()
    }

    pub fn target_timestamp(&self, step: usize) -> NaiveDateTime {
        self.start_time
            + chrono::Duration::minutes(
                self.interval_minutes as i64 * (self.start_index + self.input.len() + step) as i64,
            )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplitWindows {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Load the `regions.csv` + `traffic.csv` pair.
///
/// Rows may arrive shuffled; each series is sorted by time and validated
/// for uniform spacing. Gaps are an error listing the missing timestamps.
pub fn load_csv(
    regions_path: impl AsRef<Path>,
    traffic_path: impl AsRef<Path>,
) -> Result<(Vec<TrafficSeries>, Vec<RegionMeta>)> {
    let mut regions = Vec::new();
    let mut rdr = csv::Reader::from_path(regions_path.as_ref())?;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2; // header is line 1
        if rec.len() < 3 {
            return Err(TidesError::validation(format!(
                "regions.csv line {line}: expected region_id,lat,lon"
            )));
        }
        let lat: f64 = rec[1]
            .parse()
            .map_err(|_| TidesError::validation(format!("regions.csv line {line}: bad lat")))?;
        let lon: f64 = rec[2]
            .parse()
            .map_err(|_| TidesError::validation(format!("regions.csv line {line}: bad lon")))?;
        regions.push(RegionMeta::new(rec[0].to_string(), lat, lon)?);
    }

    let mut per_region: BTreeMap<String, Vec<(NaiveDateTime, f64)>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(traffic_path.as_ref())?;
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() < 3 {
            return Err(TidesError::validation(format!(
                "traffic.csv line {line}: expected region_id,timestamp,traffic_mb"
            )));
        }
        let ts = NaiveDateTime::parse_from_str(&rec[1], "%Y-%m-%dT%H:%M:%S").map_err(|_| {
            TidesError::validation(format!("traffic.csv line {line}: bad timestamp '{}'", &rec[1]))
        })?;
        let v: f64 = rec[2].parse().map_err(|_| {
            TidesError::validation(format!("traffic.csv line {line}: bad traffic value"))
        })?;
        per_region.entry(rec[0].to_string()).or_default().push((ts, v));
        rows += 1;
    }
    if rows == 0 {
        return Err(TidesError::validation("traffic.csv contains no data rows"));
    }

    let mut series = Vec::new();
    for (region_id, mut points) in per_region {
        points.sort_by_key(|(t, _)| *t);
        let start = points[0].0;
        let interval = if points.len() > 1 {
            (points[1].0 - points[0].0).num_minutes()
        } else {
            15
        };
        if interval <= 0 {
            return Err(TidesError::validation(format!(
                "region {region_id}: duplicate timestamps at {start}"
            )));
        }
        let mut missing = Vec::new();
        for (i, (t, _)) in points.iter().enumerate() {
            let expected = start + chrono::Duration::minutes(interval * i as i64);
            if *t != expected {
                missing.push(expected);
                if missing.len() > 5 {
                    break;
                }
            }
        }
        if !missing.is_empty() {
            return Err(TidesError::validation(format!(
                "region {region_id}: non-uniform interval or gaps; first missing timestamps: {missing:?}"
            )));
        }
        series.push(TrafficSeries {
            region_id,
            start_time: start,
            interval_minutes: interval as u32,
            values: points.into_iter().map(|(_, v)| v).collect(),
        });
    }
    Ok((series, regions))
}

/// Write the `regions.csv` + `traffic.csv` pair.
pub fn write_csv(
    series: &[TrafficSeries],
    regions: &[RegionMeta],
    regions_path: impl AsRef<Path>,
    traffic_path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(regions_path.as_ref())?;
    w.write_record(["region_id", "lat", "lon"])?;
    for r in regions {
        w.write_record([&r.region_id, &format!("{:.6}", r.lat), &format!("{:.6}", r.lon)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(traffic_path.as_ref())?;
    w.write_record(["region_id", "timestamp", "traffic_mb"])?;
    for s in series {
        for (i, v) in s.values.iter().enumerate() {
            w.write_record([
                &s.region_id,
                &s.timestamp(i).format("%Y-%m-%dT%H:%M:%S").to_string(),
                &format!("{v:.6}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sliding stride-1 windows with a chronological train/val/test split.
///
/// A window belongs to a split iff its entire target range falls inside
/// that split's time range; windows straddling a boundary are dropped,
/// so no target ever leaks across splits.
pub fn make_windows(
    series: &TrafficSeries,
    history: usize,
    horizon: usize,
    split: (f64, f64, f64),
) -> Result<SplitWindows> {
    let t = series.values.len();
    if t < history + horizon {
        return Err(TidesError::validation(format!(
            "series {} too short: {} values, need at least {}",
            series.region_id,
            t,
            history + horizon
        )));
    }
    let (a, b, c) = split;
    if !(a > 0.0 && b >= 0.0 && c >= 0.0 && (a + b + c - 1.0).abs() < 1e-9) {
        return Err(TidesError::validation(format!("split fractions {split:?} must sum to 1")));
    }
    let b1 = (t as f64 * a).floor() as usize;
    let b2 = (t as f64 * (a + b)).floor() as usize;
    let mut out = SplitWindows::default();
    for start in 0..=(t - history - horizon) {
        let target_start = start + history;
        let target_end = target_start + horizon; // exclusive
        let sample = WindowSample {
            region_id: series.region_id.clone(),
            input: series.values[start..target_start].to_vec(),
            target: series.values[target_start..target_end].to_vec(),
            start_index: start,
            start_time: series.start_time,
            interval_minutes: series.interval_minutes,
        };
        if target_end <= b1 {
            out.train.push(sample);
        } else if target_start >= b1 && target_end <= b2 {
            out.val.push(sample);
        } else if target_start >= b2 {
            out.test.push(sample);
        }
        // else: straddles a boundary, dropped
    }
    Ok(out)
}

/// Traffic archetype mix for the synthetic city.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchetypeWeights {
    pub residential: f64,
    pub business: f64,
    pub mixed: f64,
}

impl Default for ArchetypeWeights {
    fn default() -> Self {
        ArchetypeWeights { residential: 0.4, business: 0.35, mixed: 0.25 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_regions: usize,
    pub days: usize,
    pub seed: u64,
    /// 0 = independent regions, 1 = strongly shared local dynamics.
    pub spatial_corr_strength: f64,
    pub noise_std: f64,
    pub archetypes: ArchetypeWeights,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_regions: 40,
            days: 28,
            seed: 7,
            spatial_corr_strength: 0.7,
            noise_std: 0.3,
            archetypes: ArchetypeWeights::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days < 7 {
            return Err(TidesError::validation("synthetic config requires days >= 7"));
        }
        if self.n_regions < 2 {
            return Err(TidesError::validation("synthetic config requires n_regions >= 2"));
        }
        if !(0.0..=1.0).contains(&self.spatial_corr_strength) {
            return Err(TidesError::validation("spatial_corr_strength must be in [0, 1]"));
        }
        Ok(())
    }
}

const SAMPLES_PER_DAY: usize = 96;
const N_LATENT_ANCHORS: usize = 4;
const LATENT_LENGTH_SCALE_KM: f64 = 4.0;
const LATENT_AMPLITUDE: f64 = 1.3;

#[derive(Clone, Copy)]
enum Archetype {
    Residential,
    Business,
    Mixed,
}

fn diurnal(arch: Archetype, hour: f64, weekend: bool) -> f64 {
    let bump = |center: f64, width: f64| {
        // wrap-around distance on the 24 h circle
        let d = (hour - center).rem_euclid(24.0);
        let d = d.min(24.0 - d);
        (-0.5 * (d / width) * (d / width)).exp()
    };
    match arch {
        Archetype::Residential => {
            let base = 0.5 * bump(8.0, 1.5) + 1.2 * bump(20.0, 2.5) + 0.3 * bump(13.0, 3.0);
            if weekend {
                base * 1.15
            } else {
                base
            }
        }
        Archetype::Business => {
            let base = 1.1 * bump(9.5, 1.8) + 1.0 * bump(14.0, 2.5) + 0.35 * bump(18.5, 1.5);
            if weekend {
                base * 0.55
            } else {
                base
            }
        }
        Archetype::Mixed => {
            let base = 0.8 * bump(9.0, 2.0) + 0.8 * bump(19.0, 2.5) + 0.4 * bump(13.0, 3.0);
            if weekend {
                base * 0.9
            } else {
                base
            }
        }
    }
}

/// Seeded synthetic city: diurnal/weekly cycles per archetype, a
/// spatially correlated latent component mixed by distance, and
/// Gaussian noise, clipped at zero.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vec<TrafficSeries>, Vec<RegionMeta>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = cfg.days * SAMPLES_PER_DAY;
    // city-like bounding box (~22 km across at this latitude)
    let (lat0, lon0) = (36.60, 116.90);
    let (lat_span, lon_span) = (0.20, 0.25);

    let mut regions = Vec::with_capacity(cfg.n_regions);
    let mut archetypes = Vec::with_capacity(cfg.n_regions);
    let wsum = cfg.archetypes.residential + cfg.archetypes.business + cfg.archetypes.mixed;
    for i in 0..cfg.n_regions {
        let lat = lat0 + rng.gen::<f64>() * lat_span;
        let lon = lon0 + rng.gen::<f64>() * lon_span;
        regions.push(RegionMeta::new(format!("R{i:03}"), lat, lon)?);
        let u: f64 = rng.gen::<f64>() * wsum;
        let arch = if u < cfg.archetypes.residential {
            Archetype::Residential
        } else if u < cfg.archetypes.residential + cfg.archetypes.business {
            Archetype::Business
        } else {
            Archetype::Mixed
        };
        archetypes.push(arch);
    }

    // latent anchors with AR(1) dynamics; regions mix them by proximity
    let anchors: Vec<RegionMeta> = (0..N_LATENT_ANCHORS)
        .map(|a| {
            RegionMeta::new(
                format!("anchor{a}"),
                lat0 + rng.gen::<f64>() * lat_span,
                lon0 + rng.gen::<f64>() * lon_span,
            )
            .expect("anchor coordinates in range")
        })
        .collect();
    let ar: f64 = 0.97;
    let innov = (1.0 - ar * ar).sqrt();
    let mut latent = vec![vec![0.0; steps]; N_LATENT_ANCHORS];
    for l in latent.iter_mut() {
        let mut z = gaussian(&mut rng);
        for v in l.iter_mut() {
            *v = z;
            z = ar * z + innov * gaussian(&mut rng);
        }
    }
    let mix: Vec<Vec<f64>> = regions
        .iter()
        .map(|r| {
            let mut w: Vec<f64> = anchors
                .iter()
                .map(|a| {
                    let d = crate::geo::haversine_km(r, a, crate::geo::EARTH_RADIUS_KM)
                        .expect("valid synthetic coordinates");
                    (-d / LATENT_LENGTH_SCALE_KM).exp()
                })
                .collect();
            let s: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= s;
            }
            w
        })
        .collect();

    let start_time = NaiveDateTime::parse_from_str("2024-07-01T00:00:00", "%Y-%m-%dT%H:%M:%S")
        .expect("fixed start timestamp parses");
    let mut series = Vec::with_capacity(cfg.n_regions);
    for (i, region) in regions.iter().enumerate() {
        let base = 1.5 + rng.gen::<f64>();
        let amp = 2.5 + 0.8 * rng.gen::<f64>();
        let mut values = Vec::with_capacity(steps);
        for t in 0..steps {
            let hour = (t % SAMPLES_PER_DAY) as f64 * 24.0 / SAMPLES_PER_DAY as f64;
            let day = t / SAMPLES_PER_DAY;
            let weekend = day % 7 >= 5;
            let shared: f64 = mix[i].iter().zip(&latent).map(|(w, l)| w * l[t]).sum();
            let v = base
                + amp * diurnal(archetypes[i], hour, weekend)
                + cfg.spatial_corr_strength * LATENT_AMPLITUDE * shared
                + cfg.noise_std * gaussian(&mut rng);
            values.push(v.max(0.0));
        }
        series.push(TrafficSeries {
            region_id: region.region_id.clone(),
            start_time,
            interval_minutes: 24 * 60 / SAMPLES_PER_DAY as u32,
            values,
        });
    }
    Ok((series, regions))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_series(n: usize) -> TrafficSeries {
        TrafficSeries {
            region_id: "r0".into(),
            start_time: NaiveDateTime::parse_from_str("2024-07-01T00:00:00", "%Y-%m-%dT%H:%M:%S")
                .unwrap(),
            interval_minutes: 15,
            values: (0..n).map(|i| i as f64).collect(),
        }
    }

    #[test]
    fn window_count_boundaries() {
        // length H+P -> exactly 1 window, all in train with split (1,0,0)
        let s = short_series(10);
        let w = make_windows(&s, 8, 2, (1.0, 0.0, 0.0)).unwrap();
        assert_eq!(w.train.len() + w.val.len() + w.test.len(), 1);
        let s = short_series(11);
        let w = make_windows(&s, 8, 2, (1.0, 0.0, 0.0)).unwrap();
        assert_eq!(w.train.len(), 2);
    }

    #[test]
    fn window_count_formula() {
        let s = short_series(200);
        let w = make_windows(&s, 96, 4, (1.0, 0.0, 0.0)).unwrap();
        assert_eq!(w.train.len(), 200 - 96 - 4 + 1);
    }

    #[test]
    fn too_short_series_errors() {
        let s = short_series(50);
        assert!(make_windows(&s, 96, 4, (0.7, 0.1, 0.2)).is_err());
    }

    #[test]
    fn chronological_split_no_leakage() {
        let s = short_series(500);
        let w = make_windows(&s, 96, 4, (0.7, 0.1, 0.2)).unwrap();
        assert!(!w.train.is_empty() && !w.val.is_empty() && !w.test.is_empty());
        let max_train_target = w
            .train
            .iter()
            .map(|s| s.start_index + s.input.len() + s.target.len())
            .max()
            .unwrap();
        let min_val_target_start = w
            .val
            .iter()
            .map(|s| s.start_index + s.input.len())
            .min()
            .unwrap();
        assert!(max_train_target <= min_val_target_start);
        let max_val_target = w
            .val
            .iter()
            .map(|s| s.start_index + s.input.len() + s.target.len())
            .max()
            .unwrap();
        let min_test_target_start = w
            .test
            .iter()
            .map(|s| s.start_index + s.input.len())
            .min()
            .unwrap();
        assert!(max_val_target <= min_test_target_start);
    }

    #[test]
    fn synth_deterministic() {
        let cfg = SynthConfig { n_regions: 5, days: 7, ..Default::default() };
        let (s1, r1) = generate_synthetic(&cfg).unwrap();
        let (s2, r2) = generate_synthetic(&cfg).unwrap();
        assert_eq!(r1.len(), r2.len());
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.values, b.values);
        }
        for (a, b) in r1.iter().zip(&r2) {
            assert_eq!(a.lat, b.lat);
            assert_eq!(a.lon, b.lon);
        }
    }

    #[test]
    fn synth_nonnegative_and_periodic() {
        let cfg = SynthConfig {
            n_regions: 4,
            days: 14,
            noise_std: 0.2,
            spatial_corr_strength: 0.3,
            ..Default::default()
        };
        let (series, _) = generate_synthetic(&cfg).unwrap();
        for s in &series {
            assert!(s.values.iter().all(|&v| v >= 0.0));
            // autocorrelation at one-day lag
            let v = &s.values;
            let n = v.len() - 96;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                num += (v[i] - mean) * (v[i + 96] - mean);
            }
            for x in v {
                den += (x - mean) * (x - mean);
            }
            let ac = num / den * (v.len() as f64 / n as f64);
            assert!(ac > 0.5, "lag-96 autocorrelation {ac} too low for {}", s.region_id);
        }
    }

    #[test]
    fn synth_days_validation() {
        let cfg = SynthConfig { days: 3, ..Default::default() };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn csv_roundtrip_identity() {
        let cfg = SynthConfig { n_regions: 3, days: 7, ..Default::default() };
        let (series, regions) = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let rp = dir.path().join("regions.csv");
        let tp = dir.path().join("traffic.csv");
        write_csv(&series, &regions, &rp, &tp).unwrap();
        let (loaded, lregions) = load_csv(&rp, &tp).unwrap();
        assert_eq!(loaded.len(), series.len());
        assert_eq!(lregions.len(), regions.len());
        for (a, b) in series.iter().zip(&loaded) {
            assert_eq!(a.region_id, b.region_id);
            assert_eq!(a.values.len(), b.values.len());
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-5); // written at 6 decimals
            }
        }
    }

    #[test]
    fn empty_traffic_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let rp = dir.path().join("regions.csv");
        let tp = dir.path().join("traffic.csv");
        std::fs::write(&rp, "region_id,lat,lon\nr0,36.65,117.0\n").unwrap();
        std::fs::write(&tp, "region_id,timestamp,traffic_mb\n").unwrap();
        assert!(load_csv(&rp, &tp).is_err());
    }

    #[test]
    fn shuffled_rows_load_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let rp = dir.path().join("regions.csv");
        let tp = dir.path().join("traffic.csv");
        std::fs::write(&rp, "region_id,lat,lon\nr0,36.65,117.0\n").unwrap();
        std::fs::write(
            &tp,
            "region_id,timestamp,traffic_mb\n\
             r0,2024-07-01T00:30:00,3.0\n\
             r0,2024-07-01T00:00:00,1.0\n\
             r0,2024-07-01T00:15:00,2.0\n",
        )
        .unwrap();
        let (series, _) = load_csv(&rp, &tp).unwrap();
        assert_eq!(series[0].values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn gap_in_series_errors() {
        let dir = tempfile::tempdir().unwrap();
        let rp = dir.path().join("regions.csv");
        let tp = dir.path().join("traffic.csv");
        std::fs::write(&rp, "region_id,lat,lon\nr0,36.65,117.0\n").unwrap();
        std::fs::write(
            &tp,
            "region_id,timestamp,traffic_mb\n\
             r0,2024-07-01T00:00:00,1.0\n\
             r0,2024-07-01T00:15:00,2.0\n\
             r0,2024-07-01T01:00:00,3.0\n",
        )
        .unwrap();
        let err = load_csv(&rp, &tp).unwrap_err().to_string();
        assert!(err.contains("00:30"), "{err}");
    }
}
