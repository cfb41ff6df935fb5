//! Phase-1 spatial-aware region clustering.
//!
//! Builds the 7-dimensional region descriptor (coordinates, traffic
//! level summaries, local Moran's I), the k-nearest-neighbor spatial
//! weight matrix with its symmetric normalized Laplacian and attention
//! mask, and the z-scored K-means partition of the city.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::Timelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrafficSeries;
use crate::error::{Result, TidesError};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Additive logit blocking non-adjacent region pairs in spatial attention.
pub const MASK_BLOCKED: f64 = -1e9;
/// Co-located regions: distances are floored at one meter before the
/// 1/d weighting so weights stay finite.
pub const MIN_DISTANCE_KM: f64 = 1e-3;

/// A spatial forecasting unit: one region with its coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionMeta {
    pub region_id: String,
    /// Latitude in degrees, [-90, 90].
    pub lat: f64,
    /// Longitude in degrees, [-180, 180].
    pub lon: f64,
}

impl RegionMeta {
    pub fn new(region_id: String, lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(TidesError::validation(format!("latitude {lat} out of range for {region_id}")));
        }
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            return Err(TidesError::validation(format!("longitude {lon} out of range for {region_id}")));
        }
        Ok(RegionMeta { region_id, lat, lon })
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &RegionMeta, b: &RegionMeta, radius_km: f64) -> Result<f64> {
    if radius_km <= 0.0 {
        return Err(TidesError::validation("radius_km must be positive"));
    }
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let s = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * radius_km * s.sqrt().min(1.0).asin())
}

/// k-NN adjacency with inverse-distance weights, plus the derived
/// degree matrix, symmetric normalized Laplacian, and attention mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialGraph {
    pub n: usize,
    pub k: usize,
    /// Row-major n×n; `a[i*n+j] = 1/d_ij` iff the pair is connected.
    pub adjacency: Vec<f64>,
    pub degree: Vec<f64>,
    pub laplacian_sym: Vec<f64>,
    /// Additive logits: 0 on the diagonal and at edges, -1e9 elsewhere.
    pub mask: Vec<f64>,
    pub region_ids: Vec<String>,
}

impl SpatialGraph {
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    /// Restrict the graph to a subset of its nodes, in the given order.
    /// Adjacency is re-derived from kept pairs; degree, Laplacian, and
    /// mask are recomputed.
    pub fn subgraph(&self, indices: &[usize]) -> Result<SpatialGraph> {
        let m = indices.len();
        let mut adjacency = vec![0.0; m * m];
        for (r, &i) in indices.iter().enumerate() {
            for (c, &j) in indices.iter().enumerate() {
                if i >= self.n || j >= self.n {
                    return Err(TidesError::validation("subgraph index out of range"));
                }
                adjacency[r * m + c] = self.a(i, j);
            }
        }
        let region_ids = indices.iter().map(|&i| self.region_ids[i].clone()).collect();
        Ok(finish_graph(adjacency, m, self.k, region_ids))
    }

    /// Mask variant that isolates every region (self-attention only).
    pub fn self_only_mask(&self) -> Vec<f64> {
        let mut mask = vec![MASK_BLOCKED; self.n * self.n];
        for i in 0..self.n {
            mask[i * self.n + i] = 0.0;
        }
        mask
    }
}

fn finish_graph(adjacency: Vec<f64>, n: usize, k: usize, region_ids: Vec<String>) -> SpatialGraph {
    let mut degree = vec![0.0; n];
    for i in 0..n {
        degree[i] = adjacency[i * n..(i + 1) * n].iter().sum();
    }
    let mut laplacian_sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = if degree[i] > 0.0 && degree[j] > 0.0 {
                adjacency[i * n + j] / (degree[i].sqrt() * degree[j].sqrt())
            } else {
                0.0
            };
            laplacian_sym[i * n + j] = if i == j { 1.0 - v } else { -v };
        }
    }
    let mut mask = vec![MASK_BLOCKED; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || adjacency[i * n + j] > 0.0 {
                mask[i * n + j] = 0.0;
            }
        }
    }
    SpatialGraph { n, k, adjacency, degree, laplacian_sym, mask, region_ids }
}

/// Per-row k nearest neighbors by Haversine distance, weight `1/d`,
/// symmetrized by elementwise max. Ties break on (distance, region_id).
pub fn build_spatial_graph(regions: &[RegionMeta], k: usize) -> Result<SpatialGraph> {
    let n = regions.len();
    if n < 2 {
        return Err(TidesError::validation("spatial graph needs at least 2 regions"));
    }
    if k == 0 || k >= n {
        return Err(TidesError::validation(format!("k = {k} must satisfy 1 <= k < n = {n}")));
    }
    let mut adjacency = vec![0.0; n * n];
    for i in 0..n {
        let mut cand: Vec<(f64, &str, usize)> = Vec::with_capacity(n - 1);
        for (j, other) in regions.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = haversine_km(&regions[i], other, EARTH_RADIUS_KM)?;
            cand.push((d, &other.region_id, j));
        }
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
        for &(d, _, j) in cand.iter().take(k) {
            adjacency[i * n + j] = 1.0 / d.max(MIN_DISTANCE_KM);
        }
    }
    // symmetrize: A = max(A, Aᵀ)
    for i in 0..n {
        for j in (i + 1)..n {
            let m = adjacency[i * n + j].max(adjacency[j * n + i]);
            adjacency[i * n + j] = m;
            adjacency[j * n + i] = m;
        }
    }
    let ids = regions.iter().map(|r| r.region_id.clone()).collect();
    Ok(finish_graph(adjacency, n, k, ids))
}

/// Local Moran's I per region: `I_i = z_i · Σ_j a_ij z_j` with
/// population-standardized values. All-equal inputs give all zeros.
pub fn local_morans_i(values: &[f64], graph: &SpatialGraph) -> Result<Vec<f64>> {
    if values.len() != graph.n {
        return Err(TidesError::validation(format!(
            "local_morans_i: {} values for a {}-node graph",
            values.len(),
            graph.n
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TidesError::validation("local_morans_i: non-finite input value"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let z: Vec<f64> = if std > 0.0 {
        values.iter().map(|v| (v - mean) / std).collect()
    } else {
        vec![0.0; n]
    };
    Ok((0..n)
        .map(|i| {
            let lag: f64 = (0..n).map(|j| graph.a(i, j) * z[j]).sum();
            z[i] * lag
        })
        .collect())
}

/// Time-of-day windows as half-open hour ranges. The paper never pins
/// these; defaults are AM 07-10, PM 17-20, NIGHT 00-06.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TodWindows {
    pub am: (u32, u32),
    pub pm: (u32, u32),
    pub night: (u32, u32),
}

impl Default for TodWindows {
    fn default() -> Self {
        TodWindows { am: (7, 10), pm: (17, 20), night: (0, 6) }
    }
}

impl TodWindows {
    fn contains(range: (u32, u32), hour: u32) -> bool {
        hour >= range.0 && hour < range.1
    }

    pub fn in_am(&self, hour: u32) -> bool {
        Self::contains(self.am, hour)
    }
    pub fn in_pm(&self, hour: u32) -> bool {
        Self::contains(self.pm, hour)
    }
    pub fn in_night(&self, hour: u32) -> bool {
        Self::contains(self.night, hour)
    }
    pub fn in_non_rush(&self, hour: u32) -> bool {
        !self.in_am(hour) && !self.in_pm(hour)
    }
}

/// The 7-dimensional clustering descriptor, in fixed order:
/// latitude, longitude, mean, AM, PM, NIGHT, Moran's I.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionFeatureVector {
    pub phi: f64,
    pub lambda: f64,
    pub mean_traffic: f64,
    pub am: f64,
    pub pm: f64,
    pub night: f64,
    pub moran_i: f64,
}

impl RegionFeatureVector {
    pub fn as_array(&self) -> [f64; 7] {
        [self.phi, self.lambda, self.mean_traffic, self.am, self.pm, self.night, self.moran_i]
    }
}

fn window_mean(series: &TrafficSeries, pred: impl Fn(u32) -> bool, warnings: &mut Vec<String>, name: &str) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, v) in series.values.iter().enumerate() {
        if pred(series.timestamp(i).hour()) {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        warnings.push(format!("region {}: empty {name} window, feature set to 0", series.region_id));
        0.0
    } else {
        sum / count as f64
    }
}

/// Extract one region's descriptor. `all_means` holds every region's
/// mean traffic in graph node order; Moran's I is computed over it.
pub fn extract_region_features(
    series: &TrafficSeries,
    region: &RegionMeta,
    region_index: usize,
    graph: &SpatialGraph,
    all_means: &[f64],
    windows: &TodWindows,
) -> Result<(RegionFeatureVector, Vec<String>)> {
    if region_index >= graph.n {
        return Err(TidesError::validation("region index outside the graph"));
    }
    if series.values.len() < 96 {
        return Err(TidesError::validation(format!(
            "region {}: need at least one full day of samples",
            series.region_id
        )));
    }
    let mut warnings = Vec::new();
    let mean = series.values.iter().sum::<f64>() / series.values.len() as f64;
    let am = window_mean(series, |h| windows.in_am(h), &mut warnings, "AM");
    let pm = window_mean(series, |h| windows.in_pm(h), &mut warnings, "PM");
    let night = window_mean(series, |h| windows.in_night(h), &mut warnings, "NIGHT");
    let moran = local_morans_i(all_means, graph)?[region_index];
    Ok((
        RegionFeatureVector {
            phi: region.lat,
            lambda: region.lon,
            mean_traffic: mean,
            am,
            pm,
            night,
            moran_i: moran,
        },
        warnings,
    ))
}

/// Descriptors for all regions at once. `series` and `regions` must be
/// in graph node order.
pub fn extract_all_features(
    series: &[TrafficSeries],
    regions: &[RegionMeta],
    graph: &SpatialGraph,
    windows: &TodWindows,
) -> Result<(Vec<RegionFeatureVector>, Vec<String>)> {
    if series.len() != graph.n || regions.len() != graph.n {
        return Err(TidesError::validation("series/regions/graph size mismatch"));
    }
    let all_means: Vec<f64> =
        series.iter().map(|s| s.values.iter().sum::<f64>() / s.values.len() as f64).collect();
    let morans = local_morans_i(&all_means, graph)?;
    let mut out = Vec::with_capacity(series.len());
    let mut warnings = Vec::new();
    for (i, s) in series.iter().enumerate() {
        if s.values.len() < 96 {
            return Err(TidesError::validation(format!(
                "region {}: need at least one full day of samples",
                s.region_id
            )));
        }
        let am = window_mean(s, |h| windows.in_am(h), &mut warnings, "AM");
        let pm = window_mean(s, |h| windows.in_pm(h), &mut warnings, "PM");
        let night = window_mean(s, |h| windows.in_night(h), &mut warnings, "NIGHT");
        out.push(RegionFeatureVector {
            phi: regions[i].lat,
            lambda: regions[i].lon,
            mean_traffic: all_means[i],
            am,
            pm,
            night,
            moran_i: morans[i],
        });
    }
    Ok((out, warnings))
}

/// Per-dimension population mean/std used to z-score the descriptors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: [f64; 7],
    pub std: [f64; 7],
}

impl FeatureScaler {
    pub fn fit(features: &[RegionFeatureVector]) -> FeatureScaler {
        let n = features.len() as f64;
        let mut mean = [0.0; 7];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f.as_array()) {
                *m += v / n;
            }
        }
        let mut std = [0.0; 7];
        for f in features {
            for d in 0..7 {
                let v = f.as_array()[d] - mean[d];
                std[d] += v * v / n;
            }
        }
        for s in std.iter_mut() {
            *s = s.sqrt();
            if *s == 0.0 {
                *s = 1.0; // constant dimension contributes nothing either way
            }
        }
        FeatureScaler { mean, std }
    }

    pub fn transform(&self, f: &RegionFeatureVector) -> [f64; 7] {
        let raw = f.as_array();
        let mut out = [0.0; 7];
        for d in 0..7 {
            out[d] = (raw[d] - self.mean[d]) / self.std[d];
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: BTreeMap<String, usize>,
    pub centroids: Vec<[f64; 7]>,
    /// Within-cluster sum of squares in z-scored feature space.
    pub objective: f64,
    pub feature_scaler: FeatureScaler,
}

impl ClusterAssignment {
    /// Region indices per cluster, in input order.
    pub fn members(&self, region_ids: &[String]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, id) in region_ids.iter().enumerate() {
            out[self.labels[id]].push(i);
        }
        out
    }
}

fn sq_dist(a: &[f64; 7], b: &[f64; 7]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn wcss(points: &[[f64; 7]], labels: &[usize], centroids: &[[f64; 7]]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

fn lloyd(points: &[[f64; 7]], k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<[f64; 7]>, f64) {
    let n = points.len();
    // k-means++ seeding
    let mut centroids: Vec<[f64; 7]> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)]);
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[next]);
    }

    let mut labels = vec![0usize; n];
    let mut prev_obj = f64::INFINITY;
    for _ in 0..max_iter {
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best.0 {
                    best = (d, c);
                }
            }
            labels[i] = best.1;
        }
        // empty-cluster repair: give it the point farthest from its centroid
        loop {
            let mut counts = vec![0usize; k];
            for &l in &labels {
                counts[l] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            let farthest = (0..n)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[labels[a]])
                        .partial_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                        .unwrap()
                })
                .expect("nonempty point set");
            labels[farthest] = empty;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f64; 7]> =
                points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            let m = members.len() as f64;
            let mut mu = [0.0; 7];
            for p in &members {
                for (d, mu_d) in mu.iter_mut().enumerate() {
                    *mu_d += p[d] / m;
                }
            }
            *centroid = mu;
        }
        let obj = wcss(points, &labels, &centroids);
        debug_assert!(obj <= prev_obj + 1e-9, "Lloyd objective increased: {prev_obj} -> {obj}");
        if (prev_obj - obj).abs() < 1e-12 {
            break;
        }
        prev_obj = obj;
    }
    let obj = wcss(points, &labels, &centroids);
    (labels, centroids, obj)
}

/// Z-scored K-means with k-means++ seeding, best of `restarts` runs.
/// Deterministic given `(seed, restarts)`.
pub fn kmeans_cluster(
    features: &[RegionFeatureVector],
    region_ids: &[String],
    k: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    let n = features.len();
    if region_ids.len() != n {
        return Err(TidesError::validation("features/region_ids length mismatch"));
    }
    if k == 0 || k > n {
        return Err(TidesError::validation(format!("K = {k} must satisfy 1 <= K <= n = {n}")));
    }
    let scaler = FeatureScaler::fit(features);
    let points: Vec<[f64; 7]> = features.iter().map(|f| scaler.transform(f)).collect();
    let mut best: Option<(Vec<usize>, Vec<[f64; 7]>, f64)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let run = lloyd(&points, k, max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (labels, centroids, objective) = best.expect("at least one restart");
    let labels_map = region_ids.iter().cloned().zip(labels.iter().copied()).collect();
    Ok(ClusterAssignment { k, labels: labels_map, centroids, objective, feature_scaler: scaler })
}

/// Write `clusters.csv`: region_id, cluster, Moran's I, feature columns.
pub fn write_clusters_csv(
    path: impl AsRef<Path>,
    assignment: &ClusterAssignment,
    features: &[RegionFeatureVector],
    region_ids: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["region_id", "cluster", "moran_i", "lat", "lon", "mean", "am", "pm", "night"])?;
    for (id, f) in region_ids.iter().zip(features) {
        w.write_record([
            id.as_str(),
            &assignment.labels[id].to_string(),
            &format!("{:.6}", f.moran_i),
            &format!("{:.6}", f.phi),
            &format!("{:.6}", f.lambda),
            &format!("{:.6}", f.mean_traffic),
            &format!("{:.6}", f.am),
            &format!("{:.6}", f.pm),
            &format!("{:.6}", f.night),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    // Oracle tests spell out loops index-by-index on purpose.
    #![allow(clippy::needless_range_loop, clippy::type_complexity)]
    use super::*;

    fn region(id: &str, lat: f64, lon: f64) -> RegionMeta {
        RegionMeta::new(id.into(), lat, lon).unwrap()
    }

    #[test]
    fn haversine_identity_and_quarter_circle() {
        let a = region("a", 12.3, 45.6);
        assert_eq!(haversine_km(&a, &a, EARTH_RADIUS_KM).unwrap(), 0.0);
        let o = region("o", 0.0, 0.0);
        let q = region("q", 0.0, 90.0);
        let d = haversine_km(&o, &q, EARTH_RADIUS_KM).unwrap();
        assert!((d - EARTH_RADIUS_KM * std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn haversine_matches_law_of_cosines_oracle() {
        // independent spherical-law-of-cosines formula, agreement < 1 m
        let a = region("a", 36.65, 117.12);
        let b = region("b", 36.75, 117.00);
        let d = haversine_km(&a, &b, EARTH_RADIUS_KM).unwrap();
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let oracle = EARTH_RADIUS_KM * (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).acos();
        assert!((d - oracle).abs() < 1e-3, "{d} vs {oracle}");
    }

    #[test]
    fn haversine_rejects_bad_coordinates() {
        assert!(RegionMeta::new("x".into(), 95.0, 0.0).is_err());
        assert!(RegionMeta::new("x".into(), 0.0, 190.0).is_err());
    }

    #[test]
    fn knn_graph_collinear() {
        // three collinear, equally spaced regions, k=1: middle is the
        // nearest neighbor of both ends; symmetrization keeps A symmetric
        let regions = vec![region("a", 0.0, 0.0), region("b", 0.0, 0.1), region("c", 0.0, 0.2)];
        let g = build_spatial_graph(&regions, 1).unwrap();
        assert!(g.a(0, 1) > 0.0 && g.a(1, 0) > 0.0);
        assert!(g.a(1, 2) > 0.0 && g.a(2, 1) > 0.0);
        assert_eq!(g.a(0, 2), 0.0);
        for i in 0..3 {
            assert_eq!(g.a(i, i), 0.0);
            let row_sum: f64 = (0..3).map(|j| g.a(i, j)).sum();
            assert!((g.degree[i] - row_sum).abs() < 1e-12);
            assert_eq!(g.mask[i * 3 + i], 0.0);
        }
        for v in &g.mask {
            assert!(*v == 0.0 || *v == MASK_BLOCKED);
        }
    }

    #[test]
    fn duplicate_coordinates_capped_weight() {
        let regions = vec![region("a", 10.0, 10.0), region("b", 10.0, 10.0), region("c", 10.0, 11.0)];
        let g = build_spatial_graph(&regions, 1).unwrap();
        assert_eq!(g.a(0, 1), 1.0 / MIN_DISTANCE_KM);
    }

    #[test]
    fn laplacian_eigenvalues_in_range() {
        // power-iteration-free check via Gershgorin is too loose; use a
        // Jacobi eigensolver oracle on small random graphs
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..5 {
            let n = 6 + trial * 4;
            let regions: Vec<RegionMeta> = (0..n)
                .map(|i| {
                    region(
                        &format!("r{i}"),
                        30.0 + rng.gen::<f64>(),
                        110.0 + rng.gen::<f64>(),
                    )
                })
                .collect();
            let g = build_spatial_graph(&regions, 3).unwrap();
            let eigs = jacobi_eigenvalues(&g.laplacian_sym, n);
            for e in eigs {
                assert!(
                    (-1e-9..=2.0 + 1e-9).contains(&e),
                    "eigenvalue {e} outside [0,2] at n={n}"
                );
            }
        }
    }

    // dense symmetric Jacobi rotation eigensolver (test oracle only)
    fn jacobi_eigenvalues(m: &[f64], n: usize) -> Vec<f64> {
        let mut a = m.to_vec();
        for _ in 0..100 {
            let mut off = 0.0;
            let (mut p, mut q, mut max) = (0, 1, 0.0);
            for i in 0..n {
                for j in (i + 1)..n {
                    let v = a[i * n + j].abs();
                    off += v * v;
                    if v > max {
                        max = v;
                        p = i;
                        q = j;
                    }
                }
            }
            if off < 1e-22 {
                break;
            }
            let app = a[p * n + p];
            let aqq = a[q * n + q];
            let apq = a[p * n + q];
            let theta = 0.5 * (aqq - app) / apq;
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for i in 0..n {
                let aip = a[i * n + p];
                let aiq = a[i * n + q];
                a[i * n + p] = c * aip - s * aiq;
                a[i * n + q] = s * aip + c * aiq;
            }
            for i in 0..n {
                let api = a[p * n + i];
                let aqi = a[q * n + i];
                a[p * n + i] = c * api - s * aqi;
                a[q * n + i] = s * api + c * aqi;
            }
        }
        (0..n).map(|i| a[i * n + i]).collect()
    }

    #[test]
    fn morans_all_equal_is_zero() {
        let regions = vec![region("a", 0.0, 0.0), region("b", 0.0, 0.1), region("c", 0.0, 0.2)];
        let g = build_spatial_graph(&regions, 1).unwrap();
        let i = local_morans_i(&[5.0, 5.0, 5.0], &g).unwrap();
        assert_eq!(i, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn morans_two_region_anticorrelation() {
        // z = [1, -1] with unit weights gives I_1 = -1
        let mut g = build_spatial_graph(
            &[region("a", 0.0, 0.0), region("b", 0.0, 0.1)],
            1,
        )
        .unwrap();
        g.adjacency = vec![0.0, 1.0, 1.0, 0.0];
        let i = local_morans_i(&[2.0, 0.0], &g).unwrap();
        assert!((i[0] + 1.0).abs() < 1e-12);
        assert!((i[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn morans_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [10usize, 20, 50] {
            let regions: Vec<RegionMeta> = (0..n)
                .map(|i| region(&format!("r{i}"), rng.gen::<f64>(), rng.gen::<f64>()))
                .collect();
            let g = build_spatial_graph(&regions, 4).unwrap();
            let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0).collect();
            let fast = local_morans_i(&values, &g).unwrap();
            // explicit double loop
            let mean = values.iter().sum::<f64>() / n as f64;
            let std =
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
            for i in 0..n {
                let zi = (values[i] - mean) / std;
                let mut acc = 0.0;
                for j in 0..n {
                    acc += g.a(i, j) * (values[j] - mean) / std;
                }
                assert!((fast[i] - zi * acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn morans_length_mismatch_errors() {
        let g = build_spatial_graph(&[region("a", 0.0, 0.0), region("b", 0.0, 0.1)], 1).unwrap();
        assert!(local_morans_i(&[1.0], &g).is_err());
    }

    fn flat_series(id: &str, values: Vec<f64>) -> TrafficSeries {
        TrafficSeries {
            region_id: id.into(),
            start_time: chrono::NaiveDateTime::parse_from_str(
                "2024-07-01T00:00:00",
                "%Y-%m-%dT%H:%M:%S",
            )
            .unwrap(),
            interval_minutes: 15,
            values,
        }
    }

    #[test]
    fn features_constant_series() {
        let regions = vec![region("a", 1.0, 2.0), region("b", 1.0, 2.1)];
        let g = build_spatial_graph(&regions, 1).unwrap();
        let series = vec![flat_series("a", vec![3.0; 96]), flat_series("b", vec![3.0; 96])];
        let (feats, warnings) =
            extract_all_features(&series, &regions, &g, &TodWindows::default()).unwrap();
        assert!(warnings.is_empty());
        for f in &feats {
            assert_eq!(f.mean_traffic, 3.0);
            assert_eq!(f.am, 3.0);
            assert_eq!(f.pm, 3.0);
            assert_eq!(f.night, 3.0);
            assert_eq!(f.moran_i, 0.0); // all means equal
        }
    }

    #[test]
    fn features_am_window_average() {
        // AM hours [7,10) get value 2, everything else 1
        let regions = vec![region("a", 1.0, 2.0), region("b", 1.0, 2.1)];
        let g = build_spatial_graph(&regions, 1).unwrap();
        let tod = TodWindows::default();
        let values: Vec<f64> = (0..96)
            .map(|i| if tod.in_am((i / 4) as u32) { 2.0 } else { 1.0 })
            .collect();
        let expected_mean = values.iter().sum::<f64>() / 96.0;
        let series = vec![flat_series("a", values), flat_series("b", vec![1.0; 96])];
        let (feats, _) = extract_all_features(&series, &regions, &g, &tod).unwrap();
        assert_eq!(feats[0].am, 2.0);
        assert!((feats[0].mean_traffic - expected_mean).abs() < 1e-12);
    }

    #[test]
    fn kmeans_single_cluster_matches_brute_wcss() {
        let feats: Vec<RegionFeatureVector> = (0..5)
            .map(|i| RegionFeatureVector {
                phi: i as f64,
                lambda: -(i as f64),
                mean_traffic: i as f64 * 2.0,
                am: 1.0,
                pm: 2.0,
                night: 0.5,
                moran_i: 0.1 * i as f64,
            })
            .collect();
        let ids: Vec<String> = (0..5).map(|i| format!("r{i}")).collect();
        let a = kmeans_cluster(&feats, &ids, 1, 3, 50, 0).unwrap();
        let scaler = &a.feature_scaler;
        let pts: Vec<[f64; 7]> = feats.iter().map(|f| scaler.transform(f)).collect();
        let mut mu = [0.0; 7];
        for p in &pts {
            for d in 0..7 {
                mu[d] += p[d] / 5.0;
            }
        }
        let brute: f64 = pts.iter().map(|p| sq_dist(p, &mu)).sum();
        assert!((a.objective - brute).abs() < 1e-9);
        assert!(a.labels.values().all(|&l| l == 0));
    }

    #[test]
    fn kmeans_separable_blobs() {
        let mut feats = Vec::new();
        let mut ids = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..20 {
            let offset = if i < 10 { 0.0 } else { 1000.0 };
            feats.push(RegionFeatureVector {
                phi: offset + rng.gen::<f64>() * 0.01,
                lambda: offset + rng.gen::<f64>() * 0.01,
                mean_traffic: offset,
                am: offset,
                pm: offset,
                night: offset,
                moran_i: offset,
            });
            ids.push(format!("r{i}"));
        }
        for seed in 0..50 {
            let a = kmeans_cluster(&feats, &ids, 2, 5, 100, seed).unwrap();
            let l0 = a.labels["r0"];
            for i in 0..10 {
                assert_eq!(a.labels[&format!("r{i}")], l0);
            }
            for i in 10..20 {
                assert_ne!(a.labels[&format!("r{i}")], l0);
            }
        }
    }

    #[test]
    fn kmeans_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let feats: Vec<RegionFeatureVector> = (0..6)
            .map(|_| RegionFeatureVector {
                phi: rng.gen(),
                lambda: rng.gen(),
                mean_traffic: rng.gen(),
                am: rng.gen(),
                pm: rng.gen(),
                night: rng.gen(),
                moran_i: rng.gen(),
            })
            .collect();
        let ids: Vec<String> = (0..6).map(|i| format!("r{i}")).collect();
        let a = kmeans_cluster(&feats, &ids, 2, 20, 100, 5).unwrap();
        // exhaustive search over all 2^6 labelings (centroid = cluster mean)
        let pts: Vec<[f64; 7]> = feats.iter().map(|f| a.feature_scaler.transform(f)).collect();
        let mut best = f64::INFINITY;
        for code in 0u32..64 {
            let labels: Vec<usize> = (0..6).map(|i| ((code >> i) & 1) as usize).collect();
            if !labels.contains(&0) || !labels.contains(&1) {
                continue;
            }
            let mut centroids = [[0.0; 7]; 2];
            let mut counts = [0.0; 2];
            for (p, &l) in pts.iter().zip(&labels) {
                counts[l] += 1.0;
                for d in 0..7 {
                    centroids[l][d] += p[d];
                }
            }
            for l in 0..2 {
                for d in 0..7 {
                    centroids[l][d] /= counts[l];
                }
            }
            let obj: f64 = pts.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
            best = best.min(obj);
        }
        assert!(
            (a.objective - best).abs() < 1e-9,
            "kmeans {} vs exhaustive {best}",
            a.objective
        );
    }

    #[test]
    fn kmeans_k_too_large_errors() {
        let feats = vec![RegionFeatureVector {
            phi: 0.0,
            lambda: 0.0,
            mean_traffic: 0.0,
            am: 0.0,
            pm: 0.0,
            night: 0.0,
            moran_i: 0.0,
        }];
        assert!(kmeans_cluster(&feats, &["a".into()], 2, 1, 10, 0).is_err());
    }

    #[test]
    fn kmeans_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let feats: Vec<RegionFeatureVector> = (0..12)
            .map(|_| RegionFeatureVector {
                phi: rng.gen(),
                lambda: rng.gen(),
                mean_traffic: rng.gen(),
                am: rng.gen(),
                pm: rng.gen(),
                night: rng.gen(),
                moran_i: rng.gen(),
            })
            .collect();
        let ids: Vec<String> = (0..12).map(|i| format!("r{i}")).collect();
        let a = kmeans_cluster(&feats, &ids, 3, 10, 100, 4).unwrap();
        let b = kmeans_cluster(&feats, &ids, 3, 10, 100, 4).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.objective, b.objective);
    }
}
