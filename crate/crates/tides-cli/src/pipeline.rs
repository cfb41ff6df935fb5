//! The five pipeline stages behind the subcommands.
//!
//! `synth` writes a reproducible city; `cluster` groups its regions into
//! zones; `train` fits one model per zone (optionally the DLinear
//! baseline); `evaluate` scores checkpoints (or external predictions)
//! on the held-out test split; `report` renders an evaluation directory
//! as text.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tides::baselines::{seasonal_naive, DlinearParams, DEFAULT_KERNEL};
use tides::data::{generate_synthetic, load_csv, make_windows, write_csv, TrafficSeries};
use tides::error::{Result, TidesError};
use tides::geo::{
    build_spatial_graph, extract_all_features, kmeans_cluster, write_clusters_csv, RegionMeta,
    SpatialGraph, TodWindows,
};
use tides::metrics::{EvalReport, MetricSet};
use tides::model::{denormalize_predictions, forward, ClusterBatch, TidesConfig, TidesParams};
use tides::prompt::{compute_descriptor, ParMode, PromptTokenizer, DEFAULT_EPS};
use tides::revin::normalize;
use tides::tensor::Tape;
use tides::train::{history_to_jsonl, train_cluster, train_dlinear, TrainSample};

use crate::config::PipelineConfig;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Train only this cluster index.
    pub cluster: Option<usize>,
    /// Train the DLinear baseline instead of the main model.
    pub baseline_dlinear: bool,
    /// Ablation: replace each cluster graph with a self-only mask.
    pub isolate_regions: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub train_zone: Option<usize>,
    pub eval_zone: Option<usize>,
    pub external_predictions: Option<PathBuf>,
}

/// Aggregate scores for one forecaster in `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelScore {
    pub mae: f64,
    pub rmse: f64,
    pub mape_percent: f64,
    pub pearson_r: Option<f64>,
    /// MAE on per-window normalized series.
    pub mae_normalized: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub train_zone: Option<usize>,
    pub eval_zone: Option<usize>,
    pub models: BTreeMap<String, ModelScore>,
}

pub fn run_synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let started = Instant::now();
    std::fs::create_dir_all(out)?;
    let (series, regions) = generate_synthetic(&cfg.synth_config())?;
    let regions_path = out.join("regions.csv");
    let traffic_path = out.join("traffic.csv");
    write_csv(&series, &regions, &regions_path, &traffic_path)?;
    let mut m = RunManifest::new("synth", cfg, cfg.seed)?;
    m.output(&regions_path);
    m.output(&traffic_path);
    m.finish(out, started)
}

pub fn run_cluster(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<()> {
    let started = Instant::now();
    std::fs::create_dir_all(out)?;
    let regions_path = data.join("regions.csv");
    let traffic_path = data.join("traffic.csv");
    let (series, regions) = load_csv(&regions_path, &traffic_path)?;
    let graph = build_spatial_graph(&regions, cfg.cluster.knn)?;
    let windows = TodWindows::default();
    let (features, warnings) = extract_all_features(&series, &regions, &graph, &windows)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let ids: Vec<String> = regions.iter().map(|r| r.region_id.clone()).collect();
    let assignment = kmeans_cluster(
        &features,
        &ids,
        cfg.cluster.k_clusters,
        cfg.cluster.restarts,
        cfg.cluster.max_iter,
        cfg.seed,
    )?;
    let clusters_path = out.join("clusters.csv");
    write_clusters_csv(&clusters_path, &assignment, &features, &ids)?;
    let mut m = RunManifest::new("cluster", cfg, cfg.seed)?;
    m.input(&regions_path);
    m.input(&traffic_path);
    m.output(&clusters_path);
    m.finish(out, started)
}

/// Parse `clusters.csv` into cluster index -> member indices into `regions`.
pub fn read_clusters(
    path: &Path,
    regions: &[RegionMeta],
) -> Result<BTreeMap<usize, Vec<usize>>> {
    let index: BTreeMap<&str, usize> = regions
        .iter()
        .enumerate()
        .map(|(i, r)| (r.region_id.as_str(), i))
        .collect();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() < 2 {
            return Err(TidesError::validation(format!(
                "clusters.csv line {line}: expected region_id,cluster,..."
            )));
        }
        let region = &rec[0];
        let cluster: usize = rec[1].parse().map_err(|_| {
            TidesError::validation(format!("clusters.csv line {line}: bad cluster id {:?}", &rec[1]))
        })?;
        let idx = *index.get(region).ok_or_else(|| {
            TidesError::validation(format!(
                "clusters.csv line {line}: unknown region {region:?}"
            ))
        })?;
        members.entry(cluster).or_default().push(idx);
    }
    if members.is_empty() {
        return Err(TidesError::validation("clusters.csv contains no assignments"));
    }
    Ok(members)
}

/// Window start indices for each chronological split, subsampled by stride.
fn split_starts(
    series: &TrafficSeries,
    cfg: &PipelineConfig,
    model: &TidesConfig,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let windows = make_windows(series, model.history, model.horizon, cfg.train.split)?;
    let strided = |xs: &[tides::data::WindowSample], stride: usize| -> Vec<usize> {
        xs.iter().step_by(stride.max(1)).map(|w| w.start_index).collect()
    };
    Ok((
        strided(&windows.train, cfg.train.window_stride),
        strided(&windows.val, cfg.train.val_stride),
        strided(&windows.test, cfg.evaluate.test_stride),
    ))
}

/// Build aligned cluster samples for the given window start indices.
fn build_samples(
    series: &[TrafficSeries],
    cluster_id: &str,
    member_idx: &[usize],
    graph: &SpatialGraph,
    tok: &PromptTokenizer,
    model: &TidesConfig,
    starts: &[usize],
) -> Result<Vec<TrainSample>> {
    let ids: Vec<String> = member_idx
        .iter()
        .map(|&i| series[i].region_id.clone())
        .collect();
    let tod = TodWindows::default();
    let mut samples = Vec::with_capacity(starts.len());
    for &s in starts {
        let mut windows = Vec::new();
        let mut states = Vec::new();
        let mut prompts = Vec::new();
        let mut targets = Vec::new();
        let mut raw_targets = Vec::new();
        for (&idx, id) in member_idx.iter().zip(&ids) {
            let ser = &series[idx];
            let raw = &ser.values[s..s + model.history];
            let raw_t = ser.values[s + model.history..s + model.history + model.horizon].to_vec();
            let ts: Vec<chrono::NaiveDateTime> =
                (0..model.history).map(|i| ser.timestamp(s + i)).collect();
            let (norm, st) = normalize(raw)?;
            let mut d = compute_descriptor(raw, &ts, DEFAULT_EPS, &tod, ParMode::Paper)?;
            d.finalize(id, model.horizon, tok, model.prompt_max_len)?;
            targets.push(raw_t.iter().map(|v| (v - st.mean) / st.std).collect());
            raw_targets.push(raw_t);
            windows.push(norm);
            states.push(st);
            prompts.push(d);
        }
        samples.push(TrainSample {
            batch: ClusterBatch {
                cluster_id: cluster_id.to_string(),
                region_ids: ids.clone(),
                windows,
                revin_states: states,
                graph: graph.clone(),
                prompts,
            },
            targets,
            raw_targets,
        });
    }
    Ok(samples)
}

fn cluster_graph(
    full: &SpatialGraph,
    member_idx: &[usize],
    isolate: bool,
) -> Result<SpatialGraph> {
    let mut g = full.subgraph(member_idx)?;
    if isolate {
        g.adjacency.iter_mut().for_each(|v| *v = 0.0);
        g.mask = g.self_only_mask();
    }
    Ok(g)
}

pub fn run_train(
    cfg: &PipelineConfig,
    data: &Path,
    clusters_csv: &Path,
    out: &Path,
    opts: &TrainOptions,
) -> Result<()> {
    let started = Instant::now();
    std::fs::create_dir_all(out)?;
    let regions_path = data.join("regions.csv");
    let traffic_path = data.join("traffic.csv");
    let (series, regions) = load_csv(&regions_path, &traffic_path)?;
    let members = read_clusters(clusters_csv, &regions)?;
    let model = cfg.tides_config();
    model.validate()?;
    let full_graph = build_spatial_graph(&regions, cfg.cluster.knn)?;
    let ids: Vec<String> = regions.iter().map(|r| r.region_id.clone()).collect();
    let tok = PromptTokenizer::with_regions(&ids);
    let vocab_path = out.join("vocab.txt");
    tok.save_vocab(&vocab_path)?;
    let (train_starts, val_starts, _) = split_starts(&series[0], cfg, &model)?;

    let selected: Vec<(usize, Vec<usize>)> = members
        .into_iter()
        .filter(|(c, _)| opts.cluster.is_none_or(|only| *c == only))
        .collect();
    if selected.is_empty() {
        return Err(TidesError::validation("train: no matching cluster"));
    }
    let region_map: BTreeMap<String, Vec<String>> = selected
        .iter()
        .map(|(c, idx)| {
            (
                format!("z{c}"),
                idx.iter().map(|&i| series[i].region_id.clone()).collect(),
            )
        })
        .collect();
    std::fs::write(
        out.join("cluster_regions.json"),
        serde_json::to_vec_pretty(&region_map)?,
    )?;

    let outputs: Vec<Vec<PathBuf>> = selected
        .par_iter()
        .map(|(c, member_idx)| -> Result<Vec<PathBuf>> {
            let series = &series;
            let cluster_id = format!("z{c}");
            let graph = cluster_graph(&full_graph, member_idx, opts.isolate_regions)?;
            let mut written = Vec::new();
            if opts.baseline_dlinear {
                // One shared DLinear per cluster over every member window.
                let collect = |starts: &[usize]| -> Vec<(Vec<f64>, Vec<f64>)> {
                    starts
                        .iter()
                        .flat_map(|&s| {
                            member_idx.iter().map(move |&i| {
                                let ser = &series[i];
                                (
                                    ser.values[s..s + model.history].to_vec(),
                                    ser.values
                                        [s + model.history..s + model.history + model.horizon]
                                        .to_vec(),
                                )
                            })
                        })
                        .collect()
                };
                let train_set = collect(&train_starts);
                let val_set = collect(&val_starts);
                let mut params = DlinearParams::init(
                    model.history,
                    model.horizon,
                    DEFAULT_KERNEL,
                    &mut tides::seeded_rng(cfg.seed.wrapping_add(1000 + *c as u64)),
                );
                let (history, _) =
                    train_dlinear(&train_set, &val_set, &mut params, &cfg.train_config())?;
                let bin = out.join(format!("dlinear_{cluster_id}.bin"));
                let man = out.join(format!("dlinear_{cluster_id}.json"));
                tides::checkpoint::save(&params.params(), &bin, &man)?;
                let hist = out.join(format!("dlinear_history_{cluster_id}.jsonl"));
                std::fs::write(&hist, history_to_jsonl(&history)?)?;
                written.extend([bin, man, hist]);
            } else {
                let train_set = build_samples(
                    series, &cluster_id, member_idx, &graph, &tok, &model, &train_starts,
                )?;
                let val_set = build_samples(
                    series, &cluster_id, member_idx, &graph, &tok, &model, &val_starts,
                )?;
                let mut params = TidesParams::init(
                    &model,
                    tok.vocab_size(),
                    cfg.seed.wrapping_add(1000 + *c as u64),
                )?;
                let (history, _) =
                    train_cluster(&train_set, &val_set, &mut params, &model, &cfg.train_config())?;
                params.save(out, &cluster_id)?;
                let hist = out.join(format!("history_{cluster_id}.jsonl"));
                std::fs::write(&hist, history_to_jsonl(&history)?)?;
                written.extend([
                    out.join(format!("model_{cluster_id}.bin")),
                    out.join(format!("model_{cluster_id}.json")),
                    hist,
                ]);
            }
            Ok(written)
        })
        .collect::<Result<_>>()?;

    let mut m = RunManifest::new("train", cfg, cfg.seed)?;
    m.input(&regions_path);
    m.input(&traffic_path);
    m.input(clusters_csv);
    m.output(&vocab_path);
    for group in outputs {
        for p in group {
            m.output(&p);
        }
    }
    m.finish(out, started)
}

type Pairs = BTreeMap<String, Vec<(Vec<f64>, Vec<f64>)>>;

#[derive(Default)]
struct PairAccumulator {
    orig: Pairs,
    norm: Pairs,
}

impl PairAccumulator {
    fn push(
        &mut self,
        region: &str,
        truth: &[f64],
        pred: &[f64],
        state: &tides::revin::RevinState,
    ) {
        let norm = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|x| (x - state.mean) / state.std).collect()
        };
        self.orig
            .entry(region.to_string())
            .or_default()
            .push((truth.to_vec(), pred.to_vec()));
        self.norm
            .entry(region.to_string())
            .or_default()
            .push((norm(truth), norm(pred)));
    }

    fn score(&self, horizon: usize, floor: f64) -> Result<ModelScore> {
        let flatten = |pairs: &Pairs| -> (Vec<f64>, Vec<f64>) {
            let mut t = Vec::new();
            let mut p = Vec::new();
            for list in pairs.values() {
                for (y, yh) in list {
                    t.extend_from_slice(y);
                    p.extend_from_slice(yh);
                }
            }
            (t, p)
        };
        let _ = horizon;
        let (t, p) = flatten(&self.orig);
        let m = MetricSet::compute(&t, &p, floor)?;
        let (tn, pn) = flatten(&self.norm);
        Ok(ModelScore {
            mae: m.mae,
            rmse: m.rmse,
            mape_percent: m.mape_percent,
            pearson_r: m.pearson_r,
            mae_normalized: tides::metrics::mae(&tn, &pn)?,
        })
    }
}

fn read_external_predictions(path: &Path) -> Result<BTreeMap<(String, String), f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ri, ti, pi) = match (col("region_id"), col("timestamp"), col("y_pred")) {
        (Some(r), Some(t), Some(p)) => (r, t, p),
        _ => {
            return Err(TidesError::validation(
                "external predictions need region_id, timestamp, y_pred columns",
            ))
        }
    };
    let mut map = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let value: f64 = rec[pi].parse().map_err(|_| {
            TidesError::validation(format!(
                "external predictions line {}: bad y_pred {:?}",
                i + 2,
                &rec[pi]
            ))
        })?;
        map.insert((rec[ri].to_string(), rec[ti].to_string()), value);
    }
    Ok(map)
}

pub fn run_evaluate(
    cfg: &PipelineConfig,
    data: &Path,
    clusters_csv: &Path,
    model_dir: &Path,
    out: &Path,
    opts: &EvalOptions,
) -> Result<()> {
    let started = Instant::now();
    std::fs::create_dir_all(out)?;
    if opts.train_zone.is_some() != opts.eval_zone.is_some() {
        return Err(TidesError::validation(
            "cross-zone evaluation needs both --train-zone and --eval-zone",
        ));
    }
    let regions_path = data.join("regions.csv");
    let traffic_path = data.join("traffic.csv");
    let (series, regions) = load_csv(&regions_path, &traffic_path)?;
    let members = read_clusters(clusters_csv, &regions)?;
    let model = cfg.tides_config();
    let full_graph = build_spatial_graph(&regions, cfg.cluster.knn)?;
    let external = opts
        .external_predictions
        .as_deref()
        .map(read_external_predictions)
        .transpose()?;
    let tok = if external.is_none() {
        Some(PromptTokenizer::load_vocab(model_dir.join("vocab.txt"))?)
    } else {
        None
    };
    // Guard against a clusters.csv that drifted since training.
    if external.is_none() && opts.train_zone.is_none() {
        let snapshot_path = model_dir.join("cluster_regions.json");
        if snapshot_path.exists() {
            let snapshot: BTreeMap<String, Vec<String>> =
                serde_json::from_slice(&std::fs::read(&snapshot_path)?)?;
            for (c, idx) in &members {
                let current: Vec<String> =
                    idx.iter().map(|&i| series[i].region_id.clone()).collect();
                if let Some(trained) = snapshot.get(&format!("z{c}")) {
                    if trained != &current {
                        return Err(TidesError::validation(format!(
                            "cluster z{c} membership differs from the trained checkpoint; \
                             pass --train-zone/--eval-zone for cross-zone evaluation"
                        )));
                    }
                }
            }
        }
    }
    let (_, _, test_starts) = split_starts(&series[0], cfg, &model)?;
    if test_starts.is_empty() {
        return Err(TidesError::validation("evaluate: empty test split"));
    }
    let samples_per_day = (24 * 60 / series[0].interval_minutes) as usize;

    let evaluated: Vec<(usize, Vec<usize>)> = members
        .into_iter()
        .filter(|(c, _)| opts.eval_zone.is_none_or(|z| *c == z))
        .collect();
    if evaluated.is_empty() {
        return Err(TidesError::validation("evaluate: no matching cluster"));
    }

    let mut tides_acc = PairAccumulator::default();
    let mut naive_acc = PairAccumulator::default();
    let mut dlinear_acc = PairAccumulator::default();
    let mut external_acc = PairAccumulator::default();
    let mut have_dlinear = false;
    let mut predictions_rows: Vec<(String, String, f64, f64)> = Vec::new();

    for (c, member_idx) in &evaluated {
        let cluster_id = format!("z{c}");
        let source_id = format!("z{}", opts.train_zone.unwrap_or(*c));
        let graph = cluster_graph(&full_graph, member_idx, false)?;
        let tides_params = match &tok {
            Some(tok) => {
                if !model_dir.join(format!("model_{source_id}.bin")).exists() {
                    return Err(TidesError::validation(format!(
                        "evaluate: missing checkpoint model_{source_id}.bin in {}",
                        model_dir.display()
                    )));
                }
                let mut p = TidesParams::init(&model, tok.vocab_size(), 0)?;
                p.load(model_dir, &source_id)?;
                Some(p)
            }
            None => None,
        };
        let dlinear_params = {
            let bin = model_dir.join(format!("dlinear_{source_id}.bin"));
            let man = model_dir.join(format!("dlinear_{source_id}.json"));
            if bin.exists() && man.exists() {
                let loaded = tides::checkpoint::load(&bin, &man)?;
                let mut p = DlinearParams::init(
                    model.history,
                    model.horizon,
                    DEFAULT_KERNEL,
                    &mut tides::seeded_rng(0),
                );
                tides::checkpoint::restore(p.params_mut(), &loaded)?;
                have_dlinear = true;
                Some(p)
            } else {
                None
            }
        };
        let samples = match &tok {
            Some(tok) => build_samples(
                &series, &cluster_id, member_idx, &graph, tok, &model, &test_starts,
            )?,
            None => build_samples(
                &series,
                &cluster_id,
                member_idx,
                &graph,
                &PromptTokenizer::new(),
                &model,
                &test_starts,
            )?,
        };
        for (sample, &s) in samples.iter().zip(&test_starts) {
            let model_preds = match &tides_params {
                Some(p) => {
                    let tape = Tape::new();
                    let (yhat, _) = forward(&tape, &sample.batch, p, &model)?;
                    Some(denormalize_predictions(&sample.batch, &yhat)?)
                }
                None => None,
            };
            for (r, &idx) in member_idx.iter().enumerate() {
                let ser = &series[idx];
                let region = &ser.region_id;
                let state = &sample.batch.revin_states[r];
                let truth = &sample.raw_targets[r];
                let window = &ser.values[s..s + model.history];
                if let Some(preds) = &model_preds {
                    tides_acc.push(region, truth, &preds[r], state);
                    for step in 0..model.horizon {
                        predictions_rows.push((
                            region.clone(),
                            ser.timestamp(s + model.history + step)
                                .format("%Y-%m-%dT%H:%M:%S")
                                .to_string(),
                            truth[step],
                            preds[r][step],
                        ));
                    }
                }
                let naive = seasonal_naive(window, samples_per_day, model.horizon)?;
                naive_acc.push(region, truth, &naive, state);
                if let Some(p) = &dlinear_params {
                    dlinear_acc.push(region, truth, &p.forecast(window)?, state);
                }
                if let Some(map) = &external {
                    let mut pred = Vec::with_capacity(model.horizon);
                    for step in 0..model.horizon {
                        let ts = ser
                            .timestamp(s + model.history + step)
                            .format("%Y-%m-%dT%H:%M:%S")
                            .to_string();
                        let key = (region.clone(), ts.clone());
                        let v = map.get(&key).ok_or_else(|| {
                            TidesError::validation(format!(
                                "external predictions missing {region} at {ts}"
                            ))
                        })?;
                        pred.push(*v);
                    }
                    external_acc.push(region, truth, &pred, state);
                }
            }
        }
    }

    let floor = cfg.evaluate.mape_floor;
    let mut summary = EvalSummary {
        train_zone: opts.train_zone,
        eval_zone: opts.eval_zone,
        models: BTreeMap::new(),
    };
    let primary_acc = if external.is_some() { &external_acc } else { &tides_acc };
    let primary_name = if external.is_some() { "external" } else { "tides" };
    let report = EvalReport::from_pairs(primary_acc.orig.clone(), model.horizon, floor)?;
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    report.write_csv_tables(out)?;
    let report_norm = EvalReport::from_pairs(primary_acc.norm.clone(), model.horizon, floor)?;
    std::fs::write(out.join("report_normalized.json"), report_norm.to_json()?)?;
    summary
        .models
        .insert(primary_name.to_string(), primary_acc.score(model.horizon, floor)?);
    summary
        .models
        .insert("seasonal_naive".to_string(), naive_acc.score(model.horizon, floor)?);
    if have_dlinear {
        summary
            .models
            .insert("dlinear".to_string(), dlinear_acc.score(model.horizon, floor)?);
    }
    std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;

    if !predictions_rows.is_empty() {
        let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
        w.write_record(["region_id", "timestamp", "y_true", "y_pred"])?;
        for (region, ts, yt, yp) in &predictions_rows {
            // Shortest round-trip formatting so external re-scoring reproduces
            // internal metrics bit-for-bit.
            w.write_record([region.as_str(), ts, &yt.to_string(), &yp.to_string()])?;
        }
        w.flush()?;
    }

    let mut m = RunManifest::new("evaluate", cfg, cfg.seed)?;
    m.input(&regions_path);
    m.input(&traffic_path);
    m.input(clusters_csv);
    m.input(model_dir);
    if let Some(p) = &opts.external_predictions {
        m.input(p);
    }
    m.output(&out.join("report.json"));
    m.output(&out.join("report_normalized.json"));
    m.output(&out.join("summary.json"));
    m.finish(out, started)
}

/// Render an evaluation directory as a text summary.
pub fn run_report(eval_dir: &Path) -> Result<String> {
    let summary: EvalSummary =
        serde_json::from_slice(&std::fs::read(eval_dir.join("summary.json"))?)?;
    let report: EvalReport =
        serde_json::from_slice(&std::fs::read(eval_dir.join("report.json"))?)?;
    let mut text = String::new();
    if let (Some(a), Some(b)) = (summary.train_zone, summary.eval_zone) {
        text.push_str(&format!("cross-zone evaluation: trained on z{a}, evaluated on z{b}\n\n"));
    }
    text.push_str("model            mae      rmse     mape%    pearson  mae(norm)\n");
    for (name, s) in &summary.models {
        text.push_str(&format!(
            "{name:<16} {:<8.4} {:<8.4} {:<8.2} {:<8} {:<8.4}\n",
            s.mae,
            s.rmse,
            s.mape_percent,
            s.pearson_r.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into()),
            s.mae_normalized,
        ));
    }
    text.push_str(&format!(
        "\nper-step MAE: {}\n",
        report
            .per_timestep_mae
            .iter()
            .enumerate()
            .map(|(i, m)| format!("t+{}: {m:.4}", i + 1))
            .collect::<Vec<_>>()
            .join("  ")
    ));
    let worst = report
        .per_region
        .iter()
        .max_by(|a, b| a.1.mae.total_cmp(&b.1.mae))
        .map(|(id, m)| format!("worst region: {id} (mae {:.4})", m.mae))
        .unwrap_or_default();
    text.push_str(&worst);
    text.push('\n');
    Ok(text)
}
