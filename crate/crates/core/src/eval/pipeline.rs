//! A small hierarchical segmentation network used to compare aggregators.
//!
//! Encoder: stacked stages of FPS + neighborhood aggregation. Decoder: each
//! input point copies the feature of its nearest sampled point at every
//! stage; the copies are concatenated and fed to a per-point classifier.
//! Training is full-gradient SGD with softmax cross-entropy.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::compute_metrics;
use super::scene::{generate_scene, SyntheticSceneSpec};
use crate::error::{Error, Result};
use crate::io::Tensor;
use crate::pagwn::{
    mlp_maxpool_backward, mlp_maxpool_forward, mlp_params_to_tensors, pagwn_backward, pagwn_forward_batch,
    pagwn_params_to_tensors, MlpParams, MlpPoolCache, PagwnCache, PagwnConfig, PagwnInput,
};
use crate::sampling::farthest_point_sample_coords;
use crate::spatial::{BallQuery, KdIndex};
use crate::types::{uniform_weight, BnMode, MetricsReport, PagwnParams, Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    Pagwn,
    KnnBaseline,
    BqBaseline,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Pagwn => "pagwn",
            AggregatorKind::KnnBaseline => "knn-baseline",
            AggregatorKind::BqBaseline => "bq-baseline",
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pagwn" => Ok(AggregatorKind::Pagwn),
            "knn-baseline" | "knn_baseline" => Ok(AggregatorKind::KnnBaseline),
            "bq-baseline" | "bq_baseline" => Ok(AggregatorKind::BqBaseline),
            other => Err(Error::InvalidConfig(format!("unknown aggregator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Number of points kept by FPS (M).
    pub samples: usize,
    /// Neighbors per sampled point (K, or K_max for ball query).
    pub k: usize,
    /// Texture-group size for PAGWN.
    pub m: usize,
    /// Ball-query radius; required for the ball-query baseline.
    #[serde(default)]
    pub radius: Option<f64>,
}

fn default_epsilon() -> f64 {
    crate::norm::DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPipelineConfig {
    pub stages: Vec<StageConfig>,
    /// Hidden widths of the per-point classifier.
    pub head_hidden: Vec<usize>,
    pub classes: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Scenes per SGD step.
    pub batch_size: usize,
    pub seed: u64,
    pub aggregator: AggregatorKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for ToyPipelineConfig {
    fn default() -> Self {
        ToyPipelineConfig {
            stages: vec![
                StageConfig {
                    samples: 128,
                    k: 16,
                    m: 3,
                    radius: Some(0.2),
                },
                StageConfig {
                    samples: 32,
                    k: 8,
                    m: 3,
                    radius: Some(0.5),
                },
            ],
            head_hidden: vec![16],
            classes: 2,
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 1,
            seed: 0,
            aggregator: AggregatorKind::Pagwn,
            epsilon: crate::norm::DEFAULT_EPSILON,
        }
    }
}

impl ToyPipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.stages.is_empty() {
            return bad("at least one stage required".into());
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.samples == 0 || st.k == 0 {
                return bad(format!("stage {i}: samples and k must be positive"));
            }
            if i > 0 && st.samples > self.stages[i - 1].samples {
                return bad(format!("stage {i}: sample counts must be non-increasing"));
            }
            if st.m == 0 || st.m >= st.k {
                return Err(Error::BadSplit { m: st.m, k: st.k });
            }
            if self.aggregator == AggregatorKind::BqBaseline && !st.radius.is_some_and(|r| r > 0.0) {
                return bad(format!("stage {i}: ball-query baseline needs a positive radius"));
            }
        }
        if self.classes == 0 {
            return bad("classes must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive".into());
        }
        if self.head_hidden.contains(&0) {
            return bad("head widths must be positive".into());
        }
        Ok(())
    }

    fn pagwn_config(&self, stage: usize) -> PagwnConfig {
        PagwnConfig {
            split: Some(self.stages[stage].m),
            epsilon: self.epsilon,
        }
    }
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = DefaultHasher::new();
    base.hash(&mut h);
    parts.hash(&mut h);
    h.finish()
}

/// Geometry of one scene, fixed before training.
#[derive(Debug, Clone)]
struct PreparedScene {
    features: Array2<f64>,
    labels: Vec<u32>,
    /// `levels[0]` is the input; `levels[s + 1]` holds stage-s samples.
    levels: Vec<Vec<Point3>>,
    stages: Vec<PreparedStage>,
}

#[derive(Debug, Clone)]
struct PreparedStage {
    /// Sampled indices into the previous level.
    sampled: Vec<usize>,
    /// Neighbor indices into the previous level, one list per sample.
    neighbors: Vec<Vec<usize>>,
    /// For every input point, the nearest point of this stage's level.
    assign: Vec<usize>,
}

fn prepare(cloud: &PointCloud, config: &ToyPipelineConfig, tag: u64) -> Result<PreparedScene> {
    let labels = cloud
        .labels()
        .ok_or_else(|| Error::InvalidConfig("training and test scenes must be labeled".into()))?
        .to_vec();
    let mut levels = vec![cloud.coords().to_vec()];
    let mut stages = Vec::with_capacity(config.stages.len());
    for (s, st) in config.stages.iter().enumerate() {
        let prev = &levels[s];
        let seed = derive_seed(config.seed, &[tag, s as u64]);
        let sampled = farthest_point_sample_coords(prev, st.samples, seed)?;
        let index = KdIndex::from_coords(prev.clone())?;
        let neighbors = sampled
            .iter()
            .map(|&c| match config.aggregator {
                AggregatorKind::BqBaseline => {
                    let radius = st.radius.expect("validated");
                    match index.ball_query(&prev[c], radius, st.k)? {
                        BallQuery::Region { neighborhood, .. } => Ok(neighborhood.indices().to_vec()),
                        BallQuery::Empty => unreachable!("a sampled point lies inside its own ball"),
                    }
                }
                _ => Ok(index.knn_of_point(c, st.k, false)?.indices().to_vec()),
            })
            .collect::<Result<Vec<_>>>()?;
        let level: Vec<Point3> = sampled.iter().map(|&i| prev[i]).collect();
        let level_index = KdIndex::from_coords(level.clone())?;
        let assign = cloud
            .coords()
            .iter()
            .map(|c| Ok(level_index.knn_query(c, 1)?.indices()[0]))
            .collect::<Result<Vec<_>>>()?;
        levels.push(level);
        stages.push(PreparedStage {
            sampled,
            neighbors,
            assign,
        });
    }
    Ok(PreparedScene {
        features: cloud.features().to_owned(),
        labels,
        levels,
        stages,
    })
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum StageParams {
    Pagwn(PagwnParams),
    Mlp(MlpParams),
}

impl StageParams {
    fn set_mode(&mut self, mode: BnMode) {
        match self {
            StageParams::Pagwn(p) => p.set_mode(mode),
            StageParams::Mlp(p) => p.set_mode(mode),
        }
    }
}

#[derive(Debug, Clone)]
struct Head {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

#[derive(Debug, Clone)]
struct Model {
    stages: Vec<StageParams>,
    head: Head,
}

impl Model {
    fn init(config: &ToyPipelineConfig, input_dim: usize) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut width = input_dim;
        let mut total = 0;
        let mut stages = Vec::with_capacity(config.stages.len());
        for _ in &config.stages {
            stages.push(match config.aggregator {
                AggregatorKind::Pagwn => StageParams::Pagwn(PagwnParams::init_with(width, &mut rng)),
                _ => StageParams::Mlp(MlpParams::init_with(&[width, 2 * width, 2 * width], &mut rng)),
            });
            width *= 2;
            total += width;
        }
        let mut dims = vec![total];
        dims.extend(&config.head_hidden);
        dims.push(config.classes);
        let layers = dims
            .windows(2)
            .map(|w| (uniform_weight(&mut rng, w[0], w[1]), Array1::zeros(w[1])))
            .collect();
        Model {
            stages,
            head: Head { layers },
        }
    }

    fn set_mode(&mut self, mode: BnMode) {
        self.stages.iter_mut().for_each(|s| s.set_mode(mode));
    }

    fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            match s {
                StageParams::Pagwn(p) => out.extend(pagwn_params_to_tensors(&format!("stage{i}."), p)),
                StageParams::Mlp(p) => out.extend(mlp_params_to_tensors(&format!("stage{i}."), p)),
            }
        }
        for (i, (w, b)) in self.head.layers.iter().enumerate() {
            out.push((format!("head.layer{i}_weight"), Tensor::from_array2(w)));
            out.push((format!("head.layer{i}_bias"), Tensor::from_array1(b)));
        }
        out
    }
}

#[allow(clippy::large_enum_variant)]
enum StageCache {
    Pagwn(PagwnCache),
    Mlp(MlpPoolCache),
}

struct EncoderPass {
    /// `feats[s][scene]`: stage-s output features of one scene.
    feats: Vec<Vec<Array2<f64>>>,
    caches: Vec<StageCache>,
}

fn encode(scenes: &[&PreparedScene], model: &Model, config: &ToyPipelineConfig) -> Result<EncoderPass> {
    let mut prev: Vec<Array2<f64>> = scenes.iter().map(|p| p.features.clone()).collect();
    let mut feats = Vec::with_capacity(model.stages.len());
    let mut caches = Vec::with_capacity(model.stages.len());
    for (s, params) in model.stages.iter().enumerate() {
        let counts: Vec<usize> = scenes.iter().map(|p| p.stages[s].sampled.len()).collect();
        let (stacked, cache) = match params {
            StageParams::Pagwn(p) => {
                let mut inputs = Vec::with_capacity(counts.iter().sum());
                for (sc, f) in scenes.iter().zip(&prev) {
                    let st = &sc.stages[s];
                    let coords = &sc.levels[s];
                    for (&c, nb) in st.sampled.iter().zip(&st.neighbors) {
                        let nc = Array2::from_shape_fn((nb.len(), 3), |(j, a)| coords[nb[j]][a]);
                        inputs.push(PagwnInput {
                            center_coord: coords[c],
                            center_feature: f.row(c).to_owned(),
                            neighbor_coords: nc,
                            neighbor_features: f.select(Axis(0), nb),
                        });
                    }
                }
                let out = pagwn_forward_batch(&inputs, p, &config.pagwn_config(s))?;
                (out.aggregated, StageCache::Pagwn(out.cache))
            }
            StageParams::Mlp(p) => {
                let mut groups = Vec::with_capacity(counts.iter().sum());
                for (sc, f) in scenes.iter().zip(&prev) {
                    for nb in &sc.stages[s].neighbors {
                        groups.push(f.select(Axis(0), nb));
                    }
                }
                let (pooled, cache) = mlp_maxpool_forward(&groups, p)?;
                (pooled, StageCache::Mlp(cache))
            }
        };
        let mut per_scene = Vec::with_capacity(scenes.len());
        let mut off = 0;
        for &c in &counts {
            per_scene.push(stacked.slice(s![off..off + c, ..]).to_owned());
            off += c;
        }
        prev = per_scene.clone();
        feats.push(per_scene);
        caches.push(cache);
    }
    Ok(EncoderPass { feats, caches })
}

/// Decoder input for one scene: every stage's feature copied from the
/// nearest sampled point, concatenated.
fn gather_head_input(scene: &PreparedScene, feats: &[Vec<Array2<f64>>], idx: usize) -> Array2<f64> {
    let views: Vec<Array2<f64>> = scene
        .stages
        .iter()
        .enumerate()
        .map(|(s, st)| feats[s][idx].select(Axis(0), &st.assign))
        .collect();
    let v: Vec<_> = views.iter().map(|a| a.view()).collect();
    ndarray::concatenate(Axis(1), &v).expect("rows equal input point count")
}

struct HeadPass {
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn head_forward(head: &Head, x: Array2<f64>) -> HeadPass {
    let mut inputs = Vec::with_capacity(head.layers.len());
    let mut cur = x;
    let last = head.layers.len() - 1;
    for (i, (w, b)) in head.layers.iter().enumerate() {
        let a = cur.dot(w) + b;
        inputs.push(cur);
        cur = if i < last { a.mapv(|v| v.max(0.0)) } else { a };
    }
    HeadPass { inputs, logits: cur }
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
fn softmax_xent(logits: &Array2<f64>, labels: &[u32]) -> (f64, Array2<f64>) {
    let rows = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let y = labels[i] as usize;
        loss -= (exps[y] / z).ln();
        for (c, e) in exps.iter().enumerate() {
            grad[[i, c]] = (e / z - if c == y { 1.0 } else { 0.0 }) / rows;
        }
    }
    (loss / rows, grad)
}

fn argmax_row(row: ndarray::ArrayView1<'_, f64>) -> u32 {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best as u32
}

/// One SGD step on a batch of scenes; returns the batch loss.
fn train_step(scenes: &[&PreparedScene], model: &mut Model, config: &ToyPipelineConfig) -> Result<f64> {
    let pass = encode(scenes, model, config)?;
    let heads: Vec<Array2<f64>> = scenes
        .iter()
        .enumerate()
        .map(|(i, sc)| gather_head_input(sc, &pass.feats, i))
        .collect();
    let views: Vec<_> = heads.iter().map(|a| a.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).expect("equal head widths");
    let labels: Vec<u32> = scenes.iter().flat_map(|s| s.labels.iter().copied()).collect();
    let hp = head_forward(&model.head, x);
    let (loss, mut grad) = softmax_xent(&hp.logits, &labels);
    if !loss.is_finite() {
        return Ok(loss);
    }

    // Head backward.
    let mut head_grads = Vec::with_capacity(model.head.layers.len());
    for (i, (w, _)) in model.head.layers.iter().enumerate().rev() {
        let input = &hp.inputs[i];
        let dw = input.t().dot(&grad);
        let db = grad.sum_axis(Axis(0));
        let mut dx = grad.dot(&w.t());
        if i > 0 {
            // Input of layer i is ReLU output of layer i-1.
            dx.zip_mut_with(input, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
        }
        head_grads.push((dw, db));
        grad = dx;
    }
    head_grads.reverse();

    // Scatter decoder gradients back onto each stage's sampled points.
    let mut dfeat: Vec<Vec<Array2<f64>>> = pass
        .feats
        .iter()
        .map(|per| per.iter().map(|a| Array2::zeros(a.raw_dim())).collect())
        .collect();
    let mut row0 = 0;
    for (i, sc) in scenes.iter().enumerate() {
        let n_pts = sc.labels.len();
        let mut col0 = 0;
        for (s, st) in sc.stages.iter().enumerate() {
            let width = pass.feats[s][i].ncols();
            for (p, &a) in st.assign.iter().enumerate() {
                let g = grad.slice(s![row0 + p, col0..col0 + width]);
                dfeat[s][i].row_mut(a).scaled_add(1.0, &g);
            }
            col0 += width;
        }
        row0 += n_pts;
    }

    // Encoder backward, last stage first.
    #[allow(clippy::large_enum_variant)]
    enum StageGrad {
        Pagwn(crate::pagwn::PagwnGradients),
        Mlp(crate::pagwn::MlpGradients),
    }
    let mut stage_grads = Vec::with_capacity(model.stages.len());
    for s in (0..model.stages.len()).rev() {
        let views: Vec<_> = dfeat[s].iter().map(|a| a.view()).collect();
        let upstream = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let mut centers = Vec::new();
        for (i, sc) in scenes.iter().enumerate() {
            for (c, nb) in sc.stages[s].sampled.iter().zip(&sc.stages[s].neighbors) {
                centers.push((i, *c, nb));
            }
        }
        match (&model.stages[s], &pass.caches[s]) {
            (StageParams::Pagwn(p), StageCache::Pagwn(cache)) => {
                let g = pagwn_backward(p, cache, upstream.view())?;
                if s > 0 {
                    for ((i, c, nb), ig) in centers.iter().zip(&g.inputs) {
                        let prev = &mut dfeat[s - 1][*i];
                        prev.row_mut(*c).scaled_add(1.0, &ig.center_feature);
                        for (j, &r) in nb.iter().enumerate() {
                            prev.row_mut(r).scaled_add(1.0, &ig.neighbor_features.row(j));
                        }
                    }
                }
                stage_grads.push(StageGrad::Pagwn(g));
            }
            (StageParams::Mlp(p), StageCache::Mlp(cache)) => {
                let g = mlp_maxpool_backward(p, cache, upstream.view())?;
                if s > 0 {
                    for ((i, _, nb), gg) in centers.iter().zip(&g.groups) {
                        let prev = &mut dfeat[s - 1][*i];
                        for (j, &r) in nb.iter().enumerate() {
                            prev.row_mut(r).scaled_add(1.0, &gg.row(j));
                        }
                    }
                }
                stage_grads.push(StageGrad::Mlp(g));
            }
            _ => unreachable!("cache kind follows parameter kind"),
        }
    }
    stage_grads.reverse();

    let lr = config.learning_rate;
    for ((params, cache), g) in model.stages.iter_mut().zip(&pass.caches).zip(&stage_grads) {
        match (params, cache, g) {
            (StageParams::Pagwn(p), StageCache::Pagwn(c), StageGrad::Pagwn(g)) => {
                let (m1, v1, r1) = c.lb1_batch_stats();
                let (m2, v2, r2) = c.lb2_batch_stats();
                p.lb1_bn.absorb(m1, v1, r1);
                p.lb2_bn.absorb(m2, v2, r2);
                p.sgd_step(g, lr);
            }
            (StageParams::Mlp(p), StageCache::Mlp(c), StageGrad::Mlp(g)) => {
                c.update_running_stats(p);
                p.sgd_step(g, lr);
            }
            _ => unreachable!(),
        }
    }
    for ((w, b), (dw, db)) in model.head.layers.iter_mut().zip(&head_grads) {
        w.scaled_add(-lr, dw);
        b.scaled_add(-lr, db);
    }
    Ok(loss)
}

fn predict(scene: &PreparedScene, model: &Model, config: &ToyPipelineConfig) -> Result<Vec<u32>> {
    let pass = encode(&[scene], model, config)?;
    let x = gather_head_input(scene, &pass.feats, 0);
    let hp = head_forward(&model.head, x);
    Ok(hp.logits.rows().into_iter().map(argmax_row).collect())
}

#[derive(Debug, Clone)]
pub struct ToyRunResult {
    pub report: MetricsReport,
    /// Trained parameters as named tensors (batch norm running statistics
    /// included), ready for [`crate::io::write_bundle`].
    pub checkpoint: Vec<(String, Tensor)>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Test predictions, scenes concatenated in order.
    pub predictions: Vec<u32>,
}

/// Trains on `train` and reports metrics on `test`.
pub fn run_toy_pipeline(config: &ToyPipelineConfig, train: &[PointCloud], test: &[PointCloud]) -> Result<ToyRunResult> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidConfig("need at least one training and one test scene".into()));
    }
    let n = train[0].feature_dim();
    if train.iter().chain(test).any(|c| c.feature_dim() != n) {
        return Err(Error::shape("scenes disagree on feature dimension"));
    }
    let prep_train = train
        .iter()
        .enumerate()
        .map(|(i, c)| prepare(c, config, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let prep_test = test
        .iter()
        .enumerate()
        .map(|(i, c)| prepare(c, config, (1 << 32) + i as u64))
        .collect::<Result<Vec<_>>>()?;

    let mut model = Model::init(config, n);
    model.set_mode(BnMode::Training);
    let mut order: Vec<usize> = (0..prep_train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[u64::MAX]));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedScene> = chunk.iter().map(|&i| &prep_train[i]).collect();
            let loss = train_step(&batch, &mut model, config)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss;
            steps += 1;
        }
        let mean = total / steps as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        epoch_losses.push(mean);
    }

    model.set_mode(BnMode::Inference);
    let mut predictions = Vec::new();
    let mut truth = Vec::new();
    for sc in &prep_test {
        predictions.extend(predict(sc, &model, config)?);
        truth.extend_from_slice(&sc.labels);
    }
    let report = compute_metrics(&predictions, &truth, config.classes)?;
    Ok(ToyRunResult {
        report,
        checkpoint: model.to_tensors(),
        epoch_losses,
        predictions,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub m: usize,
    pub report: MetricsReport,
}

/// Reruns the pipeline once per split size, changing only `m` in every
/// stage. Duplicate values are dropped with a warning.
pub fn ablate_m(
    config: &ToyPipelineConfig,
    m_values: &[usize],
    train: &[PointCloud],
    test: &[PointCloud],
) -> Result<Vec<AblationRow>> {
    let mut unique = Vec::with_capacity(m_values.len());
    for &m in m_values {
        if unique.contains(&m) {
            log::warn!("duplicate m = {m} ignored");
            continue;
        }
        for st in &config.stages {
            if m == 0 || m >= st.k {
                return Err(Error::BadSplit { m, k: st.k });
            }
        }
        unique.push(m);
    }
    unique
        .par_iter()
        .map(|&m| {
            let mut cfg = config.clone();
            cfg.stages.iter_mut().for_each(|s| s.m = m);
            let res = run_toy_pipeline(&cfg, train, test)?;
            Ok(AblationRow { m, report: res.report })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("m,miou,macc,oa\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.m, r.report.miou, r.report.macc, r.report.oa));
    }
    out
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub seed: u64,
    pub aggregator: AggregatorKind,
    pub report: MetricsReport,
}

/// Scenes for one experiment seed: training scenes use scene seeds
/// `seed * 1000 + i`, test scenes `seed * 1000 + 500 + i`.
pub fn seeded_scenes(
    seed: u64,
    train: usize,
    test: usize,
    scene_spec: fn(u64) -> SyntheticSceneSpec,
) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
    let gen = |offset: u64, count: usize| {
        (0..count as u64)
            .into_par_iter()
            .map(|i| generate_scene(&scene_spec(seed.wrapping_mul(1000).wrapping_add(offset + i))))
            .collect::<Result<Vec<_>>>()
    };
    Ok((gen(0, train)?, gen(500, test)?))
}

/// Trains every aggregator on the same seeded scenes (see [`seeded_scenes`]).
pub fn compare_aggregators(
    base: &ToyPipelineConfig,
    kinds: &[AggregatorKind],
    seeds: &[u64],
    train_per_seed: usize,
    test_per_seed: usize,
    scene_spec: fn(u64) -> SyntheticSceneSpec,
) -> Result<Vec<ComparisonRow>> {
    let jobs: Vec<(u64, AggregatorKind)> = seeds
        .iter()
        .flat_map(|&s| kinds.iter().map(move |&k| (s, k)))
        .collect();
    jobs.par_iter()
        .map(|&(seed, kind)| {
            let (train, test) = seeded_scenes(seed, train_per_seed, test_per_seed, scene_spec)?;
            let mut cfg = base.clone();
            cfg.aggregator = kind;
            cfg.seed = seed;
            let res = run_toy_pipeline(&cfg, &train, &test)?;
            Ok(ComparisonRow {
                seed,
                aggregator: kind,
                report: res.report,
            })
        })
        .collect()
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("seed,aggregator,miou,macc,oa\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.seed,
            r.aggregator.name(),
            r.report.miou,
            r.report.macc,
            r.report.oa
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::scene::{density_imbalanced_spec, generate_scene};

    fn small_config(kind: AggregatorKind) -> ToyPipelineConfig {
        ToyPipelineConfig {
            stages: vec![StageConfig {
                samples: 32,
                k: 8,
                m: 3,
                radius: Some(0.3),
            }],
            head_hidden: vec![8],
            epochs: 3,
            aggregator: kind,
            ..Default::default()
        }
    }

    fn scenes(seeds: &[u64]) -> Vec<PointCloud> {
        seeds
            .iter()
            .map(|&s| generate_scene(&density_imbalanced_spec(s)).unwrap())
            .collect()
    }

    #[test]
    fn config_validation() {
        let mut c = ToyPipelineConfig::default();
        c.stages[1].samples = 1000;
        assert!(c.validate().is_err());
        let mut c = ToyPipelineConfig::default();
        c.stages[0].m = 16;
        assert!(matches!(c.validate(), Err(Error::BadSplit { .. })));
        let mut c = ToyPipelineConfig {
            aggregator: AggregatorKind::BqBaseline,
            ..Default::default()
        };
        c.stages[0].radius = None;
        assert!(c.validate().is_err());
        ToyPipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn deterministic_runs() {
        let train = scenes(&[1, 2]);
        let test = scenes(&[3]);
        for kind in [AggregatorKind::Pagwn, AggregatorKind::KnnBaseline, AggregatorKind::BqBaseline] {
            let cfg = small_config(kind);
            let a = run_toy_pipeline(&cfg, &train, &test).unwrap();
            let b = run_toy_pipeline(&cfg, &train, &test).unwrap();
            assert_eq!(a.report, b.report);
            assert_eq!(a.epoch_losses, b.epoch_losses);
            assert_eq!(a.checkpoint, b.checkpoint);
            assert!(a.epoch_losses.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn unlabeled_scene_rejected() {
        let c = scenes(&[1]).remove(0);
        let unlabeled = PointCloud::from_array(c.coords().to_vec(), c.features().to_owned(), None).unwrap();
        let cfg = small_config(AggregatorKind::Pagwn);
        assert!(run_toy_pipeline(&cfg, &[unlabeled], &[c]).is_err());
    }

    #[test]
    fn divergence_reported() {
        let mut cfg = small_config(AggregatorKind::KnnBaseline);
        cfg.learning_rate = 1e300;
        let train = scenes(&[1]);
        let err = run_toy_pipeline(&cfg, &train, &train).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn ablation_dedup_and_range() {
        let train = scenes(&[4]);
        let cfg = small_config(AggregatorKind::Pagwn);
        let rows = ablate_m(&cfg, &[2, 2, 3], &train, &train).unwrap();
        assert_eq!(rows.iter().map(|r| r.m).collect::<Vec<_>>(), vec![2, 3]);
        assert!(matches!(ablate_m(&cfg, &[8], &train, &train), Err(Error::BadSplit { .. })));
        let single = run_toy_pipeline(&cfg, &train, &train).unwrap();
        assert_eq!(rows[1].report, single.report);
        assert!(ablation_csv(&rows).starts_with("m,miou,macc,oa\n2,"));
    }
}
