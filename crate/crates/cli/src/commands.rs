use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Array3};

use pgrain::eval::{
    ablate_m, ablation_csv, compare_aggregators, comparison_csv, compute_metrics, density_imbalanced_spec, edge_scene,
    generate_scene, report_csv, report_text, run_toy_pipeline, seeded_scenes, AggregatorKind, ToyPipelineConfig,
};
use pgrain::io::{
    read_bundle, read_labels, read_ply, read_xyz, write_bundle, write_coords, write_labels, write_ply, write_xyz,
    PlyEncoding, Tensor, TensorData,
};
use pgrain::norm::{group_wise_window_normalize, sigma_map_with, window_normalize, window_sigmas, SigmaMapOptions};
use pgrain::pagwn::{
    inputs_from_tensors, inputs_to_tensors, pagwn_forward_batch, pagwn_params_from_tensors, pagwn_params_to_tensors,
    PagwnConfig, PagwnInput,
};
use pgrain::sampling::{farthest_point_sample, random_sample};
use pgrain::spatial::build_index;
use pgrain::{BnMode, Error, PagwnParams, PointCloud, Result};

#[derive(Debug, Parser)]
#[command(name = "pgrain", version, about = "Point cloud downsampling with group-wise window normalization")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Downsample a cloud; writes the kept points and an `.idx` sidecar.
    Sample(SampleArgs),
    /// Points whose KNN window spread exceeds a threshold.
    SigmaMap(SigmaMapArgs),
    /// Build a tensor bundle of sampled centers and their KNN windows.
    Windows(WindowsArgs),
    /// Window-normalize every window of an input bundle.
    Normalize(NormalizeArgs),
    /// Run the aggregation block on an input bundle.
    PagwnForward(ForwardArgs),
    /// Write a seeded synthetic scene.
    Scene(SceneArgs),
    /// Train and evaluate the toy segmentation pipeline.
    TrainToy(TrainArgs),
    /// Segmentation metrics from predicted and true label files.
    Eval(EvalArgs),
    /// Rerun the toy pipeline for several split sizes.
    AblateM(AblateArgs),
    /// Paired aggregator comparison across seeds.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// XYZ text (x y z f1..fn [label] per line) or PLY.
    input: PathBuf,
    /// Feature columns in XYZ input.
    #[arg(long, default_value_t = 3)]
    features: usize,
    /// XYZ input carries a trailing label column.
    #[arg(long)]
    labeled: bool,
}

impl InputArgs {
    fn load(&self) -> Result<PointCloud> {
        load_cloud(&self.input, self.features, self.labeled)
    }
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

fn load_cloud(path: &Path, features: usize, labeled: bool) -> Result<PointCloud> {
    if is_ply(path) {
        read_ply(path)
    } else {
        read_xyz(path, features, labeled)
    }
}

fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    if is_ply(path) {
        write_ply(path, cloud, PlyEncoding::BinaryLittleEndian)
    } else {
        write_xyz(path, cloud)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
    let text: String = indices.iter().map(|i| format!("{i}\n")).collect();
    write_text(path, &text)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleMethod {
    Fps,
    Random,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "fps")]
    method: SampleMethod,
    /// Number of points to keep.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to `<input>.sample.xyz`.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn sample_indices(cloud: &PointCloud, method: SampleMethod, count: usize, seed: u64) -> Result<Vec<usize>> {
    match method {
        SampleMethod::Fps => farthest_point_sample(cloud, count, seed),
        SampleMethod::Random => random_sample(cloud, count, seed),
    }
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let cloud = a.input.load()?;
    let idx = sample_indices(&cloud, a.method, a.count, a.seed)?;
    let out = a.output.unwrap_or_else(|| with_suffix(&a.input.input, ".sample.xyz"));
    save_cloud(&out, &cloud.select(&idx)?)?;
    write_indices(&with_suffix(&out, ".idx"), &idx)?;
    println!("{} points written to {}", idx.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
struct SigmaMapArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    /// Build windows on coordinates and features together.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    use_coords: bool,
    /// Leave each center out of its own window.
    #[arg(long)]
    exclude_self: bool,
    /// Defaults to `<input>.sigma.xyz`.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write `index,sigma` for every point.
    #[arg(long)]
    sigma_csv: Option<PathBuf>,
}

fn cmd_sigma_map(a: SigmaMapArgs) -> Result<()> {
    let cloud = a.input.load()?;
    let opts = SigmaMapOptions {
        use_coords: a.use_coords,
        exclude_self: a.exclude_self,
    };
    let flagged = sigma_map_with(&cloud, a.k, a.threshold, opts)?;
    let out = a.output.unwrap_or_else(|| with_suffix(&a.input.input, ".sigma.xyz"));
    let coords: Vec<[f64; 3]> = flagged.iter().map(|&i| cloud.coords()[i]).collect();
    write_coords(&out, &coords)?;
    write_indices(&with_suffix(&out, ".idx"), &flagged)?;
    if let Some(path) = a.sigma_csv {
        let sigmas = window_sigmas(&cloud, a.k, opts)?;
        let mut text = String::from("index,sigma\n");
        for (i, s) in sigmas.iter().enumerate() {
            text.push_str(&format!("{i},{s}\n"));
        }
        write_text(&path, &text)?;
    }
    println!("{}", flagged.len());
    Ok(())
}

#[derive(Debug, Args)]
struct WindowsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "fps")]
    method: SampleMethod,
    /// Number of centers.
    #[arg(long)]
    count: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output bundle directory.
    #[arg(short, long)]
    output: PathBuf,
}

fn cmd_windows(a: WindowsArgs) -> Result<()> {
    let cloud = a.input.load()?;
    let centers = sample_indices(&cloud, a.method, a.count, a.seed)?;
    let index = build_index(&cloud)?;
    let inputs = centers
        .iter()
        .map(|&c| PagwnInput::from_cloud(&cloud, c, &index.knn_of_point(c, a.k, false)?))
        .collect::<Result<Vec<_>>>()?;
    let mut bundle = inputs_to_tensors(&inputs)?;
    let ids = centers.iter().map(|&c| c as i64).collect();
    bundle.push(("centers".into(), Tensor::new(vec![centers.len()], TensorData::I64(ids))?));
    write_bundle(&a.output, &bundle)?;
    println!("{} windows of {} written to {}", centers.len(), a.k, a.output.display());
    Ok(())
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Texture-group size.
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Normalize each window as a single group.
    #[arg(long)]
    ungrouped: bool,
    #[arg(long, default_value_t = pgrain::norm::DEFAULT_EPSILON)]
    epsilon: f64,
}

impl SplitArgs {
    fn config(&self) -> PagwnConfig {
        PagwnConfig {
            split: (!self.ungrouped).then_some(self.m),
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Args)]
struct NormalizeArgs {
    /// Input bundle directory (as written by `windows`).
    bundle: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(short, long)]
    output: PathBuf,
}

fn cmd_normalize(a: NormalizeArgs) -> Result<()> {
    let inputs = inputs_from_tensors(&read_bundle(&a.bundle)?)?;
    let cfg = a.split.config();
    let (k, d) = (inputs[0].k(), inputs[0].n() + 3);
    let groups = if cfg.split.is_some() { 2 } else { 1 };
    let mut values = Array3::zeros((inputs.len(), k, d));
    let mut sigmas = Array2::zeros((inputs.len(), groups));
    for (b, input) in inputs.iter().enumerate() {
        let w = input.joint_window()?;
        let nw = match cfg.split {
            Some(m) => group_wise_window_normalize(&w, m, cfg.epsilon)?,
            None => window_normalize(&w, cfg.epsilon)?,
        };
        values.index_axis_mut(ndarray::Axis(0), b).assign(&nw.values());
        match nw.stats() {
            pgrain::norm::NormStats::Single(s) => sigmas[[b, 0]] = s.sigma(),
            pgrain::norm::NormStats::Grouped(s1, s2) => {
                sigmas[[b, 0]] = s1.sigma();
                sigmas[[b, 1]] = s2.sigma();
            }
        }
    }
    write_bundle(
        &a.output,
        &[
            ("normalized".into(), Tensor::from_arrayd(&values.into_dyn())),
            ("sigma".into(), Tensor::from_array2(&sigmas)),
        ],
    )?;
    println!("{} windows normalized", inputs.len());
    Ok(())
}

#[derive(Debug, Args)]
struct ForwardArgs {
    /// Input bundle directory (as written by `windows`).
    bundle: PathBuf,
    /// Parameter bundle; freshly initialized from `--seed` when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
    /// Use running batch-norm statistics instead of batch statistics.
    #[arg(long)]
    inference: bool,
    /// Also write the parameters used to this directory.
    #[arg(long)]
    save_params: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

fn cmd_pagwn_forward(a: ForwardArgs) -> Result<()> {
    let inputs = inputs_from_tensors(&read_bundle(&a.bundle)?)?;
    let mut params = match &a.params {
        Some(dir) => pagwn_params_from_tensors(&read_bundle(dir)?, "")?,
        None => PagwnParams::init(inputs[0].n(), a.seed),
    };
    params.set_mode(if a.inference { BnMode::Inference } else { BnMode::Training });
    let out = pagwn_forward_batch(&inputs, &params, &a.split.config())?;
    let (b, k, n) = (inputs.len(), inputs[0].k(), params.n());
    let pre = out
        .pre_abstract
        .clone()
        .into_shape_with_order((b, k, n))
        .map_err(|e| Error::shape(e.to_string()))?;
    write_bundle(
        &a.output,
        &[
            ("aggregated".into(), Tensor::from_array2(&out.aggregated)),
            ("pre_abstract".into(), Tensor::from_arrayd(&pre.into_dyn())),
        ],
    )?;
    if let Some(dir) = a.save_params {
        write_bundle(dir, &pagwn_params_to_tensors("", &params))?;
    }
    println!("{b} centers aggregated to {} channels", out.aggregated.ncols());
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SceneKind {
    /// Dense plane next to a sparse box edge.
    Density,
    /// Two constant-color planes meeting at an edge.
    Edge,
}

#[derive(Debug, Args)]
struct SceneArgs {
    #[arg(long, value_enum, default_value = "density")]
    kind: SceneKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points per plane (edge scenes).
    #[arg(long, default_value_t = 1000)]
    points: usize,
    /// Boundary band half-width (edge scenes); a `.mask` sidecar marks points
    /// inside it.
    #[arg(long, default_value_t = 0.07)]
    band: f64,
    /// `.xyz` or `.ply`.
    #[arg(short, long)]
    output: PathBuf,
}

fn cmd_scene(a: SceneArgs) -> Result<()> {
    let cloud = match a.kind {
        SceneKind::Density => generate_scene(&density_imbalanced_spec(a.seed))?,
        SceneKind::Edge => {
            let (cloud, mask) = edge_scene(a.points, 1.0, a.band, a.seed)?;
            let flags: Vec<u32> = mask.iter().map(|&m| u32::from(m)).collect();
            write_labels(with_suffix(&a.output, ".mask"), &flags)?;
            cloud
        }
    };
    save_cloud(&a.output, &cloud)?;
    println!("{} points written to {}", cloud.len(), a.output.display());
    Ok(())
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// JSON pipeline configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    aggregator: Option<String>,
    /// Generated training scenes per seed.
    #[arg(long, default_value_t = 4)]
    train_scenes: usize,
    /// Generated test scenes per seed.
    #[arg(long, default_value_t = 2)]
    test_scenes: usize,
}

impl PipelineArgs {
    fn config(&self) -> Result<ToyPipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => ToyPipelineConfig::default(),
        };
        cfg.seed = self.seed;
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(agg) = &self.aggregator {
            cfg.aggregator = agg.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn scenes(&self) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
        seeded_scenes(self.seed, self.train_scenes, self.test_scenes, density_imbalanced_spec)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output directory: checkpoint/, metrics.csv, losses.csv,
    /// predictions.txt, truth.txt.
    #[arg(short, long)]
    output: PathBuf,
}

fn cmd_train_toy(a: TrainArgs) -> Result<()> {
    let cfg = a.pipeline.config()?;
    let (train, test) = a.pipeline.scenes()?;
    let res = run_toy_pipeline(&cfg, &train, &test)?;
    fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
    write_bundle(a.output.join("checkpoint"), &res.checkpoint)?;
    write_text(&a.output.join("metrics.csv"), &report_csv(&res.report))?;
    let mut losses = String::from("epoch,loss\n");
    for (i, l) in res.epoch_losses.iter().enumerate() {
        losses.push_str(&format!("{i},{l}\n"));
    }
    write_text(&a.output.join("losses.csv"), &losses)?;
    write_labels(a.output.join("predictions.txt"), &res.predictions)?;
    let truth: Vec<u32> = test.iter().flat_map(|c| c.labels().unwrap_or_default().to_vec()).collect();
    write_labels(a.output.join("truth.txt"), &truth)?;
    print!("{}", report_text(&res.report));
    Ok(())
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted labels, one per line.
    #[arg(long)]
    pred: PathBuf,
    /// True labels, one per line.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    classes: usize,
    /// CSV destination; printed to stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let report = compute_metrics(&read_labels(&a.pred)?, &read_labels(&a.truth)?, a.classes)?;
    match a.output {
        Some(path) => {
            write_text(&path, &report_csv(&report))?;
            print!("{}", report_text(&report));
        }
        None => print!("{}", report_csv(&report)),
    }
    Ok(())
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Comma-separated split sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<usize>,
    /// CSV destination; printed to stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn emit_csv(output: Option<PathBuf>, csv: &str) -> Result<()> {
    match output {
        Some(path) => write_text(&path, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_ablate_m(a: AblateArgs) -> Result<()> {
    let cfg = a.pipeline.config()?;
    let (train, test) = a.pipeline.scenes()?;
    let rows = ablate_m(&cfg, &a.m, &train, &test)?;
    emit_csv(a.output, &ablation_csv(&rows))
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_value = "pagwn,knn-baseline")]
    aggregators: Vec<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let cfg = a.pipeline.config()?;
    let kinds = a
        .aggregators
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<AggregatorKind>>>()?;
    let seeds: Vec<u64> = (a.pipeline.seed..a.pipeline.seed + a.seeds).collect();
    let rows = compare_aggregators(
        &cfg,
        &kinds,
        &seeds,
        a.pipeline.train_scenes,
        a.pipeline.test_scenes,
        density_imbalanced_spec,
    )?;
    emit_csv(a.output, &comparison_csv(&rows))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::SigmaMap(a) => cmd_sigma_map(a),
        Command::Windows(a) => cmd_windows(a),
        Command::Normalize(a) => cmd_normalize(a),
        Command::PagwnForward(a) => cmd_pagwn_forward(a),
        Command::Scene(a) => cmd_scene(a),
        Command::TrainToy(a) => cmd_train_toy(a),
        Command::Eval(a) => cmd_eval(a),
        Command::AblateM(a) => cmd_ablate_m(a),
        Command::Compare(a) => cmd_compare(a),
    }
}
