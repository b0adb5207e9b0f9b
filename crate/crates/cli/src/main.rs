//! `gtmp`: command-line front end for geometric tree message passing.
//!
//! Every subcommand writes only under `--run-dir`, starting with `config.json`.
//! Exit codes: 0 ok, 1 usage, 2 data or validation error, 3 numeric failure.

mod rundir;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use gtmp::autodiff::ParamSet;
use gtmp::branches::enumerate_branches;
use gtmp::eval::{bench_scaling, invariance_test, model_scalar_score, with_coordinate_attrs};
use gtmp::geometry::{extract_all, features_from_csv, features_to_csv, reconstruct_tree, table_from_rows, SeedTriple};
use gtmp::io::{read_tree_file, serialize_tree_json, DatasetManifest, ManifestEntry, TaskKind};
use gtmp::metrics::mean_std;
use gtmp::model::{EncoderConfig, GtmpModel, ModelConfig};
use gtmp::synth::{generate_synthetic, GeneratorConfig, SynthTask};
use gtmp::train::{
    evaluate_metric, finetune, predict_scores, pretrain_ssl, split_indices, train_supervised, Dataset, RunReport,
    TrainConfig, TrainMode,
};
use gtmp::tree::GeometricTree;
use gtmp::GtmpError;

use rundir::{layered, RunDir};

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: String) -> Self {
        Self { code: 1, message }
    }

    pub fn data(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl From<GtmpError> for Failure {
    fn from(e: GtmpError) -> Self {
        Self { code: if e.is_numeric() { 3 } else { 2 }, message: e.to_string() }
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(name = "gtmp", version, about = "Rigid-motion invariant message passing on 3D trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset and its manifest.
    Generate(GenerateArgs),
    /// Convert an SWC or JSON tree to canonical tree JSON.
    Convert(ConvertArgs),
    /// Write the branch feature CSV of a tree.
    Extract(ExtractArgs),
    /// Rebuild coordinates from a feature CSV, a topology and a seeded chain.
    Reconstruct(ReconstructArgs),
    /// Self-supervised pretraining of an encoder.
    Pretrain(TrainArgs),
    /// Supervised training from scratch.
    Train(TrainArgs),
    /// Supervised training starting from a pretrained encoder.
    Finetune(FinetuneArgs),
    /// Score a trained model on a manifest split.
    Evaluate(EvaluateArgs),
    /// Rescore trees under random rigid motions.
    Invariance(InvarianceArgs),
    /// Time forward and backward passes against tree size.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Generator settings JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Split seed recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args, Serialize)]
struct ConvertArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Output name inside the run dir (default: input stem + .json).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Serialize)]
struct ExtractArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "features.csv")]
    out: String,
}

#[derive(Args, Serialize)]
struct ReconstructArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Branch feature CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Tree file supplying parent links and the seed coordinates.
    #[arg(long)]
    topology: PathBuf,
    /// Node ids `a,b,c` of a parent -> child -> grandchild chain.
    #[arg(long)]
    seed_triple: String,
    #[arg(long, default_value = "coords.json")]
    out: String,
}

#[derive(Args, Serialize, Clone)]
struct TrainArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Training settings JSON (or an earlier run's config.json); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    label_fraction: Option<f64>,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    repeat: usize,
}

#[derive(Args, Serialize)]
struct FinetuneArgs {
    #[command(flatten)]
    #[serde(flatten)]
    train: TrainArgs,
    /// Model file written by `pretrain`.
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    freeze_encoder: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Args, Serialize)]
struct InvarianceArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Random rigid motions per magnitude.
    #[arg(long, default_value_t = 10)]
    transforms: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1.0, 10.0, 100.0, 1000.0])]
    magnitudes: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    /// Also score a fresh model fed raw coordinates, which should not be invariant.
    #[arg(long)]
    negative_control: bool,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Encoder settings JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = (1..=10).map(|k| k * 1000).collect::<Vec<usize>>())]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    trees_per_point: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 1 } else { 0 };
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Outcome<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Convert(a) => convert(a),
        Command::Extract(a) => extract(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Pretrain(a) => train_family(TrainMode::Pretrain, a, None),
        Command::Train(a) => train_family(TrainMode::Supervised, a, None),
        Command::Finetune(a) => {
            let extra = (a.encoder.clone(), a.freeze_encoder);
            train_family(TrainMode::Finetune, a.train, Some(extra))
        }
        Command::Evaluate(a) => evaluate(a),
        Command::Invariance(a) => invariance(a),
        Command::Bench(a) => bench(a),
    }
}

fn read_text(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn generate(a: GenerateArgs) -> Outcome<()> {
    let mut cfg: GeneratorConfig = layered(&GeneratorConfig::default(), a.config.as_deref())?;
    if let Some(c) = a.count {
        cfg.count = c;
    }
    if let Some(t) = a.task {
        cfg.task = match t {
            TaskArg::Classification => SynthTask::Classification,
            TaskArg::Regression => SynthTask::Regression,
        };
    }
    let rd = RunDir::create(&a.run_dir)?;
    rd.snapshot("generate", &a, &cfg)?;
    let samples = generate_synthetic(&cfg, a.seed)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("trees/tree_{i:05}.json");
        rd.write(&name, &serialize_tree_json(&s.tree))?;
        entries.push(ManifestEntry { path: name.into(), target: Some(s.target()) });
    }
    let (task_kind, target_name) = match cfg.task {
        SynthTask::Classification => (TaskKind::Classification, "class"),
        SynthTask::Regression => (TaskKind::Regression, "diameter"),
    };
    let manifest = DatasetManifest {
        entries,
        task_kind,
        split_seed: a.split_seed,
        split_ratios: [0.8, 0.1, 0.1],
        target_name: Some(target_name.into()),
    };
    rd.write("manifest.json", &manifest.to_json())?;
    println!("wrote {} trees and manifest.json to {}", samples.len(), rd.root().display());
    Ok(())
}

fn convert(a: ConvertArgs) -> Outcome<()> {
    let rd = RunDir::create(&a.run_dir)?;
    let out = match &a.out {
        Some(o) => o.clone(),
        None => {
            let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("tree");
            format!("{stem}.json")
        }
    };
    rd.snapshot("convert", &a, &serde_json::json!({ "out": out }))?;
    let tree = read_tree_file(&a.input)?;
    let path = rd.write(&out, &serialize_tree_json(&tree))?;
    println!("{} nodes -> {}", tree.len(), path.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Outcome<()> {
    let rd = RunDir::create(&a.run_dir)?;
    rd.path(&a.out)?;
    rd.snapshot("extract", &a, &Value::Null)?;
    let tree = read_tree_file(&a.input)?;
    let index = enumerate_branches(&tree);
    let feats = extract_all(&tree, &index)?;
    let path = rd.write(&a.out, &features_to_csv(&tree, &index, &feats))?;
    println!("{} branches -> {}", feats.len(), path.display());
    Ok(())
}

fn parse_triple(s: &str) -> Outcome<[i64; 3]> {
    let ids: Vec<i64> = s
        .split(',')
        .map(|p| p.trim().parse::<i64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::usage(format!("--seed-triple {s:?}: expected three integer node ids")))?;
    ids.try_into().map_err(|_| Failure::usage(format!("--seed-triple {s:?}: expected exactly three ids")))
}

fn reconstruct(a: ReconstructArgs) -> Outcome<()> {
    let ids = parse_triple(&a.seed_triple)?;
    let rd = RunDir::create(&a.run_dir)?;
    rd.path(&a.out)?;
    rd.snapshot("reconstruct", &a, &serde_json::json!({ "seed_ids": ids }))?;
    let topology = read_tree_file(&a.topology)?;
    let rows = features_from_csv(&read_text(&a.input)?)?;
    let table = table_from_rows(&topology, &rows)?;
    let mut nodes = [0usize; 3];
    for (slot, id) in nodes.iter_mut().zip(ids) {
        *slot = topology.index_of(id).ok_or_else(|| Failure::data(format!("seed node id {id} not in topology")))?;
    }
    let seed = SeedTriple { nodes, positions: nodes.map(|v| topology.position(v)) };
    let coords = reconstruct_tree(&topology, &table, seed)?;
    let rebuilt = topology.with_positions(&coords)?;
    let max_dev = (0..topology.len())
        .flat_map(|v| (0..3).map(move |c| (v, c)))
        .map(|(v, c)| (coords[v][c] - topology.position(v)[c]).abs())
        .fold(0.0f64, f64::max);
    let path = rd.write(&a.out, &serialize_tree_json(&rebuilt))?;
    rd.write(
        "summary.json",
        &to_pretty(&serde_json::json!({ "nodes": coords.len(), "max_abs_deviation_from_topology": max_dev })),
    )?;
    println!("{} nodes -> {}; max |deviation| from topology coordinates {max_dev:.3e}", coords.len(), path.display());
    Ok(())
}

fn load_manifest(path: &Path) -> Outcome<(DatasetManifest, Dataset)> {
    let manifest = DatasetManifest::from_json(&read_text(path)?)?;
    manifest.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let ds = Dataset::from_manifest(&manifest, base)?;
    Ok((manifest, ds))
}

fn train_config(mode: TrainMode, a: &TrainArgs, manifest: &DatasetManifest) -> Outcome<TrainConfig> {
    let base = TrainConfig { mode, split_seed: manifest.split_seed, split_ratios: manifest.split_ratios, ..Default::default() };
    let mut cfg = layered(&base, a.config.as_deref())?;
    cfg.mode = mode;
    macro_rules! set {
        ($flag:expr => $($field:tt)+) => {
            if let Some(v) = $flag {
                cfg.$($field)+ = v;
            }
        };
    }
    set!(a.epochs => epochs);
    set!(a.batch_size => batch_size);
    set!(a.lr => lr);
    set!(a.seed => seed);
    set!(a.split_seed => split_seed);
    set!(a.hidden_dim => encoder.hidden_dim);
    set!(a.layers => encoder.num_layers);
    set!(a.label_fraction => label_fraction);
    cfg.validate()?;
    if a.repeat == 0 {
        return Err(Failure::usage("--repeat must be at least 1".into()));
    }
    Ok(cfg)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    config: ModelConfig,
    params: Value,
}

const MODEL_FORMAT: &str = "gtmp-model";

fn model_json(model: &GtmpModel) -> String {
    let params: Value = serde_json::from_str(&model.params.to_checkpoint_json()).expect("checkpoint is JSON");
    to_pretty(&ModelFile { format: MODEL_FORMAT.into(), config: model.config.clone(), params })
}

fn load_model(path: &Path) -> Outcome<GtmpModel> {
    let file: ModelFile = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Failure::from(GtmpError::Checkpoint(format!("{}: {e}", path.display()))))?;
    if file.format != MODEL_FORMAT {
        return Err(GtmpError::Checkpoint(format!("{}: not a model file", path.display())).into());
    }
    let params = ParamSet::from_checkpoint_json(&file.params.to_string())?;
    Ok(GtmpModel::from_params(file.config, params)?)
}

fn write_run(rd: &RunDir, model: &GtmpModel, report: &RunReport) -> Outcome<()> {
    rd.write("model.json", &model_json(model))?;
    rd.write("report.json", &report.to_json())?;
    rd.write("metrics.csv", &report.metrics_csv())?;
    Ok(())
}

fn describe(report: &RunReport) -> String {
    let metric = report
        .test_metric
        .as_ref()
        .map(|m| format!("test {} {:.4}", m.name, m.value))
        .unwrap_or_else(|| format!("best val loss {:.6}", report.best_val_loss));
    format!("seed {}: {metric} (best epoch {}, splits {:?})", report.seed, report.best_epoch, report.split_sizes)
}

fn train_family(mode: TrainMode, a: TrainArgs, encoder: Option<(PathBuf, bool)>) -> Outcome<()> {
    let (manifest, ds) = load_manifest(&a.manifest)?;
    let mut cfg = train_config(mode, &a, &manifest)?;
    let enc_model = match &encoder {
        Some((path, freeze)) => {
            cfg.freeze_encoder |= *freeze;
            let m = load_model(path)?;
            // Encoder shape comes from the checkpoint unless set explicitly.
            if a.hidden_dim.is_none() && a.layers.is_none() && a.config.is_none() {
                cfg.encoder = m.encoder_config().clone();
                cfg.encoder.attr_dim = 0;
            }
            Some(m)
        }
        None => None,
    };
    let command = match mode {
        TrainMode::Supervised => "train",
        TrainMode::Pretrain => "pretrain",
        TrainMode::Finetune => "finetune",
    };
    let rd = RunDir::create(&a.run_dir)?;
    let args_doc = serde_json::json!({
        "train": &a,
        "encoder": encoder.as_ref().map(|e| &e.0),
        "freeze_encoder": encoder.as_ref().map(|e| e.1),
    });
    rd.snapshot(command, &args_doc, &cfg)?;

    let run_once = |c: &TrainConfig| -> Outcome<(GtmpModel, RunReport)> {
        Ok(match mode {
            TrainMode::Supervised => train_supervised(&ds, c)?,
            TrainMode::Pretrain => pretrain_ssl(&ds, c)?,
            TrainMode::Finetune => finetune(enc_model.as_ref().expect("finetune has an encoder"), &ds, c)?,
        })
    };

    if a.repeat == 1 {
        let (model, report) = run_once(&cfg)?;
        write_run(&rd, &model, &report)?;
        println!("{}", describe(&report));
        return Ok(());
    }
    let mut values = Vec::new();
    let mut runs = Vec::new();
    for i in 0..a.repeat {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        let (model, report) = run_once(&c)?;
        let sub = rd.subdir(&format!("run_{i:02}"))?;
        write_run(&sub, &model, &report)?;
        println!("{}", describe(&report));
        let (name, value) = match &report.test_metric {
            Some(m) => (m.name.clone(), m.value),
            None => ("best_val_loss".to_string(), report.best_val_loss),
        };
        values.push(value);
        runs.push(serde_json::json!({ "seed": c.seed, "metric": name, "value": value }));
    }
    let (mean, std) = mean_std(&values);
    let name = runs[0]["metric"].clone();
    rd.write("summary.json", &to_pretty(&serde_json::json!({ "metric": name, "mean": mean, "std": std, "runs": runs })))?;
    println!("{}: {mean:.4} ± {std:.4} over {} runs", name.as_str().unwrap_or("metric"), a.repeat);
    Ok(())
}

fn split_subset(manifest: &DatasetManifest, n: usize, split: SplitArg) -> Outcome<Vec<usize>> {
    if split == SplitArg::All {
        return Ok((0..n).collect());
    }
    let s = split_indices(n, manifest.split_ratios, manifest.split_seed)?;
    Ok(match split {
        SplitArg::Train => s.train,
        SplitArg::Val => s.val,
        _ => s.test,
    })
}

fn labelled(ds: &Dataset, idx: &[usize]) -> Outcome<(Vec<usize>, Vec<f64>)> {
    let mut keep = Vec::new();
    let mut targets = Vec::new();
    for &i in idx {
        if let Some(t) = ds.targets[i] {
            keep.push(i);
            targets.push(t);
        }
    }
    if keep.is_empty() {
        return Err(Failure::data("selected split has no labelled trees".into()));
    }
    Ok((keep, targets))
}

fn evaluate(a: EvaluateArgs) -> Outcome<()> {
    let rd = RunDir::create(&a.run_dir)?;
    rd.snapshot("evaluate", &a, &Value::Null)?;
    let model = load_model(&a.model)?;
    let (manifest, ds) = load_manifest(&a.manifest)?;
    let idx = split_subset(&manifest, ds.len(), a.split)?;
    let (keep, targets) = labelled(&ds, &idx)?;
    let trees: Vec<&GeometricTree> = keep.iter().map(|&i| &ds.trees[i]).collect();
    let metric = evaluate_metric(&model, &trees, &targets)?;
    let preds = predict_scores(&model, &trees)?;
    let mut csv = String::from("index,path,target,prediction\n");
    for ((&i, t), p) in keep.iter().zip(&targets).zip(&preds) {
        let shown: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        csv.push_str(&format!("{i},{},{t},{}\n", manifest.entries[i].path.display(), shown.join(";")));
    }
    rd.write("predictions.csv", &csv)?;
    rd.write("evaluation.json", &to_pretty(&serde_json::json!({ "trees": keep.len(), "metric": metric })))?;
    println!("{} {:.6} on {} trees", metric.name, metric.value, keep.len());
    Ok(())
}

fn invariance(a: InvarianceArgs) -> Outcome<()> {
    if a.transforms == 0 || a.magnitudes.is_empty() {
        return Err(Failure::usage("--transforms and --magnitudes must be non-empty".into()));
    }
    let rd = RunDir::create(&a.run_dir)?;
    rd.snapshot("invariance", &a, &Value::Null)?;
    let model = load_model(&a.model)?;
    let task = model.config.task.ok_or_else(|| Failure::data("model has no prediction head".into()))?;
    let (manifest, ds) = load_manifest(&a.manifest)?;
    let idx = split_subset(&manifest, ds.len(), a.split)?;
    let trees: Vec<GeometricTree> = idx.iter().map(|&i| ds.trees[i].clone()).collect();
    let labels: Option<Vec<bool>> = (task.kind == TaskKind::Classification)
        .then(|| idx.iter().map(|&i| ds.targets[i].map(|t| t == 1.0)).collect::<Option<Vec<bool>>>())
        .flatten()
        .filter(|l| l.iter().any(|&b| b) && l.iter().any(|&b| !b));

    let report = invariance_test(model_scalar_score(&model), &trees, labels.as_deref(), a.transforms, &a.magnitudes, a.seed)?;
    rd.write("invariance.csv", &report.to_csv())?;
    rd.write("invariance.svg", &svg::invariance_svg(&report, a.threshold))?;
    let mut summary = serde_json::json!({
        "trees": trees.len(),
        "threshold": a.threshold,
        "invariant": report.max_deviation <= a.threshold,
        "report": &report,
    });
    println!("max |score deviation| {:.3e} (threshold {:.0e})", report.max_deviation, a.threshold);

    if a.negative_control {
        let mut enc = model.encoder_config().clone();
        enc.attr_dim = trees.first().map_or(0, GeometricTree::attr_width) + 3;
        let control = GtmpModel::new(ModelConfig { encoder: enc, task: Some(task), generator_bins: None }, a.seed)?;
        let score = model_scalar_score(&control);
        // Coordinates are appended after each motion, so they move with the tree.
        let leaky = |t: &GeometricTree| score(&with_coordinate_attrs(t)?);
        let crep = invariance_test(leaky, &trees, labels.as_deref(), a.transforms, &a.magnitudes, a.seed)?;
        rd.write("control.csv", &crep.to_csv())?;
        rd.write("control.svg", &svg::invariance_svg(&crep, a.threshold))?;
        println!("control (raw coordinates as inputs): max |score deviation| {:.3e}", crep.max_deviation);
        summary["control"] = serde_json::to_value(&crep).expect("report serializes");
    }
    rd.write("invariance.json", &to_pretty(&summary))?;
    Ok(())
}

fn bench(a: BenchArgs) -> Outcome<()> {
    let mut enc: EncoderConfig = layered(&EncoderConfig::default(), a.config.as_deref())?;
    if let Some(d) = a.hidden_dim {
        enc.hidden_dim = d;
    }
    if let Some(l) = a.layers {
        enc.num_layers = l;
    }
    enc.validate()?;
    let rd = RunDir::create(&a.run_dir)?;
    rd.snapshot("bench", &a, &enc)?;
    let report = bench_scaling(&a.sizes, a.trees_per_point, &enc, a.seed)?;
    let table = report.to_table();
    rd.write("bench.csv", &report.to_csv())?;
    rd.write("bench.txt", &table)?;
    print!("{table}");
    Ok(())
}
