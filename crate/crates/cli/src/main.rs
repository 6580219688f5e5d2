//! `tcnn`: train, evaluate, count operations and check gradients.

mod spec;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcnn::checkpoint::Checkpoint;
use tcnn::complexity::{count_model, AdditionConvention, Theta};
use tcnn::data::SyntheticKind;
use tcnn::gradcheck::{run_all, Fault, GradcheckOptions};
use tcnn::train::{evaluate, log_csv, Trainer};
use tcnn::zoo::{build, list_variants, ModelConfig, VariantId};

use spec::{config_error, env_seed, merge, DataSection, ModelSection, RunSpec, TrainSection};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Config = 2,
    Data = 3,
    Check = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub outcome: Outcome,
    pub message: String,
}

impl Failure {
    pub fn new(outcome: Outcome, message: impl Into<String>) -> Self {
        Failure { outcome, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<tcnn::Error> for Failure {
    fn from(e: tcnn::Error) -> Self {
        let outcome = if e.is_data_error() { Outcome::Data } else { Outcome::Config };
        Failure::new(outcome, e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(Outcome::Data, format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "tcnn", version, about = "Tropical convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Count multiplications, additions and comparisons of a model.
    CountOps(CountArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// List the model variants.
    ListVariants,
}

#[derive(Args, Default)]
struct DataArgs {
    /// Data source: idx, csv or synthetic.
    #[arg(long = "data")]
    kind: Option<String>,
    /// IDX training images (optionally gzipped).
    #[arg(long)]
    train_images: Option<PathBuf>,
    /// IDX training labels.
    #[arg(long)]
    train_labels: Option<PathBuf>,
    /// IDX test images.
    #[arg(long)]
    test_images: Option<PathBuf>,
    /// IDX test labels.
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// CSV training rows: features then an integer label.
    #[arg(long)]
    train_csv: Option<PathBuf>,
    /// CSV test rows.
    #[arg(long)]
    test_csv: Option<PathBuf>,
    /// Synthetic set: blobs-1d, blobs-2d or blobs-3d.
    #[arg(long)]
    synthetic: Option<SyntheticKind>,
    /// Synthetic sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Synthetic class count.
    #[arg(long)]
    classes: Option<usize>,
    /// Synthetic class separation.
    #[arg(long)]
    separation: Option<f32>,
    /// Training fraction when no test set is given.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Keep only the first N training samples.
    #[arg(long)]
    limit_train: Option<usize>,
    /// Keep only the first N test samples.
    #[arg(long)]
    limit_test: Option<usize>,
    /// Seed for synthetic data and splits.
    #[arg(long)]
    data_seed: Option<u64>,
}

impl DataArgs {
    fn apply(&self, d: &mut DataSection) {
        merge(&mut d.kind, &self.kind);
        merge(&mut d.train_images, &self.train_images);
        merge(&mut d.train_labels, &self.train_labels);
        merge(&mut d.test_images, &self.test_images);
        merge(&mut d.test_labels, &self.test_labels);
        merge(&mut d.train_csv, &self.train_csv);
        merge(&mut d.test_csv, &self.test_csv);
        merge(&mut d.synthetic, &self.synthetic);
        merge(&mut d.samples, &self.samples);
        merge(&mut d.classes, &self.classes);
        merge(&mut d.separation, &self.separation);
        merge(&mut d.train_fraction, &self.train_fraction);
        merge(&mut d.limit_train, &self.limit_train);
        merge(&mut d.limit_test, &self.limit_test);
        merge(&mut d.seed, &self.data_seed);
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model variant (see list-variants).
    #[arg(long)]
    variant: Option<VariantId>,
    /// Seed for weight initialisation.
    #[arg(long)]
    model_seed: Option<u64>,
    /// Optimizer: adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Base learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// SGD momentum.
    #[arg(long)]
    momentum: Option<f64>,
    /// SGD weight decay.
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Learning-rate schedule: none, exponential or multistep.
    #[arg(long)]
    schedule: Option<String>,
    /// Exponential decay per epoch.
    #[arg(long)]
    gamma: Option<f64>,
    /// Multistep epochs, comma separated.
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<usize>>,
    /// Multistep decay factor.
    #[arg(long)]
    factor: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed for shuffling; also the fallback for other seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    data: DataArgs,
    /// Directory for checkpoint.tcnn, train_log.csv, metrics.json and run.json.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON run configuration supplying the data section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Write metrics JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    /// Model variant (see list-variants).
    #[arg(long)]
    variant: VariantId,
    /// Per-sample input shape, e.g. 1,28,28.
    #[arg(long, value_delimiter = ',', conflicts_with = "preset")]
    input_shape: Option<Vec<usize>>,
    /// Input preset: mnist, cifar10, svhn, ecg, urbansound8k, speechcommands.
    #[arg(long)]
    preset: Option<String>,
    /// Class count; defaults to the preset's or 10.
    #[arg(long)]
    classes: Option<usize>,
    /// Batch size the totals are scaled by.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Cost of a multiplication relative to an addition.
    #[arg(long, default_value_t = 10.0)]
    theta: f64,
    /// Count (CK - 1) additions per standard-conv output instead of the reduced form.
    #[arg(long)]
    exact_adds: bool,
    /// Write the CSV table here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the random cases.
    #[arg(long)]
    seed: Option<u64>,
    /// Random cases per suite.
    #[arg(long)]
    cases: Option<usize>,
    /// Coordinates probed per tensor.
    #[arg(long)]
    max_coords: Option<usize>,
    /// Write the CSV report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_sign_fault: bool,
}

fn preset(name: &str) -> Option<(Vec<usize>, usize)> {
    Some(match name.to_ascii_lowercase().as_str() {
        "mnist" => (vec![1, 28, 28], 10),
        "cifar10" | "svhn" => (vec![3, 32, 32], 10),
        "ecg" => (vec![1, 187], 5),
        "urbansound8k" => (vec![1, 32_000], 10),
        "speechcommands" => (vec![1, 8_000], 35),
        _ => return None,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn emit(output: Option<&Path>, contents: &str) -> Result<(), Failure> {
    match output {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut run = match &args.config {
        Some(p) => RunSpec::load(p)?,
        None => RunSpec::default(),
    };
    let m: &mut ModelSection = &mut run.model;
    merge(&mut m.variant, &args.variant);
    merge(&mut m.seed, &args.model_seed);
    let t: &mut TrainSection = &mut run.train;
    merge(&mut t.optimizer, &args.optimizer);
    merge(&mut t.lr, &args.lr);
    merge(&mut t.momentum, &args.momentum);
    merge(&mut t.weight_decay, &args.weight_decay);
    merge(&mut t.schedule, &args.schedule);
    merge(&mut t.gamma, &args.gamma);
    merge(&mut t.milestones, &args.milestones);
    merge(&mut t.factor, &args.factor);
    merge(&mut t.batch_size, &args.batch_size);
    merge(&mut t.epochs, &args.epochs);
    merge(&mut t.seed, &args.seed);
    args.data.apply(&mut run.data);
    merge(&mut run.output_dir, &args.output_dir);
    run.command = Some("train".into());
    run.resolve_seeds(args.seed.or(env_seed()?));

    let variant = run.model.variant.ok_or_else(|| config_error("--variant is required"))?;
    let train_config = run.train.to_config()?;
    run.train = TrainSection::resolved(&train_config);
    let splits = run.data.load()?;
    run.data.kind = Some(run.data.kind()?.to_string());
    let input_shape = run.model.input_shape.clone().unwrap_or_else(|| splits.train.sample_shape().to_vec());
    let classes = run.model.num_classes.unwrap_or(splits.train.num_classes.max(splits.test.num_classes));
    run.model.input_shape = Some(input_shape.clone());
    run.model.num_classes = Some(classes);
    let model_config = ModelConfig::new(variant, &input_shape, classes).with_seed(run.model.seed.unwrap_or(0));
    model_config.validate().map_err(|e| config_error(e.to_string()))?;

    let out = run.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(variant.key()));
    fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    let resolved = serde_json::to_string_pretty(&run).expect("run spec serializes");
    write_file(&out.join("run.json"), &(resolved + "\n"))?;

    let model = build(&model_config).map_err(|e| config_error(e.to_string()))?;
    let mut trainer = Trainer::new(model, train_config)?;
    let logs = trainer.fit(&splits.train, Some(&splits.test), |log| {
        let acc = log.test_acc.map(|a| format!("{:.4}", a)).unwrap_or_default();
        eprintln!("epoch {:>3}  lr {:.6}  loss {:.5}  test_acc {acc}", log.epoch, log.lr, log.train_loss);
    })?;
    let report = evaluate(&trainer.model, &splits.test)?;

    Checkpoint::from_trainer(&model_config, &trainer).save(out.join("checkpoint.tcnn"))?;
    write_file(&out.join("train_log.csv"), &log_csv(&logs))?;
    write_file(&out.join("metrics.json"), &(report.to_json() + "\n"))?;
    println!("{}: accuracy {:.4} on {} test samples, outputs in {}", variant.key(), report.accuracy, splits.test.len(), out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let mut data = match &args.config {
        Some(p) => RunSpec::load(p)?.data,
        None => DataSection::default(),
    };
    args.data.apply(&mut data);
    data.seed.get_or_insert(env_seed()?.unwrap_or(0));
    let test = data.load_test()?;
    let trainer = checkpoint.restore()?;
    let report = evaluate(&trainer.model, &test)?;
    emit(args.output.as_deref(), &(report.to_json() + "\n"))
}

fn count_ops(args: CountArgs) -> Result<(), Failure> {
    let (shape, preset_classes) = match (&args.input_shape, &args.preset) {
        (Some(s), _) => (s.clone(), 10),
        (None, Some(p)) => preset(p).ok_or_else(|| config_error(format!("unknown preset {p:?}")))?,
        (None, None) => return Err(config_error("give --input-shape or --preset")),
    };
    let theta = Theta::new(args.theta).map_err(|e| config_error(e.to_string()))?;
    let config = ModelConfig::new(args.variant, &shape, args.classes.unwrap_or(preset_classes));
    let model = build(&config).map_err(|e| config_error(e.to_string()))?;
    let convention = if args.exact_adds { AdditionConvention::Exact } else { AdditionConvention::Reduced };
    let ops = count_model(&model, args.batch, theta, convention).map_err(|e| config_error(e.to_string()))?;
    emit(args.output.as_deref(), &ops.to_csv())
}

fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let d = GradcheckOptions::default();
    let opts = GradcheckOptions {
        seed: args.seed.or(env_seed()?).unwrap_or(0),
        cases: args.cases.unwrap_or(d.cases),
        max_coords: args.max_coords.unwrap_or(d.max_coords),
        fault: args.inject_sign_fault.then_some(Fault::FlipSign),
        ..d
    };
    let report = run_all(&opts)?;
    emit(args.output.as_deref(), &report.to_csv())?;
    if report.passed() {
        eprintln!("gradcheck: all {} suites passed", report.suites.len());
        Ok(())
    } else {
        let names: Vec<&str> = report.failing().iter().map(|s| s.suite.as_str()).collect();
        Err(Failure::new(Outcome::Check, format!("gradcheck failed: {}", names.join(", "))))
    }
}

fn list() {
    for (v, desc) in list_variants() {
        println!("{:<10} {desc}", v.key());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::CountOps(a) => count_ops(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::ListVariants => {
            list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.outcome as u8)
        }
    }
}
