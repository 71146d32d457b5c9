use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dyngcn::commands::{self, DEFAULT_THRESHOLD};
use dyngcn::{Error, Result};
use dyngcn_core::data::SynthSpec;

/// Dynamic-topology graph convolution for skeleton action recognition.
#[derive(Parser)]
#[command(name = "dyngcn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic skeleton dataset with train/test manifests.
    Synth(SynthArgs),
    /// Train a model from a configuration file or preset.
    Train(TrainArgs),
    /// Top-1/top-5 accuracy and confusion counts of a checkpoint.
    Eval(EvalArgs),
    /// Accuracy of summed logits over several checkpoints.
    Ensemble(EnsembleArgs),
    /// Analytical FLOPs per sample, with and without the topology learner.
    Flops(FlopsArgs),
    /// Class-averaged learned adjacency of one layer as a matrix and a DOT graph.
    ExportTopology(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    /// Built-in layout name.
    #[arg(long, default_value = "ntu25")]
    layout: String,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    /// Standard deviation of coordinate noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of each class held out for the test manifest.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    test_fraction: f64,
    /// Write the plain-text sequence format instead of binary.
    #[arg(long)]
    text: bool,
}

#[derive(Args)]
struct ConfigSource {
    /// Run configuration (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// ntu-like, kinetics-like, smoke or toy.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    /// Output directory for checkpoint, metrics and the resolved config.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated 1-based epochs after which the learning rate decays.
    #[arg(long, value_delimiter = ',')]
    milestones: Option<Vec<usize>>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// joint, bone, joint-motion or bone-motion.
    #[arg(long)]
    modality: Option<String>,
    /// none, cen, cen-symmetric, cen-feature, cen-temporal or non-local.
    #[arg(long)]
    learner: Option<String>,
    /// Weight of the static branch.
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of classes of the classifier.
    #[arg(long)]
    classes: Option<usize>,
    /// Frames after temporal resizing.
    #[arg(long)]
    frames: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Repeat once per stream.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct FlopsArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long)]
    with_cen: bool,
    #[arg(long)]
    without_cen: bool,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// 1-based layer index.
    #[arg(long)]
    layer: usize,
    #[arg(long = "class")]
    class_id: usize,
    /// Learned entries above this value become edges.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Output path without extension; `.txt` and `.dot` are appended.
    #[arg(long)]
    out: PathBuf,
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = commands::load_config(a.source.config.as_deref(), a.source.preset.as_deref())?;
    if let Some(p) = a.train_manifest {
        cfg.data.train_manifest = Some(p);
    }
    if let Some(p) = a.test_manifest {
        cfg.data.test_manifest = Some(p);
    }
    if let Some(p) = a.output {
        cfg.output_dir = p;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.milestones {
        cfg.train.milestones = v;
    }
    if let Some(v) = a.lr {
        cfg.train.sgd.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.modality {
        cfg.train.modality = commands::parse_modality(&v)?;
    }
    if let Some(v) = a.learner {
        cfg.model.learner = commands::parse_learner(&v)?;
    }
    if let Some(v) = a.lambda {
        cfg.model.lambda_static = v;
    }
    if let Some(v) = a.classes {
        cfg.model.n_classes = v;
    }
    if let Some(v) = a.frames {
        cfg.model.frames = v;
    }
    cfg.validate()?;
    if a.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let out = commands::train_run(&cfg, |r| {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:.4}  top1 {}  top5 {}  lr {}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            opt(r.eval_top1),
            opt(r.eval_top5),
            r.lr
        );
    })?;
    println!("checkpoint={}", out.checkpoint.display());
    println!("metrics={}", out.metrics.display());
    if let Some(last) = out.records.last() {
        if let (Some(t1), Some(t5)) = (last.eval_top1, last.eval_top5) {
            println!("top1={t1}\ntop5={t5}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let spec = SynthSpec {
                n_classes: a.classes,
                samples_per_class: a.per_class,
                layout: a.layout,
                frames: a.frames,
                noise_sigma: a.noise,
                seed: a.seed,
            };
            let out = commands::synth(&spec, &a.out, a.test_fraction, a.text)?;
            println!("train_manifest={}\ntrain_samples={}", out.train_manifest.display(), out.n_train);
            println!("test_manifest={}\ntest_samples={}", out.test_manifest.display(), out.n_test);
        }
        Command::Train(a) => run_train(a)?,
        Command::Eval(a) => {
            let r = commands::evaluate_checkpoint(&a.checkpoint, &a.manifest, a.batch_size)?;
            print!("{}", commands::format_eval(&r));
        }
        Command::Ensemble(a) => {
            let r = commands::ensemble(&a.checkpoints, &a.manifest, a.batch_size)?;
            print!("{}", commands::format_eval(&r));
        }
        Command::Flops(a) => {
            let cfg = commands::load_config(a.source.config.as_deref(), a.source.preset.as_deref())?;
            let text = commands::format_flops(&commands::flops(&cfg.model, a.with_cen, a.without_cen)?);
            if let Some(p) = &a.out {
                std::fs::write(p, &text).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            }
            print!("{text}");
        }
        Command::ExportTopology(a) => {
            let (txt, dot, t) = commands::export_topology(&a.checkpoint, &a.manifest, a.layer, a.class_id, a.threshold, &a.out)?;
            println!("matrix={}\ndot={}\nsamples={}", txt.display(), dot.display(), t.samples);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error: kind=usage message={first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} message={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
