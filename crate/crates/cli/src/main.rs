mod config;
mod error;
mod model;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use pinvhead::data::format::{read_feature_header, read_label_header, sniff, FileKind};
use pinvhead::data::{load_labels, save_features, save_labels, Dtype, LabelColumn};
use pinvhead::{Dataset, GaussianBlobs, Mode};
use serde_json::{json, Value};

use config::{parse_assignment, ExperimentConfig, Override};
use error::{CliError, CliResult};

/// Refit the dense head of a classifier with ridge pseudoinverse updates
/// and compare against SGD with momentum.
#[derive(Debug, Parser)]
#[command(name = "pinvhead", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a head from a config and write its run record.
    Train(TrainArgs),
    /// Score a saved model on a labelled dataset.
    Eval(EvalArgs),
    /// Run two configs over the same seeds and data and pair their test accuracy.
    Compare(CompareArgs),
    /// Print the header of an FMAT or LBLS file.
    Inspect(InspectArgs),
    /// Write a Gaussian-blob train/test pair as FMAT/LBLS files.
    Synth(SynthArgs),
}

/// Overrides shared by `train` and `compare`.
#[derive(Debug, Args)]
struct PlanOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    /// Ridge coefficient of the recompute pass.
    #[arg(long = "C", value_name = "C", allow_negative_numbers = true)]
    c: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    /// Fraction of neurons that keep their old parameters in a recompute pass.
    #[arg(long, allow_negative_numbers = true)]
    dropout: Option<f64>,
    /// Set any config field, e.g. `--set plan.sgdm.batch_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<Override>,
}

impl PlanOverrides {
    fn collect(&self) -> Vec<Override> {
        let mut out = Vec::new();
        if let Some(e) = self.epochs {
            out.push(("plan.epochs".into(), json!(e)));
        }
        if let Some(c) = self.c {
            out.push(("plan.recompute.C".into(), json!(c)));
        }
        if let Some(mu) = self.mu {
            out.push(("plan.recompute.mu".into(), json!(mu)));
        }
        if let Some(rate) = self.dropout {
            out.push(("plan.recompute.dropout_rate".into(), json!(rate)));
        }
        out.extend(self.set.iter().cloned());
        out
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Run record destination; stdout when neither this nor the config sets it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory to save the trained head in.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[command(flatten)]
    plan: PlanOverrides,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long, requires = "labels", conflicts_with = "csv")]
    features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    labels: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Index, name, or `last`.
    #[arg(long, default_value = "last", requires = "csv")]
    label_column: LabelColumn,
}

impl DataArgs {
    fn load(&self) -> CliResult<Dataset> {
        match (&self.features, &self.labels, &self.csv) {
            (Some(f), Some(l), None) => Ok(Dataset::load(f, l)?),
            (None, None, Some(c)) => Ok(pinvhead::data::load_csv(c, &self.label_column)?),
            _ => Err(CliError::usage("give --features with --labels, or --csv")),
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Also write the evaluation (with confusion matrix) as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    config_a: PathBuf,
    config_b: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Report destination.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    plan: PlanOverrides,
}

#[derive(Debug, Args)]
struct InspectArgs {
    file: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 5000)]
    train: usize,
    #[arg(long, default_value_t = 2000)]
    test: usize,
    #[arg(long, default_value_t = 0.35)]
    spread: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 99)]
    seed: u64,
    #[arg(long, default_value = "f64", value_parser = ["f32", "f64"])]
    dtype: String,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::data(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::data(path, e))
}

fn train(args: TrainArgs) -> CliResult<()> {
    let mut overrides = args.plan.collect();
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), json!(seed)));
    }
    if let Some(mode) = args.mode {
        overrides.push(("plan.mode".into(), json!(mode)));
    }
    for (key, path) in [("out", &args.out), ("model_dir", &args.model_dir)] {
        if let Some(p) = path {
            overrides.push((key.into(), json!(p)));
        }
    }
    let cfg = ExperimentConfig::load(&args.config, &overrides)?;
    let (train, test) = cfg.data.load()?.for_seed(cfg.seed)?;
    let trained = pinvhead::run(&cfg.plan, &cfg.spec(), &train, &test, cfg.seed)?;
    let mut record = trained.record;
    record.config = Some(cfg.to_value());

    if let Some(dir) = &cfg.model_dir {
        model::save(&trained.head, dir, train.class_names.as_deref())?;
    }
    match &cfg.out {
        Some(path) => {
            write_json(path, &record)?;
            let s = &record.summary;
            let test_acc = s.test_acc.map_or("n/a".into(), |a| format!("{a:.4}"));
            println!(
                "mode={} epochs={} train_acc={:.4} test_acc={test_acc} sgdm={:.3}s recompute={:.3}s -> {}",
                record.mode,
                cfg.plan.epochs,
                s.train_acc,
                s.total_sgdm_seconds,
                s.total_recompute_seconds,
                path.display()
            );
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&record).expect("serializable")
        ),
    }
    Ok(())
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let (head, _) = model::load(&args.model)?;
    let ds = args.data.load()?;
    let result = pinvhead::evaluate(&head, &ds)?;
    println!(
        "accuracy={} loss={} samples={}",
        result.accuracy,
        result.mean_loss,
        ds.len()
    );
    if let Some(path) = &args.out {
        write_json(path, &result)?;
    }
    Ok(())
}

fn compare(args: CompareArgs) -> CliResult<()> {
    if args.seeds.is_empty() {
        return Err(CliError::usage("--seeds needs at least one seed"));
    }
    let overrides = args.plan.collect();
    let a = ExperimentConfig::load(&args.config_a, &overrides)?;
    let b = ExperimentConfig::load(&args.config_b, &overrides)?;
    if a.data != b.data {
        return Err(CliError::usage(
            "compare needs both configs to name the same data",
        ));
    }
    let loaded = a.data.load()?;
    let mut report = pinvhead::compare(
        &a.plan,
        &a.spec(),
        &b.plan,
        &b.spec(),
        &loaded.splits(),
        &args.seeds,
    )?;
    for (runs, cfg) in [(&mut report.runs_a, &a), (&mut report.runs_b, &b)] {
        for r in runs.iter_mut() {
            let mut c = cfg.to_value();
            c["seed"] = json!(r.seed);
            r.config = Some(c);
        }
    }

    let mut out = std::io::stdout().lock();
    let label_a = format!("A:{}", report.a.mode);
    let label_b = format!("B:{}", report.b.mode);
    let _ = writeln!(
        out,
        "{:<8}{label_a:>16}{label_b:>16}{:>12}",
        "seed", "delta(B-A)"
    );
    for e in &report.entries {
        let _ = writeln!(
            out,
            "{:<8}{:>16.4}{:>16.4}{:>+12.4}",
            e.seed, e.test_acc_a, e.test_acc_b, e.delta
        );
    }
    let pm = |m: f64, s: f64| format!("{m:.4}±{s:.4}");
    let _ = writeln!(
        out,
        "{:<8}{:>16}{:>16}{:>+12.4}",
        "mean",
        pm(report.a.mean_test_acc, report.a.std_test_acc),
        pm(report.b.mean_test_acc, report.b.std_test_acc),
        report.mean_delta
    );
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn inspect(args: InspectArgs) -> CliResult<()> {
    let info: Value = match sniff(&args.file)? {
        FileKind::Features => {
            let h = read_feature_header(&args.file)?;
            json!({"kind": "FMAT", "version": h.version, "dim": h.rows, "samples": h.cols, "dtype": h.dtype})
        }
        FileKind::Labels => {
            let h = read_label_header(&args.file)?;
            let (labels, classes) = load_labels(&args.file)?;
            let mut counts = vec![0u64; classes];
            for l in labels {
                counts[l] += 1;
            }
            json!({"kind": "LBLS", "version": h.version, "samples": h.count, "classes": h.classes, "histogram": counts})
        }
    };
    if args.json {
        println!("{info}");
        return Ok(());
    }
    match info["kind"].as_str() {
        Some("FMAT") => println!(
            "FMAT v{} dim={} samples={} dtype={}",
            info["version"],
            info["dim"],
            info["samples"],
            info["dtype"].as_str().unwrap_or("?")
        ),
        _ => {
            println!(
                "LBLS v{} samples={} classes={}",
                info["version"], info["samples"], info["classes"]
            );
            for (class, count) in info["histogram"]
                .as_array()
                .into_iter()
                .flatten()
                .enumerate()
            {
                println!("class {class}: {count}");
            }
        }
    }
    Ok(())
}

fn synth(args: SynthArgs) -> CliResult<()> {
    let blobs = GaussianBlobs {
        classes: args.classes,
        dim: args.dim,
        center_spread: args.spread,
        noise: args.noise,
    };
    let (train, test) = blobs.generate(args.train, args.test, args.seed)?;
    let dtype = if args.dtype == "f32" {
        Dtype::F32
    } else {
        Dtype::F64
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::data(&args.out_dir, e))?;
    for (name, ds) in [("train", &train), ("test", &test)] {
        save_features(
            &ds.features,
            dtype,
            args.out_dir.join(format!("{name}.fmat")),
        )?;
        save_labels(
            &ds.labels,
            ds.num_classes,
            args.out_dir.join(format!("{name}.lbls")),
        )?;
    }
    println!(
        "wrote {} train and {} test samples ({} classes, dim {}) to {}",
        train.len(),
        test.len(),
        args.classes,
        args.dim,
        args.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprintln!("error: missing command; see `pinvhead --help`");
            return ExitCode::from(2);
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Inspect(a) => inspect(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}
