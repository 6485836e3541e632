use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use resemote_core::checkpoint::{self, Loaded};
use resemote_core::config::{Precision, RunConfig};
use resemote_core::data::{self, compare_counts, conform, decode_pnm, DatasetKind, Split, CLASS_NAMES};
use resemote_core::gradcheck::{run_suite, Scale};
use resemote_core::metrics::ConfusionMatrix;
use resemote_core::train::{evaluate, Trainer};
use resemote_core::{DType, Element, Error, Fault, Logits, ModelConfig, OpKind, ResEmoteNet, Result, Tensor};

#[derive(Parser)]
#[command(
    name = "resemotenet",
    version,
    about = "Train and evaluate ResEmoteNet facial emotion classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoints and a metrics report to --out.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Resume from this checkpoint (it must carry optimizer state).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Classify one PGM/PPM image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        image: PathBuf,
        /// Adds a constant to every logit before the softmax.
        #[arg(long, hide = true, default_value_t = 0.0, allow_negative_numbers = true)]
        logit_shift: f64,
    },
    /// Finite-difference check of every operation, layer and the whole network.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        scale: String,
        /// Corrupt one operation's backward pass: OP or OP:SCALE (default scale 2).
        #[arg(long, value_name = "OP[:SCALE]")]
        inject_fault: Option<String>,
    },
    /// Print the effective configuration.
    ShowConfig {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fer2013, rafdb, affectnet or dir.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, as KEY=VALUE. Repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        let mut set = |k: &str, v: String| cfg.set(k, &v);
        if let Some(v) = &self.dataset {
            set("dataset", v.clone())?;
        }
        if let Some(v) = &self.data_root {
            set("data_root", v.display().to_string())?;
        }
        if let Some(v) = self.epochs {
            set("epochs", v.to_string())?;
        }
        if let Some(v) = self.batch_size {
            set("batch_size", v.to_string())?;
        }
        if let Some(v) = self.lr {
            set("lr", v.to_string())?;
        }
        if let Some(v) = self.seed {
            set("seed", v.to_string())?;
        }
        if let Some(v) = &self.out {
            set("out_dir", v.display().to_string())?;
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for usage, configuration and missing-input errors; 1 otherwise.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigLine { .. } | Error::ConfigMismatch { .. } | Error::EmptyDataset(_) => 2,
        Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train { run, checkpoint } => {
            let cfg = run.resolve(RunConfig::default())?;
            match cfg.precision {
                Precision::F32 => train::<f32>(&cfg, checkpoint.as_deref()),
                Precision::F64 => train::<f64>(&cfg, checkpoint.as_deref()),
            }?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { run, checkpoint, split } => {
            let split = parse_split(&split)?;
            match stored_dtype(&checkpoint)? {
                DType::F32 => eval::<f32>(&run, &checkpoint, split),
                DType::F64 => eval::<f64>(&run, &checkpoint, split),
            }?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Predict {
            checkpoint,
            image,
            logit_shift,
        } => {
            match stored_dtype(&checkpoint)? {
                DType::F32 => predict::<f32>(&checkpoint, &image, logit_shift),
                DType::F64 => predict::<f64>(&checkpoint, &image, logit_shift),
            }?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { scale, inject_fault } => gradcheck(&scale, inject_fault.as_deref()),
        Command::ShowConfig { run } => {
            print!("{}", echo(&run.resolve(RunConfig::default())?));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn echo(cfg: &RunConfig) -> String {
    RunConfig::keys()
        .map(|k| format!("{k}={}\n", cfg.get(k).unwrap_or_default()))
        .collect()
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(Error::Config(format!("split must be train or test, got {s:?}"))),
    }
}

fn class_names(classes: usize) -> Vec<String> {
    if classes == CLASS_NAMES.len() {
        CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|k| format!("class{k}")).collect()
    }
}

fn stored_dtype(path: &Path) -> Result<DType> {
    let bytes = read(path)?;
    let raw = checkpoint::parse(&bytes)?;
    match raw.meta.get("dtype").map(String::as_str) {
        Some("f32") => Ok(DType::F32),
        Some("f64") => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unknown dtype {other:?}"))),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_data(cfg: &RunConfig, split: Split) -> Result<data::Dataset> {
    let target = Some((cfg.model.input_channels, cfg.model.input_size));
    data::load_split(cfg.dataset, &cfg.data_root, split, target)
}

fn report_counts(kind: DatasetKind, ds: &data::Dataset) {
    println!("{} {}: {} samples", ds.name, ds.split, ds.len());
    if let Some(cmp) = compare_counts(kind, ds) {
        print!("{cmp}");
        if !cmp.matches() {
            println!("note: class counts differ from the published distribution");
        }
    }
}

fn write_report(dir: &Path, cm: &ConfusionMatrix) -> Result<f64> {
    let names = class_names(cm.classes());
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let report = cm.report(&names)?;
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (file, text) in [("metrics.json", report.to_json()), ("confusion.txt", report.to_text())] {
        let path = dir.join(file);
        fs::write(&path, text).map_err(|source| Error::Io { path, source })?;
    }
    Ok(report.accuracy)
}

fn train<T: Element>(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    print!("{}", echo(cfg));
    let train_set = load_data(cfg, Split::Train)?;
    report_counts(cfg.dataset, &train_set);
    let test_set = match load_data(cfg, Split::Test) {
        Ok(ds) => {
            report_counts(cfg.dataset, &ds);
            Some(ds)
        }
        Err(Error::EmptyDataset(_)) => None,
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    if test_set.is_none() {
        println!("no test split found; monitoring train accuracy");
    }

    let mut trainer = match resume {
        Some(path) => {
            let loaded: Loaded<T> = checkpoint::load(path, Some(&model_config(cfg)))?;
            println!("resuming from {} after epoch {}", path.display(), loaded.info.epoch);
            Trainer::resume(cfg, loaded)?
        }
        None => Trainer::<T>::new(cfg)?,
    };
    println!("parameters={}", trainer.model.parameter_count());

    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    let start = Instant::now();
    trainer.fit(&train_set, test_set.as_ref(), Some(&out), |stats| {
        println!("{stats} elapsed={:.1}s", start.elapsed().as_secs_f64());
    })?;

    let best_path = out.join("best.ckpt");
    let best: Loaded<T> = checkpoint::load(&best_path, None)?;
    let ds = test_set.as_ref().unwrap_or(&train_set);
    let cm = evaluate(&best.model, ds)?;
    let accuracy = write_report(&out, &cm)?;
    println!(
        "final split={} checkpoint={} epoch={} accuracy={accuracy:.2}",
        ds.split,
        best_path.display(),
        best.info.epoch
    );
    Ok(())
}

fn model_config(cfg: &RunConfig) -> ModelConfig {
    ModelConfig {
        seed: cfg.seed,
        ..cfg.model.clone()
    }
}

fn eval<T: Element>(run: &RunArgs, path: &Path, split: Split) -> Result<()> {
    let loaded: Loaded<T> = checkpoint::load(path, None)?;
    let mut base = loaded.info.run_config.clone().unwrap_or_default();
    base.model = loaded.model.config().clone();
    let cfg = run.resolve(base)?;
    checkpoint::check_config(loaded.model.config(), &cfg.model)?;
    let ds = load_data(&cfg, split)?;
    let cm = evaluate(&loaded.model, &ds)?;
    let accuracy = write_report(&cfg.out_dir, &cm)?;
    println!("accuracy={accuracy:.2}");
    Ok(())
}

fn predict<T: Element>(path: &Path, image: &Path, shift: f64) -> Result<()> {
    let loaded: Loaded<T> = checkpoint::load(path, None)?;
    let model: &ResEmoteNet<T> = &loaded.model;
    let m = model.config();
    let pixels = decode_pnm(&read(image)?)?.to_tensor()?;
    let pixels = conform(&pixels, m.input_channels, m.input_size)?;
    let x = Tensor::from_vec(
        [1, m.input_channels, m.input_size, m.input_size],
        pixels.values().iter().map(|&v| T::from_float(f64::from(v))).collect(),
    )?;
    let mut logits = model.infer(&x)?;
    if shift != 0.0 {
        let s = T::from_float(shift);
        logits = Logits {
            values: logits.values.map(|v| v + s),
        };
    }
    let probs = logits.probabilities().remove(0);
    let names = class_names(logits.classes());
    for (name, p) in names.iter().zip(&probs) {
        println!("{name:<9} {:.9}", p.as_f64());
    }
    println!("predicted={}", names[logits.predictions()[0]]);
    Ok(())
}

fn parse_fault(spec: &str) -> Result<Fault> {
    let (op, scale) = match spec.split_once(':') {
        Some((op, s)) => (
            op,
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad fault scale {s:?}")))?,
        ),
        None => (spec, 2.0),
    };
    let op = OpKind::from_name(op).filter(|&k| k != OpKind::Leaf).ok_or_else(|| {
        let names: Vec<&str> = OpKind::ALL[1..].iter().map(|k| k.name()).collect();
        Error::Config(format!("unknown op {op:?}; expected one of {}", names.join(", ")))
    })?;
    Ok(Fault { op, scale })
}

fn gradcheck(scale: &str, fault: Option<&str>) -> Result<ExitCode> {
    let scale: Scale = scale.parse()?;
    let fault = fault.map(parse_fault).transpose()?;
    let start = Instant::now();
    let report = run_suite(scale, fault)?;
    println!("{report}");
    println!("elapsed={:.1}s", start.elapsed().as_secs_f64());
    if report.passed() {
        return Ok(ExitCode::SUCCESS);
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    eprintln!("gradient check failed: {}", failed.join(", "));
    if let Some(f) = fault {
        eprintln!("injected fault in op {}", f.op);
    }
    Ok(ExitCode::from(1))
}
