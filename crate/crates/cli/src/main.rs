mod data_spec;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ndlinear::bench::{run_bench, write_csv, BenchConfig};
use ndlinear::lora::{run_recovery, RecoveryConfig, TargetKind};
use ndlinear::nn::{train, ModelConfig, OptimizerKind, TrainConfig};
use ndlinear::verify::{run_verify, Fault, VerifyConfig};
use ndlinear::Rng;

use crate::data_spec::DataSpec;

#[derive(Parser, Debug)]
#[command(
    name = "ndlinear",
    version,
    about = "N-dimensional linear layers: verification, benchmarks, toy training"
)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Write the JSON report to PATH (`-` for stdout).
    #[arg(long, global = true, value_name = "PATH")]
    json: Option<PathBuf>,
    /// Suppress the human-readable summary.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the layer against the flattened oracle and finite differences.
    Verify(VerifyArgs),
    /// Time the factorized forward against the flattened dense one.
    Bench(BenchArgs),
    /// Train a model from a JSON config on synthetic data.
    Train(TrainArgs),
    /// Fit LoRA and NdLinear-LoRA adapters to a known weight update.
    LoraDemo(LoraArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Trials per check family.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=8))]
    max_rank: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..=16))]
    max_dim: u64,
    /// Corrupt the computation on purpose; every family should fail.
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FaultArg {
    FlipSign,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "16,16,16")]
    in_dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16,16,16")]
    out_dims: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long)]
    bias: bool,
    /// Largest dense weight, in bytes, that gets materialized and timed.
    #[arg(long, default_value_t = ndlinear::bench::DEFAULT_DENSE_MEMORY_CAP)]
    dense_memory_cap: u64,
    /// Also write the report as one CSV row.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OptimizerArg {
    Adam,
    Adamw,
    Sgd,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Model config JSON.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// `classification:n=…,classes=…` or `separable:n=…,noise=…`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, value_enum, default_value = "adamw")]
    optimizer: OptimizerArg,
    /// Decoupled weight decay for `adamw`.
    #[arg(long, default_value_t = 1e-2)]
    weight_decay: f64,
    /// Momentum for `sgd`.
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Write one JSON record per epoch to PATH.
    #[arg(long, value_name = "PATH")]
    log: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TargetArg {
    RandomKron,
    RandomDense,
}

#[derive(Args, Debug)]
struct LoraArgs {
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    h: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    rank: u64,
    #[arg(long, default_value_t = 8.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, value_enum, default_value = "random-kron")]
    target: TargetArg,
}

/// Failures that map to distinct exit codes.
enum Failure {
    /// Bad flags, configs or inputs: exit 2.
    Usage(anyhow::Error),
    /// The command ran but a check did not pass: exit 1.
    Check(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Check(e.into())
    }
}

trait UsageContext<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

struct Output {
    json: Option<PathBuf>,
    quiet: bool,
}

impl Output {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn report<T: Serialize>(&self, value: &T) -> anyhow::Result<()> {
        let Some(path) = &self.json else {
            return Ok(());
        };
        let text = serde_json::to_string_pretty(value)? + "\n";
        if path == Path::new("-") {
            std::io::stdout().write_all(text.as_bytes())?;
        } else {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn cmd_verify(args: VerifyArgs, seed: u64, out: &Output) -> Result<(), Failure> {
    let cfg = VerifyConfig {
        seeds: args.seeds as usize,
        base_seed: seed,
        max_rank: args.max_rank as usize,
        max_dim: args.max_dim as usize,
        fault: args.inject_fault.map(|FaultArg::FlipSign| Fault::FlipSign),
    };
    let report = run_verify(&cfg)?;
    out.report(&report)?;
    for f in &report.families {
        out.say(format!(
            "{:<16} {:>4} trials  max error {:.3e}  (tol {:.0e})  {}",
            f.name,
            f.trials.len(),
            f.max_error,
            f.tolerance,
            if f.passed { "ok" } else { "FAILED" }
        ));
    }
    if report.passed {
        return Ok(());
    }
    for line in report.failures() {
        eprintln!("failed: {line}");
    }
    Err(Failure::Check(anyhow!(
        "{} of {} trials failed",
        report.failed_trials,
        report
            .families
            .iter()
            .map(|f| f.trials.len())
            .sum::<usize>()
    )))
}

fn cmd_bench(args: BenchArgs, seed: u64, out: &Output) -> Result<(), Failure> {
    let cfg = BenchConfig {
        in_dims: args.in_dims,
        out_dims: args.out_dims,
        batch: args.batch,
        trials: args.trials as usize,
        warmup: args.warmup,
        seed,
        with_bias: args.bias,
        dense_memory_cap: args.dense_memory_cap,
    };
    ndlinear::ndlinear::param_count(&cfg.in_dims, &cfg.out_dims, cfg.with_bias).usage()?;
    ndlinear::ndlinear::dense_flop_count(cfg.batch, &cfg.in_dims, &cfg.out_dims).usage()?;
    let report = run_bench(&cfg).usage()?;
    out.report(&report)?;
    if let Some(path) = &args.csv {
        let file =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_csv(file, std::slice::from_ref(&report))?;
    }
    let ms = |ns: u64| ns as f64 / 1e6;
    out.say(format!(
        "params     nd {:>14}  dense {:>16}",
        report.param_count_nd, report.param_count_dense
    ));
    out.say(format!(
        "flops      nd {:>14}  dense {:>16}  ratio {:.2}",
        report.flop_formula_nd,
        report.flop_dense,
        report.flop_ratio()
    ));
    match (report.wall_ns_dense, report.speedup) {
        (Some(dense), Some(speedup)) => out.say(format!(
            "wall (ms)  nd {:>14.3}  dense {:>16.3}  speedup {speedup:.2}x",
            ms(report.wall_ns_nd),
            ms(dense)
        )),
        _ => out.say(format!(
            "wall (ms)  nd {:>14.3}  dense {:>16}",
            ms(report.wall_ns_nd),
            "over memory cap"
        )),
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a ModelConfig,
    params: usize,
    samples: usize,
    train: &'a TrainConfig,
    last: &'a ndlinear::nn::EpochRecord,
}

fn cmd_train(args: TrainArgs, seed: u64, out: &Output) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))
        .usage()?;
    let model_cfg = ModelConfig::from_json(&text)
        .with_context(|| format!("in {}", args.config.display()))
        .usage()?;
    let mut rng = Rng::new(seed);
    let mut model = model_cfg.build(&mut rng).usage()?;
    let spec = match &args.data {
        Some(s) => DataSpec::parse(s).context("--data").usage()?,
        None => DataSpec::default_for(model.loss()),
    };
    let data = spec.generate(&model, &mut rng).context("--data").usage()?;
    let train_cfg = TrainConfig {
        epochs: args.epochs as usize,
        batch_size: args.batch_size as usize,
        seed,
        train_fraction: args.train_fraction,
        lr: args.lr,
    };
    train_cfg.validate().usage()?;
    let optimizer = match args.optimizer {
        OptimizerArg::Adam => OptimizerKind::adam(),
        OptimizerArg::Adamw => OptimizerKind::adamw(args.weight_decay),
        OptimizerArg::Sgd => OptimizerKind::sgd(args.momentum),
    };
    let log = train(&mut model, &data, &train_cfg, optimizer)?;
    if let Some(path) = &args.log {
        fs::write(path, log.to_json_lines()?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let last = log.last().expect("epochs >= 1");
    out.report(&TrainSummary {
        config: &model_cfg,
        params: model.num_params(),
        samples: data.len(),
        train: &train_cfg,
        last,
    })?;
    out.say(format!(
        "{} parameters, {} samples, {} epochs",
        model.num_params(),
        data.len(),
        last.epoch
    ));
    out.say(format!(
        "train loss {:.6}  test loss {:.6}",
        last.train_loss, last.test_loss
    ));
    if let (Some(tr), Some(te)) = (last.train_accuracy, last.test_accuracy) {
        out.say(format!("train acc  {tr:.4}    test acc  {te:.4}"));
    }
    Ok(())
}

fn cmd_lora_demo(args: LoraArgs, seed: u64, out: &Output) -> Result<(), Failure> {
    let cfg = RecoveryConfig {
        d: args.d as usize,
        h: args.h as usize,
        rank: args.rank as usize,
        alpha: args.alpha,
        seed,
        steps: args.steps,
        lr: args.lr,
        samples: args.samples,
        target: match args.target {
            TargetArg::RandomKron => TargetKind::RandomKron,
            TargetArg::RandomDense => TargetKind::RandomDense,
        },
    };
    let report = run_recovery(&cfg).usage()?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out.report(&report)?;
    let p = &report.params;
    out.say(format!(
        "trainable params  lora {}  ndlora {}  ratio {:.2}  factors {:?} -> {:?}",
        p.lora, p.ndlora, p.ratio, p.in_factors, p.out_factors
    ));
    out.say(format!(
        "recovery error    lora {:.3e}  ndlora {:.3e}",
        report.lora_recovery_error, report.ndlora_recovery_error
    ));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "error"
    } else {
        "warn"
    }))
    .init();

    let out = Output {
        json: cli.json,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(a, cli.seed, &out),
        Command::Bench(a) => cmd_bench(a, cli.seed, &out),
        Command::Train(a) => cmd_train(a, cli.seed, &out),
        Command::LoraDemo(a) => cmd_lora_demo(a, cli.seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
