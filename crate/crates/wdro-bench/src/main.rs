use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use wdro_bench::{
    emit_report, evaluate, run_experiment, synthetic_mnist, verify_lemmas, ExperimentConfig,
    Metric, ReportFormat,
};
use wdro_core::data::{
    gen_synthetic, load_idx, perturb_mnist, ShiftKind, ShiftSpec, Task,
};
use wdro_core::loss::LossKind;
use wdro_core::nn::Mlp;
use wdro_core::train::{fit, TrainConfig};

#[derive(Parser)]
#[command(
    name = "wdro-bench",
    about = "Distributionally robust training benchmarks and lemma verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a single model on synthetic data and save the checkpoint.
    Train(TrainArgs),
    /// Run the ERM-vs-robust experiment protocol and emit a report.
    Bench(BenchArgs),
    /// Run the lemma verification sweeps; exits nonzero on any failure.
    Verify(VerifyArgs),
    /// Train and evaluate on the image pipeline (IDX files or the
    /// synthetic stand-in corpus).
    Mnist(MnistArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training loss, e.g. `quadratic`, `huber:1.0`, `check:0.5`, `bce`.
    #[arg(long)]
    loss: Option<LossKind>,
    /// Wasserstein radius; 0 trains plain ERM.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    shift_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CI-scale profile: 5 trials on 500 training samples.
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report output path.
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    #[arg(long, value_parser = parse_format, default_value = "csv")]
    format: ReportFormat,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    instances: usize,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MnistArgs {
    /// IDX image file; omitted together with --labels to use the
    /// synthetic stand-in corpus.
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 3000)]
    subsample: usize,
    #[arg(long, default_value_t = 600)]
    n_test: usize,
    /// Test-set perturbation: occlusion, corner, or noise.
    #[arg(long)]
    perturb: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    shift_prob: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    match s {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        other => Err(format!("unknown format `{other}` (csv|json)")),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(n) = args.n_train {
        config.n_train = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if let Some(d) = args.delta {
        config.train.delta = d;
    }
    let loss = args.loss.unwrap_or(config.losses[0]);
    let shift_prob = args.shift_prob.unwrap_or(config.shift_probs[0]);
    let kind = match config.task {
        Task::Regression => ShiftKind::SyntheticRegression,
        _ => ShiftKind::SyntheticLabelFlip,
    };
    let data = gen_synthetic(
        config.n_train,
        &ShiftSpec {
            shift_prob,
            kind,
            seed: config.seed,
        },
        config.task,
    );
    let net = Mlp::random(
        &config.dims(),
        config.m,
        config.truncation,
        config.seed.wrapping_add(1),
    );
    let outcome = fit(net, &data.x, &data.y, loss, &config.train)?;
    for log in &outcome.logs {
        println!("{}", serde_json::to_string(log)?);
    }
    std::fs::write(&args.out, outcome.net.to_json()?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "saved {} (final clean loss {:.6})",
        args.out.display(),
        outcome.logs.last().map_or(f64::NAN, |l| l.clean_loss)
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if args.fast {
        config = config.fast();
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let rows = run_experiment(&config)?;
    for row in &rows {
        println!(
            "{:<12} {:<10} shift={:<5} erm {:>9.4} ± {:<8.4} wdro {:>9.4} ± {:<8.4} improvement {:>7.3} ± {:.3}",
            row.loss,
            row.test_set,
            row.shift_prob,
            row.erm_mean,
            row.erm_sd,
            row.wdro_mean,
            row.wdro_sd,
            row.improvement_mean,
            row.improvement_sd
        );
    }
    emit_report(&rows, args.format, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let checks = verify_lemmas(args.seed, args.instances);
    for check in &checks {
        println!(
            "{}: {} ({} instances, max violation {:.3e}, tolerance {:.1e})",
            check.lemma,
            if check.pass { "PASS" } else { "FAIL" },
            check.instances,
            check.max_violation,
            check.tolerance
        );
    }
    if let Some(out) = &args.out {
        let mut s = serde_json::to_string_pretty(&checks)?;
        s.push('\n');
        std::fs::write(out, s).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn cmd_mnist(args: MnistArgs) -> Result<()> {
    let data = match (&args.images, &args.labels) {
        (Some(images), Some(labels)) => {
            load_idx(images, labels, args.subsample + args.n_test, args.seed)?
        }
        _ => {
            eprintln!("no IDX files given; using the synthetic stand-in corpus");
            synthetic_mnist(args.subsample + args.n_test, args.seed)
        }
    };
    let n_train = data.len().saturating_sub(args.n_test).max(1);
    let (train_x, test_x) = data.x.split_at(n_train);
    let (train_y, test_y) = data.y.split_at(n_train);

    let config = TrainConfig {
        delta: args.delta,
        epochs: args.epochs,
        batch_size: 64,
        k_lip: 1e6,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let net = Mlp::random(&[784, 32, 10], 1, None, args.seed.wrapping_add(1));
    let outcome = fit(net, train_x, train_y, LossKind::Bce, &config)?;
    for log in &outcome.logs {
        println!("{}", serde_json::to_string(log)?);
    }

    let mut test = wdro_core::data::Dataset {
        x: test_x.to_vec(),
        y: test_y.to_vec(),
        shifted: vec![false; test_x.len()],
        task: Task::Multiclass,
    };
    if let Some(kind) = &args.perturb {
        let kind = match kind.as_str() {
            "occlusion" => ShiftKind::MnistOcclusion,
            "corner" => ShiftKind::MnistCorner,
            "noise" => ShiftKind::MnistNoise,
            other => anyhow::bail!("unknown perturbation `{other}`"),
        };
        test = perturb_mnist(
            &test,
            &ShiftSpec {
                shift_prob: args.shift_prob,
                kind,
                seed: args.seed.wrapping_add(2),
            },
        )?;
    }
    let accuracy = evaluate(&outcome.net, &test, Metric::Accuracy)?;
    println!("test accuracy: {accuracy:.2}%");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args).map(|()| true),
        Command::Bench(args) => cmd_bench(args).map(|()| true),
        Command::Verify(args) => cmd_verify(args),
        Command::Mnist(args) => cmd_mnist(args).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
