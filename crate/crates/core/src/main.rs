use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use equisel::conformal::ConformalConfig;
use equisel::harness::{run_synth, Mode, PointCloudTask, SplitSizes, SynthConfig, TaskKind, Variant};
use equisel::laplace::{log_grid, optimize_prior_precision, HessianKind, LaplaceConfig, DEFAULT_MAX_FULL_DIM};
use equisel::select::{
    evaluate_dump, rank_models, read_scores, render_grid_csv, render_pairs_csv, render_text_report,
    to_json, write_report, EvaluationConfig,
};
use equisel::tensor_io::load_dump;
use equisel::Error;

#[derive(Parser)]
#[command(name = "equisel", version, about = "Uncertainty-aware selection among symmetry-constrained models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic point-cloud task, train the toy variants and export dumps
    Synth(SynthArgs),
    /// Evaluate one dump: metrics, split conformal and Laplace evidence
    Evaluate(EvaluateArgs),
    /// Rank evaluated models per metric and measure alignment with the error metric
    Rank(RankArgs),
    /// Write only the log-marginal-likelihood grid trace
    LaplaceGrid(GridArgs),
    /// Check that a dump directory loads and is consistent
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    ShapesCls,
    RadiusReg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Aligned,
    Rotated,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Default: aligned for shapes-cls, rotated for radius-reg
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_delimiter = ',', default_value = "inv,equi,aug,plain")]
    models: Vec<Variant>,
    #[arg(long)]
    n_train: Option<usize>,
    /// Defaults to the test size
    #[arg(long)]
    n_cal: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// One sub-directory per model is created here
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LaplaceArgs {
    #[arg(long, value_enum, default_value = "full")]
    hessian: HessianArg,
    /// min,max,points (log-spaced)
    #[arg(long)]
    delta_grid: Option<String>,
    /// min,max,points (log-spaced); regression dumps without a known noise scale
    #[arg(long)]
    sigma_grid: Option<String>,
    #[arg(long)]
    delta_fixed: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_FULL_DIM)]
    max_full_dim: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum HessianArg {
    Full,
    Diag,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = equisel::metrics::DEFAULT_ECE_BINS)]
    ece_bins: usize,
    #[command(flatten)]
    laplace: LaplaceArgs,
    /// JSON evaluation; printed to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long, num_args = 1.., required = true)]
    evals: Vec<PathBuf>,
    #[arg(long)]
    error_metric: String,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, num_args = 1.., required = true)]
    dump: Vec<PathBuf>,
    #[command(flatten)]
    laplace: LaplaceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    dump: PathBuf,
}

fn parse_grid(flag: &str, spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [min, max, points] = parts[..] else {
        bail!(Error::Config(format!("--{flag} expects min,max,points, got `{spec}`")));
    };
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Config(format!("--{flag}: `{s}` is not a number")))
    };
    let points = points
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("--{flag}: `{points}` is not a point count")))?;
    Ok(log_grid(parse(min)?, parse(max)?, points)?)
}

impl LaplaceArgs {
    fn config(&self) -> anyhow::Result<LaplaceConfig> {
        let mut cfg = LaplaceConfig {
            hessian_kind: match self.hessian {
                HessianArg::Full => HessianKind::Full,
                HessianArg::Diag => HessianKind::Diagonal,
            },
            delta_fixed: self.delta_fixed,
            max_full_dim: self.max_full_dim,
            ..LaplaceConfig::default()
        };
        if let Some(g) = &self.delta_grid {
            cfg.delta_grid = parse_grid("delta-grid", g)?;
        }
        if let Some(g) = &self.sigma_grid {
            cfg.sigma_grid = parse_grid("sigma-grid", g)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, contents: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => write_report(p, contents)?,
        None => print!("{contents}"),
    }
    Ok(())
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = match args.task {
        TaskArg::ShapesCls => SynthConfig::aligned_classification(),
        TaskArg::RadiusReg => SynthConfig::rotated_regression(),
    };
    let t: &mut PointCloudTask = &mut cfg.task;
    if let Some(m) = args.mode {
        t.mode = match m {
            ModeArg::Aligned => Mode::Aligned,
            ModeArg::Rotated => Mode::Rotated,
        };
    }
    if let Some(k) = args.num_classes {
        match &mut t.kind {
            TaskKind::ShapeClassification { num_classes } => *num_classes = k,
            TaskKind::InvariantRegression => bail!(Error::Config("--num-classes applies to shapes-cls only".into())),
        }
    }
    let test = args.n_test.unwrap_or(t.sizes.test);
    t.sizes = SplitSizes {
        train: args.n_train.unwrap_or(t.sizes.train),
        calibration: args.n_cal.unwrap_or(test),
        test,
    };
    t.points_per_cloud = args.points.unwrap_or(t.points_per_cloud);
    t.noise_scale = args.noise.unwrap_or(t.noise_scale);
    t.seed = args.seed;
    cfg.variants = args.models;
    cfg.train_seed = args.train_seed;
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.hidden_dim = args.hidden_dim.unwrap_or(cfg.hidden_dim);
    cfg.feature_dim = args.feature_dim.unwrap_or(cfg.feature_dim);
    cfg.learning_rate = args.learning_rate.unwrap_or(cfg.learning_rate);

    let trained = run_synth(&cfg, Some(&args.out))?;
    for (model, _) in &trained {
        eprintln!(
            "{:<12} train loss {:.5} -> {:.5}  ({})",
            model.spec.variant.name(),
            model.report.initial_loss,
            model.report.final_loss,
            args.out.join(model.spec.variant.name()).display()
        );
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let dump = load_dump(&args.dump)?;
    let eval = EvaluationConfig {
        conformal: ConformalConfig {
            alpha: args.alpha,
            resamples: args.resamples,
            seed: args.seed,
        },
        ece_bins: args.ece_bins,
    };
    let result = evaluate_dump(&dump, &eval, &args.laplace.config()?)?;
    emit(args.out.as_deref(), &to_json(&result)?)
}

fn rank(args: RankArgs) -> anyhow::Result<()> {
    let models = args
        .evals
        .iter()
        .map(|p| read_scores(p))
        .collect::<equisel::Result<Vec<_>>>()?;
    let report = rank_models(&models, &args.error_metric)?;
    let text = match args.format {
        FormatArg::Text => render_text_report(&models, &report),
        FormatArg::Json => to_json(&report)?,
        FormatArg::Csv => render_pairs_csv(&models, &args.error_metric),
    };
    emit(args.out.as_deref(), &text)
}

fn laplace_grid(args: GridArgs) -> anyhow::Result<()> {
    let cfg = args.laplace.config()?;
    let mut results = Vec::new();
    for dir in &args.dump {
        let dump = load_dump(dir)?;
        let lap = optimize_prior_precision(&dump, &cfg)?;
        results.push((dump.model_name, lap));
    }
    let traces: Vec<(&str, &_)> = results.iter().map(|(n, l)| (n.as_str(), l)).collect();
    emit(args.out.as_deref(), &render_grid_csv(&traces))
}

fn validate(args: ValidateArgs) -> anyhow::Result<()> {
    let dump = load_dump(&args.dump).with_context(|| format!("validating {}", args.dump.display()))?;
    println!(
        "ok: {} ({}), d={}, train/cal/test = {}/{}/{}",
        dump.model_name,
        dump.constraint_tag,
        dump.feature_dim(),
        dump.train.targets.len(),
        dump.calibration.targets.len(),
        dump.test.targets.len()
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Rank(a) => rank(a),
        Command::LaplaceGrid(a) => laplace_grid(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
