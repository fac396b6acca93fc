use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lowbend::cli::{
    cmd_eval, cmd_gen, cmd_train, cmd_verify, EvalOptions, RunConfig, CONFIG_FILE, MODEL_FILE,
    SEED_ENV,
};
use lowbend::continuum::RateOutcome;
use lowbend::imaging::DatasetKind;
use lowbend::nn::Checkpoint;
use lowbend::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lowbend",
    version,
    about = "Low-bending, low-distortion encoder regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a dataset of training triplets.
    Gen(GenArgs),
    /// Train an autoencoder.
    Train(TrainArgs),
    /// Compare Monte Carlo energies with their small-radius limit.
    Verify(VerifyArgs),
    /// Analyze a trained model.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    /// g, g-rot, s, r or flat-square
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Locality radius; dataset default when omitted.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 16)]
    res: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Round every pixel to 0 or 1.
    #[arg(long)]
    quantize: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Training records instead of on-the-fly rendering.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    res: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    latent: Option<usize>,
    /// Comma-separated hidden widths of the encoder.
    #[arg(long)]
    hidden: Option<String>,
    /// joint or encoder_first
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quantize: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for the checkpoint, log and configuration echo.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// flat-square, circle, sphere or cylinder
    #[arg(long)]
    case: String,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Comma-separated radii.
    #[arg(long, default_value = "0.4,0.2,0.1,0.05")]
    eps: String,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// CSV report path; printed to stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Checkpoint; defaults to the one in `--run`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Configuration; defaults to the one in `--run`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Take codes from these records instead of fresh samples.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 256)]
    pairs: usize,
    /// One-based principal components of the projection.
    #[arg(long, default_value = "1,2,3")]
    dims: String,
    #[arg(long, default_value_t = 8)]
    recon_images: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} entry '{v}'")))
        })
        .collect()
}

fn run_gen(a: GenArgs) -> Result<i32> {
    let kind = DatasetKind::parse(&a.dataset)?;
    let mut seed = a.seed;
    if let Ok(v) = std::env::var(SEED_ENV) {
        seed = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v} is not a u64")))?;
    }
    let eps = a.eps.unwrap_or(kind.default_epsilon());
    cmd_gen(
        kind, a.res, eps, a.count, seed, a.quantize, a.workers, &a.out,
    )?;
    eprintln!("wrote {} records to {}", a.count, a.out.display());
    Ok(0)
}

fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match (&a.config, &a.dataset) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(d)) => RunConfig::for_dataset(DatasetKind::parse(d)?),
        (None, None) => {
            return Err(Error::InvalidArgument("give --config or --dataset".into()));
        }
    };
    if let (Some(_), Some(d)) = (&a.config, &a.dataset) {
        cfg.dataset = DatasetKind::parse(d)?;
    }
    cfg.apply_seed_env()?;
    if let Some(v) = a.res {
        cfg.resolution = v;
    }
    if let Some(v) = a.eps {
        cfg.eps = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = a.latent {
        cfg.latent_dim = v;
    }
    if let Some(v) = &a.hidden {
        cfg.set("hidden", v)?;
    }
    if let Some(v) = &a.mode {
        cfg.set("mode", v)?;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.quantize {
        cfg.quantize = true;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if let Some(p) = &a.data {
        cfg.data_path = Some(p.clone());
    }
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> Result<i32> {
    let cfg = train_config(&a)?;
    let outcome = cmd_train(&cfg, &a.out)?;
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "step {}: isometry {:.6e} flatness {:.6e} reconstruction {:.6e}",
            last.step, last.isometry, last.flatness, last.recon
        );
    }
    eprintln!("wrote {}", a.out.display());
    Ok(0)
}

fn run_verify(a: VerifyArgs) -> Result<i32> {
    let eps: Vec<f64> = parse_list(&a.eps, "epsilon")?;
    let (report, status) =
        cmd_verify(&a.case, a.rho, a.lambda, &eps, a.samples, a.seed, a.workers)?;
    match &a.out {
        Some(p) => {
            let mut f = std::fs::File::create(p)?;
            report.write_csv(&mut f)?;
        }
        None => report.write_csv(&mut std::io::stdout().lock())?,
    }
    let limit = report.rows[0].limit;
    match report.outcome {
        RateOutcome::Exact => eprintln!("limit {limit}: differences vanish, pass"),
        RateOutcome::Inconclusive => {
            eprintln!("limit {limit}: differences within sampling noise, inconclusive")
        }
        RateOutcome::Slope { slope, .. } => eprintln!(
            "limit {limit}: slope {slope:.4} ({})",
            if status.exit_code() == 0 {
                "pass"
            } else {
                "fail"
            }
        ),
    }
    Ok(status.exit_code())
}

fn run_eval(a: EvalArgs) -> Result<i32> {
    let model = a
        .model
        .clone()
        .or_else(|| a.run.as_ref().map(|r| r.join(MODEL_FILE)))
        .ok_or_else(|| Error::InvalidArgument("give --run or --model".into()))?;
    let config = a
        .config
        .clone()
        .or_else(|| a.run.as_ref().map(|r| r.join(CONFIG_FILE)))
        .ok_or_else(|| Error::InvalidArgument("give --run or --config".into()))?;
    let mut cfg = RunConfig::load(&config)?;
    cfg.apply_seed_env()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let dims: Vec<usize> = parse_list(&a.dims, "component")?;
    if dims.len() != 3 || dims.contains(&0) {
        return Err(Error::InvalidArgument(
            "--dims takes three one-based indices".into(),
        ));
    }
    let opts = EvalOptions {
        samples: a.samples,
        pairs: a.pairs,
        dims: [dims[0] - 1, dims[1] - 1, dims[2] - 1],
        recon_images: a.recon_images,
        data_path: a.data.clone(),
    };
    let ck = Checkpoint::load(&model)?;
    let out = cmd_eval(&cfg, &ck, &opts, &a.out)?;
    let stds: Vec<String> = out.pca.stds.iter().map(|s| format!("{s:.4}")).collect();
    eprintln!("latent stds: {}", stds.join(" "));
    if let Some(mid) = out.interp.at(0.5) {
        eprintln!("err(0.5) = {:.6e}", mid.err);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Train(a) => run_train(a),
        Command::Verify(a) => run_verify(a),
        Command::Eval(a) => run_eval(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
