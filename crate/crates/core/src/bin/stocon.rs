use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stochastic_contraction::bounds::BoundInputs;
use stochastic_contraction::cli::{self, PriorInputs, Report, RunContext};
use stochastic_contraction::config::load_config;
use stochastic_contraction::contraction::Mode;
use stochastic_contraction::observer::{FigureOptions, VerifyOptions};
use stochastic_contraction::system::Domain;
use stochastic_contraction::{Error, Result};

/// Certify stochastic contraction, simulate ensembles, and evaluate mean-square bounds.
#[derive(Parser)]
#[command(name = "stocon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for data files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate rate, metric floor and noise bound over the configured domain.
    Certify(Common),
    /// Run a Monte Carlo ensemble of trajectory pairs.
    Simulate(Common),
    /// Geodesic squared distance between two points in the system metric.
    Distance {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        a: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        b: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, default_value_t = 64)]
        segments: usize,
    },
    /// Evaluate the distance bounds.
    Bound(BoundArgs),
    /// Recompute the observer example's constants and figure data.
    ReproduceExample(ReproduceArgs),
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    common: Common,
    /// Read constants from a certification.json written by `certify`.
    #[arg(long)]
    from_certification: Option<PathBuf>,
    #[arg(long, value_parser = ["discrete", "continuous"])]
    mode: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long = "C")]
    c: Option<f64>,
    #[arg(long = "D")]
    d: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Initial mean squared metric distance.
    #[arg(long, default_value_t = 0.0)]
    u0: f64,
    #[arg(long)]
    noise_free_ref: bool,
    /// Times (continuous) at which to evaluate; `inf` gives the limit.
    #[arg(long = "T", value_delimiter = ',')]
    times: Vec<String>,
    /// Steps (discrete) at which to evaluate; `inf` gives the limit.
    #[arg(long = "k", value_delimiter = ',')]
    steps: Vec<String>,
    /// Uniform bound on the Frobenius norm of the diffusion, for the prior-bound comparison.
    #[arg(long)]
    sigma_bar: Option<f64>,
    /// Uniform bound on the metric norm, for the prior-bound comparison.
    #[arg(long)]
    m_bar: Option<f64>,
    #[arg(long, default_value_t = 2)]
    n: usize,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long = "S", default_value_t = 1.0)]
    s: f64,
    #[arg(long, default_value_t = 20)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "T", default_value_t = 15.0)]
    t_end: f64,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Sample points for the constants report.
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    /// Bound on |x̂₂| for the post-transient noise-trace box.
    #[arg(long = "B", default_value_t = 0.05)]
    b: f64,
}

fn parse_abscissae(raw: &[String]) -> Result<Vec<f64>> {
    raw.iter()
        .map(|s| match s.trim() {
            "inf" | "Inf" | "infinity" => Ok(f64::INFINITY),
            v => v.parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad abscissa '{v}'"))),
        })
        .collect()
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn need_config(common: &Common) -> Result<stochastic_contraction::config::LoadedConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    load_config(path)
}

fn context(common: &Common) -> RunContext {
    RunContext { out_dir: common.out.clone(), seed: common.seed }
}

fn run_bound(args: &BoundArgs) -> Result<Report> {
    let mut notices = Vec::new();
    let mut hash = None;
    let explicit = args.lambda.is_some() || args.mu.is_some();
    let inputs = if let Some(path) = &args.from_certification {
        cli::inputs_from_certification(path, args.u0, args.noise_free_ref)?
    } else if explicit {
        let mode = match args.mode.as_deref() {
            Some("discrete") => Mode::Discrete,
            Some("continuous") => Mode::Continuous,
            _ if args.mu.is_some() => Mode::Discrete,
            _ => Mode::Continuous,
        };
        let (rate, noise) = match mode {
            Mode::Continuous => (args.lambda, args.c),
            Mode::Discrete => (args.mu, args.d),
        };
        let missing = || Error::InvalidInput("bound needs a rate (--lambda/--mu), noise (--C/--D) and --beta".into());
        BoundInputs {
            mode,
            rate: rate.ok_or_else(missing)?,
            noise: noise.ok_or_else(missing)?,
            beta: args.beta.ok_or_else(missing)?,
            u0: args.u0,
            noise_free_reference: args.noise_free_ref,
        }
    } else {
        let loaded = need_config(&args.common)?;
        hash = Some(loaded.hash.clone());
        let (inputs, n) = cli::config_bound_inputs(&loaded, args.common.seed)?;
        notices = n;
        let from_cfg = loaded.config.bound.as_ref().and_then(|b| b.abscissae.clone());
        if args.times.is_empty() && args.steps.is_empty() {
            if let Some(xs) = from_cfg {
                return finish_bound(&inputs, xs, args, hash.as_deref(), notices);
            }
        }
        inputs
    };
    let mut xs = parse_abscissae(&args.times)?;
    xs.extend(parse_abscissae(&args.steps)?);
    if xs.is_empty() {
        let end = match inputs.mode {
            Mode::Continuous => 5.0 / inputs.rate.max(1e-12),
            Mode::Discrete => 100.0,
        };
        xs = (0..=100).map(|i| end * i as f64 / 100.0).collect();
        if inputs.mode == Mode::Discrete {
            xs.iter_mut().for_each(|x| *x = x.round());
        }
    }
    finish_bound(&inputs, xs, args, hash.as_deref(), notices)
}

fn finish_bound(inputs: &BoundInputs, xs: Vec<f64>, args: &BoundArgs, hash: Option<&str>, notices: Vec<String>) -> Result<Report> {
    let prior = match (args.sigma_bar, args.m_bar) {
        (Some(sigma_bar), Some(m_bar)) => Some(PriorInputs { sigma_bar, m_bar, n: args.n }),
        (None, None) => None,
        _ => return Err(Error::InvalidInput("--sigma-bar and --m-bar go together".into())),
    };
    let mut report = cli::cmd_bound(inputs, &xs, prior, hash, &context(&args.common))?;
    report.notices.extend(notices);
    Ok(report)
}

fn run(cli: Cli) -> Result<(Report, Option<Error>)> {
    match cli.command {
        Command::Certify(common) => {
            set_threads(common.threads)?;
            cli::cmd_certify(&need_config(&common)?, &context(&common))
        }
        Command::Simulate(common) => {
            set_threads(common.threads)?;
            Ok((cli::cmd_simulate(&need_config(&common)?, &context(&common))?, None))
        }
        Command::Distance { common, a, b, t, segments } => {
            set_threads(common.threads)?;
            Ok((cli::cmd_distance(&need_config(&common)?, &context(&common), &a, &b, t, segments)?, None))
        }
        Command::Bound(args) => {
            set_threads(args.common.threads)?;
            Ok((run_bound(&args)?, None))
        }
        Command::ReproduceExample(args) => {
            set_threads(args.threads)?;
            let fig = FigureOptions { s: args.s, n_paths: args.paths, seed: args.seed, t_end: args.t_end, dt: args.dt, ..Default::default() };
            let verify = VerifyOptions {
                rate_box: Domain::cube(2, 3.0, args.t_end),
                b: args.b,
                samples: args.samples,
                seed: args.seed,
            };
            let ctx = RunContext { out_dir: args.out.clone(), seed: Some(args.seed) };
            Ok((cli::cmd_reproduce_example(&fig, &verify, &ctx)?, None))
        }
    }
}

fn main() -> ExitCode {
    let parsed = Cli::parse();
    match run(parsed) {
        Ok((report, failure)) => {
            for n in &report.notices {
                eprintln!("note: {n}");
            }
            println!("{}", report.to_json());
            match failure {
                Some(err) => {
                    eprintln!("{}", cli::error_record(&err));
                    ExitCode::from(err.exit_code() as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(err) => {
            eprintln!("{}", cli::error_record(&err));
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
