//! Command implementations behind the `stocon` binary. Each command writes
//! its data files atomically into the output directory and returns a
//! [`Report`] describing the run.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bounds::{self, BoundInputs};
use crate::config::{build_from_config, BuiltSystem, ConstantsSource, LoadedConfig};
use crate::contraction::{self, CertificationReport, Mode};
use crate::error::{Error, Result};
use crate::geodesic::{self, GeodesicOptions, SystemMetric};
use crate::observer::{self, FigureOptions, VerifyOptions};
use crate::sde::{self, Ensemble};
use crate::system::StochasticSystem;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// The single structured record every run emits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: Option<String>,
    pub seeds: Value,
    pub status: String,
    pub notices: Vec<String>,
    pub results: Value,
    pub outputs: Vec<OutputFile>,
}

impl Report {
    fn new(command: &str, config_hash: Option<&str>) -> Self {
        Report {
            tool: "stocon".into(),
            version: VERSION.into(),
            command: command.into(),
            config_hash: config_hash.map(str::to_string),
            seeds: json!({}),
            status: "ok".into(),
            notices: Vec::new(),
            results: json!({}),
            outputs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<OutputFile> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(OutputFile { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(contents)) })
}

/// `# key=value` header lines prepended to every CSV; data rows follow the column header.
fn csv_header(command: &str, config_hash: Option<&str>, extra: &[(&str, String)]) -> String {
    let mut s = format!("# stocon {VERSION} {command}\n");
    if let Some(h) = config_hash {
        let _ = writeln!(s, "# config_hash={h}");
    }
    for (k, v) in extra {
        let _ = writeln!(s, "# {k}={v}");
    }
    s
}

/// The CSV without its `#` comment lines.
pub fn csv_body(csv: &str) -> String {
    csv.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

/// Output directory and command-line overrides shared by all commands.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

fn certify_built(sys: &BuiltSystem, loaded: &LoadedConfig, seed: Option<u64>) -> Result<CertificationReport> {
    let cfg = &loaded.config;
    let mut opts = cfg.certify_options();
    if let Some(s) = seed {
        opts.sampler.seed = s;
    }
    let domain = cfg.domain()?;
    match sys {
        BuiltSystem::Continuous(s) => contraction::certify_continuous(s, &domain, &opts),
        BuiltSystem::Discrete(s) => contraction::certify_discrete(s, &domain, &opts),
    }
}

/// Certifies the configured system; fails with a certification error when
/// `certify.require_pass` is set and a hypothesis does not hold (after the
/// report and certificate have been written).
pub fn cmd_certify(loaded: &LoadedConfig, ctx: &RunContext) -> Result<(Report, Option<Error>)> {
    let mut report = Report::new("certify", Some(&loaded.hash));
    let sys = build_from_config(&loaded.config, &mut report.notices)?;
    let seed = ctx.seed.unwrap_or(loaded.config.certify.seed);
    report.seeds = json!({ "sampler": seed });
    let cert = certify_built(&sys, loaded, Some(seed))?;
    let doc = serde_json::to_string_pretty(&cert).expect("certificate serializes");
    report.outputs.push(write_atomic(&ctx.out_dir, "certification.json", doc.as_bytes())?);
    report.results = serde_json::to_value(&cert).expect("certificate serializes");
    let failure = if cert.passed() {
        None
    } else {
        report.status = "not_certified".into();
        let pass = &cert.hypotheses_pass;
        let msg = format!(
            "rate={} metric_floor={} noise_bound={} evaluations={} (rate {}, beta {}, noise {})",
            pass.rate, pass.metric_floor, pass.noise_bound, pass.evaluations, cert.rate, cert.beta, cert.noise_bound
        );
        loaded.config.certify.require_pass.then_some(Error::NotCertified(msg))
    };
    report.outputs.sort_by(|a, b| a.path.cmp(&b.path));
    Ok((report, failure))
}

fn ensemble_csv(ens: &Ensemble, bound: Option<&BoundInputs>, header: &str) -> Result<String> {
    let with_dm = ens.stats.iter().any(|s| s.mean_dm_sq.is_some());
    let mut s = header.to_string();
    s.push_str("t_or_k,mean_sq_err,stderr,n_alive");
    if with_dm {
        s.push_str(",mean_dM_sq,dM_stderr");
    }
    if bound.is_some() {
        s.push_str(",bound");
    }
    s.push('\n');
    for st in &ens.stats {
        let _ = write!(s, "{},{},{},{}", st.t, st.mean_sq_err, st.stderr, st.n_alive);
        if with_dm {
            let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = write!(s, ",{},{}", f(st.mean_dm_sq), f(st.dm_stderr));
        }
        if let Some(b) = bound {
            let _ = write!(s, ",{}", bounds::bound(b, st.t)?.ms);
        }
        s.push('\n');
    }
    Ok(s)
}

fn paths_csv(ens: &Ensemble, header: &str) -> String {
    let mut s = header.to_string();
    let n = ens.pairs.first().and_then(|p| p.a_path.first()).map_or(0, |a| a.len());
    s.push_str("path,t_or_k");
    for i in 1..=n {
        let _ = write!(s, ",a{i}");
    }
    for i in 1..=n {
        let _ = write!(s, ",b{i}");
    }
    s.push('\n');
    for (p, pair) in ens.pairs.iter().enumerate() {
        for (k, t) in pair.times.iter().enumerate() {
            let _ = write!(s, "{p},{t}");
            for v in pair.a_path[k].iter().chain(&pair.b_path[k]) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

/// Initial mean squared distance in the metric at the start time, from `p(ξ, ξ′)` samples.
fn initial_u0<S: StochasticSystem + ?Sized>(
    sys: &S,
    sampler: &sde::InitialSampler,
    seed: u64,
    t0: f64,
    samples: usize,
) -> Result<f64> {
    use rand::SeedableRng;
    let mut acc = sde::Moments::default();
    let opts = GeodesicOptions { segments: 32, ..Default::default() };
    for i in 0..samples {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sde::derive_seed(seed, i as u64, sde::tag::INIT));
        let (a, b) = sampler.sample(&mut rng);
        let metric = SystemMetric::new(sys, t0).unbounded();
        acc.push(geodesic::distance_sq(&a, &b, &metric, &opts)?.dist_sq);
    }
    Ok(acc.mean)
}

fn bound_inputs_for(
    loaded: &LoadedConfig,
    sys: &BuiltSystem,
    seed: u64,
    report: &mut Report,
) -> Result<Option<BoundInputs>> {
    let Some(b) = &loaded.config.bound else { return Ok(None) };
    let mode = b.mode.unwrap_or(sys.mode());
    let (rate, noise, beta) = match b.constants {
        ConstantsSource::Explicit => (b.rate.unwrap_or(0.0), b.noise.unwrap_or(0.0), b.beta.unwrap_or(0.0)),
        ConstantsSource::FromCertification => {
            let cert = certify_built(sys, loaded, None)?;
            report.notices.push(format!(
                "bound constants from certification: rate {}, noise {}, beta {}",
                cert.rate, cert.noise_bound, cert.beta
            ));
            (cert.rate, cert.noise_bound, cert.beta)
        }
    };
    let u0 = match (b.u0, &loaded.config.simulate) {
        (Some(u), _) => u,
        (None, Some(sim)) => {
            let t0 = loaded.config.domain()?.t_start;
            match sys {
                BuiltSystem::Continuous(s) => initial_u0(s, &sim.sampler(), seed, t0, 64)?,
                BuiltSystem::Discrete(s) => initial_u0(s, &sim.sampler(), seed, t0, 64)?,
            }
        }
        (None, None) => return Err(Error::Config("bound.u0 is required without a simulate block".into())),
    };
    let inputs = BoundInputs { mode, rate, noise, beta, u0, noise_free_reference: b.noise_free_reference };
    inputs.validate()?;
    Ok(Some(inputs))
}

/// Bound inputs described by the config's `bound` block, plus notices.
pub fn config_bound_inputs(loaded: &LoadedConfig, seed: Option<u64>) -> Result<(BoundInputs, Vec<String>)> {
    let mut report = Report::new("bound", Some(&loaded.hash));
    let sys = build_from_config(&loaded.config, &mut report.notices)?;
    let seed = seed.or(loaded.config.simulate.as_ref().map(|s| s.seed)).unwrap_or(0);
    let inputs = bound_inputs_for(loaded, &sys, seed, &mut report)?
        .ok_or_else(|| Error::Config("config has no bound block".into()))?;
    Ok((inputs, report.notices))
}

/// Runs the configured ensemble; writes `stats.csv` (and `paths.csv` when paths are kept).
pub fn cmd_simulate(loaded: &LoadedConfig, ctx: &RunContext) -> Result<Report> {
    let mut report = Report::new("simulate", Some(&loaded.hash));
    let sim = loaded.config.simulate.as_ref().ok_or_else(|| Error::Config("simulate block is missing".into()))?;
    let sys = build_from_config(&loaded.config, &mut report.notices)?;
    let seed = ctx.seed.unwrap_or(sim.seed);
    let opts = sim.ensemble_options(sys.mode(), seed);
    let init = sim.sampler();
    let ens = match &sys {
        BuiltSystem::Continuous(s) => sde::run_ensemble(s, &init, &opts)?,
        BuiltSystem::Discrete(s) => sde::run_ensemble(s, &init, &opts)?,
    };
    let dt_requested = sim.dt.unwrap_or(1.0);
    if sys.mode() == Mode::Continuous && (ens.dt - dt_requested).abs() > 1e-12 * dt_requested {
        report.notices.push(format!("dt adjusted from {dt_requested} to {} to divide the horizon", ens.dt));
    }
    let bound = bound_inputs_for(loaded, &sys, seed, &mut report)?;
    report.seeds = json!({ "master": seed, "derivation": "splitmix64(master, path, stream)" });
    let header = csv_header("simulate", Some(&loaded.hash), &[("seed", seed.to_string()), ("dt", ens.dt.to_string())]);
    let csv = ensemble_csv(&ens, bound.as_ref(), &header)?;
    report.outputs.push(write_atomic(&ctx.out_dir, "stats.csv", csv.as_bytes())?);
    if !ens.pairs.is_empty() {
        report.outputs.push(write_atomic(&ctx.out_dir, "paths.csv", paths_csv(&ens, &header).as_bytes())?);
    }
    let last = ens.stats.last().expect("at least one time");
    report.results = json!({
        "paths": ens.n_paths,
        "diverged_paths": ens.diverged_paths,
        "dt": ens.dt,
        "final": { "t_or_k": last.t, "mean_sq_err": last.mean_sq_err, "stderr": last.stderr },
        "bound_inputs": bound,
    });
    if ens.diverged_paths > 0 {
        report.notices.push(format!("{} paths left the safety box and were truncated", ens.diverged_paths));
    }
    Ok(report)
}

/// Geodesic distance between `a` and `b` in the configured metric at time `t`.
pub fn cmd_distance(loaded: &LoadedConfig, ctx: &RunContext, a: &[f64], b: &[f64], t: f64, segments: usize) -> Result<Report> {
    let mut report = Report::new("distance", Some(&loaded.hash));
    let sys = build_from_config(&loaded.config, &mut report.notices)?;
    let opts = GeodesicOptions { segments, ..Default::default() };
    let result = match &sys {
        BuiltSystem::Continuous(s) => geodesic::distance_sq(a, b, &SystemMetric::new(s, t), &opts)?,
        BuiltSystem::Discrete(s) => geodesic::distance_sq(a, b, &SystemMetric::new(s, t), &opts)?,
    };
    let doc = serde_json::to_string_pretty(&result).expect("geodesic serializes");
    report.outputs.push(write_atomic(&ctx.out_dir, "geodesic.json", doc.as_bytes())?);
    if !result.converged {
        report.notices.push("geodesic solver hit its sweep limit; the value is an upper bound".into());
    }
    if result.clamped {
        report.notices.push("the curve touched the domain boundary and was clamped".into());
    }
    report.results = json!({
        "a": a, "b": b, "t": t,
        "dist_sq": result.dist_sq,
        "straight_line_energy": result.straight_line_energy,
        "iterations": result.iterations,
        "converged": result.converged,
    });
    Ok(report)
}

/// Extra inputs for the comparison with the earlier looser constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorInputs {
    pub sigma_bar: f64,
    pub m_bar: f64,
    pub n: usize,
}

/// Evaluates the bound at `abscissae` (∞ allowed) and writes `bound.csv`.
pub fn cmd_bound(
    inputs: &BoundInputs,
    abscissae: &[f64],
    prior: Option<PriorInputs>,
    config_hash: Option<&str>,
    ctx: &RunContext,
) -> Result<Report> {
    let mut report = Report::new("bound", config_hash);
    let series = bounds::bound_series(inputs, abscissae)?;
    let header = csv_header("bound", config_hash, &[]);
    let csv = format!("{header}{}", series.to_csv());
    report.outputs.push(write_atomic(&ctx.out_dir, "bound.csv", csv.as_bytes())?);
    let values: Vec<Value> = abscissae
        .iter()
        .zip(series.d2.iter().zip(&series.ms))
        .map(|(x, (d2, ms))| json!({ "t_or_k": if x.is_finite() { json!(x) } else { json!("inf") }, "d2_bound": d2, "ms_bound": ms }))
        .collect();
    let mut results = json!({
        "inputs": inputs,
        "asymptote_d2": inputs.asymptote(),
        "asymptote_ms": inputs.ms_asymptote(),
        "values": values,
    });
    if let Some(p) = prior {
        if inputs.mode != Mode::Continuous {
            return Err(Error::InvalidInput("the prior-bound comparison applies to continuous mode".into()));
        }
        let best = bounds::optimal_prior_epsilon(inputs.rate, inputs.noise, inputs.beta, p.sigma_bar, p.m_bar, p.n)?;
        let plain = inputs.noise / (inputs.beta * inputs.rate);
        let mut table = Vec::new();
        for i in 0..=12 {
            let eps = 10f64.powi(i - 6);
            let c = bounds::prior_bound_constants(inputs.rate, inputs.noise, inputs.beta, p.sigma_bar, p.m_bar, p.n, eps)?;
            table.push(json!({ "epsilon": eps, "lambda1": c.lambda1, "c1": c.c1, "ms_asymptote": c.ms_asymptote(inputs.beta) }));
        }
        results["prior_comparison"] = json!({
            "ms_asymptote": plain,
            "best_prior_ms_asymptote": best.ms_asymptote(inputs.beta),
            "best_epsilon": best.epsilon,
            "prior_is_looser": best.ms_asymptote(inputs.beta) > plain,
            "grid": table,
        });
    }
    report.results = results;
    Ok(report)
}

/// Reads bound constants from a `certification.json` written by `certify`.
pub fn inputs_from_certification(path: &Path, u0: f64, noise_free_reference: bool) -> Result<BoundInputs> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let field = |k: &str| v.get(k).and_then(Value::as_f64).ok_or_else(|| Error::Config(format!("certificate lacks '{k}'")));
    let mode: Mode = serde_json::from_value(v.get("mode").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Config(format!("certificate mode: {e}")))?;
    Ok(BoundInputs { mode, rate: field("rate")?, noise: field("noise_bound")?, beta: field("beta")?, u0, noise_free_reference })
}

/// Constants report and both figure panels for the observer example.
pub fn cmd_reproduce_example(fig: &FigureOptions, verify: &VerifyOptions, ctx: &RunContext) -> Result<Report> {
    let mut report = Report::new("reproduce-example", None);
    report.seeds = json!({ "master": fig.seed, "derivation": "splitmix64(master, path, stream)" });
    let constants = observer::verify_constants(verify)?;
    let doc = serde_json::to_string_pretty(&constants).expect("constants serialize");
    report.outputs.push(write_atomic(&ctx.out_dir, "constants_report.json", doc.as_bytes())?);
    for c in constants.checks.iter().filter(|c| !c.pass) {
        report.notices.push(format!("{}: computed {} vs reference {} (tolerance {})", c.name, c.computed, c.reference, c.tolerance));
    }

    let data = observer::reproduce_figure(fig)?;
    let header = csv_header(
        "reproduce-example",
        None,
        &[("seed", fig.seed.to_string()), ("S", fig.s.to_string()), ("paths", fig.n_paths.to_string()), ("dt", fig.dt.to_string())],
    );
    report.outputs.push(write_atomic(&ctx.out_dir, "figure_a.csv", format!("{header}{}", data.figure_a_csv()).as_bytes())?);
    report.outputs.push(write_atomic(&ctx.out_dir, "figure_b.csv", format!("{header}{}", data.figure_b_csv()).as_bytes())?);
    report.results = json!({
        "post_transient_mean_mse": data.window_mean_mse(fig.split, fig.t_end),
        "reference_bound": data.bound,
        "diverged_paths": data.diverged_paths,
        "constants": constants.checks,
    });
    Ok(report)
}

/// Machine-readable error record for stderr.
pub fn error_record(err: &Error) -> String {
    json!({ "error": err.kind(), "message": err.to_string(), "exit_code": err.exit_code() }).to_string()
}
