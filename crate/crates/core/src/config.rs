//! Run configuration: a TOML document with `system`, `domain`, `certify`,
//! `simulate` and `bound` blocks. Unknown keys are rejected.
//!
//! Environment variables prefixed `STOCON_` override config values; nested
//! keys are separated by a double underscore, e.g. `STOCON_SIMULATE__PATHS=200`
//! or `STOCON_SYSTEM__NOISE_INTENSITY=0.5`. Values are parsed as TOML
//! (numbers, booleans, arrays) and fall back to plain strings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contraction::{CertifyOptions, Mode, Sampler, DEFAULT_SAMPLES};
use crate::dsl::ExprMatrix;
use crate::error::{Error, Result};
use crate::geodesic::GeodesicOptions;
use crate::linalg::Matrix;
use crate::observer::{self, Measurement};
use crate::sde::{DistanceStatsOptions, EnsembleOptions, Horizon, InitialSampler, NoiseCoupling};
use crate::system::{ContinuousSystem, DiscreteSystem, Domain};

pub const ENV_PREFIX: &str = "STOCON_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub certify: CertifyConfig,
    pub simulate: Option<SimulateConfig>,
    pub bound: Option<BoundConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default = "default_kind")]
    pub kind: Mode,
    /// Built-in system name; currently `observer`.
    pub builtin: Option<String>,
    pub name: Option<String>,
    pub n: Option<usize>,
    #[serde(default)]
    pub d: usize,
    /// One expression per state coordinate (the map for discrete systems).
    pub drift: Option<Vec<String>>,
    /// `n` rows of `d` expressions.
    pub diffusion: Option<Vec<Vec<String>>>,
    /// `n` rows of `n` expressions; identity when absent.
    pub theta: Option<Vec<Vec<String>>>,
    /// Built-in observer: noise intensity `S`.
    pub noise_intensity: Option<f64>,
    /// Built-in observer: plant initial state generating the measurement.
    pub plant_x0: Option<[f64; 2]>,
}

fn default_kind() -> Mode {
    Mode::Continuous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub margin: f64,
    #[serde(default = "default_pairs")]
    pub regularity_pairs: usize,
    /// Exit with a certification failure when the hypotheses do not hold.
    #[serde(default = "yes")]
    pub require_pass: bool,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { samples: DEFAULT_SAMPLES, seed: 0, margin: 1.0, regularity_pairs: 1024, require_pass: true }
    }
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn one() -> f64 {
    1.0
}
fn default_pairs() -> usize {
    1024
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Step for continuous systems.
    pub dt: Option<f64>,
    /// Horizon for continuous systems.
    pub t_end: Option<f64>,
    /// Number of steps for discrete systems.
    pub steps: Option<u64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_coupling")]
    pub coupling: NoiseCoupling,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub keep_paths: usize,
    pub initial: InitialConfig,
    pub distance_stats: Option<DistanceStatsConfig>,
}

fn default_paths() -> usize {
    1000
}
fn default_coupling() -> NoiseCoupling {
    NoiseCoupling::Independent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Fixed { a: Vec<f64>, b: Vec<f64> },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { a_mean: Vec<f64>, b_mean: Vec<f64>, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceStatsConfig {
    #[serde(default = "default_dm_paths")]
    pub paths: usize,
    #[serde(default = "default_dm_times")]
    pub times: usize,
    #[serde(default = "default_segments")]
    pub segments: usize,
}

fn default_dm_paths() -> usize {
    32
}
fn default_dm_times() -> usize {
    64
}
fn default_segments() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantsSource {
    FromCertification,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub mode: Option<Mode>,
    #[serde(default = "default_source")]
    pub constants: ConstantsSource,
    pub rate: Option<f64>,
    pub noise: Option<f64>,
    pub beta: Option<f64>,
    /// `E[d²_{M₀}(ξ, ξ′)]`; computed from the initial condition when absent.
    pub u0: Option<f64>,
    #[serde(default)]
    pub noise_free_reference: bool,
    pub abscissae: Option<Vec<f64>>,
}

fn default_source() -> ConstantsSource {
    ConstantsSource::Explicit
}

/// A parsed config plus what was changed on the way in.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// SHA-256 of the effective config after overrides, as canonical TOML.
    pub hash: String,
    pub overrides: Vec<String>,
}

fn set_path(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut table = root;
    for key in parents {
        let entry = table.entry(key.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path {} crosses a non-table value", path.join("."))))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `(key, value)` overrides such as `("STOCON_SIMULATE__PATHS", "10")`.
pub fn apply_overrides<I, K, V>(table: &mut toml::Table, vars: I) -> Result<Vec<String>>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut applied: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let k = k.as_ref();
            k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_string(), v.as_ref().to_string()))
        })
        .collect();
    applied.sort();
    let mut out = Vec::new();
    for (key, value) in applied {
        let path: Vec<String> = key.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed override key {ENV_PREFIX}{key}")));
        }
        set_path(table, &path, parse_override_value(&value))?;
        out.push(format!("{}={value}", path.join(".")));
    }
    Ok(out)
}

/// Parses config text, applies the given overrides and validates.
pub fn parse_config<I, K, V>(text: &str, overrides: I) -> Result<LoadedConfig>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let applied = apply_overrides(&mut table, overrides)?;
    let config: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.validate()?;
    let canonical = toml::to_string(&config).map_err(|e| Error::Config(e.to_string()))?;
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(LoadedConfig { config, hash, overrides: applied })
}

/// Reads a config file and applies `STOCON_*` variables from the environment.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, std::env::vars())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let sys = &self.system;
        match sys.builtin.as_deref() {
            Some("observer") => {
                if sys.drift.is_some() || sys.diffusion.is_some() || sys.theta.is_some() {
                    return Err(Error::Config("builtin systems take no drift/diffusion/theta expressions".into()));
                }
                if sys.kind != Mode::Continuous {
                    return Err(Error::Config("the observer builtin is a continuous system".into()));
                }
            }
            Some(other) => return Err(Error::Config(format!("unknown builtin system '{other}' (available: observer)"))),
            None => {
                if sys.n.is_none() || sys.drift.is_none() {
                    return Err(Error::Config("system needs n and drift unless a builtin is used".into()));
                }
                if sys.noise_intensity.is_some() || sys.plant_x0.is_some() {
                    return Err(Error::Config("noise_intensity and plant_x0 only apply to the observer builtin".into()));
                }
            }
        }
        let n = self.dim();
        if let Some(d) = &self.domain {
            if d.lower.len() != n || d.upper.len() != n {
                return Err(Error::DimensionMismatch(format!("domain bounds must have {n} entries")));
            }
        }
        if !(self.certify.margin >= 1.0) {
            return Err(Error::Config(format!("certify.margin must be >= 1, got {}", self.certify.margin)));
        }
        if self.certify.samples == 0 {
            return Err(Error::Config("certify.samples must be at least 1".into()));
        }
        if let Some(s) = &self.simulate {
            match sys.kind {
                Mode::Continuous if s.dt.is_none() || s.t_end.is_none() => {
                    return Err(Error::Config("simulate needs dt and t_end for continuous systems".into()));
                }
                Mode::Discrete if s.steps.is_none() => {
                    return Err(Error::Config("simulate needs steps for discrete systems".into()));
                }
                _ => {}
            }
            if s.paths == 0 {
                return Err(Error::Config("simulate.paths must be at least 1".into()));
            }
            let lens = match &s.initial {
                InitialConfig::Fixed { a, b } => [a.len(), b.len()],
                InitialConfig::UniformBox { lower, upper } => [lower.len(), upper.len()],
                InitialConfig::Gaussian { a_mean, b_mean, .. } => [a_mean.len(), b_mean.len()],
            };
            if lens != [n, n] {
                return Err(Error::DimensionMismatch(format!("simulate.initial vectors must have {n} entries")));
            }
        }
        if let Some(b) = &self.bound {
            if b.constants == ConstantsSource::Explicit && (b.rate.is_none() || b.noise.is_none() || b.beta.is_none()) {
                return Err(Error::Config("bound block needs rate, noise and beta, or constants = \"from-certification\"".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.system.builtin.as_deref() {
            Some("observer") => 2,
            _ => self.system.n.unwrap_or(0),
        }
    }

    pub fn noise_intensity(&self) -> f64 {
        self.system.noise_intensity.unwrap_or(1.0)
    }

    pub fn domain(&self) -> Result<Domain> {
        match &self.domain {
            Some(d) => Domain::new(d.lower.clone(), d.upper.clone(), d.t_start, d.t_end),
            None => Ok(Domain::cube(self.dim(), if self.system.builtin.is_some() { 3.0 } else { 1.0 }, 1.0)),
        }
    }

    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            sampler: Sampler::new(self.certify.samples).with_seed(self.certify.seed),
            margin: self.certify.margin,
            regularity_pairs: self.certify.regularity_pairs,
        }
    }
}

impl SimulateConfig {
    pub fn horizon(&self, mode: Mode) -> Horizon {
        match mode {
            Mode::Continuous => Horizon::Continuous { t_end: self.t_end.unwrap_or(0.0), dt: self.dt.unwrap_or(0.0) },
            Mode::Discrete => Horizon::Discrete { steps: self.steps.unwrap_or(0) },
        }
    }

    pub fn sampler(&self) -> InitialSampler {
        match &self.initial {
            InitialConfig::Fixed { a, b } => InitialSampler::Fixed { a: a.clone(), b: b.clone() },
            InitialConfig::UniformBox { lower, upper } => InitialSampler::UniformBox { lower: lower.clone(), upper: upper.clone() },
            InitialConfig::Gaussian { a_mean, b_mean, std } => {
                InitialSampler::Gaussian { a_mean: a_mean.clone(), b_mean: b_mean.clone(), std: *std }
            }
        }
    }

    pub fn ensemble_options(&self, mode: Mode, seed: u64) -> EnsembleOptions {
        EnsembleOptions {
            horizon: self.horizon(mode),
            coupling: self.coupling,
            n_paths: self.paths,
            seed,
            keep_paths: self.keep_paths,
            distance_stats: self.distance_stats.as_ref().map(|d| DistanceStatsOptions {
                paths: d.paths,
                times: d.times,
                geodesic: GeodesicOptions { segments: d.segments, ..Default::default() },
            }),
        }
    }
}

/// A system built from config.
#[derive(Debug, Clone)]
pub enum BuiltSystem {
    Continuous(ContinuousSystem),
    Discrete(DiscreteSystem),
}

impl BuiltSystem {
    pub fn mode(&self) -> Mode {
        match self {
            BuiltSystem::Continuous(_) => Mode::Continuous,
            BuiltSystem::Discrete(_) => Mode::Discrete,
        }
    }
}

fn expr_matrix(rows: &[Vec<String>], n: usize, cols: usize, what: &str) -> Result<ExprMatrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch(format!("{what} must be {n}x{cols}, got {} rows", rows.len())));
    }
    ExprMatrix::parse(rows, n).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Builds the configured system; `notices` collects defaults that were filled in.
pub fn build_from_config(cfg: &RunConfig, notices: &mut Vec<String>) -> Result<BuiltSystem> {
    cfg.validate()?;
    let sys = &cfg.system;
    let domain = cfg.domain()?;
    if cfg.domain.is_none() {
        notices.push(format!("no domain block: using [{}, {}]^{} x [0, 1]", domain.lower[0], domain.upper[0], cfg.dim()));
    }
    if sys.builtin.as_deref() == Some("observer") {
        let x0 = sys.plant_x0.unwrap_or(observer::PLANT_X0);
        let s = cfg.noise_intensity();
        let built = observer::observer_transformed(Measurement::Plant { x0 }, s).with_domain(domain);
        return Ok(BuiltSystem::Continuous(built));
    }

    let n = sys.n.expect("validated");
    let d = sys.d;
    let drift_rows = sys.drift.as_ref().expect("validated");
    if drift_rows.len() != n {
        return Err(Error::DimensionMismatch(format!("drift has {} rows but n = {n}", drift_rows.len())));
    }
    let drift = ExprMatrix::parse_column(drift_rows, n).map_err(|e| Error::Config(format!("drift: {e}")))?;
    let diffusion = match &sys.diffusion {
        Some(rows) => Some(expr_matrix(rows, n, d, "diffusion")?),
        None => {
            if d > 0 {
                notices.push("no diffusion block: noise is zero".into());
            }
            None
        }
    };
    let theta = match &sys.theta {
        Some(rows) => Some(expr_matrix(rows, n, n, "theta")?),
        None => {
            notices.push("no theta block: using the identity metric".into());
            None
        }
    };
    let name = sys.name.clone().unwrap_or_else(|| "configured system".into());

    Ok(match sys.kind {
        Mode::Continuous => {
            let mut s = ContinuousSystem::new(n, d, move |a, t| drift.eval_vec(a, t)).with_name(name).with_domain(domain);
            if let Some(m) = diffusion {
                s = s.with_diffusion(move |a, t| m.eval(a, t));
            }
            if let Some(m) = theta {
                s = s.with_theta(move |a, t| m.eval(a, t));
            }
            BuiltSystem::Continuous(s)
        }
        Mode::Discrete => {
            // `t` in the expressions is the step index
            let mut s = DiscreteSystem::new(n, d, move |a, k| drift.eval_vec(a, k as f64)).with_name(name).with_domain(domain);
            if let Some(m) = diffusion {
                s = s.with_diffusion(move |a, k| m.eval(a, k as f64));
            }
            if let Some(m) = theta {
                s = s.with_theta(move |a, k| m.eval(a, k as f64));
            } else {
                s = s.with_theta(move |_, _| Ok(Matrix::identity(n)));
            }
            BuiltSystem::Discrete(s)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::StochasticSystem;

    const NONE: [(&str, &str); 0] = [];

    const LINEAR: &str = r#"
[system]
n = 2
d = 2
drift = ["-x1", "-2*x2 + sin(t)"]
diffusion = [["0.5", "0"], ["0", "0.5"]]

[domain]
lower = [-1, -1]
upper = [1, 1]
t_end = 2
"#;

    #[test]
    fn builds_a_dsl_system() {
        let loaded = parse_config(LINEAR, NONE).unwrap();
        let mut notices = Vec::new();
        let BuiltSystem::Continuous(sys) = build_from_config(&loaded.config, &mut notices).unwrap() else {
            panic!("expected continuous");
        };
        assert_eq!(sys.drift(&[1.0, 1.0], 0.0).unwrap(), vec![-1.0, -2.0]);
        assert_eq!(sys.noise_trace(&[0.0, 0.0], 0.0).unwrap(), 0.5);
        assert_eq!(sys.metric(&[0.3, 0.1], 0.0).unwrap(), Matrix::identity(2));
        assert!(notices.iter().any(|n| n.contains("identity metric")));
        assert_eq!(loaded.hash.len(), 64);
    }

    #[test]
    fn observer_builtin() {
        let cfg = parse_config("[system]\nbuiltin = \"observer\"\nnoise_intensity = 2.0\n", NONE).unwrap();
        let BuiltSystem::Continuous(sys) = build_from_config(&cfg.config, &mut Vec::new()).unwrap() else {
            panic!("expected continuous");
        };
        assert_eq!((sys.dim(), sys.noise_dim()), (2, 1));
        assert!((sys.noise_trace(&[0.5, 0.5], 0.0).unwrap() - 4.0 * 29.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_and_schema_errors() {
        let bad = LINEAR.replace(r#"drift = ["-x1", "-2*x2 + sin(t)"]"#, r#"drift = ["-x1", "-x2", "0"]"#);
        let cfg = parse_config(&bad, NONE).unwrap();
        assert!(matches!(build_from_config(&cfg.config, &mut Vec::new()), Err(Error::DimensionMismatch(_))));

        let typo = LINEAR.replace("[domain]", "[domain]\nuper = [1, 1]");
        assert!(matches!(parse_config(&typo, NONE), Err(Error::Config(_))));

        let parse_err = LINEAR.replace("-2*x2 + sin(t)", "-2*x3");
        let cfg = parse_config(&parse_err, NONE).unwrap();
        let err = build_from_config(&cfg.config, &mut Vec::new()).unwrap_err();
        assert!(err.to_string().contains("drift"), "{err}");
        assert_eq!(err.exit_code(), 1);

        assert!(parse_config("[system]\nbuiltin = \"pendulum\"\n", NONE).is_err());
    }

    #[test]
    fn env_overrides() {
        let text = format!(
            "{LINEAR}\n[simulate]\ndt = 0.01\nt_end = 1\npaths = 10\n[simulate.initial]\nkind = \"fixed\"\na = [0, 0]\nb = [0, 0]\n"
        );
        let base = parse_config(&text, NONE).unwrap();
        let over = parse_config(
            &text,
            [("STOCON_SIMULATE__PATHS", "25"), ("STOCON_SIMULATE__COUPLING", "noise_free_second"), ("OTHER_VAR", "1")],
        )
        .unwrap();
        let s = over.config.simulate.as_ref().unwrap();
        assert_eq!(s.paths, 25);
        assert_eq!(s.coupling, NoiseCoupling::NoiseFreeSecond);
        assert_eq!(over.overrides.len(), 2);
        assert_ne!(base.hash, over.hash);
        assert!(parse_config(&text, [("STOCON_SIMULATE__PATHZ", "3")]).is_err());
    }
}
