//! Euler–Maruyama / difference-equation simulation of trajectory pairs and
//! ensembles with reproducible noise.
//!
//! Every path of an ensemble draws its noise from ChaCha8 streams whose seeds
//! are derived from `(master seed, path index, stream tag)`, so results do not
//! depend on thread scheduling and each run is reproducible bit for bit on a
//! given build.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::{self, GeodesicOptions, SystemMetric};
use crate::linalg;
use crate::system::{ContinuousSystem, DiscreteSystem, Domain, StochasticSystem};

/// Stream tags mixed into derived seeds.
pub mod tag {
    pub const A: u64 = 0xA;
    pub const B: u64 = 0xB;
    pub const INIT: u64 = 0x1;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `tag` of path `index` under `master`.
pub fn derive_seed(master: u64, index: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ index) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Standard normal draws from a counter-based ChaCha8 stream.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.rng.sample(StandardNormal);
        }
    }

    pub fn next_vec(&mut self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        self.fill(&mut v);
        v
    }
}

/// `count` independent N(0, I_dim) vectors, deterministic in `seed`.
pub fn gaussian_stream(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut s = GaussianStream::new(seed);
    (0..count).map(|_| s.next_vec(dim)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    /// Both trajectories driven by independent noise streams.
    Independent,
    /// The second trajectory is integrated without noise.
    NoiseFreeSecond,
}

/// Time grid of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Continuous { t_end: f64, dt: f64 },
    Discrete { steps: u64 },
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    steps: usize,
    dt: f64,
}

impl Horizon {
    fn grid(&self) -> Result<Grid> {
        match *self {
            Horizon::Continuous { t_end, dt } => {
                if !(dt > 0.0) || !(t_end >= 0.0) || !t_end.is_finite() {
                    return Err(Error::InvalidInput(format!("need dt > 0 and finite T >= 0, got dt={dt}, T={t_end}")));
                }
                let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
                let dt = if steps == 0 { dt } else { t_end / steps as f64 };
                Ok(Grid { steps, dt })
            }
            Horizon::Discrete { steps } => Ok(Grid { steps: steps as usize, dt: 1.0 }),
        }
    }

    /// Step actually used: `T / ceil(T/δ)` for continuous horizons.
    pub fn effective_dt(&self) -> Result<f64> {
        Ok(self.grid()?.dt)
    }

    pub fn steps(&self) -> Result<usize> {
        Ok(self.grid()?.steps)
    }
}

/// One-step integrator shared by continuous and discrete systems.
pub trait Stepper: StochasticSystem {
    /// Advances `state` from step `k` (time `k·dt`). `noise` holds N(0, I_d)
    /// draws, or is `None` for a noiseless step.
    fn step(&self, state: &mut [f64], k: u64, dt: f64, noise: Option<&[f64]>) -> Result<()>;

    fn is_discrete(&self) -> bool;
}

impl Stepper for ContinuousSystem {
    fn step(&self, state: &mut [f64], k: u64, dt: f64, noise: Option<&[f64]>) -> Result<()> {
        let t = k as f64 * dt;
        let f = self.drift(state, t)?;
        let incr = match noise {
            Some(z) if self.noise_dim() > 0 => Some(self.diffusion(state, t)?.mul_vec(z)),
            _ => None,
        };
        let sq = dt.sqrt();
        for i in 0..state.len() {
            state[i] += dt * f[i];
            if let Some(w) = &incr {
                state[i] += sq * w[i];
            }
        }
        Ok(())
    }

    fn is_discrete(&self) -> bool {
        false
    }
}

impl Stepper for DiscreteSystem {
    fn step(&self, state: &mut [f64], k: u64, _dt: f64, noise: Option<&[f64]>) -> Result<()> {
        let next = self.map(state, k)?;
        let incr = match noise {
            Some(z) if self.noise_dim() > 0 => Some(self.diffusion_at(state, k)?.mul_vec(z)),
            _ => None,
        };
        for i in 0..state.len() {
            state[i] = next[i] + incr.as_ref().map_or(0.0, |w| w[i]);
        }
        Ok(())
    }

    fn is_discrete(&self) -> bool {
        true
    }
}

/// Safety box: the system domain inflated ×10 per axis.
pub fn safety_box(domain: &Domain) -> Domain {
    domain.scaled(10.0)
}

fn escaped(safety: &Domain, a: &[f64]) -> bool {
    a.iter().any(|x| !x.is_finite()) || !safety.contains(a)
}

/// Runs a pair on `grid`, calling `visit(k, t, a, b)` for every recorded point.
/// Returns the index of the first step at which either path left the safety box.
#[allow(clippy::too_many_arguments)]
fn run_pair<S: Stepper + ?Sized>(
    sys: &S,
    a0: &[f64],
    b0: &[f64],
    grid: Grid,
    coupling: NoiseCoupling,
    seed: u64,
    safety: &Domain,
    mut visit: impl FnMut(usize, f64, &[f64], &[f64]),
) -> Result<Option<usize>> {
    let n = sys.dim();
    if a0.len() != n || b0.len() != n {
        return Err(Error::DimensionMismatch(format!("initial conditions must have {n} entries")));
    }
    let d = sys.noise_dim();
    let mut a = a0.to_vec();
    let mut b = b0.to_vec();
    let mut sa = GaussianStream::new(derive_seed(seed, 0, tag::A));
    let mut sb = GaussianStream::new(derive_seed(seed, 0, tag::B));
    let mut za = vec![0.0; d];
    let mut zb = vec![0.0; d];
    let time = |k: usize| if sys.is_discrete() { k as f64 } else { k as f64 * grid.dt };
    visit(0, time(0), &a, &b);
    for k in 0..grid.steps {
        sa.fill(&mut za);
        sb.fill(&mut zb);
        sys.step(&mut a, k as u64, grid.dt, Some(&za))?;
        let zb_opt = match coupling {
            NoiseCoupling::Independent => Some(zb.as_slice()),
            NoiseCoupling::NoiseFreeSecond => None,
        };
        sys.step(&mut b, k as u64, grid.dt, zb_opt)?;
        if escaped(safety, &a) || escaped(safety, &b) {
            return Ok(Some(k + 1));
        }
        visit(k + 1, time(k + 1), &a, &b);
    }
    Ok(None)
}

/// Two coupled sample paths on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPair {
    pub times: Vec<f64>,
    pub a_path: Vec<Vec<f64>>,
    pub b_path: Vec<Vec<f64>>,
    pub coupling: NoiseCoupling,
    pub seed: u64,
    pub dt: f64,
    /// Time at which the pair left the safety box; the paths stop just before it.
    pub diverged_at: Option<f64>,
}

impl TrajectoryPair {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// `‖a(t) − b(t)‖²` along the recorded grid.
    pub fn sq_errors(&self) -> Vec<f64> {
        self.a_path.iter().zip(&self.b_path).map(|(a, b)| linalg::dist_sq(a, b)).collect()
    }
}

fn simulate_pair<S: Stepper + ?Sized>(
    sys: &S,
    a0: &[f64],
    b0: &[f64],
    horizon: Horizon,
    coupling: NoiseCoupling,
    seed: u64,
) -> Result<TrajectoryPair> {
    let grid = horizon.grid()?;
    let safety = safety_box(sys.domain());
    let mut times = Vec::with_capacity(grid.steps + 1);
    let mut a_path = Vec::with_capacity(grid.steps + 1);
    let mut b_path = Vec::with_capacity(grid.steps + 1);
    let diverged = run_pair(sys, a0, b0, grid, coupling, seed, &safety, |_, t, a, b| {
        times.push(t);
        a_path.push(a.to_vec());
        b_path.push(b.to_vec());
    })?;
    let discrete = sys.is_discrete();
    let diverged_at = diverged.map(|k| if discrete { k as f64 } else { k as f64 * grid.dt });
    Ok(TrajectoryPair { times, a_path, b_path, coupling, seed, dt: grid.dt, diverged_at })
}

/// Iterates `a_{k+1} = f(a_k,k) + σ(a_k,k) w_{k+1}` for both paths.
pub fn simulate_discrete(
    sys: &DiscreteSystem,
    a0: &[f64],
    b0: &[f64],
    steps: u64,
    coupling: NoiseCoupling,
    seed: u64,
) -> Result<TrajectoryPair> {
    simulate_pair(sys, a0, b0, Horizon::Discrete { steps }, coupling, seed)
}

/// Euler–Maruyama on `[0, T]`; `dt` is reduced to `T/ceil(T/dt)` when it does not divide `T`.
pub fn simulate_continuous(
    sys: &ContinuousSystem,
    a0: &[f64],
    b0: &[f64],
    t_end: f64,
    dt: f64,
    coupling: NoiseCoupling,
    seed: u64,
) -> Result<TrajectoryPair> {
    simulate_pair(sys, a0, b0, Horizon::Continuous { t_end, dt }, coupling, seed)
}

/// Single Euler–Maruyama path driven by given Brownian increments (each of variance `dt`).
pub fn integrate_with_increments(
    sys: &ContinuousSystem,
    a0: &[f64],
    dt: f64,
    increments: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut a = a0.to_vec();
    let mut path = Vec::with_capacity(increments.len() + 1);
    path.push(a.clone());
    for (k, dw) in increments.iter().enumerate() {
        let t = k as f64 * dt;
        let f = sys.drift(&a, t)?;
        let s = sys.diffusion(&a, t)?.mul_vec(dw);
        for i in 0..a.len() {
            a[i] += dt * f[i] + s[i];
        }
        path.push(a.clone());
    }
    Ok(path)
}

/// Single noisy path, used for trajectory-conditioned estimates.
pub(crate) fn simulate_single<S: Stepper + ?Sized>(
    sys: &S,
    a0: &[f64],
    horizon: Horizon,
    seed: u64,
    mut visit: impl FnMut(usize, f64, &[f64]) -> Result<()>,
) -> Result<Option<usize>> {
    let grid = horizon.grid()?;
    let safety = safety_box(sys.domain());
    let mut a = a0.to_vec();
    let mut s = GaussianStream::new(derive_seed(seed, 0, tag::A));
    let mut z = vec![0.0; sys.noise_dim()];
    let time = |k: usize| if sys.is_discrete() { k as f64 } else { k as f64 * grid.dt };
    visit(0, time(0), &a)?;
    for k in 0..grid.steps {
        s.fill(&mut z);
        sys.step(&mut a, k as u64, grid.dt, Some(&z))?;
        if escaped(&safety, &a) {
            return Ok(Some(k + 1));
        }
        visit(k + 1, time(k + 1), &a)?;
    }
    Ok(None)
}

pub type InitFn = Arc<dyn Fn(&mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// Distribution `p(ξ, ξ')` of the initial pair.
#[derive(Clone)]
pub enum InitialSampler {
    Fixed { a: Vec<f64>, b: Vec<f64> },
    /// `a` and `b` drawn independently and uniformly from the box.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Independent Gaussians around the two means with a common standard deviation.
    Gaussian { a_mean: Vec<f64>, b_mean: Vec<f64>, std: f64 },
    Custom(InitFn),
}

impl std::fmt::Debug for InitialSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialSampler::Fixed { a, b } => write!(f, "Fixed({a:?}, {b:?})"),
            InitialSampler::UniformBox { lower, upper } => write!(f, "UniformBox({lower:?}, {upper:?})"),
            InitialSampler::Gaussian { a_mean, b_mean, std } => write!(f, "Gaussian({a_mean:?}, {b_mean:?}, {std})"),
            InitialSampler::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl InitialSampler {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        match self {
            InitialSampler::Fixed { a, b } => (a.clone(), b.clone()),
            InitialSampler::UniformBox { lower, upper } => {
                let mut draw = || -> Vec<f64> {
                    lower.iter().zip(upper).map(|(l, u)| l + (u - l) * rng.random::<f64>()).collect()
                };
                let a = draw();
                let b = draw();
                (a, b)
            }
            InitialSampler::Gaussian { a_mean, b_mean, std } => {
                let a = a_mean.iter().map(|m| m + std * rng.sample::<f64, _>(StandardNormal)).collect();
                let b = b_mean.iter().map(|m| m + std * rng.sample::<f64, _>(StandardNormal)).collect();
                (a, b)
            }
            InitialSampler::Custom(f) => f(rng),
        }
    }
}

/// Subsampling for the (expensive) `E[d²_M]` statistic.
#[derive(Debug, Clone)]
pub struct DistanceStatsOptions {
    pub paths: usize,
    pub times: usize,
    pub geodesic: GeodesicOptions,
}

impl Default for DistanceStatsOptions {
    fn default() -> Self {
        DistanceStatsOptions { paths: 32, times: 64, geodesic: GeodesicOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub horizon: Horizon,
    pub coupling: NoiseCoupling,
    pub n_paths: usize,
    pub seed: u64,
    /// Number of full trajectory pairs retained in the result.
    pub keep_paths: usize,
    pub distance_stats: Option<DistanceStatsOptions>,
}

/// Per-time ensemble statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeStats {
    pub t: f64,
    pub mean_sq_err: f64,
    pub stderr: f64,
    pub n_alive: usize,
    pub mean_dm_sq: Option<f64>,
    pub dm_stderr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub stats: Vec<TimeStats>,
    pub pairs: Vec<TrajectoryPair>,
    pub seed: u64,
    pub n_paths: usize,
    pub diverged_paths: usize,
    pub coupling: NoiseCoupling,
    pub dt: f64,
}

impl Ensemble {
    pub fn times(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.t).collect()
    }
}

/// Running mean / M2 accumulator (Chan et al. merge), deterministic given merge order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

const CHUNK: usize = 32;

struct ChunkResult {
    moments: Vec<Moments>,
    kept: Vec<TrajectoryPair>,
    /// (path, sample slot, a, b)
    dm_samples: Vec<(usize, usize, Vec<f64>, Vec<f64>)>,
    diverged: usize,
}

/// Runs `n_paths` independent pairs and reduces per-time statistics.
pub fn run_ensemble<S: Stepper + ?Sized>(sys: &S, init: &InitialSampler, opts: &EnsembleOptions) -> Result<Ensemble> {
    if opts.n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be at least 1".into()));
    }
    let grid = opts.horizon.grid()?;
    let safety = safety_box(sys.domain());
    let discrete = sys.is_discrete();
    let time = |k: usize| if discrete { k as f64 } else { k as f64 * grid.dt };
    let dm_slots: Vec<usize> = match &opts.distance_stats {
        Some(d) if d.times > 0 => {
            let count = d.times.min(grid.steps + 1);
            let mut slots: Vec<usize> = (0..count)
                .map(|i| if count == 1 { 0 } else { (i * grid.steps + (count - 1) / 2) / (count - 1) })
                .collect();
            slots.dedup();
            slots
        }
        _ => Vec::new(),
    };
    let dm_paths = opts.distance_stats.as_ref().map_or(0, |d| d.paths);

    let chunks: Vec<usize> = (0..opts.n_paths.div_ceil(CHUNK)).collect();
    let results: Vec<Result<ChunkResult>> = chunks
        .par_iter()
        .map(|&c| {
            let mut res = ChunkResult {
                moments: vec![Moments::default(); grid.steps + 1],
                kept: Vec::new(),
                dm_samples: Vec::new(),
                diverged: 0,
            };
            for p in c * CHUNK..((c + 1) * CHUNK).min(opts.n_paths) {
                let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, p as u64, tag::INIT));
                let (a0, b0) = init.sample(&mut init_rng);
                let path_seed = derive_seed(opts.seed, p as u64, 0);
                let keep = p < opts.keep_paths;
                let mut pair = TrajectoryPair {
                    times: Vec::new(),
                    a_path: Vec::new(),
                    b_path: Vec::new(),
                    coupling: opts.coupling,
                    seed: path_seed,
                    dt: grid.dt,
                    diverged_at: None,
                };
                let diverged = run_pair(sys, &a0, &b0, grid, opts.coupling, path_seed, &safety, |k, t, a, b| {
                    res.moments[k].push(linalg::dist_sq(a, b));
                    if keep {
                        pair.times.push(t);
                        pair.a_path.push(a.to_vec());
                        pair.b_path.push(b.to_vec());
                    }
                    if p < dm_paths {
                        if let Ok(slot) = dm_slots.binary_search(&k) {
                            res.dm_samples.push((p, slot, a.to_vec(), b.to_vec()));
                        }
                    }
                })?;
                if let Some(k) = diverged {
                    res.diverged += 1;
                    pair.diverged_at = Some(time(k));
                }
                if keep {
                    res.kept.push(pair);
                }
            }
            Ok(res)
        })
        .collect();

    let mut moments = vec![Moments::default(); grid.steps + 1];
    let mut pairs = Vec::new();
    let mut dm_samples = Vec::new();
    let mut diverged_paths = 0;
    for r in results {
        let r = r?;
        for (m, o) in moments.iter_mut().zip(&r.moments) {
            m.merge(o);
        }
        pairs.extend(r.kept);
        dm_samples.extend(r.dm_samples);
        diverged_paths += r.diverged;
    }

    let mut dm_moments = vec![Moments::default(); dm_slots.len()];
    if let Some(dopts) = &opts.distance_stats {
        let distances: Vec<Result<(usize, f64)>> = dm_samples
            .par_iter()
            .map(|(_, slot, a, b)| {
                let t = time(dm_slots[*slot]);
                let metric = SystemMetric::new(sys, t).unbounded();
                Ok((*slot, geodesic::distance_sq(a, b, &metric, &dopts.geodesic)?.dist_sq))
            })
            .collect();
        for d in distances {
            let (slot, v) = d?;
            dm_moments[slot].push(v);
        }
    }

    let stats = moments
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let dm = dm_slots.binary_search(&k).ok().map(|s| dm_moments[s]);
            TimeStats {
                t: time(k),
                mean_sq_err: m.mean,
                stderr: m.stderr(),
                n_alive: m.count,
                mean_dm_sq: dm.filter(|d| d.count > 0).map(|d| d.mean),
                dm_stderr: dm.filter(|d| d.count > 0).map(|d| d.stderr()),
            }
        })
        .collect();

    Ok(Ensemble { stats, pairs, seed: opts.seed, n_paths: opts.n_paths, diverged_paths, coupling: opts.coupling, dt: grid.dt })
}
