//! Sampled certification of the contraction hypotheses: rates, metric floor,
//! noise-trace bounds and regularity estimates over a box domain.
//!
//! Everything here is a numerical estimate over sample points, not a proof.
//! Reports always carry sample counts and worst points so a user can refine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, tol, Matrix};
use crate::sde::{self, Horizon, Stepper};
use crate::system::{gram, ContinuousSystem, DiscreteSystem, Domain, StochasticSystem};

pub const DEFAULT_SAMPLES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub state: Vec<f64>,
    pub time: f64,
}

/// Deterministic grid plus Cranley–Patterson-shifted Halton points over a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub points: usize,
    pub seed: u64,
    /// Coordinates held fixed (slices such as `x₂ = 0`).
    pub pinned: Vec<(usize, f64)>,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler { points: DEFAULT_SAMPLES, seed: 0, pinned: Vec::new() }
    }
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

impl Sampler {
    pub fn new(points: usize) -> Self {
        Sampler { points, ..Default::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn pin(mut self, axis: usize, value: f64) -> Self {
        self.pinned.retain(|(a, _)| *a != axis);
        self.pinned.push((axis, value));
        self
    }

    /// Sample points over `domain`. Discrete systems get integer step indices.
    pub fn sample(&self, domain: &Domain, discrete: bool) -> Result<Vec<SamplePoint>> {
        if self.points == 0 {
            return Err(Error::InvalidInput("sampler needs at least one point".into()));
        }
        let n = domain.dim();
        if let Some((axis, _)) = self.pinned.iter().find(|(a, _)| *a >= n) {
            return Err(Error::InvalidInput(format!("pinned axis {} out of range for dimension {n}", axis + 1)));
        }
        let free: Vec<usize> = (0..n).filter(|i| !self.pinned.iter().any(|(a, _)| a == i)).collect();
        let (t0, t1) = if discrete {
            (domain.t_start.floor(), (domain.t_end - 1.0).floor().max(domain.t_start.floor()))
        } else {
            (domain.t_start, domain.t_end)
        };
        let sample_time = t1 > t0;
        let m = free.len() + sample_time as usize;

        let make = |u: &[f64]| -> SamplePoint {
            let mut state = vec![0.0; n];
            for (j, &i) in free.iter().enumerate() {
                state[i] = domain.lower[i] + u[j] * (domain.upper[i] - domain.lower[i]);
            }
            for &(i, v) in &self.pinned {
                state[i] = v;
            }
            let time = if sample_time {
                let t = t0 + u[m - 1] * (t1 - t0);
                if discrete {
                    t.round()
                } else {
                    t
                }
            } else {
                t0
            };
            SamplePoint { state, time }
        };

        if m == 0 {
            return Ok(vec![make(&[])]);
        }

        let mut out = Vec::with_capacity(self.points);
        // full-factorial grid including the faces, using at most half the budget
        let half = (self.points / 2) as f64;
        let g = half.powf(1.0 / m as f64).floor() as usize;
        if g >= 2 {
            let total = g.pow(m as u32);
            let mut u = vec![0.0; m];
            for idx in 0..total {
                let mut r = idx;
                for uj in u.iter_mut() {
                    *uj = (r % g) as f64 / (g - 1) as f64;
                    r /= g;
                }
                out.push(make(&u));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shift: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let mut u = vec![0.0; m];
        let mut i = 1u64;
        while out.len() < self.points {
            for j in 0..m {
                let h = if j < PRIMES.len() { radical_inverse(i, PRIMES[j]) } else { rng.random::<f64>() };
                u[j] = (h + shift[j]).fract();
            }
            out.push(make(&u));
            i += 1;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstPoint {
    pub state: Vec<f64>,
    pub time: f64,
    pub value: f64,
}

/// Extremum of a pointwise quantity over the samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub worst: Option<WorstPoint>,
    pub evaluated: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl Estimate {
    pub fn failure_fraction(&self) -> f64 {
        let total = self.evaluated + self.failures;
        if total == 0 {
            1.0
        } else {
            self.failures as f64 / total as f64
        }
    }

    /// Fewer than 0.1% of the points failed to evaluate.
    pub fn reliable(&self) -> bool {
        self.evaluated > 0 && self.failure_fraction() <= tol::MAX_FAILURE_FRACTION
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Goal {
    Max,
    Min,
}

/// Parallel evaluation with an in-order reduction, so ties resolve to the
/// first sample and the result does not depend on scheduling.
fn extremum<F>(points: &[SamplePoint], goal: Goal, f: F) -> Estimate
where
    F: Fn(&SamplePoint) -> Result<f64> + Sync,
{
    let values: Vec<Result<f64>> = points
        .par_iter()
        .map(|p| {
            let v = f(p)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite(format!("value {v} at {:?}, t={}", p.state, p.time)))
            }
        })
        .collect();
    let mut est = Estimate {
        value: match goal {
            Goal::Max => f64::NEG_INFINITY,
            Goal::Min => f64::INFINITY,
        },
        worst: None,
        evaluated: 0,
        failures: 0,
        first_failure: None,
    };
    for (p, v) in points.iter().zip(values) {
        match v {
            Ok(v) => {
                est.evaluated += 1;
                let better = match goal {
                    Goal::Max => v > est.value,
                    Goal::Min => v < est.value,
                };
                if better || est.worst.is_none() {
                    est.value = v;
                    est.worst = Some(WorstPoint { state: p.state.clone(), time: p.time, value: v });
                }
            }
            Err(e) => {
                est.failures += 1;
                if est.first_failure.is_none() {
                    est.first_failure = Some(e.to_string());
                }
            }
        }
    }
    if est.evaluated == 0 {
        est.value = f64::NAN;
    }
    est
}

fn step(t: f64) -> u64 {
    t.round().max(0.0) as u64
}

/// `F = Θ_{k+1}(f(a,k)) · ∂f/∂a · Θ_k(a)⁻¹`.
pub fn generalized_jacobian_discrete(sys: &DiscreteSystem, a: &[f64], k: u64) -> Result<Matrix> {
    let image = sys.map(a, k)?;
    let th_next = sys.theta_at(&image, k + 1)?;
    let th_inv = linalg::invert(&sys.theta_at(a, k)?)?;
    let jac = sys.map_jacobian(a, k)?;
    Ok(&(&th_next * &jac) * &th_inv)
}

/// `μ̂ = max λ_max(FᵀF)` over the samples.
pub fn discrete_rate(sys: &DiscreteSystem, domain: &Domain, sampler: &Sampler) -> Result<Estimate> {
    let points = sampler.sample(domain, true)?;
    Ok(extremum(&points, Goal::Max, |p| {
        let f = generalized_jacobian_discrete(sys, &p.state, step(p.time))?;
        linalg::lambda_max(&gram(&f))
    }))
}

/// `[(Θ̇ + Θ·∂f/∂a)·Θ⁻¹]_s` with `Θ̇` the derivative along the drift.
pub fn continuous_gen_jacobian_sym(sys: &ContinuousSystem, a: &[f64], t: f64) -> Result<Matrix> {
    let th = sys.theta(a, t)?;
    let th_inv = linalg::invert(&th)?;
    let th_dot = sys.theta_dot(a, t)?;
    let jac = sys.drift_jacobian(a, t)?;
    let g = &(&th_dot + &(&th * &jac)) * &th_inv;
    Ok(g.sym_part())
}

/// `λ̂ = −max λ_max([…]_s)` over the samples; the worst point has the smallest local rate.
pub fn continuous_rate(sys: &ContinuousSystem, domain: &Domain, sampler: &Sampler) -> Result<Estimate> {
    let points = sampler.sample(domain, false)?;
    Ok(extremum(&points, Goal::Min, |p| {
        let s = continuous_gen_jacobian_sym(sys, &p.state, p.time)?;
        Ok(-linalg::lambda_max(&s)?)
    }))
}

/// `β̂ = min λ_min(M)` over the samples.
pub fn metric_floor<S: StochasticSystem + ?Sized>(
    sys: &S,
    domain: &Domain,
    sampler: &Sampler,
    discrete: bool,
) -> Result<Estimate> {
    let points = sampler.sample(domain, discrete)?;
    Ok(extremum(&points, Goal::Min, |p| linalg::lambda_min(&sys.metric(&p.state, p.time)?)))
}

/// `sup tr(σᵀMσ)` over the samples.
pub fn noise_trace_bound<S: StochasticSystem + ?Sized>(
    sys: &S,
    domain: &Domain,
    sampler: &Sampler,
    discrete: bool,
) -> Result<Estimate> {
    let points = sampler.sample(domain, discrete)?;
    Ok(extremum(&points, Goal::Max, |p| sys.noise_trace(&p.state, p.time)))
}

/// Trajectory-conditioned noise trace: `sup_{a₀, t} E[tr(σᵀMσ)(a(t), t) | a(0) = a₀]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalTrace {
    /// Largest path-averaged trace over times and starting points.
    pub estimate: f64,
    pub stderr: f64,
    /// Time-and-path average for the worst starting point.
    pub mean: f64,
    pub worst_start: Vec<f64>,
    pub worst_time: f64,
    pub paths: usize,
    pub starts: usize,
    pub diverged_paths: usize,
    pub certifiable: bool,
}

pub fn conditional_trace_bound<S: Stepper + ?Sized>(
    sys: &S,
    initial_region: &Domain,
    horizon: Horizon,
    starts: usize,
    paths: usize,
    seed: u64,
) -> Result<ConditionalTrace> {
    if paths == 0 {
        return Err(Error::InvalidInput("conditional trace bound needs at least one path".into()));
    }
    let steps = horizon.steps()?;
    let start_points = Sampler::new(starts.max(1)).with_seed(seed).sample(initial_region, false)?;
    let per_start: Vec<Result<(Vec<sde::Moments>, usize)>> = start_points
        .par_iter()
        .enumerate()
        .map(|(si, sp)| {
            let mut moments = vec![sde::Moments::default(); steps + 1];
            let mut diverged = 0;
            for p in 0..paths {
                let path_seed = sde::derive_seed(seed, (si * paths + p) as u64, 0x7);
                let out = sde::simulate_single(sys, &sp.state, horizon, path_seed, |k, t, a| {
                    moments[k].push(sys.noise_trace(a, t)?);
                    Ok(())
                })?;
                diverged += out.is_some() as usize;
            }
            Ok((moments, diverged))
        })
        .collect();

    let dt = horizon.effective_dt()?;
    let discrete = matches!(horizon, Horizon::Discrete { .. });
    let mut best: Option<ConditionalTrace> = None;
    let mut diverged_paths = 0;
    for (sp, r) in start_points.iter().zip(per_start) {
        let (moments, diverged) = r?;
        diverged_paths += diverged;
        let mut total = sde::Moments::default();
        moments.iter().for_each(|m| total.merge(m));
        let (k, m) = moments
            .iter()
            .enumerate()
            .filter(|(_, m)| m.count > 0)
            .fold(None::<(usize, &sde::Moments)>, |acc, (k, m)| match acc {
                Some((_, b)) if b.mean >= m.mean => acc,
                _ => Some((k, m)),
            })
            .ok_or(Error::Diverged { time: 0.0 })?;
        if best.as_ref().is_none_or(|b| m.mean > b.estimate) {
            best = Some(ConditionalTrace {
                estimate: m.mean,
                stderr: m.stderr(),
                mean: total.mean,
                worst_start: sp.state.clone(),
                worst_time: if discrete { k as f64 } else { k as f64 * dt },
                paths,
                starts: start_points.len(),
                diverged_paths: 0,
                certifiable: true,
            });
        }
    }
    let mut out = best.expect("at least one start point");
    out.diverged_paths = diverged_paths;
    out.certifiable = diverged_paths == 0;
    Ok(out)
}

/// Sampled Lipschitz and growth constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Regularity {
    /// `max (‖f(a)−f(b)‖ + ‖σ(a)−σ(b)‖_F) / ‖a−b‖` over sampled pairs.
    pub lipschitz: f64,
    /// `max (‖f‖² + ‖σ‖_F²) / (1 + ‖a‖²)` over the box.
    pub growth: f64,
    /// The same growth constant on the box inflated ×2.
    pub growth_doubled: f64,
    pub growth_ratio: f64,
    /// Growth ratio above 2: the linear-growth restriction is likely violated.
    pub near_violation: bool,
    pub pairs: usize,
}

fn growth_constant(sys: &ContinuousSystem, domain: &Domain, sampler: &Sampler) -> Result<f64> {
    let points = sampler.sample(domain, false)?;
    let est = extremum(&points, Goal::Max, |p| {
        let f = sys.drift(&p.state, p.time)?;
        let s = sys.diffusion(&p.state, p.time)?;
        Ok((linalg::dot(&f, &f) + s.frobenius().powi(2)) / (1.0 + linalg::dot(&p.state, &p.state)))
    });
    if est.evaluated == 0 {
        return Err(Error::NonFinite(est.first_failure.unwrap_or_else(|| "growth constant".into())));
    }
    Ok(est.value)
}

pub fn regularity_check(sys: &ContinuousSystem, domain: &Domain, sampler: &Sampler, pairs: usize) -> Result<Regularity> {
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(sde::derive_seed(sampler.seed, 0, 0x4C));
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|i| domain.lower[i] + (domain.upper[i] - domain.lower[i]) * rng.random::<f64>()).collect()
    };
    let span = domain.t_end - domain.t_start;
    let samples: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..pairs)
        .map(|_| {
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let t = domain.t_start + span * rng.random::<f64>();
            (a, b, t)
        })
        .collect();
    let ratios: Vec<Result<f64>> = samples
        .par_iter()
        .map(|(a, b, t)| {
            let d = linalg::norm(&linalg::sub(a, b));
            if d == 0.0 {
                return Ok(0.0);
            }
            let df = linalg::norm(&linalg::sub(&sys.drift(a, *t)?, &sys.drift(b, *t)?));
            let ds = (&sys.diffusion(a, *t)? - &sys.diffusion(b, *t)?).frobenius();
            Ok((df + ds) / d)
        })
        .collect();
    let mut lipschitz = 0.0f64;
    for r in ratios {
        lipschitz = lipschitz.max(r?);
    }
    let growth = growth_constant(sys, domain, sampler)?;
    let growth_doubled = growth_constant(sys, &domain.scaled(2.0), sampler)?;
    let growth_ratio = if growth > 0.0 { growth_doubled / growth } else { 1.0 };
    Ok(Regularity { lipschitz, growth, growth_doubled, growth_ratio, near_violation: growth_ratio > 2.0, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub sampler: Sampler,
    /// Conservative inflation factor ≥ 1 applied to the reported constants.
    pub margin: f64,
    /// Pairs for the Lipschitz estimate (continuous mode); 0 skips the regularity check.
    pub regularity_pairs: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { sampler: Sampler::default(), margin: 1.0, regularity_pairs: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesesPass {
    pub rate: bool,
    pub metric_floor: bool,
    pub noise_bound: bool,
    pub evaluations: bool,
}

impl HypothesesPass {
    pub fn all(&self) -> bool {
        self.rate && self.metric_floor && self.noise_bound && self.evaluations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstPoints {
    pub rate: Option<WorstPoint>,
    pub beta: Option<WorstPoint>,
    pub noise_bound: Option<WorstPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub mode: Mode,
    /// `μ̂` (per step) in discrete mode, `λ̂` (1/time) in continuous mode, after the margin.
    pub rate: f64,
    pub beta: f64,
    /// `D̂` or `Ĉ`, after the margin.
    pub noise_bound: f64,
    pub raw_rate: f64,
    pub raw_beta: f64,
    pub raw_noise_bound: f64,
    pub margin: f64,
    pub sample_count: usize,
    pub failed_evaluations: usize,
    pub first_failure: Option<String>,
    pub worst_points: WorstPoints,
    pub lipschitz_est: Option<f64>,
    pub growth_est: Option<f64>,
    pub growth_ratio: Option<f64>,
    pub growth_near_violation: Option<bool>,
    pub domain: Domain,
    pub hypotheses_pass: HypothesesPass,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.hypotheses_pass.all()
    }
}

fn check_margin(margin: f64) -> Result<()> {
    if !(margin >= 1.0) || !margin.is_finite() {
        return Err(Error::InvalidInput(format!("margin must be a finite factor >= 1, got {margin}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    mode: Mode,
    rate_est: Estimate,
    beta_est: Estimate,
    noise_est: Estimate,
    margin: f64,
    domain: &Domain,
    regularity: Option<Regularity>,
) -> CertificationReport {
    let (rate, rate_ok) = match mode {
        Mode::Discrete => {
            let mu = rate_est.value * margin;
            (mu, mu < 1.0)
        }
        Mode::Continuous => {
            let lam = rate_est.value / margin;
            (lam, lam > 0.0)
        }
    };
    let beta = beta_est.value / margin;
    let noise_bound = noise_est.value * margin;
    let failed = rate_est.failures + beta_est.failures + noise_est.failures;
    let first_failure =
        rate_est.first_failure.clone().or(beta_est.first_failure.clone()).or(noise_est.first_failure.clone());
    let evaluations = rate_est.reliable() && beta_est.reliable() && noise_est.reliable();
    CertificationReport {
        mode,
        rate,
        beta,
        noise_bound,
        raw_rate: rate_est.value,
        raw_beta: beta_est.value,
        raw_noise_bound: noise_est.value,
        margin,
        sample_count: rate_est.evaluated + rate_est.failures,
        failed_evaluations: failed,
        first_failure,
        worst_points: WorstPoints { rate: rate_est.worst, beta: beta_est.worst, noise_bound: noise_est.worst },
        lipschitz_est: regularity.as_ref().map(|r| r.lipschitz),
        growth_est: regularity.as_ref().map(|r| r.growth),
        growth_ratio: regularity.as_ref().map(|r| r.growth_ratio),
        growth_near_violation: regularity.as_ref().map(|r| r.near_violation),
        domain: domain.clone(),
        hypotheses_pass: HypothesesPass {
            rate: rate_ok && rate.is_finite(),
            metric_floor: beta > 0.0,
            noise_bound: noise_bound.is_finite(),
            evaluations,
        },
    }
}

/// Estimates `λ̂`, `β̂`, `Ĉ` (and regularity constants) over `domain`.
pub fn certify_continuous(sys: &ContinuousSystem, domain: &Domain, opts: &CertifyOptions) -> Result<CertificationReport> {
    check_margin(opts.margin)?;
    let rate = continuous_rate(sys, domain, &opts.sampler)?;
    let beta = metric_floor(sys, domain, &opts.sampler, false)?;
    let noise = noise_trace_bound(sys, domain, &opts.sampler, false)?;
    let regularity = if opts.regularity_pairs > 0 {
        regularity_check(sys, domain, &opts.sampler, opts.regularity_pairs).ok()
    } else {
        None
    };
    Ok(assemble(Mode::Continuous, rate, beta, noise, opts.margin, domain, regularity))
}

/// Estimates `μ̂`, `β̂`, `D̂` over `domain` (time axis in steps).
pub fn certify_discrete(sys: &DiscreteSystem, domain: &Domain, opts: &CertifyOptions) -> Result<CertificationReport> {
    check_margin(opts.margin)?;
    let rate = discrete_rate(sys, domain, &opts.sampler)?;
    let beta = metric_floor(sys, domain, &opts.sampler, true)?;
    let noise = noise_trace_bound(sys, domain, &opts.sampler, true)?;
    Ok(assemble(Mode::Discrete, rate, beta, noise, opts.margin, domain, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{self, SystemMetric};
    use crate::system::Domain;

    fn rot(angle: f64) -> Matrix {
        let (s, c) = angle.sin_cos();
        Matrix::from_rows(&[[c, -s], [s, c]])
    }

    #[test]
    fn sampler_is_deterministic_and_covers_the_box() {
        let d = Domain::cube(2, 3.0, 1.0);
        let s = Sampler::new(4096).with_seed(9);
        let p1 = s.sample(&d, false).unwrap();
        assert_eq!(p1, s.sample(&d, false).unwrap());
        assert_eq!(p1.len(), 4096);
        assert!(p1.iter().all(|p| d.contains(&p.state) && (0.0..=1.0).contains(&p.time)));
        // the grid includes the corners
        assert!(p1.iter().any(|p| p.state == vec![3.0, 3.0]));
        assert_ne!(p1, Sampler::new(4096).with_seed(10).sample(&d, false).unwrap());
    }

    #[test]
    fn pinned_axis_and_discrete_steps() {
        let d = Domain::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.0, 10.0).unwrap();
        let pts = Sampler::new(200).pin(1, 0.0).sample(&d, true).unwrap();
        assert!(pts.iter().all(|p| p.state[1] == 0.0 && p.time.fract() == 0.0 && p.time <= 9.0));
        assert!(Sampler::new(10).pin(5, 0.0).sample(&d, true).is_err());
    }

    #[test]
    fn discrete_jacobian_trivial_cases() {
        let a = Matrix::from_rows(&[[0.3, 0.1], [-0.2, 0.5]]);
        let sys = DiscreteSystem::linear(a.clone(), 0);
        let f = generalized_jacobian_discrete(&sys, &[0.2, 0.1], 0).unwrap();
        assert!((&f - &a).max_abs() < 1e-12);

        let scalar = DiscreteSystem::new(1, 0, |a, _| Ok(vec![0.7 * a[0]]));
        let f = generalized_jacobian_discrete(&scalar, &[0.4], 3).unwrap();
        assert!((f[(0, 0)] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn image_point_metric_is_used() {
        // Θ_k(a) = (1 + a²): F = Θ(f(a))·ρ/Θ(a)
        let sys = DiscreteSystem::new(1, 0, |a, _| Ok(vec![0.5 * a[0]]))
            .with_theta(|a, _| Ok(Matrix::from_rows(&[[1.0 + a[0] * a[0]]])));
        let f = generalized_jacobian_discrete(&sys, &[1.0], 0).unwrap();
        assert!((f[(0, 0)] - 1.25 * 0.5 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn discrete_rates() {
        let d = Domain::cube(2, 1.0, 5.0);
        let s = Sampler::new(500);
        let half = DiscreteSystem::linear(Matrix::from_diag(&[0.5, 0.5]), 0);
        assert!((discrete_rate(&half, &d, &s).unwrap().value - 0.25).abs() < 1e-12);
        let r = DiscreteSystem::linear(rot(0.7), 0);
        assert!((discrete_rate(&r, &d, &s).unwrap().value - 1.0).abs() < 1e-12);

        let cont = ContinuousSystem::linear(Matrix::from_diag(&[-1.0, -1.0]), 0);
        let euler = cont.euler_discretization(0.01);
        let mu = discrete_rate(&euler, euler.domain(), &s).unwrap().value;
        assert!((mu - 0.99f64.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn continuous_rates() {
        let d = Domain::cube(2, 1.0, 1.0);
        let s = Sampler::new(300);
        let sys = ContinuousSystem::new(2, 0, |a, _| Ok(vec![-2.0 * a[0], -2.0 * a[1]]));
        assert!((continuous_rate(&sys, &d, &s).unwrap().value - 2.0).abs() < 1e-6);

        // normal matrix: symmetric part diag(-1,-1) plus a rotation
        let a = Matrix::from_rows(&[[-1.0, 3.0], [-3.0, -1.0]]);
        let expected = -linalg::lambda_max(&a.sym_part()).unwrap();
        let lin = ContinuousSystem::linear(a, 0);
        assert!((continuous_rate(&lin, &d, &s).unwrap().value - expected).abs() < 1e-12);
    }

    #[test]
    fn rotating_metric_has_skew_generalized_jacobian() {
        let omega = 1.3;
        let sys = ContinuousSystem::new(2, 0, |_, _| Ok(vec![0.0, 0.0])).with_theta(move |_, t| Ok(rot(omega * t)));
        for t in [0.0, 0.4, 2.0] {
            let s = continuous_gen_jacobian_sym(&sys, &[0.1, 0.2], t).unwrap();
            assert!(s.max_abs() < 1e-8, "{s:?}");
        }
    }

    #[test]
    fn rate_is_invariant_under_constant_rotation_of_theta() {
        let theta = |a: &[f64]| Matrix::from_rows(&[[1.0 + 0.1 * a[1] * a[1], 0.2], [0.0, 2.0]]);
        let drift = |a: &[f64], _t: f64| Ok(vec![-a[0] + 0.2 * a[1].sin(), -1.5 * a[1]]);
        let base = ContinuousSystem::new(2, 0, drift).with_theta(move |a, _| Ok(theta(a)));
        let r = rot(0.9);
        let rotated = ContinuousSystem::new(2, 0, drift).with_theta(move |a, _| Ok(&r * &theta(a)));
        let d = Domain::cube(2, 1.0, 1.0);
        let s = Sampler::new(400);
        let l1 = continuous_rate(&base, &d, &s).unwrap().value;
        let l2 = continuous_rate(&rotated, &d, &s).unwrap().value;
        assert!((l1 - l2).abs() < 1e-8, "{l1} vs {l2}");
    }

    #[test]
    fn floors_and_traces() {
        let d = Domain::cube(2, 2.0, 1.0);
        let s = Sampler::new(500);
        let id = ContinuousSystem::new(2, 2, |a, _| Ok(a.to_vec())).with_diffusion(|_, _| Ok(Matrix::identity(2)));
        assert!((metric_floor(&id, &d, &s, false).unwrap().value - 1.0).abs() < 1e-12);
        assert!((noise_trace_bound(&id, &d, &s, false).unwrap().value - 2.0).abs() < 1e-12);

        let diag = ContinuousSystem::new(2, 0, |a, _| Ok(a.to_vec()))
            .with_theta(|a, _| Ok(Matrix::from_diag(&[2f64.sqrt(), (5.0 + a[0] * a[0]).sqrt()])));
        assert!((metric_floor(&diag, &d, &s, false).unwrap().value - 2.0).abs() < 1e-12);

        let sigma0 = |a: &[f64]| Matrix::from_rows(&[[1.0 + a[0]], [a[1]]]);
        let one = ContinuousSystem::new(2, 1, |a, _| Ok(a.to_vec())).with_diffusion(move |a, _| Ok(sigma0(a)));
        let two = ContinuousSystem::new(2, 1, |a, _| Ok(a.to_vec())).with_diffusion(move |a, _| Ok(sigma0(a).scale(2.0)));
        let b1 = noise_trace_bound(&one, &d, &s, false).unwrap().value;
        let b2 = noise_trace_bound(&two, &d, &s, false).unwrap().value;
        assert!((b2 - 4.0 * b1).abs() < 1e-9 * b2);
    }

    #[test]
    fn failures_are_tallied() {
        let sys = ContinuousSystem::new(1, 0, |a, _| Ok(vec![-a[0]]))
            .with_theta(|a, _| Ok(Matrix::from_rows(&[[if a[0] == 0.0 { 0.0 } else { 1.0 }]])));
        let d = Domain::cube(1, 1.0, 1.0);
        let rep = certify_continuous(&sys, &d, &CertifyOptions { sampler: Sampler::new(101), ..Default::default() }).unwrap();
        assert!(rep.failed_evaluations > 0);
        assert!(!rep.hypotheses_pass.evaluations);
        assert!(!rep.passed());
    }

    #[test]
    fn conditional_trace_trivial_cases() {
        let d = Domain::cube(1, 1.0, 1.0);
        let c = ContinuousSystem::new(1, 1, |a, _| Ok(vec![-a[0]])).with_diffusion(|_, _| Ok(Matrix::from_rows(&[[1.5]])));
        let est = conditional_trace_bound(&c, &d, Horizon::Continuous { t_end: 1.0, dt: 0.01 }, 4, 10, 1).unwrap();
        assert!((est.estimate - 2.25).abs() < 1e-12 && est.stderr < 1e-12);
        let z = ContinuousSystem::new(1, 1, |a, _| Ok(vec![-a[0]]));
        let est = conditional_trace_bound(&z, &d, Horizon::Continuous { t_end: 1.0, dt: 0.01 }, 4, 10, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert!(est.certifiable);
    }

    #[test]
    fn conditional_trace_flags_blow_up() {
        let d = Domain::cube(1, 1.0, 1.0);
        let sys = ContinuousSystem::new(1, 1, |a, _| Ok(vec![5.0 * a[0]])).with_diffusion(|_, _| Ok(Matrix::from_rows(&[[1.0]])));
        let est = conditional_trace_bound(&sys, &d, Horizon::Continuous { t_end: 2.0, dt: 0.01 }, 2, 4, 1).unwrap();
        assert!(!est.certifiable);
    }

    #[test]
    fn regularity_estimates() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]);
        let norm = linalg::lambda_max(&gram(&a)).unwrap().sqrt();
        let lin = ContinuousSystem::linear(a, 0);
        let d = Domain::cube(2, 1.0, 1.0);
        let r = regularity_check(&lin, &d, &Sampler::new(512), 4096).unwrap();
        assert!(r.lipschitz <= norm + 1e-9 && r.lipschitz > 0.95 * norm, "{} vs {norm}", r.lipschitz);

        let c = ContinuousSystem::new(2, 0, |_, _| Ok(vec![1.0, 2.0]));
        assert_eq!(regularity_check(&c, &d, &Sampler::new(64), 256).unwrap().lipschitz, 0.0);

        // f = a² on [−10, 10]: K₂ = max a⁴/(1+a²) is attained at the edge
        let q = ContinuousSystem::new(1, 0, |a, _| Ok(vec![a[0] * a[0]]));
        let box10 = Domain::cube(1, 10.0, 1.0);
        let r = regularity_check(&q, &box10, &Sampler::new(512), 64).unwrap();
        let k = |x: f64| x.powi(4) / (1.0 + x * x);
        assert!((r.growth - k(10.0)).abs() < 1e-9);
        assert!((r.growth_ratio - k(20.0) / k(10.0)).abs() < 1e-9);
        assert!(r.near_violation);
        assert!(!regularity_check(&lin, &d, &Sampler::new(512), 16).unwrap().near_violation);
    }

    #[test]
    fn euler_rate_is_consistent_with_continuous_rate() {
        let drift = |a: &[f64], _t: f64| Ok(vec![-a[0] + 0.3 * a[1], -0.3 * a[0] - 2.0 * a[1] + 0.1 * a[0].sin()]);
        let sys = ContinuousSystem::new(2, 0, drift);
        let d = Domain::cube(2, 1.0, 1.0);
        let s = Sampler::new(256);
        let lam = continuous_rate(&sys, &d, &s).unwrap().value;
        let mut prev = f64::INFINITY;
        for dt in [1e-2, 5e-3, 2.5e-3] {
            let e = sys.euler_discretization(dt);
            let mu = discrete_rate(&e, &Domain { t_end: 1.0, ..d.clone() }, &s).unwrap().value;
            let gap = ((1.0 - mu) / (2.0 * dt) - lam).abs();
            assert!(gap < prev, "{gap} !< {prev}");
            prev = gap;
        }
        assert!(prev < 0.02);
    }

    #[test]
    fn contraction_inequality_on_random_pairs() {
        let sys = DiscreteSystem::new(2, 0, |a, _| Ok(vec![0.5 * a[0] + 0.1 * a[1].sin(), 0.3 * a[1] - 0.1 * a[0]]))
            .with_theta(|_, _| Ok(Matrix::from_rows(&[[2.0, 0.5], [0.0, 1.0]])));
        let d = Domain::cube(2, 1.0, 3.0);
        let mu = discrete_rate(&sys, &d, &Sampler::new(1024)).unwrap().value;
        assert!(mu < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let opts = geodesic::GeodesicOptions::default();
        for _ in 0..20 {
            let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let before = geodesic::distance_sq(&a, &b, &SystemMetric::new(&sys, 0.0), &opts).unwrap().dist_sq;
            let (fa, fb) = (sys.map(&a, 0).unwrap(), sys.map(&b, 0).unwrap());
            let after = geodesic::distance_sq(&fa, &fb, &SystemMetric::new(&sys, 1.0), &opts).unwrap().dist_sq;
            assert!(after <= mu * before + 1e-9);
        }
    }

    #[test]
    fn report_flags_and_margin() {
        let sys = ContinuousSystem::linear(Matrix::from_diag(&[-1.0, -2.0]), 2)
            .with_diffusion(|_, _| Ok(Matrix::identity(2).scale(0.5)));
        let d = Domain::cube(2, 1.0, 1.0);
        let opts = CertifyOptions { sampler: Sampler::new(256), margin: 2.0, regularity_pairs: 64 };
        let rep = certify_continuous(&sys, &d, &opts).unwrap();
        assert!(rep.passed());
        assert!((rep.raw_rate - 1.0).abs() < 1e-9 && (rep.rate - 0.5).abs() < 1e-9);
        assert!((rep.noise_bound - 1.0).abs() < 1e-12);
        assert!(rep.lipschitz_est.is_some());
        assert!(certify_continuous(&sys, &d, &CertifyOptions { margin: 0.5, ..opts.clone() }).is_err());

        let unstable = DiscreteSystem::linear(Matrix::from_diag(&[1.1, 0.5]), 0);
        let rep = certify_discrete(&unstable, &Domain::cube(2, 1.0, 5.0), &CertifyOptions::default()).unwrap();
        assert!(!rep.hypotheses_pass.rate && rep.hypotheses_pass.metric_floor);
        assert_eq!(rep.mode, Mode::Discrete);
    }
}
