//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! Exit status is nonzero when a criterion fails, unless that criterion is listed
//! in `KNOWN_UNATTAINABLE` with the reason it cannot be met; those still print FAIL.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use stochastic_contraction::bounds::{self, BoundInputs};
use stochastic_contraction::contraction::{self, certify_continuous, certify_discrete, CertifyOptions, Sampler};
use stochastic_contraction::geodesic::{distance_sq, ConstantMetric, FnMetric, GeodesicOptions, SystemMetric};
use stochastic_contraction::linalg::{self, Matrix};
use stochastic_contraction::observer::{self, Measurement, VerifyOptions};
use stochastic_contraction::sde::{self, EnsembleOptions, Horizon, InitialSampler, Moments, NoiseCoupling};
use stochastic_contraction::system::{ContinuousSystem, DiscreteSystem, Domain, StochasticSystem};
use stochastic_contraction::Result;

const EIG_TOL: f64 = 0.01;
const RATE_RANGE: (f64, f64) = (0.23, 0.25);
const TRACE_TOL: f64 = 0.2;
const GAMMA0_TOL: f64 = 0.05;
const ULTIMATE_TOL: f64 = 0.05;
const REFERENCE_ULTIMATE: f64 = 2.45;
const MACHINE_REL: f64 = 1e-12;
const Z_MAX: f64 = 3.0;
const ORACLE_REL: f64 = 0.02;
const IDENTITY_ABS: f64 = 1e-12;
const PROP1_REL: f64 = 1e-6;
const EULER_GAP: f64 = 0.02;
const EULER_SAMPLES: usize = 4096;

const KNOWN_UNATTAINABLE: &[(usize, &str)] = &[(
    3,
    "for the observer metric M = JᵀPᵀPJ and σ = J⁻¹(S, S)ᵀ the weighted noise power \
     σᵀMσ = S²‖P(1,1)ᵀ‖² = 29·S² at every state, so no box yields 15.2; the ultimate \
     bound built from it is 29/(2·12.95·0.238) = 4.70, not 2.45",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(budget_ms: Option<u64>, elapsed: Duration) -> bool {
    budget_ms.is_none_or(|b| elapsed <= Duration::from_millis(b))
}

fn criterion_1() -> Result<Outcome> {
    let sym = observer::pqp_inv()?.sym_part();
    let (lo, hi) = linalg::lambda_min_max(&sym)?;
    let pass = (lo + 0.76).abs() <= EIG_TOL && (hi + 0.24).abs() <= EIG_TOL;
    Ok(Outcome { pass, detail: format!("eigenvalues ({lo:.5}, {hi:.5}) vs (-0.76, -0.24) ± {EIG_TOL}") })
}

fn observer_certificate() -> Result<contraction::CertificationReport> {
    let sys = observer::observer_transformed(Measurement::Plant { x0: observer::PLANT_X0 }, 1.0);
    certify_continuous(&sys, &Domain::cube(2, 3.0, 15.0), &CertifyOptions::default())
}

fn criterion_2() -> Result<Outcome> {
    let cert = observer_certificate()?;
    let pass = cert.rate >= RATE_RANGE.0 && cert.rate <= RATE_RANGE.1 && cert.passed();
    Ok(Outcome {
        pass,
        detail: format!(
            "lambda = {:.5} over |x̂| ≤ 3 ({} samples, certified {}), want [{}, {}]",
            cert.rate, cert.sample_count, cert.passed(), RATE_RANGE.0, RATE_RANGE.1
        ),
    })
}

fn criterion_3() -> Result<Outcome> {
    let report = observer::verify_constants(&VerifyOptions::default())?;
    let get = |name: &str| report.check(name).map(|c| c.computed).unwrap_or(f64::NAN);
    let (trace, gamma0, ultimate) = (get("noise_trace_per_s2"), get("gamma0"), get("ultimate_bound_per_s2"));
    let ok = [
        (trace - 15.2).abs() <= TRACE_TOL,
        (gamma0 - 12.95).abs() <= GAMMA0_TOL,
        (ultimate - REFERENCE_ULTIMATE).abs() <= ULTIMATE_TOL,
    ];
    let mark = |b: bool| if b { "ok" } else { "MISMATCH" };
    Ok(Outcome {
        pass: ok.iter().all(|b| *b),
        detail: format!(
            "sup σᵀMσ/S² = {trace:.4} vs 15.2 ± {TRACE_TOL} [{}]; γ(0) = {gamma0:.4} vs 12.95 ± {GAMMA0_TOL} [{}]; \
             C/(2βλ) = {ultimate:.4} vs 2.45 ± {ULTIMATE_TOL} [{}]",
            mark(ok[0]),
            mark(ok[1]),
            mark(ok[2])
        ),
    })
}

fn criterion_4() -> Result<Outcome> {
    let big = observer::reproduce_figure(&observer::FigureOptions { n_paths: 500, csv_paths: 0, ..Default::default() })?;
    let mse = big.window_mean_mse(5.0, 15.0);

    // With only 20 paths each observer should end up near the plant:
    // its time-averaged squared error after the transient is below the initial error.
    let small = observer::reproduce_figure(&observer::FigureOptions::default())?;
    let initial = linalg::dist_sq(&small.options.observer_x0, &small.options.plant_x0);
    let mut worst_track = 0.0f64;
    for path in &small.paths {
        let (mut sum, mut count) = (0.0, 0);
        for (k, t) in small.times.iter().enumerate() {
            if *t >= 5.0 - 1e-9 {
                let x = path.get(k).copied().unwrap_or([f64::INFINITY; 2]);
                sum += linalg::dist_sq(&x, &small.plant[k]);
                count += 1;
            }
        }
        worst_track = worst_track.max(sum / count as f64);
    }
    let pass = mse <= REFERENCE_ULTIMATE && big.diverged_paths == 0 && worst_track < initial && small.paths.len() == 20;
    Ok(Outcome {
        pass,
        detail: format!(
            "500-path mean MSE over [5,15] = {mse:.4} (≤ {REFERENCE_ULTIMATE}), diverged {}; \
             20-path worst per-path post-transient MSE = {worst_track:.3} < initial {initial}",
            big.diverged_paths
        ),
    })
}

fn criterion_5() -> Result<Outcome> {
    let sys = DiscreteSystem::new(1, 1, |a, _| Ok(vec![0.5 * a[0]]))
        .with_jacobian(|_, _| Ok(Matrix::from_rows(&[[0.5]])))
        .with_diffusion(|_, _| Ok(Matrix::from_rows(&[[0.3]])))
        .with_domain(Domain::cube(1, 5.0, 100.0));
    let cert = certify_discrete(&sys, &Domain::cube(1, 5.0, 100.0), &CertifyOptions::default())?;
    let u0 = 4.0;
    let inputs = BoundInputs::discrete(cert.rate, cert.noise_bound, cert.beta, u0);

    let mut u = u0;
    let mut worst_rel = 0.0f64;
    for k in 0..=100u32 {
        let b = bounds::discrete_bound(&inputs, f64::from(k))?.d2;
        worst_rel = worst_rel.max((b - u).abs() / u);
        u = 0.25 * u + 0.18;
    }

    let init = InitialSampler::Fixed { a: vec![1.0], b: vec![-1.0] };
    let opts = EnsembleOptions {
        horizon: Horizon::Discrete { steps: 100 },
        coupling: NoiseCoupling::Independent,
        n_paths: 10_000,
        seed: 5,
        keep_paths: 0,
        distance_stats: None,
    };
    let ens = sde::run_ensemble(&sys, &init, &opts)?;
    let mut worst_z = 0.0f64;
    for st in &ens.stats {
        let b = bounds::discrete_bound(&inputs, st.t)?.d2;
        let z = match st.stderr {
            se if se > 0.0 => (st.mean_sq_err - b).abs() / se,
            _ if st.mean_sq_err == b => 0.0,
            _ => f64::INFINITY,
        };
        worst_z = worst_z.max(z);
    }
    let pass = worst_rel <= MACHINE_REL && worst_z <= Z_MAX;
    Ok(Outcome {
        pass,
        detail: format!(
            "mu = {}, D = {}; recursion vs bound max rel err {worst_rel:.2e} (≤ {MACHINE_REL:.0e}); \
             1e4-path mean vs bound max |z| = {worst_z:.2} over k ≤ 100 (≤ {Z_MAX})",
            cert.rate, cert.noise_bound
        ),
    })
}

fn criterion_6() -> Result<Outcome> {
    let (lambda, s) = (1.0, 0.5);
    let domain = Domain::cube(2, 5.0, 5.0 / lambda);
    let sys = ContinuousSystem::linear(Matrix::identity(2).scale(-lambda), 2)
        .with_diffusion(move |_, _| Ok(Matrix::identity(2).scale(s)))
        .with_domain(domain.clone());
    let cert = certify_continuous(&sys, &domain, &CertifyOptions { regularity_pairs: 0, ..Default::default() })?;
    let c = 2.0 * s * s;
    let t_end = 5.0 / lambda;
    let init = InitialSampler::Fixed { a: vec![1.0, 0.0], b: vec![-1.0, 0.0] };
    let opts = EnsembleOptions {
        horizon: Horizon::Continuous { t_end, dt: 1e-3 },
        coupling: NoiseCoupling::Independent,
        n_paths: 10_000,
        seed: 6,
        keep_paths: 0,
        distance_stats: None,
    };
    let ens = sde::run_ensemble(&sys, &init, &opts)?;
    let last = ens.stats.last().expect("non-empty ensemble");
    let inputs = BoundInputs::continuous(cert.rate, cert.noise_bound, cert.beta, 4.0);
    let at_t = bounds::continuous_bound(&inputs, t_end)?.d2;
    let asym = c / lambda;
    let z_t = (last.mean_sq_err - at_t).abs() / last.stderr;
    let z_inf = (last.mean_sq_err - asym).abs() / last.stderr;
    let consts_ok = (cert.rate - lambda).abs() < 1e-6 && (cert.noise_bound - c).abs() < 1e-9;
    Ok(Outcome {
        pass: consts_ok && z_t <= Z_MAX && z_inf <= Z_MAX,
        detail: format!(
            "certified lambda = {:.6}, C = {:.6}; E‖a-b‖²(T={t_end}) = {:.5} ± {:.5}; bound {at_t:.5} (|z| {z_t:.2}), \
             asymptote {asym} (|z| {z_inf:.2})",
            cert.rate, cert.noise_bound, last.mean_sq_err, last.stderr
        ),
    })
}

/// Shortest path on an 8-connected grid over [-1,1]² with edge cost
/// `|Δx|·w(midpoint)` for a conformal length density `w`.
fn grid_oracle(nodes: usize, from: (usize, usize), to: (usize, usize), w: impl Fn(f64, f64) -> f64) -> f64 {
    let h = 2.0 / (nodes - 1) as f64;
    let coord = |i: usize| -1.0 + i as f64 * h;
    let idx = |i: usize, j: usize| i * nodes + j;
    let mut dist = vec![f64::INFINITY; nodes * nodes];
    let mut heap = BinaryHeap::new();
    dist[idx(from.0, from.1)] = 0.0;
    heap.push((Reverse(OrdF64(0.0)), from.0, from.1));
    while let Some((Reverse(OrdF64(d)), i, j)) = heap.pop() {
        if (i, j) == to {
            return d;
        }
        if d > dist[idx(i, j)] {
            continue;
        }
        for (di, dj) in [(-1i64, -1i64), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if ni < 0 || nj < 0 || ni >= nodes as i64 || nj >= nodes as i64 {
                continue;
            }
            let (ni, nj) = (ni as usize, nj as usize);
            let len = h * ((di * di + dj * dj) as f64).sqrt();
            let mid = w(0.5 * (coord(i) + coord(ni)), 0.5 * (coord(j) + coord(nj)));
            let nd = d + len * mid;
            if nd < dist[idx(ni, nj)] {
                dist[idx(ni, nj)] = nd;
                heap.push((Reverse(OrdF64(nd)), ni, nj));
            }
        }
    }
    f64::INFINITY
}

struct OrdF64(f64);
impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn criterion_7() -> Result<Outcome> {
    let domain = Domain::cube(2, 1.0, 1.0);
    let metric = FnMetric::new(2, |x: &[f64]| Ok(Matrix::identity(2).scale((2.0 * x[0]).exp()))).with_bounds(domain);
    let opts = GeodesicOptions::default();
    let solved = distance_sq(&[-0.5, 0.0], &[0.5, 0.0], &metric, &opts)?.dist_sq;

    // 400 cells per side: nodes at spacing 0.005 so both endpoints are grid nodes.
    let nodes = 401;
    let at = |x: f64| ((x + 1.0) / 2.0 * (nodes - 1) as f64).round() as usize;
    let oracle = grid_oracle(nodes, (at(-0.5), at(0.0)), (at(0.5), at(0.0)), |x, _| x.exp()).powi(2);
    let rel = (solved - oracle).abs() / oracle;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_identity = 0.0f64;
    for n in [1usize, 2, 3, 5] {
        let id = ConstantMetric(Matrix::identity(n));
        for _ in 0..20 {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let d = distance_sq(&a, &b, &id, &opts)?.dist_sq;
            worst_identity = worst_identity.max((d - linalg::dist_sq(&a, &b)).abs());
        }
    }
    Ok(Outcome {
        pass: rel <= ORACLE_REL && worst_identity <= IDENTITY_ABS,
        detail: format!(
            "e^(2x₁)I: solver {solved:.6} vs 401² grid oracle {oracle:.6} (rel {rel:.2e} ≤ {ORACLE_REL}); \
             identity metric max abs err {worst_identity:.1e} (≤ {IDENTITY_ABS:.0e})"
        ),
    })
}

fn criterion_8() -> Result<Outcome> {
    let dt = 0.01;
    let cont = observer::observer_transformed(Measurement::Plant { x0: observer::PLANT_X0 }, 1.0)
        .with_domain(Domain::cube(2, 2.0, 2.0));
    let sys = cont.euler_discretization(dt);
    let cert = certify_discrete(&sys, &sys.domain().clone(), &CertifyOptions::default())?;
    let mu = cert.rate;
    let opts = GeodesicOptions { segments: 32, ..Default::default() };

    // Contraction inequality on pairs drawn from the inner box |x̂| ≤ 1.
    let steps = sys.domain().t_end as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs: Vec<(Vec<f64>, Vec<f64>, u64)> = (0..100)
        .map(|_| {
            let mut p = || -> Vec<f64> { (0..2).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let (a, b) = (p(), p());
            (a, b, rng.random_range(0..steps))
        })
        .collect();
    let ratios = pairs
        .par_iter()
        .map(|(a, b, k)| -> Result<(f64, f64, f64)> {
            let before = distance_sq(a, b, &SystemMetric::new(&sys, *k as f64), &opts)?.dist_sq;
            let (fa, fb) = (sys.map(a, *k)?, sys.map(b, *k)?);
            let after = distance_sq(&fa, &fb, &SystemMetric::new(&sys, (*k + 1) as f64), &opts)?.dist_sq;
            Ok((after, before, after / before))
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = ratios.iter().filter(|(after, before, _)| *after > mu * before * (1.0 + PROP1_REL)).count();
    let worst_ratio = ratios.iter().map(|r| r.2).fold(0.0, f64::max);

    // Noise inequality at a fixed pair with 1e4 perturbations.
    let (a, b, k) = (vec![0.6, -0.4], vec![-0.3, 0.5], 50u64);
    let metric = SystemMetric::new(&sys, k as f64).unbounded();
    let base = distance_sq(&a, &b, &metric, &opts)?.dist_sq;
    let (sa, sb) = (sys.diffusion(&a, k as f64)?, sys.diffusion(&b, k as f64)?);
    let samples = 10_000u64;
    let draws = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut g = sde::GaussianStream::new(sde::derive_seed(8, i, sde::tag::A));
            let e1 = g.next_vec(sys.noise_dim());
            let e2 = g.next_vec(sys.noise_dim());
            let pa: Vec<f64> = a.iter().zip(sa.mul_vec(&e1)).map(|(x, w)| x + w).collect();
            let pb: Vec<f64> = b.iter().zip(sb.mul_vec(&e2)).map(|(x, w)| x + w).collect();
            Ok(distance_sq(&pa, &pb, &metric, &opts)?.dist_sq)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut m = Moments::default();
    draws.iter().for_each(|d| m.push(*d));
    let rhs = base + 2.0 * cert.noise_bound + Z_MAX * m.stderr();
    Ok(Outcome {
        pass: cert.passed() && violations == 0 && m.mean <= rhs,
        detail: format!(
            "Euler observer dt={dt}: mu = {mu:.6}, D = {:.5}; contraction-inequality violations {violations}/100 (worst ratio {worst_ratio:.6}); \
             noise-inequality mean {:.5} ± {:.5} ≤ d² + 2D + 3se = {rhs:.5}",
            cert.noise_bound,
            m.mean,
            m.stderr()
        ),
    })
}

fn criterion_9() -> Result<Outcome> {
    let cert = observer_certificate()?;
    let sys = observer::observer_transformed(Measurement::Plant { x0: observer::PLANT_X0 }, 1.0);
    let (mut sigma_bar, mut m_bar) = (0.0f64, 0.0f64);
    for p in Sampler::new(4096).sample(&cert.domain, false)? {
        sigma_bar = sigma_bar.max(sys.diffusion(&p.state, p.time)?.frobenius());
        m_bar = m_bar.max(linalg::lambda_max(&sys.metric(&p.state, p.time)?)?);
    }
    let (lambda, c, beta) = (cert.rate, cert.noise_bound, cert.beta);
    let mut all_dominated = true;
    let mut best_grid = f64::INFINITY;
    for i in 0..=120 {
        let eps = 10f64.powf(-6.0 + 0.1 * i as f64);
        let p = bounds::prior_bound_constants(lambda, c, beta, sigma_bar, m_bar, 2, eps)?;
        all_dominated &= p.lambda1 < lambda && p.c1 > c;
        best_grid = best_grid.min(p.ms_asymptote(beta));
    }
    let best = bounds::optimal_prior_epsilon(lambda, c, beta, sigma_bar, m_bar, 2)?;
    let prior = best.ms_asymptote(beta).min(best_grid);
    let ours = c / (beta * lambda);
    Ok(Outcome {
        pass: all_dominated && prior > ours,
        detail: format!(
            "σ̄ = {sigma_bar:.4}, m̄ = {m_bar:.4}; λ₁ < λ and C₁ > C on all 121 grid points: {all_dominated}; \
             min C₁/(βλ₁) = {prior:.4} (ε* = {:.4}) > C/(βλ) = {ours:.4}",
            best.epsilon
        ),
    })
}

fn criterion_10() -> Result<Outcome> {
    let cont = observer::observer_transformed(Measurement::Plant { x0: observer::PLANT_X0 }, 1.0)
        .with_domain(Domain::cube(2, 1.0, 1.0));
    let sampler = Sampler::new(EULER_SAMPLES);
    let lambda = contraction::continuous_rate(&cont, cont.domain(), &sampler)?.value;
    let gap = |dt: f64| -> Result<(f64, f64)> {
        let e = cont.euler_discretization(dt);
        let mu = contraction::discrete_rate(&e, e.domain(), &sampler)?.value;
        Ok(((1.0 - mu) / (2.0 * dt) - lambda, mu))
    };
    let (g1, mu1) = gap(1e-3)?;
    let (g2, mu2) = gap(5e-4)?;
    Ok(Outcome {
        pass: g1.abs() <= EULER_GAP && g2.abs() < g1.abs(),
        detail: format!(
            "lambda = {lambda:.6}; dt=1e-3: mu = {mu1:.8}, gap {:.2e} (≤ {EULER_GAP}); dt=5e-4: mu = {mu2:.8}, gap {:.2e}",
            g1.abs(),
            g2.abs()
        ),
    })
}

type Criterion = (usize, &'static str, Option<u64>, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "symmetric-part eigenvalues of PQP⁻¹", Some(1), criterion_1),
        (2, "observer contraction rate over |x̂| ≤ 3", Some(10_000), criterion_2),
        (3, "observer noise trace, γ(0) and ultimate bound", Some(10_000), criterion_3),
        (4, "observer mean-square error reproduction", Some(60_000), criterion_4),
        (5, "discrete bound tightness", Some(10_000), criterion_5),
        (6, "continuous bound tightness (OU pair)", Some(60_000), criterion_6),
        (7, "geodesic distance vs grid oracle", Some(30_000), criterion_7),
        (8, "empirical contraction and noise inequalities", None, criterion_8),
        (9, "dominance over the prior bound", Some(1_000), criterion_9),
        (10, "Euler rate consistency", None, criterion_10),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut unexpected = Vec::new();
    for (id, name, budget, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && within(budget, elapsed), o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget_note = budget.map_or(String::new(), |b| format!(" / budget {b} ms"));
        let status = if pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {id:>2} {name}: {detail} [{:.1} ms{budget_note}]", elapsed.as_secs_f64() * 1e3);
        if !pass {
            match KNOWN_UNATTAINABLE.iter().find(|(k, _)| *k == id) {
                Some((_, why)) => println!("     known unattainable: {why}"),
                None => unexpected.push(id),
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
