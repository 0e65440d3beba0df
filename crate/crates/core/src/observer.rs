//! Nonlinear observer example: plant, observers in both coordinate systems,
//! metric, constants, and the data behind the two-panel simulation figure.
//!
//! Coordinates: the plant state is `x`; the observer is integrated in `x̄̂`
//! (linear dynamics `Q`), and reported in `x̂ = (x̄̂₁, x̄̂₂/√(1+x̄̂₁²))`.
//! `x̌ = P·x̄̂` turns the observer into the linear system `PQP⁻¹`.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::contraction::{self, Sampler};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::sde::{derive_seed, tag, GaussianStream, Moments};
use crate::system::{ContinuousSystem, Domain};

pub fn p_matrix() -> Matrix {
    Matrix::from_rows(&[[-3.0, 5.0], [3.0, 2.0]])
}

pub fn q_matrix() -> Matrix {
    Matrix::from_rows(&[[-1.0, 1.0], [-1.0, 0.0]])
}

/// `P·Q·P⁻¹`, the observer dynamics in `x̌` coordinates.
pub fn pqp_inv() -> Result<Matrix> {
    let p = p_matrix();
    Ok(&(&p * &q_matrix()) * &linalg::invert(&p)?)
}

/// Reference values quoted for this example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObserverConstants {
    pub rate: f64,
    /// `C / S²`.
    pub noise_per_s2: f64,
    /// Metric floor on the `x̂₂ = 0` slice.
    pub gamma0: f64,
    /// `C / (2γλ)` per `S²`.
    pub ultimate_per_s2: f64,
    pub sym_eigenvalues: [f64; 2],
}

impl ObserverConstants {
    pub const REFERENCE: ObserverConstants = ObserverConstants {
        rate: 0.24,
        noise_per_s2: 15.2,
        gamma0: 12.95,
        ultimate_per_s2: 2.45,
        sym_eigenvalues: [-0.76, -0.24],
    };

    pub fn noise(&self, s: f64) -> f64 {
        self.noise_per_s2 * s * s
    }

    pub fn ultimate_bound(&self, s: f64) -> f64 {
        self.ultimate_per_s2 * s * s
    }
}

fn r_of(x1: f64) -> f64 {
    (1.0 + x1 * x1).sqrt()
}

/// `x̂ → x̄̂`: `(x̂₁, x̂₂√(1+x̂₁²))`.
pub fn hat_to_bar(h: &[f64]) -> Vec<f64> {
    vec![h[0], h[1] * r_of(h[0])]
}

/// `x̄̂ → x̂`.
pub fn bar_to_hat(b: &[f64]) -> Vec<f64> {
    vec![b[0], b[1] / r_of(b[0])]
}

/// `x̂ → x̌ = P·x̄̂`.
pub fn hat_to_check(h: &[f64]) -> Vec<f64> {
    p_matrix().mul_vec(&hat_to_bar(h))
}

/// `∂x̄̂/∂x̂ = [[1, 0], [x̂₁x̂₂/r, r]]` with `r = √(1+x̂₁²)`.
pub fn transform_jacobian(h: &[f64]) -> Matrix {
    let r = r_of(h[0]);
    Matrix::from_rows(&[[1.0, 0.0], [h[0] * h[1] / r, r]])
}

/// `Θ(x̂) = P·∂x̄̂/∂x̂`, so that `M = ΘᵀΘ` is the pullback of the identity in `x̌`.
pub fn theta(h: &[f64]) -> Matrix {
    &p_matrix() * &transform_jacobian(h)
}

/// The measured output `y(t)` fed to the observer.
#[derive(Clone)]
pub enum Measurement {
    /// Exact output of the plant started at `x0`: the plant keeps
    /// `x₂√(1+x₁²)` constant, so `y(t) = x₁(0) + x₂(0)√(1+x₁(0)²)·t`.
    Plant { x0: [f64; 2] },
    Constant(f64),
    Signal(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Measurement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Measurement::Plant { x0 } => write!(f, "Plant({x0:?})"),
            Measurement::Constant(y) => write!(f, "Constant({y})"),
            Measurement::Signal(_) => write!(f, "Signal"),
        }
    }
}

impl Measurement {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Measurement::Plant { x0 } => x0[0] + x0[1] * r_of(x0[0]) * t,
            Measurement::Constant(y) => *y,
            Measurement::Signal(f) => f(t),
        }
    }
}

/// Default plant and observer starting points for the figure.
pub const PLANT_X0: [f64; 2] = [0.0, 1.0];
pub const OBSERVER_X0: [f64; 2] = [2.0, -1.0];

fn plant_field(x: &[f64]) -> Vec<f64> {
    let r = r_of(x[0]);
    vec![x[1] * r, -x[0] * x[1] * x[1] / r]
}

/// `ẋ₁ = x₂√(1+x₁²)`, `ẋ₂ = −x₁x₂²/√(1+x₁²)`, noise-free, identity metric.
pub fn plant() -> ContinuousSystem {
    ContinuousSystem::new(2, 0, |x, _| Ok(plant_field(x)))
        .with_jacobian(|x, _| {
            let r = r_of(x[0]);
            let (u, v) = (x[0], x[1]);
            Ok(Matrix::from_rows(&[[u * v / r, r], [-v * v / (r * r * r), -2.0 * u * v / r]]))
        })
        .with_name("observer plant")
        .with_domain(Domain::cube(2, 3.0, 15.0))
}

/// Observer drift in `x̂` coordinates.
fn hat_drift(h: &[f64], y: f64) -> Vec<f64> {
    let (u, v) = (h[0], h[1]);
    let r = r_of(u);
    let e = u - y;
    vec![v * r - e, e * (u * v - r) / (r * r) - u * v * v / r]
}

fn hat_drift_jacobian(h: &[f64], y: f64) -> Matrix {
    let (u, v) = (h[0], h[1]);
    let r = r_of(u);
    let (r2, r3) = (r * r, r * r * r);
    let e = u - y;
    let g = (u * v - r) / r2;
    let dg_du = v / r2 - 2.0 * u * u * v / (r2 * r2) + u / r3;
    let dh_du = v * v / r3;
    Matrix::from_rows(&[
        [u * v / r - 1.0, r],
        [g + e * dg_du - dh_du, e * u / r2 - 2.0 * u * v / r],
    ])
}

/// Noisy observer in `x̂` coordinates with diffusion `(∂x̄̂/∂x̂)⁻¹·(S, S)ᵀ`
/// and metric factor `Θ = P·∂x̄̂/∂x̂`.
///
/// The drift is the deterministic observer field; no Itô correction is
/// added for the change of variables.
pub fn observer_transformed(measurement: Measurement, s: f64) -> ContinuousSystem {
    let m1 = measurement.clone();
    let m2 = measurement;
    ContinuousSystem::new(2, 1, move |h, t| Ok(hat_drift(h, m1.at(t))))
        .with_jacobian(move |h, t| Ok(hat_drift_jacobian(h, m2.at(t))))
        .with_diffusion(move |h, _| {
            let (u, v) = (h[0], h[1]);
            let r = r_of(u);
            Ok(Matrix::from_rows(&[[s], [s * (r - u * v) / (r * r)]]))
        })
        .with_theta(|h, _| Ok(theta(h)))
        .with_name("observer (x-hat coordinates)")
        .with_domain(Domain::cube(2, 3.0, 15.0))
}

/// Linear noisy observer in `x̄̂` coordinates:
/// `dx̄̂ = (Q·x̄̂ + y·(1,1)ᵀ)dt + S·(1,1)ᵀdW`, metric factor `P`.
pub fn observer_raw_noisy(s: f64, measurement: Measurement) -> ContinuousSystem {
    let q = q_matrix();
    let jac = q.clone();
    ContinuousSystem::new(2, 1, move |b, t| {
        let y = measurement.at(t);
        let mut f = q.mul_vec(b);
        f[0] += y;
        f[1] += y;
        Ok(f)
    })
    .with_jacobian(move |_, _| Ok(jac.clone()))
    .with_diffusion(move |_, _| Ok(Matrix::from_rows(&[[s], [s]])))
    .with_theta(|_, _| Ok(p_matrix()))
    .with_name("observer (x-bar coordinates)")
    .with_domain(Domain::cube(2, 20.0, 15.0))
}

/// One recomputed constant next to its reference value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantCheck {
    pub name: String,
    pub reference: f64,
    pub computed: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl ConstantCheck {
    fn new(name: &str, reference: f64, computed: f64, tolerance: f64, detail: String) -> Self {
        ConstantCheck {
            name: name.into(),
            reference,
            computed,
            tolerance,
            pass: (computed - reference).abs() <= tolerance,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Box for the contraction rate.
    pub rate_box: Domain,
    /// `|x̂₁| ≤ rate box`, `|x̂₂| ≤ B`: the post-transient region for the noise trace.
    pub b: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { rate_box: Domain::cube(2, 3.0, 15.0), b: 0.05, samples: 4096, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub rate_box: Domain,
    pub noise_box: Domain,
    pub samples: usize,
    pub sym_eigenvalues: [f64; 2],
    pub checks: Vec<ConstantCheck>,
}

impl ConstantsReport {
    pub fn check(&self, name: &str) -> Option<&ConstantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Recomputes the example's constants and compares them with the reference values.
pub fn verify_constants(opts: &VerifyOptions) -> Result<ConstantsReport> {
    let reference = ObserverConstants::REFERENCE;
    let sys = observer_transformed(Measurement::Plant { x0: PLANT_X0 }, 1.0);
    let sampler = Sampler::new(opts.samples).with_seed(opts.seed);

    let eig = linalg::sym_eigen(&pqp_inv()?.sym_part())?;
    let eigs = [eig.values[0], eig.values[1]];

    let rate = contraction::continuous_rate(&sys, &opts.rate_box, &sampler)?;
    if !rate.reliable() {
        return Err(Error::NotCertified(format!("rate evaluation failed: {:?}", rate.first_failure)));
    }

    if !(opts.b > 0.0) {
        return Err(Error::InvalidInput(format!("B must be positive, got {}", opts.b)));
    }
    let noise_box = Domain::new(
        vec![opts.rate_box.lower[0], -opts.b],
        vec![opts.rate_box.upper[0], opts.b],
        opts.rate_box.t_start,
        opts.rate_box.t_end,
    )?;
    let noise = contraction::noise_trace_bound(&sys, &noise_box, &sampler, false)?;
    let floor = contraction::metric_floor(&sys, &opts.rate_box, &sampler.clone().pin(1, 0.0), false)?;
    let ultimate = noise.value / (2.0 * floor.value * rate.value);

    let at = |w: &Option<contraction::WorstPoint>| {
        w.as_ref().map(|w| format!("attained at x = {:?}, t = {}", w.state, w.time)).unwrap_or_default()
    };
    let checks = vec![
        ConstantCheck::new(
            "sym_eigenvalue_min",
            reference.sym_eigenvalues[0],
            eigs[0],
            0.01,
            "smallest eigenvalue of the symmetric part of PQP^-1".into(),
        ),
        ConstantCheck::new(
            "sym_eigenvalue_max",
            reference.sym_eigenvalues[1],
            eigs[1],
            0.01,
            "largest eigenvalue of the symmetric part of PQP^-1".into(),
        ),
        ConstantCheck::new("rate", reference.rate, rate.value, 0.01, at(&rate.worst)),
        ConstantCheck::new(
            "noise_trace_per_s2",
            reference.noise_per_s2,
            noise.value,
            0.2,
            format!("sup over |x1| <= {}, |x2| <= {}; {}", opts.rate_box.upper[0], opts.b, at(&noise.worst)),
        ),
        ConstantCheck::new("gamma0", reference.gamma0, floor.value, 0.05, at(&floor.worst)),
        ConstantCheck::new(
            "ultimate_bound_per_s2",
            reference.ultimate_per_s2,
            ultimate,
            0.05,
            "C / (2 gamma0 lambda) from the recomputed constants".into(),
        ),
    ];
    Ok(ConstantsReport { rate_box: opts.rate_box.clone(), noise_box, samples: opts.samples, sym_eigenvalues: eigs, checks })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureOptions {
    pub s: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub t_end: f64,
    pub dt: f64,
    pub plant_x0: [f64; 2],
    pub observer_x0: [f64; 2],
    /// End of the transient panel.
    pub split: f64,
    /// Sample paths written to the CSVs.
    pub csv_paths: usize,
}

impl Default for FigureOptions {
    fn default() -> Self {
        FigureOptions {
            s: 1.0,
            n_paths: 20,
            seed: 0,
            t_end: 15.0,
            dt: 0.01,
            plant_x0: PLANT_X0,
            observer_x0: OBSERVER_X0,
            split: 5.0,
            csv_paths: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub times: Vec<f64>,
    pub plant: Vec<[f64; 2]>,
    /// Observer paths in `x̂` coordinates (the first `csv_paths`).
    pub paths: Vec<Vec<[f64; 2]>>,
    pub mse: Vec<f64>,
    pub mse_stderr: Vec<f64>,
    pub bound: f64,
    pub options: FigureOptions,
    pub diverged_paths: usize,
}

impl FigureData {
    /// Time average of the ensemble-mean squared error over `[from, to]`.
    pub fn window_mean_mse(&self, from: f64, to: f64) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for (t, m) in self.times.iter().zip(&self.mse) {
            if *t >= from - 1e-9 && *t <= to + 1e-9 {
                sum += m;
                count += 1;
            }
        }
        sum / count.max(1) as f64
    }

    fn csv(&self, from: f64, to: f64, with_mse: bool) -> String {
        let mut s = String::from("t,x1,x2");
        for p in 0..self.paths.len() {
            let _ = write!(s, ",xhat1_{p},xhat2_{p}");
        }
        if with_mse {
            s.push_str(",mse,mse_stderr,bound");
        }
        s.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            if *t < from - 1e-9 || *t > to + 1e-9 {
                continue;
            }
            let _ = write!(s, "{t},{},{}", self.plant[k][0], self.plant[k][1]);
            for p in &self.paths {
                match p.get(k) {
                    Some(x) => {
                        let _ = write!(s, ",{},{}", x[0], x[1]);
                    }
                    None => s.push_str(",,"),
                }
            }
            if with_mse {
                let _ = write!(s, ",{},{},{}", self.mse[k], self.mse_stderr[k], self.bound);
            }
            s.push('\n');
        }
        s
    }

    /// Transient panel: trajectories for `t ≤ split`.
    pub fn figure_a_csv(&self) -> String {
        self.csv(0.0, self.options.split, false)
    }

    /// Post-transient panel: trajectories, ensemble MSE and the bound line.
    pub fn figure_b_csv(&self) -> String {
        self.csv(self.options.split, self.options.t_end, true)
    }
}

/// Euler plant and Euler–Maruyama observers in `x̄̂` coordinates, lock-step on
/// one grid; each observer reads `y = x₁` of the integrated plant.
pub fn reproduce_figure(opts: &FigureOptions) -> Result<FigureData> {
    if !(opts.dt > 0.0) || !(opts.t_end > 0.0) || opts.n_paths == 0 {
        return Err(Error::InvalidInput("need dt > 0, T > 0 and at least one path".into()));
    }
    if !(opts.s >= 0.0) {
        return Err(Error::InvalidInput(format!("noise intensity must be >= 0, got {}", opts.s)));
    }
    let steps = (opts.t_end / opts.dt - 1e-9).ceil() as usize;
    let dt = opts.t_end / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();

    let mut plant = Vec::with_capacity(steps + 1);
    let mut x = opts.plant_x0.to_vec();
    plant.push([x[0], x[1]]);
    for _ in 0..steps {
        let f = plant_field(&x);
        x[0] += dt * f[0];
        x[1] += dt * f[1];
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { time: plant.len() as f64 * dt });
        }
        plant.push([x[0], x[1]]);
    }

    let q = q_matrix();
    let sq = dt.sqrt();
    let bar0 = hat_to_bar(&opts.observer_x0);
    let keep = opts.csv_paths.min(opts.n_paths);
    let chunk = 16;
    let chunks: Vec<usize> = (0..opts.n_paths.div_ceil(chunk)).collect();
    // (per-step moments, kept paths, diverged count) per chunk
    type ChunkResult = (Vec<Moments>, Vec<Vec<[f64; 2]>>, usize);
    let results: Vec<ChunkResult> = chunks
        .par_iter()
        .map(|&c| {
            let mut moments = vec![Moments::default(); steps + 1];
            let mut kept = Vec::new();
            let mut diverged = 0;
            for p in c * chunk..((c + 1) * chunk).min(opts.n_paths) {
                let mut noise = GaussianStream::new(derive_seed(opts.seed, p as u64, tag::A));
                let mut b = bar0.clone();
                let mut path = Vec::with_capacity(if p < keep { steps + 1 } else { 0 });
                for k in 0..=steps {
                    let h = bar_to_hat(&b);
                    if !h.iter().all(|v| v.is_finite()) || h.iter().any(|v| v.abs() > 1e6) {
                        diverged += 1;
                        break;
                    }
                    let e = linalg::dist_sq(&h, &plant[k]);
                    moments[k].push(e);
                    if p < keep {
                        path.push([h[0], h[1]]);
                    }
                    if k == steps {
                        break;
                    }
                    let y = plant[k][0];
                    let z = noise.next_vec(1)[0];
                    let f = q.mul_vec(&b);
                    let w = opts.s * sq * z;
                    b[0] += dt * (f[0] + y) + w;
                    b[1] += dt * (f[1] + y) + w;
                }
                if p < keep {
                    kept.push(path);
                }
            }
            (moments, kept, diverged)
        })
        .collect();

    let mut moments = vec![Moments::default(); steps + 1];
    let mut paths = Vec::with_capacity(keep);
    let mut diverged_paths = 0;
    for (m, kept, d) in results {
        for (a, b) in moments.iter_mut().zip(&m) {
            a.merge(b);
        }
        paths.extend(kept);
        diverged_paths += d;
    }
    Ok(FigureData {
        times,
        plant,
        paths,
        mse: moments.iter().map(|m| m.mean).collect(),
        mse_stderr: moments.iter().map(|m| m.stderr()).collect(),
        bound: ObserverConstants::REFERENCE.ultimate_bound(opts.s),
        options: opts.clone(),
        diverged_paths,
    })
}
