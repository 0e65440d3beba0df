//! Squared Riemannian distance `d²_M(a,b) = inf ∫₀¹ Γ'ᵀ M(Γ) Γ' du` by energy
//! minimization over polygonal curves.
//!
//! The discrete energy of a curve with points `x_0..x_m` is
//! `E = m Σ_j Δ_jᵀ M(mid_j) Δ_j` with `Δ_j = x_{j+1} − x_j`. Interior points are
//! moved by descent steps preconditioned with the block-tridiagonal matrix
//! `2m·tridiag(−M_{j−1}, M_{j−1}+M_j, −M_j)` (the energy Hessian with ∂M
//! dropped), followed by an Armijo backtracking line search. The returned
//! energy never exceeds the straight-line energy, so it is always an upper
//! bound on the discretized squared distance.

use serde::Serialize;

use crate::error::Result;
use crate::linalg::{self, Matrix};
use crate::system::{fd_step, Domain, StochasticSystem};

/// A metric field frozen at one time instant.
pub trait Metric: Sync {
    fn dim(&self) -> usize;
    fn metric(&self, a: &[f64]) -> Result<Matrix>;
    /// Box the curve must stay in, if any.
    fn bounds(&self) -> Option<&Domain> {
        None
    }
}

/// `M(·, t)` of a system at a fixed `t` (step index for discrete systems).
pub struct SystemMetric<'a, S: ?Sized> {
    sys: &'a S,
    t: f64,
    clamp_to_domain: bool,
}

impl<'a, S: StochasticSystem + ?Sized> SystemMetric<'a, S> {
    pub fn new(sys: &'a S, t: f64) -> Self {
        SystemMetric { sys, t, clamp_to_domain: true }
    }

    /// Lets curves leave the system domain.
    pub fn unbounded(mut self) -> Self {
        self.clamp_to_domain = false;
        self
    }
}

impl<S: StochasticSystem + ?Sized> Metric for SystemMetric<'_, S> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn metric(&self, a: &[f64]) -> Result<Matrix> {
        self.sys.metric(a, self.t)
    }

    fn bounds(&self) -> Option<&Domain> {
        self.clamp_to_domain.then(|| self.sys.domain())
    }
}

/// State-independent metric.
pub struct ConstantMetric(pub Matrix);

impl Metric for ConstantMetric {
    fn dim(&self) -> usize {
        self.0.rows()
    }

    fn metric(&self, _: &[f64]) -> Result<Matrix> {
        Ok(self.0.clone())
    }
}

/// Metric given by a closure, optionally confined to a box.
pub struct FnMetric<F> {
    dim: usize,
    f: F,
    bounds: Option<Domain>,
}

impl<F: Fn(&[f64]) -> Result<Matrix> + Sync> FnMetric<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnMetric { dim, f, bounds: None }
    }

    pub fn with_bounds(mut self, domain: Domain) -> Self {
        self.bounds = Some(domain);
        self
    }
}

impl<F: Fn(&[f64]) -> Result<Matrix> + Sync> Metric for FnMetric<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn metric(&self, a: &[f64]) -> Result<Matrix> {
        (self.f)(a)
    }

    fn bounds(&self) -> Option<&Domain> {
        self.bounds.as_ref()
    }
}

/// Polygonal curve `Γ(u_j)`, `u_j = j/m`, with pinned endpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub points: Vec<Vec<f64>>,
}

impl Curve {
    pub fn straight(a: &[f64], b: &[f64], segments: usize) -> Curve {
        let m = segments.max(1);
        let points = (0..=m)
            .map(|j| {
                let u = j as f64 / m as f64;
                a.iter().zip(b).map(|(x, y)| x + u * (y - x)).collect()
            })
            .collect();
        Curve { points }
    }

    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    /// Linear interpolation onto `factor·m` segments.
    pub fn resample(&self, factor: usize) -> Curve {
        let mut points = Vec::with_capacity(self.segments() * factor + 1);
        for w in self.points.windows(2) {
            for s in 0..factor {
                let u = s as f64 / factor as f64;
                points.push(w[0].iter().zip(&w[1]).map(|(x, y)| x + u * (y - x)).collect());
            }
        }
        points.push(self.points.last().expect("nonempty curve").clone());
        Curve { points }
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicOptions {
    pub segments: usize,
    pub max_sweeps: usize,
    /// Converged once a sweep lowers the energy by less than this fraction.
    pub rel_tol: f64,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions { segments: 64, max_sweeps: 5000, rel_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicResult {
    pub dist_sq: f64,
    pub curve: Curve,
    pub iterations: usize,
    pub converged: bool,
    pub straight_line_energy: f64,
    /// Some iterate left the metric's bounds and was projected back.
    pub clamped: bool,
}

/// Midpoint-rule energy `Σ_j m·Δ_jᵀ M(mid_j) Δ_j`.
pub fn curve_energy(curve: &Curve, metric: &dyn Metric) -> Result<f64> {
    let m = curve.segments() as f64;
    let mut e = 0.0;
    for w in curve.points.windows(2) {
        let delta = linalg::sub(&w[1], &w[0]);
        let mid: Vec<f64> = w[0].iter().zip(&w[1]).map(|(x, y)| 0.5 * (x + y)).collect();
        e += m * metric.metric(&mid)?.quadratic_form(&delta);
    }
    Ok(e)
}

struct Segment {
    delta: Vec<f64>,
    metric: Matrix,
}

fn segments(points: &[Vec<f64>], metric: &dyn Metric) -> Result<Vec<Segment>> {
    points
        .windows(2)
        .map(|w| {
            let mid: Vec<f64> = w[0].iter().zip(&w[1]).map(|(x, y)| 0.5 * (x + y)).collect();
            Ok(Segment { delta: linalg::sub(&w[1], &w[0]), metric: metric.metric(&mid)? })
        })
        .collect()
}

fn energy_of(segs: &[Segment]) -> f64 {
    let m = segs.len() as f64;
    segs.iter().map(|s| m * s.metric.quadratic_form(&s.delta)).sum()
}

/// Gradient with respect to the interior points, flattened.
fn gradient(points: &[Vec<f64>], segs: &[Segment], metric: &dyn Metric) -> Result<Vec<Vec<f64>>> {
    let m = segs.len();
    let n = metric.dim();
    let mf = m as f64;
    // q_j[k] = Δ_jᵀ (∂M/∂a_k)(mid_j) Δ_j
    let mut q = Vec::with_capacity(m);
    for (j, s) in segs.iter().enumerate() {
        let mid: Vec<f64> = points[j].iter().zip(&points[j + 1]).map(|(x, y)| 0.5 * (x + y)).collect();
        let h = fd_step(&mid);
        let mut x = mid.clone();
        let mut qj = vec![0.0; n];
        for k in 0..n {
            x[k] = mid[k] + h;
            let mp = metric.metric(&x)?.quadratic_form(&s.delta);
            x[k] = mid[k] - h;
            let mm = metric.metric(&x)?.quadratic_form(&s.delta);
            x[k] = mid[k];
            qj[k] = (mp - mm) / (2.0 * h);
        }
        q.push(qj);
    }
    let mut grad = Vec::with_capacity(m.saturating_sub(1));
    for i in 1..m {
        let left = segs[i - 1].metric.mul_vec(&segs[i - 1].delta);
        let right = segs[i].metric.mul_vec(&segs[i].delta);
        grad.push(
            (0..n)
                .map(|k| mf * (2.0 * left[k] - 2.0 * right[k] + 0.5 * q[i - 1][k] + 0.5 * q[i][k]))
                .collect(),
        );
    }
    Ok(grad)
}

/// Solves the block-tridiagonal preconditioner system for the descent direction.
fn precondition(segs: &[Segment], grad: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let m = segs.len();
    let k = grad.len();
    if k == 0 {
        return Some(Vec::new());
    }
    let scale = 2.0 * m as f64;
    let diag = |i: usize| (&segs[i].metric + &segs[i + 1].metric).scale(scale);
    // coupling between interior point i and i+1 (both zero-based interior indices)
    let upper = |i: usize| segs[i + 1].metric.scale(-scale);

    let mut b_inv = Vec::with_capacity(k);
    let mut rhs = Vec::<Vec<f64>>::with_capacity(k);
    let mut prev_c: Option<Matrix> = None;
    for (i, g) in grad.iter().enumerate().take(k) {
        let mut b = diag(i);
        let mut r: Vec<f64> = g.iter().map(|g| -g).collect();
        if let Some(c_prev) = &prev_c {
            // sub-diagonal A_i = C_{i-1}ᵀ (symmetric blocks)
            let a = c_prev;
            let w = a * b_inv.last().expect("previous block");
            b = &b - &(&w * c_prev);
            let wr = w.mul_vec(rhs.last().expect("previous rhs"));
            r.iter_mut().zip(&wr).for_each(|(x, y)| *x -= y);
        }
        b_inv.push(linalg::invert(&b).ok()?);
        rhs.push(r);
        prev_c = (i + 1 < k).then(|| upper(i));
    }
    let mut x = vec![Vec::new(); k];
    for i in (0..k).rev() {
        let mut r = rhs[i].clone();
        if i + 1 < k {
            let cx = upper(i).mul_vec(&x[i + 1]);
            r.iter_mut().zip(&cx).for_each(|(a, b)| *a -= b);
        }
        x[i] = b_inv[i].mul_vec(&r);
    }
    Some(x)
}

fn optimize(mut curve: Curve, metric: &dyn Metric, opts: &GeodesicOptions) -> Result<(Curve, f64, usize, bool, bool)> {
    let bounds = metric.bounds();
    let mut segs = segments(&curve.points, metric)?;
    let mut energy = energy_of(&segs);
    let mut clamped = false;
    if energy == 0.0 || curve.segments() < 2 {
        return Ok((curve, energy, 0, true, false));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_sweeps {
        iterations += 1;
        let grad = gradient(&curve.points, &segs, metric)?;
        let dir = match precondition(&segs, &grad) {
            Some(d) => d,
            None => grad.iter().map(|g| g.iter().map(|x| -x).collect()).collect(),
        };
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| linalg::dot(g, d)).sum();
        if slope >= 0.0 {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = curve.clone();
            let mut moved = false;
            for (p, d) in trial.points[1..curve.points.len() - 1].iter_mut().zip(&dir) {
                p.iter_mut().zip(d).for_each(|(x, dx)| *x += step * dx);
                if let Some(b) = bounds {
                    moved |= b.clamp(p);
                }
            }
            if let Ok(s) = segments(&trial.points, metric) {
                let e = energy_of(&s);
                if e.is_finite() && e <= energy + 1e-4 * step * slope {
                    accepted = Some((trial, s, e, moved));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, s, e, moved)) = accepted else {
            converged = true;
            break;
        };
        clamped |= moved;
        let decrease = (energy - e) / energy;
        curve = trial;
        segs = s;
        energy = e;
        if decrease < opts.rel_tol {
            converged = true;
            break;
        }
    }
    Ok((curve, energy, iterations, converged, clamped))
}

/// Squared geodesic distance between `a` and `b`, starting from the straight line.
pub fn distance_sq(a: &[f64], b: &[f64], metric: &dyn Metric, opts: &GeodesicOptions) -> Result<GeodesicResult> {
    let straight = Curve::straight(a, b, opts.segments);
    let straight_line_energy = curve_energy(&straight, metric)?;
    let (curve, energy, iterations, converged, clamped) = optimize(straight.clone(), metric, opts)?;
    let (dist_sq, curve) = if energy <= straight_line_energy { (energy, curve) } else { (straight_line_energy, straight) };
    Ok(GeodesicResult { dist_sq, curve, iterations, converged, straight_line_energy, clamped })
}

/// Re-optimizes on a curve resampled to `factor·m` segments.
///
/// The midpoint rule is not monotone under subdivision, so the refined energy
/// can exceed the coarse one by the discretization error; it never exceeds the
/// energy of the resampled starting curve.
pub fn refine(result: &GeodesicResult, metric: &dyn Metric, factor: usize, opts: &GeodesicOptions) -> Result<GeodesicResult> {
    let factor = factor.max(2);
    let start = result.curve.resample(factor);
    let start_energy = curve_energy(&start, metric)?;
    let opts = GeodesicOptions { segments: start.segments(), ..opts.clone() };
    let (curve, energy, iterations, converged, clamped) = optimize(start.clone(), metric, &opts)?;
    let (dist_sq, curve) = if energy <= start_energy { (energy, curve) } else { (start_energy, start) };
    Ok(GeodesicResult {
        dist_sq,
        curve,
        iterations,
        converged,
        straight_line_energy: result.straight_line_energy,
        clamped: clamped || result.clamped,
    })
}
