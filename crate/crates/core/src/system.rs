//! Continuous Itô systems `da = f(a,t) dt + σ(a,t) dW` and discrete stochastic
//! difference systems `a_{k+1} = f(a_k,k) + σ(a_k,k) w_{k+1}`, each carrying a
//! metric factor Θ with `M = ΘᵀΘ` and an explicit box [`Domain`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, tol, Matrix};

pub type VectorField = Arc<dyn Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&[f64], f64) -> Result<Matrix> + Send + Sync>;
pub type StepMap = Arc<dyn Fn(&[f64], u64) -> Result<Vec<f64>> + Send + Sync>;
pub type StepMatrix = Arc<dyn Fn(&[f64], u64) -> Result<Matrix> + Send + Sync>;

/// Axis-aligned state box plus a time interval (a step range for discrete systems).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, t_start: f64, t_end: f64) -> Result<Domain> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "domain bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidInput(format!("domain axis {}: need finite lower < upper, got [{lo}, {hi}]", i + 1)));
            }
        }
        if !(t_start <= t_end) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidInput(format!("time interval [{t_start}, {t_end}] is invalid")));
        }
        Ok(Domain { lower, upper, t_start, t_end })
    }

    /// `[-half_width, half_width]ⁿ × [0, t_end]`.
    pub fn cube(n: usize, half_width: f64, t_end: f64) -> Domain {
        Domain::new(vec![-half_width; n], vec![half_width; n], 0.0, t_end).expect("valid cube")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| x >= l && x <= u)
    }

    /// Projects `a` onto the box; the flag reports whether anything moved.
    pub fn clamp(&self, a: &mut [f64]) -> bool {
        let mut moved = false;
        for (x, (l, u)) in a.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            let c = x.clamp(*l, *u);
            if c != *x {
                *x = c;
                moved = true;
            }
        }
        moved
    }

    /// Box with every half-width multiplied by `factor` about the center; time interval kept.
    pub fn scaled(&self, factor: f64) -> Domain {
        let c = self.center();
        let lower = self.lower.iter().zip(&c).map(|(l, c)| c + factor * (l - c)).collect();
        let upper = self.upper.iter().zip(&c).map(|(u, c)| c + factor * (u - c)).collect();
        Domain { lower, upper, t_start: self.t_start, t_end: self.t_end }
    }
}

/// Common surface of continuous and discrete systems used by certification,
/// geodesic distances and simulation. For discrete systems `t` is the step index.
pub trait StochasticSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn domain(&self) -> &Domain;
    fn theta(&self, a: &[f64], t: f64) -> Result<Matrix>;
    fn diffusion(&self, a: &[f64], t: f64) -> Result<Matrix>;

    /// `M = ΘᵀΘ`, symmetric by construction.
    fn metric(&self, a: &[f64], t: f64) -> Result<Matrix> {
        let th = self.theta(a, t)?;
        Ok(gram(&th))
    }

    /// `tr(σᵀ M σ)`.
    fn noise_trace(&self, a: &[f64], t: f64) -> Result<f64> {
        // tr(σᵀΘᵀΘσ) = ‖Θσ‖_F²
        let th = self.theta(a, t)?;
        let s = self.diffusion(a, t)?;
        let ts = &th * &s;
        Ok(ts.as_slice().iter().map(|x| x * x).sum())
    }
}

/// ΘᵀΘ computed so the result is exactly symmetric.
pub fn gram(th: &Matrix) -> Matrix {
    let n = th.cols();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..th.rows()).map(|k| th[(k, i)] * th[(k, j)]).sum();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Finite-difference step for a point: `1e-5·(1 + ‖a‖)`.
pub fn fd_step(a: &[f64]) -> f64 {
    tol::FD_STEP * (1.0 + linalg::norm(a))
}

fn check_vec(v: Vec<f64>, n: usize, what: &str) -> Result<Vec<f64>> {
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!("{what} returned {} entries, expected {n}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(v)
}

fn check_mat(m: Matrix, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::DimensionMismatch(format!(
            "{what} returned a {}x{} matrix, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(m)
}

/// Central-difference Jacobian of a vector map, column k = ∂g/∂a_k.
fn fd_jacobian(a: &[f64], n_out: usize, mut g: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Matrix> {
    let h = fd_step(a);
    let n = a.len();
    let mut jac = Matrix::zeros(n_out, n);
    let mut x = a.to_vec();
    for k in 0..n {
        x[k] = a[k] + h;
        let fp = g(&x)?;
        x[k] = a[k] - h;
        let fm = g(&x)?;
        x[k] = a[k];
        for i in 0..n_out {
            jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Continuous Itô system with drift `f`, diffusion `σ` (n×d) and metric factor Θ (n×n).
#[derive(Clone)]
pub struct ContinuousSystem {
    name: String,
    n: usize,
    d: usize,
    drift: VectorField,
    diffusion: MatrixField,
    theta: MatrixField,
    jacobian: Option<MatrixField>,
    domain: Domain,
}

impl fmt::Debug for ContinuousSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("domain", &self.domain)
            .finish()
    }
}

impl ContinuousSystem {
    /// New system with zero diffusion, identity Θ and the unit cube as domain.
    pub fn new<F>(n: usize, d: usize, drift: F) -> Self
    where
        F: Fn(&[f64], f64) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        ContinuousSystem {
            name: "system".into(),
            n,
            d,
            drift: Arc::new(drift),
            diffusion: Arc::new(move |_, _| Ok(Matrix::zeros(n, d))),
            theta: Arc::new(move |_, _| Ok(Matrix::identity(n))),
            jacobian: None,
            domain: Domain::cube(n, 1.0, 1.0),
        }
    }

    /// `f(a) = A·a`, with the exact Jacobian attached.
    pub fn linear(a: Matrix, d: usize) -> Self {
        let n = a.rows();
        let jac = a.clone();
        ContinuousSystem::new(n, d, move |x, _| Ok(a.mul_vec(x))).with_jacobian(move |_, _| Ok(jac.clone()))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_diffusion<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> Result<Matrix> + Send + Sync + 'static,
    {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_theta<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> Result<Matrix> + Send + Sync + 'static,
    {
        self.theta = Arc::new(f);
        self
    }

    pub fn with_jacobian<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> Result<Matrix> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(f));
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn drift(&self, a: &[f64], t: f64) -> Result<Vec<f64>> {
        check_vec((self.drift)(a, t)?, self.n, "drift")
    }

    /// ∂f/∂a: analytic when supplied, otherwise central differences.
    pub fn drift_jacobian(&self, a: &[f64], t: f64) -> Result<Matrix> {
        match &self.jacobian {
            Some(j) => check_mat(j(a, t)?, self.n, self.n, "drift jacobian"),
            None => self.drift_jacobian_fd(a, t),
        }
    }

    pub fn drift_jacobian_fd(&self, a: &[f64], t: f64) -> Result<Matrix> {
        fd_jacobian(a, self.n, |x| self.drift(x, t))
    }

    /// Total derivative of Θ along the deterministic flow:
    /// `Θ̇ = ∂Θ/∂t + Σ_k (∂Θ/∂a_k)·f_k(a,t)`.
    pub fn theta_dot(&self, a: &[f64], t: f64) -> Result<Matrix> {
        let f = self.drift(a, t)?;
        let n = self.n;
        let ht = tol::FD_STEP * (1.0 + t.abs());
        let mut out = (&self.theta(a, t + ht)? - &self.theta(a, t - ht)?).scale(0.5 / ht);
        let h = fd_step(a);
        let mut x = a.to_vec();
        for k in 0..n {
            if f[k] == 0.0 {
                continue;
            }
            x[k] = a[k] + h;
            let tp = self.theta(&x, t)?;
            x[k] = a[k] - h;
            let tm = self.theta(&x, t)?;
            x[k] = a[k];
            out = &out + &(&tp - &tm).scale(f[k] / (2.0 * h));
        }
        Ok(out)
    }

    /// Euler–Maruyama discretization with step `dt` as a discrete system:
    /// map `a + dt·f(a, k·dt)`, noise `√dt·σ(a, k·dt)`, metric factor `Θ(a, k·dt)`.
    pub fn euler_discretization(&self, dt: f64) -> DiscreteSystem {
        let drift = self.drift.clone();
        let diffusion = self.diffusion.clone();
        let theta = self.theta.clone();
        let n = self.n;
        let sqdt = dt.sqrt();
        let mut sys = DiscreteSystem::new(n, self.d, move |a, k| {
            let f = drift(a, k as f64 * dt)?;
            Ok(a.iter().zip(&f).map(|(x, fx)| x + dt * fx).collect())
        })
        .with_diffusion(move |a, k| Ok(diffusion(a, k as f64 * dt)?.scale(sqdt)))
        .with_theta(move |a, k| theta(a, k as f64 * dt))
        .with_name(format!("{} (Euler, dt={dt})", self.name));
        if let Some(j) = self.jacobian.clone() {
            sys = sys.with_jacobian(move |a, k| {
                let jac = j(a, k as f64 * dt)?;
                Ok(&Matrix::identity(n) + &jac.scale(dt))
            });
        }
        let k0 = (self.domain.t_start / dt).floor();
        let k1 = (self.domain.t_end / dt).ceil();
        sys.with_domain(Domain { t_start: k0, t_end: k1, ..self.domain.clone() })
    }
}

impl StochasticSystem for ContinuousSystem {
    fn dim(&self) -> usize {
        self.n
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn theta(&self, a: &[f64], t: f64) -> Result<Matrix> {
        check_mat((self.theta)(a, t)?, self.n, self.n, "theta")
    }

    fn diffusion(&self, a: &[f64], t: f64) -> Result<Matrix> {
        check_mat((self.diffusion)(a, t)?, self.n, self.d, "diffusion")
    }
}

/// Discrete stochastic difference system; `k` is the step index.
#[derive(Clone)]
pub struct DiscreteSystem {
    name: String,
    n: usize,
    d: usize,
    map: StepMap,
    diffusion: StepMatrix,
    theta: StepMatrix,
    jacobian: Option<StepMatrix>,
    domain: Domain,
}

impl fmt::Debug for DiscreteSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("domain", &self.domain)
            .finish()
    }
}

fn step_index(t: f64) -> u64 {
    t.round().max(0.0) as u64
}

impl DiscreteSystem {
    pub fn new<F>(n: usize, d: usize, map: F) -> Self
    where
        F: Fn(&[f64], u64) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        DiscreteSystem {
            name: "system".into(),
            n,
            d,
            map: Arc::new(map),
            diffusion: Arc::new(move |_, _| Ok(Matrix::zeros(n, d))),
            theta: Arc::new(move |_, _| Ok(Matrix::identity(n))),
            jacobian: None,
            domain: Domain::cube(n, 1.0, 100.0),
        }
    }

    /// `a_{k+1} = A·a_k`, with the exact Jacobian attached.
    pub fn linear(a: Matrix, d: usize) -> Self {
        let n = a.rows();
        let jac = a.clone();
        DiscreteSystem::new(n, d, move |x, _| Ok(a.mul_vec(x))).with_jacobian(move |_, _| Ok(jac.clone()))
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_diffusion<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], u64) -> Result<Matrix> + Send + Sync + 'static,
    {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_theta<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], u64) -> Result<Matrix> + Send + Sync + 'static,
    {
        self.theta = Arc::new(f);
        self
    }

    pub fn with_jacobian<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], u64) -> Result<Matrix> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(f));
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn map(&self, a: &[f64], k: u64) -> Result<Vec<f64>> {
        check_vec((self.map)(a, k)?, self.n, "map")
    }

    pub fn map_jacobian(&self, a: &[f64], k: u64) -> Result<Matrix> {
        match &self.jacobian {
            Some(j) => check_mat(j(a, k)?, self.n, self.n, "map jacobian"),
            None => fd_jacobian(a, self.n, |x| self.map(x, k)),
        }
    }

    pub fn theta_at(&self, a: &[f64], k: u64) -> Result<Matrix> {
        check_mat((self.theta)(a, k)?, self.n, self.n, "theta")
    }

    pub fn diffusion_at(&self, a: &[f64], k: u64) -> Result<Matrix> {
        check_mat((self.diffusion)(a, k)?, self.n, self.d, "diffusion")
    }
}

impl StochasticSystem for DiscreteSystem {
    fn dim(&self) -> usize {
        self.n
    }

    fn noise_dim(&self) -> usize {
        self.d
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn theta(&self, a: &[f64], t: f64) -> Result<Matrix> {
        self.theta_at(a, step_index(t))
    }

    fn diffusion(&self, a: &[f64], t: f64) -> Result<Matrix> {
        self.diffusion_at(a, step_index(t))
    }
}
