//! Closed-form right-hand sides of the mean-square distance bounds, and the
//! looser constants obtained by the earlier Lyapunov-style argument.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::contraction::{CertificationReport, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub mode: Mode,
    /// `μ ∈ (0,1)` per step (discrete) or `λ > 0` (continuous).
    pub rate: f64,
    /// `D` (discrete) or `C` (continuous), metric-weighted trace units.
    pub noise: f64,
    pub beta: f64,
    /// `E[d²_{M₀}(ξ, ξ′)]`.
    pub u0: f64,
    /// The second trajectory is noise-free, which halves the noise terms.
    #[serde(default)]
    pub noise_free_reference: bool,
}

impl BoundInputs {
    pub fn discrete(mu: f64, d: f64, beta: f64, u0: f64) -> Self {
        BoundInputs { mode: Mode::Discrete, rate: mu, noise: d, beta, u0, noise_free_reference: false }
    }

    pub fn continuous(lambda: f64, c: f64, beta: f64, u0: f64) -> Self {
        BoundInputs { mode: Mode::Continuous, rate: lambda, noise: c, beta, u0, noise_free_reference: false }
    }

    pub fn with_noise_free_reference(mut self, flag: bool) -> Self {
        self.noise_free_reference = flag;
        self
    }

    /// Constants as emitted by a certification run.
    pub fn from_report(report: &CertificationReport, u0: f64) -> Self {
        BoundInputs {
            mode: report.mode,
            rate: report.rate,
            noise: report.noise_bound,
            beta: report.beta,
            u0,
            noise_free_reference: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match self.mode {
            Mode::Discrete if !(self.rate > 0.0 && self.rate < 1.0) => {
                return bad(format!("discrete rate mu must lie in (0, 1), got {}", self.rate));
            }
            Mode::Continuous if !(self.rate > 0.0) || !self.rate.is_finite() => {
                return bad(format!("continuous rate lambda must be positive, got {}", self.rate));
            }
            _ => {}
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise constant must be finite and >= 0, got {}", self.noise));
        }
        if !(self.u0 >= 0.0) || !self.u0.is_finite() {
            return bad(format!("u0 must be finite and >= 0, got {}", self.u0));
        }
        Ok(())
    }

    fn effective_noise(&self) -> f64 {
        if self.noise_free_reference {
            self.noise / 2.0
        } else {
            self.noise
        }
    }

    /// Limit of the squared-distance bound: `2D/(1−μ)` or `C/λ` (noise halved for a noise-free reference).
    pub fn asymptote(&self) -> f64 {
        match self.mode {
            Mode::Discrete => 2.0 * self.effective_noise() / (1.0 - self.rate),
            Mode::Continuous => self.effective_noise() / self.rate,
        }
    }

    /// Limit of the Euclidean mean-square bound: asymptote / β.
    pub fn ms_asymptote(&self) -> f64 {
        self.asymptote() / self.beta
    }

    /// `μᵏ` or `e^{−2λT}`; `x = ∞` gives 0.
    fn decay(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 0.0;
        }
        match self.mode {
            Mode::Discrete => self.rate.powf(x),
            Mode::Continuous => (-2.0 * self.rate * x).exp(),
        }
    }
}

/// Bound values at one abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    /// Bound on `E[d²_M(a, b)]`.
    pub d2: f64,
    /// Bound on `E‖a − b‖²`.
    pub ms: f64,
}

fn check_abscissa(x: f64) -> Result<()> {
    if !(x >= 0.0) {
        return Err(Error::InvalidInput(format!("step/time must be >= 0, got {x}")));
    }
    Ok(())
}

fn evaluate(inputs: &BoundInputs, x: f64) -> Result<BoundValue> {
    inputs.validate()?;
    check_abscissa(x)?;
    let asym = inputs.asymptote();
    let decay = inputs.decay(x);
    Ok(BoundValue {
        d2: asym + decay * (inputs.u0 - asym).max(0.0),
        ms: asym / inputs.beta + decay * inputs.u0 / inputs.beta,
    })
}

/// `2D/(1−μ) + μᵏ[u₀ − 2D/(1−μ)]⁺` and `2D/(β(1−μ)) + μᵏu₀/β`.
pub fn discrete_bound(inputs: &BoundInputs, k: f64) -> Result<BoundValue> {
    if inputs.mode != Mode::Discrete {
        return Err(Error::InvalidInput("discrete_bound needs discrete inputs".into()));
    }
    evaluate(inputs, k)
}

/// `C/λ + e^{−2λT}[u₀ − C/λ]⁺` and `C/(βλ) + e^{−2λT}u₀/β`; `T = ∞` gives the limits.
pub fn continuous_bound(inputs: &BoundInputs, t: f64) -> Result<BoundValue> {
    if inputs.mode != Mode::Continuous {
        return Err(Error::InvalidInput("continuous_bound needs continuous inputs".into()));
    }
    evaluate(inputs, t)
}

pub fn bound(inputs: &BoundInputs, x: f64) -> Result<BoundValue> {
    evaluate(inputs, x)
}

/// Squared-distance bound with the positive part integrated over samples of
/// `d²_{M₀}(ξ, ξ′)` from the initial distribution, instead of applied to their mean.
pub fn bound_exact_integral(inputs: &BoundInputs, u0_samples: &[f64], x: f64) -> Result<f64> {
    inputs.validate()?;
    check_abscissa(x)?;
    if u0_samples.is_empty() {
        return Err(Error::InvalidInput("need at least one initial-distance sample".into()));
    }
    let asym = inputs.asymptote();
    let excess = u0_samples.iter().map(|u| (u - asym).max(0.0)).sum::<f64>() / u0_samples.len() as f64;
    Ok(asym + inputs.decay(x) * excess)
}

/// Constants of the earlier Lyapunov-style bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorConstants {
    pub epsilon: f64,
    pub lambda1: f64,
    pub c1: f64,
    pub rate_is_smaller: bool,
    pub noise_is_larger: bool,
}

impl PriorConstants {
    /// `C₁/(βλ₁)`, infinite when `λ₁ ≤ 0`.
    pub fn ms_asymptote(&self, beta: f64) -> f64 {
        if self.lambda1 > 0.0 {
            self.c1 / (beta * self.lambda1)
        } else {
            f64::INFINITY
        }
    }
}

/// `λ₁ = λ − ε/β`, `C₁ = C + n·m̄²σ̄⁴/(2ε)`.
pub fn prior_bound_constants(
    lambda: f64,
    c: f64,
    beta: f64,
    sigma_bar: f64,
    m_bar: f64,
    n: usize,
    eps: f64,
) -> Result<PriorConstants> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {eps}")));
    }
    if !(beta > 0.0) || !(lambda > 0.0) {
        return Err(Error::InvalidInput("lambda and beta must be positive".into()));
    }
    let lambda1 = lambda - eps / beta;
    let c1 = c + n as f64 * m_bar * m_bar * sigma_bar.powi(4) / (2.0 * eps);
    Ok(PriorConstants { epsilon: eps, lambda1, c1, rate_is_smaller: lambda1 < lambda, noise_is_larger: c1 > c })
}

/// The `ε ∈ (0, λβ)` minimizing `C₁/(βλ₁)`, by golden-section search on `log ε`.
pub fn optimal_prior_epsilon(lambda: f64, c: f64, beta: f64, sigma_bar: f64, m_bar: f64, n: usize) -> Result<PriorConstants> {
    let objective = |log_eps: f64| -> Result<f64> {
        Ok(prior_bound_constants(lambda, c, beta, sigma_bar, m_bar, n, log_eps.exp())?.ms_asymptote(beta))
    };
    let hi = (lambda * beta).ln();
    let mut lo = hi - 60.0;
    let mut up = hi;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = up - g * (up - lo);
    let mut x2 = lo + g * (up - lo);
    let (mut f1, mut f2) = (objective(x1)?, objective(x2)?);
    for _ in 0..200 {
        if up - lo < 1e-12 {
            break;
        }
        if f1 <= f2 {
            up = x2;
            x2 = x1;
            f2 = f1;
            x1 = up - g * (up - lo);
            f1 = objective(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (up - lo);
            f2 = objective(x2)?;
        }
    }
    prior_bound_constants(lambda, c, beta, sigma_bar, m_bar, n, (0.5 * (lo + up)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSeries {
    pub mode: Mode,
    pub abscissae: Vec<f64>,
    pub d2: Vec<f64>,
    pub ms: Vec<f64>,
}

pub fn bound_series(inputs: &BoundInputs, abscissae: &[f64]) -> Result<BoundSeries> {
    let mut d2 = Vec::with_capacity(abscissae.len());
    let mut ms = Vec::with_capacity(abscissae.len());
    for &x in abscissae {
        let v = evaluate(inputs, x)?;
        d2.push(v.d2);
        ms.push(v.ms);
    }
    Ok(BoundSeries { mode: inputs.mode, abscissae: abscissae.to_vec(), d2, ms })
}

impl BoundSeries {
    /// CSV body with columns `t_or_k,d2_bound,ms_bound`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_or_k,d2_bound,ms_bound\n");
        for i in 0..self.abscissae.len() {
            let _ = writeln!(s, "{},{},{}", self.abscissae[i], self.d2[i], self.ms[i]);
        }
        s
    }
}
