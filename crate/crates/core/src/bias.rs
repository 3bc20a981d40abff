//! Bias correctors for the deviation statistic.
//!
//! With `y(t,u) = x + γb(x) + ut√γ σ(x)U`,
//!
//! ```text
//! Λ(t,u,x) = E[ Σ_{ijk} ∂³_{ijk}φ(y) (σU)_i (σU)_j (σU)_k ]
//! E_n      = Γ_n^{−1/2} Σ γ_k^{3/2} ∫∫ (1−t) t Λ(t,u,X_{k−1}) du dt
//! B_n      = E_n + Γ_n^{−1/2} Σ γ_k² ∫ (1−t) Tr(D²φ(X_{k−1}+tγ_k b) b⊗b) dt
//!              + (2√Γ_n)^{−1} Σ γ_k Tr((D²φ(X_{k−1}+γ_k b) − D²φ(X_{k−1})) Σ)
//! ```
//!
//! Integrals over `[0,1]` use the `M`-point midpoint rule. The expectation in
//! `U` is exact for sign innovations and Gauss–Hermite for Gaussian ones.
//!
//! The radius `a_n` bounds `|E_n|`:
//!
//! ```text
//! a_n = [φ'''], ‖σ‖_∞^{3+β} E|U|^{3+β} / ((1+β)(2+β)(3+β)) · Γ_n^{((3+β)/2)} / √Γ_n
//! ```

use crate::error::{Error, Result};
use crate::model::{
    cubic_contraction, innovation_expectation, Diffusion, InnovationDistribution, InnovationKind, Point,
    TestFunction,
};
use crate::quadrature::{gauss_hermite_normal, midpoints};
use crate::steps::{CompensatedSum, StepSequence};

/// `Λ(t,u,x)` for a single pair `(t,u)`.
#[allow(clippy::too_many_arguments)]
pub fn lambda_term<const D: usize>(
    model: &dyn Diffusion<D>,
    phi: &dyn TestFunction<D>,
    x: &Point<D>,
    gamma: f64,
    t: f64,
    u: f64,
    innov: InnovationKind,
    hermite_nodes: usize,
) -> Result<f64> {
    let base = x + model.drift(x) * gamma;
    let sigma = model.sigma(x);
    let scale = u * t * gamma.sqrt();
    innovation_expectation::<D>(innov, hermite_nodes, |w| {
        let v = sigma * w;
        cubic_contraction(&phi.third(&(base + v * scale)), &v)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasConfig {
    /// midpoint nodes per `[0,1]` integral.
    pub quadrature_nodes: usize,
    /// Gauss–Hermite nodes per axis for Gaussian innovations.
    pub hermite_nodes: usize,
    /// Hölder exponent; `β = 1` carries all three terms.
    pub beta: f64,
    /// `a_n / (Γ_n^{((3+β)/2)}/√Γ_n)`; when set, `|E_k| ≤ a_k` is checked at every step.
    pub radius_prefactor: Option<f64>,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self { quadrature_nodes: 10, hermite_nodes: 8, beta: 1.0, radius_prefactor: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasTotals {
    /// `E_n^β`
    pub e_n: f64,
    /// drift-quadratic term, already divided by `√Γ_n`.
    pub drift_term: f64,
    /// increment term, already divided by `√Γ_n`.
    pub increment_term: f64,
    /// steps with `|E_k| > a_k` (only counted when a radius prefactor is set).
    pub radius_violations: u64,
    /// `max_k |E_k|/a_k`.
    pub max_radius_ratio: f64,
}

impl BiasTotals {
    /// `B_{n,β}`; for `β < 1` only `E_n^β`.
    pub fn full(&self) -> f64 {
        self.e_n + self.drift_term + self.increment_term
    }

    /// `B_{n,1} − E_n^1`.
    pub fn without_e(&self) -> f64 {
        self.drift_term + self.increment_term
    }
}

#[derive(Debug, Clone)]
pub struct BiasAccumulator {
    cfg: BiasConfig,
    nodes: Vec<f64>,
    hermite: (Vec<f64>, Vec<f64>),
    e_sum: CompensatedSum,
    drift_sum: CompensatedSum,
    incr_sum: CompensatedSum,
    gamma_sum: CompensatedSum,
    radius_sum: CompensatedSum,
    violations: u64,
    max_ratio: f64,
}

impl BiasAccumulator {
    pub fn new(cfg: BiasConfig) -> Result<Self> {
        if cfg.quadrature_nodes == 0 {
            return Err(Error::Config("quadrature needs at least one node".into()));
        }
        if !(cfg.beta > 0.0 && cfg.beta <= 1.0) {
            return Err(Error::Domain(format!("beta must lie in (0,1], got {}", cfg.beta)));
        }
        let hermite = gauss_hermite_normal(cfg.hermite_nodes.max(1));
        Ok(Self {
            nodes: midpoints(cfg.quadrature_nodes),
            hermite,
            cfg,
            e_sum: CompensatedSum::new(),
            drift_sum: CompensatedSum::new(),
            incr_sum: CompensatedSum::new(),
            gamma_sum: CompensatedSum::new(),
            radius_sum: CompensatedSum::new(),
            violations: 0,
            max_ratio: 0.0,
        })
    }

    /// `∫∫ (1−t) t Λ(t,u,x) du dt` under the midpoint rule.
    pub fn quantized_double_integral<const D: usize>(
        &self,
        model: &dyn Diffusion<D>,
        phi: &dyn TestFunction<D>,
        x: &Point<D>,
        gamma: f64,
        innov: InnovationKind,
    ) -> Result<f64> {
        let base = x + model.drift(x) * gamma;
        let sigma = model.sigma(x);
        let sq = gamma.sqrt();
        let nodes = &self.nodes;
        let m = nodes.len() as f64;
        let inner = |w: &Point<D>| {
            let v = sigma * w;
            let mut s = 0.0;
            for &t in nodes {
                let mut row = 0.0;
                for &u in nodes {
                    row += cubic_contraction(&phi.third(&(base + v * (u * t * sq))), &v);
                }
                s += (1.0 - t) * t * row;
            }
            s / (m * m)
        };
        match innov {
            InnovationKind::Rademacher => innovation_expectation::<D>(innov, 0, inner),
            InnovationKind::Gaussian => {
                let (hx, hw) = &self.hermite;
                let k = hx.len();
                let mut total = 0.0;
                for idx in 0..k.pow(D as u32) {
                    let mut rem = idx;
                    let mut weight = 1.0;
                    let mut w = Point::<D>::zeros();
                    for i in 0..D {
                        w[i] = hx[rem % k];
                        weight *= hw[rem % k];
                        rem /= k;
                    }
                    total += weight * inner(&w);
                }
                Ok(total)
            }
        }
    }

    /// Charges step `k` with pre-step point `x` and step `γ_k`.
    pub fn observe<const D: usize>(
        &mut self,
        model: &dyn Diffusion<D>,
        phi: &dyn TestFunction<D>,
        x: &Point<D>,
        gamma: f64,
        innov: InnovationKind,
    ) -> Result<()> {
        let dbl = self.quantized_double_integral(model, phi, x, gamma, innov)?;
        self.e_sum.add(gamma.powf(1.5) * dbl);
        self.gamma_sum.add(gamma);
        if self.cfg.beta == 1.0 {
            let b = model.drift(x);
            let m = self.nodes.len() as f64;
            let mut s = 0.0;
            for &t in &self.nodes {
                let h = phi.hessian(&(x + b * (t * gamma)));
                s += (1.0 - t) * (b.transpose() * h * b)[(0, 0)];
            }
            self.drift_sum.add(gamma * gamma * s / m);
            let dh = phi.hessian(&(x + b * gamma)) - phi.hessian(x);
            self.incr_sum.add(0.5 * gamma * (dh * model.diffusion_matrix(x)).trace());
        }
        if let Some(pref) = self.cfg.radius_prefactor {
            self.radius_sum.add(gamma.powf((3.0 + self.cfg.beta) / 2.0));
            let root = self.gamma_sum.value().sqrt();
            let e = self.e_sum.value().abs() / root;
            let a = pref * self.radius_sum.value() / root;
            if e > a {
                self.violations += 1;
            }
            if a > 0.0 {
                self.max_ratio = self.max_ratio.max(e / a);
            } else if e > 0.0 {
                self.max_ratio = f64::INFINITY;
            }
        }
        Ok(())
    }

    pub fn totals(&self) -> BiasTotals {
        let root = self.gamma_sum.value().sqrt();
        BiasTotals {
            e_n: self.e_sum.value() / root,
            drift_term: self.drift_sum.value() / root,
            increment_term: self.incr_sum.value() / root,
            radius_violations: self.violations,
            max_radius_ratio: self.max_ratio,
        }
    }
}

/// `[φ''']_β ‖σ‖_∞^{3+β} E|U|^{3+β} / ((1+β)(2+β)(3+β))`.
pub fn radius_prefactor<const D: usize>(
    phi: &dyn TestFunction<D>,
    model: &dyn Diffusion<D>,
    innov: InnovationDistribution,
    beta: f64,
) -> Result<f64> {
    let holder = phi.third_holder(beta);
    if holder == 0.0 {
        return Ok(0.0);
    }
    let p = 3.0 + beta;
    Ok(holder * model.sigma_sup().powf(p) * innov.abs_moment(p)?
        / ((1.0 + beta) * (2.0 + beta) * (3.0 + beta)))
}

/// `a_n`.
pub fn bias_radius_a_n<const D: usize>(
    phi: &dyn TestFunction<D>,
    model: &dyn Diffusion<D>,
    steps: &StepSequence,
    innov: InnovationDistribution,
    n: u64,
    beta: f64,
) -> Result<f64> {
    let pref = radius_prefactor(phi, model, innov, beta)?;
    if pref == 0.0 {
        return Ok(0.0);
    }
    Ok(pref * steps.bias_ratio(n, beta)?)
}

/// `φ(X_k) − E[φ(X_k) | X_{k−1}]` for the realized innovation `u`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_increment<const D: usize>(
    model: &dyn Diffusion<D>,
    phi: &dyn TestFunction<D>,
    x: &Point<D>,
    gamma: f64,
    u: &Point<D>,
    innov: InnovationKind,
    hermite_nodes: usize,
) -> Result<f64> {
    let base = x + model.drift(x) * gamma;
    let sigma = model.sigma(x) * gamma.sqrt();
    let mean = innovation_expectation::<D>(innov, hermite_nodes, |w| phi.value(&(base + sigma * w)))?;
    Ok(phi.value(&(base + sigma * u)) - mean)
}
