//! Closed-form deviation bounds and confidence intervals.
//!
//! Every function returns a log-probability bound (or an exponent to which
//! `log 2` is added by the caller when comparing with empirical tails).
//!
//! # Gaussian bound
//!
//! ```text
//! log P[|√Γ_n ν_n(Aφ)| ≥ a] ≤ log 2 − (a − a_n)₊² / (2 ‖σ‖_∞² ‖∇φ‖_∞²)
//! ```
//!
//! # Coboundary bound
//!
//! With `Ã = [φ]²ν(‖σ‖²)/2` and `B̃ = [φ]⁴‖σ‖_∞²[ϑ]²/8` the exponent is the
//! minimum over `λ > 0` of
//!
//! ```text
//! P(λ) = −aλ/√Γ + λ²A/Γ + λ⁴B/Γ³,   A = ρÃ,  B = ρ³B̃/(ρ−1)
//! ```
//!
//! attained at the real root of `λ³ + (AΓ²/2B)λ − aΓ^{5/2}/(4B) = 0`.
//! Proof constants are frozen at their limits (`c = C = q = 1`, `e = 0`).

use crate::error::{Error, Result};

pub const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// `‖σ‖_∞`
    pub sigma_sup: f64,
    /// `‖∇φ‖_∞`
    pub grad_sup: f64,
    /// `[φ]_1`
    pub phi_lip: f64,
    /// `[ϑ]_1`, seminorm of the coboundary solution.
    pub theta_lip: f64,
    /// estimate of `ν(‖σ‖²)`
    pub nu_sigma2: f64,
    /// estimate of `ν(|σ*∇φ|²)`
    pub nu_carre: f64,
    /// gradient-bound constant
    pub alpha: f64,
    /// `[f]_1`
    pub f_lip: f64,
    /// `Γ_n`
    pub gamma_n: f64,
    /// bias radius `a_n`
    pub a_n: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            sigma_sup: 1.0,
            grad_sup: 1.0,
            phi_lip: 1.0,
            theta_lip: 1.0,
            nu_sigma2: 1.0,
            nu_carre: 1.0,
            alpha: 1.0,
            f_lip: 1.0,
            gamma_n: 1.0,
            a_n: 0.0,
        }
    }
}

impl BoundParams {
    /// `(Ã, B̃, c̄)` with `c̄ = Ã/B̃^{1/3}`.
    pub fn coboundary_constants(&self) -> (f64, f64, f64) {
        let a = self.phi_lip.powi(2) * self.nu_sigma2 / 2.0;
        let b = self.phi_lip.powi(4) * self.sigma_sup.powi(2) * self.theta_lip.powi(2) / 8.0;
        (a, b, a / b.cbrt())
    }
}

/// `a√Γ_n / (q ‖σ‖_∞² ‖∇φ‖_∞²)`.
pub fn lambda_n(a: f64, q: f64, params: &BoundParams) -> Result<f64> {
    let den = q * params.sigma_sup.powi(2) * params.grad_sup.powi(2);
    if !(den > 0.0 && den.is_finite()) {
        return Err(Error::Config("lambda_n needs positive finite q, ‖σ‖_∞ and ‖∇φ‖_∞".into()));
    }
    Ok(a * params.gamma_n.sqrt() / den)
}

/// `log 2 − r²/(2‖σ‖_∞²‖∇φ‖_∞²)` with `r = a` when the statistic is
/// bias-centered and `r = (a − a_n)₊` otherwise.
pub fn gaussian_log_bound(a: f64, params: &BoundParams, bias_centered: bool) -> f64 {
    let r = if bias_centered { a.max(0.0) } else { (a - params.a_n).max(0.0) };
    let v = params.sigma_sup.powi(2) * params.grad_sup.powi(2);
    (LN_2 - r * r / (2.0 * v)).min(LN_2)
}

fn cbrt_stable_pair(half_q_neg: f64, p_third: f64) -> (f64, f64) {
    // u³ = −q/2 + √(q²/4 + (p/3)³), v = −(p/3)/u
    let disc = half_q_neg.hypot(p_third.max(0.0).powf(1.5));
    let u = (half_q_neg + disc).cbrt();
    (u, -p_third / u)
}

/// Real root of `λ³ + pλ + q` with `p = AΓ²/(2B)`, `q = −aΓ^{5/2}/(4B)`.
pub fn cardan_lambda_min(a: f64, gamma_n: f64, big_a: f64, big_b: f64) -> f64 {
    let p = big_a * gamma_n * gamma_n / (2.0 * big_b);
    let q = -a * gamma_n.powf(2.5) / (4.0 * big_b);
    depressed_cubic_root(p, q)
}

/// Real root of `λ³ + pλ + q = 0` for `p ≥ 0`, Cardano's signed cube roots
/// rearranged as `−q/(u² − uv + v²)` to avoid cancellation.
pub fn depressed_cubic_root(p: f64, q: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    let (u, v) = cbrt_stable_pair(-q / 2.0, p / 3.0);
    -q / (u * u + p / 3.0 + v * v)
}

/// `P(λ) = −aλ/√Γ + λ²A/Γ + λ⁴B/Γ³`.
pub fn exponent_polynomial(lambda: f64, a: f64, gamma_n: f64, big_a: f64, big_b: f64) -> f64 {
    -a * lambda / gamma_n.sqrt() + lambda * lambda * big_a / gamma_n + lambda.powi(4) * big_b / gamma_n.powi(3)
}

/// `Φ_n(a,ρ)`, the sum of the two signed cube roots
/// `∛(X + Y) + ∛(X − Y)`, `X = a/(√Γ B̃)`, `Y = √((ρ−1)(2Ã/3B̃)³ + a²/(B̃²Γ))`.
pub fn phi_n(a: f64, gamma_n: f64, a_tilde: f64, b_tilde: f64, rho: f64) -> f64 {
    let x = a / (gamma_n.sqrt() * b_tilde);
    if x == 0.0 {
        return 0.0;
    }
    let k = (rho - 1.0).cbrt() * 2.0 * a_tilde / (3.0 * b_tilde);
    let y = (k.powi(3) + x * x).sqrt();
    let u = (x + y).cbrt();
    let uv = -k;
    let v = uv / u;
    2.0 * x / (u * u - uv + v * v)
}

/// `P(λ_min(ρ)) = −(√Γ/4)((ρ−1)^{1/3}/ρ) Φ (3a/2 − (√Γ/2)(ρ−1)^{1/3} Ã Φ)`.
pub fn p_lambda_min(a: f64, gamma_n: f64, a_tilde: f64, b_tilde: f64, rho: f64) -> Result<f64> {
    if !(rho > 1.0) {
        return Err(Error::Domain(format!("rho must exceed 1, got {rho}")));
    }
    let phi = phi_n(a, gamma_n, a_tilde, b_tilde, rho);
    let c = (rho - 1.0).cbrt();
    let sg = gamma_n.sqrt();
    Ok(-(sg / 4.0) * (c / rho) * phi * (1.5 * a - 0.5 * sg * c * a_tilde * phi))
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimizes `ρ ↦ P(λ_min(ρ))` over `ρ = 1 + e^s`, `s ∈ [−20, 20]`.
pub fn optimize_rho(a: f64, gamma_n: f64, a_tilde: f64, b_tilde: f64) -> (f64, f64) {
    let f = |s: f64| p_lambda_min(a, gamma_n, a_tilde, b_tilde, 1.0 + s.exp()).unwrap_or(f64::INFINITY);
    let (lo, hi) = (-20.0f64, 20.0f64);
    let grid = 160usize;
    let h = (hi - lo) / grid as f64;
    let mut best = 0usize;
    let mut best_v = f64::INFINITY;
    for i in 0..=grid {
        let v = f(lo + h * i as f64);
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    let mut l = lo + h * best.saturating_sub(1) as f64;
    let mut r = (lo + h * (best + 1) as f64).min(hi);
    let mut c = r - GOLDEN * (r - l);
    let mut d = l + GOLDEN * (r - l);
    let (mut fc, mut fd) = (f(c), f(d));
    while r - l > 1e-8 {
        if fc < fd {
            r = d;
            d = c;
            fd = fc;
            c = r - GOLDEN * (r - l);
            fc = f(c);
        } else {
            l = c;
            c = d;
            fc = fd;
            d = l + GOLDEN * (r - l);
            fd = f(d);
        }
    }
    let s = 0.5 * (l + r);
    let mut v = f(s);
    let mut s_best = s;
    if best_v < v {
        v = best_v;
        s_best = lo + h * best as f64;
    }
    (1.0 + s_best.exp(), v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoboundaryForm {
    /// Branches computed from the optimized quadratic and quartic exponents.
    Proof,
    /// `Φ_n(a)` exactly as stated, including the `Γ_n^{c̄/3}` factor.
    TheoremLiteral,
}

/// Quadratic branch: `−a²/(4Ã) (1 − 2/(1 + √(1 + 4Ã³Γ/(B̃a²))))`.
pub fn quadratic_branch(a: f64, gamma_n: f64, a_tilde: f64, b_tilde: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let x = 4.0 * a_tilde.powi(3) * gamma_n / (b_tilde * a * a);
    -a * a / (4.0 * a_tilde) * saturation(x)
}

/// `1 − 2/(1 + √(1+x))` written as `x/(1+√(1+x))²`.
fn saturation(x: f64) -> f64 {
    let s = 1.0 + (1.0 + x).sqrt();
    x / (s * s)
}

/// Quartic branch at `ρ = 3/2`:
/// `−(a^{4/3}/4)(Γ/B̃)^{1/3}(1 − (2/3)(Ã/B̃^{1/3})(Γ/a²)^{1/3})`.
pub fn quartic_branch(a: f64, gamma_n: f64, a_tilde: f64, b_tilde: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let c = a_tilde / b_tilde.cbrt();
    -(a.powf(4.0 / 3.0) / 4.0) * (gamma_n / b_tilde).cbrt() * (1.0 - (2.0 / 3.0) * c * (gamma_n / (a * a)).cbrt())
}

/// The two competing terms of `Φ_n(a)`.
pub fn theorem_branches(a: f64, params: &BoundParams) -> (f64, f64) {
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let (_, _, c) = params.coboundary_constants();
    let g = params.gamma_n;
    let first = a * a * saturation(4.0 * c.powi(3) * g / (a * a));
    let second = a.powf(4.0 / 3.0) * g.powf(c / 3.0) * (1.0 - (2.0 / 3.0) * c * (g / (a * a)).cbrt()).max(0.0);
    (first, second)
}

/// `Φ_n(a)` of the stated bound.
pub fn theorem_phi(a: f64, params: &BoundParams) -> f64 {
    let (first, second) = theorem_branches(a, params);
    first.max(second)
}

pub fn coboundary_log_bound(a: f64, params: &BoundParams, form: CoboundaryForm) -> f64 {
    if a <= 0.0 {
        return LN_2;
    }
    let bound = match form {
        CoboundaryForm::TheoremLiteral => {
            LN_2 - theorem_phi(a, params) / (2.0 * params.nu_sigma2 * params.grad_sup.powi(2))
        }
        CoboundaryForm::Proof => {
            let (at, bt, _) = params.coboundary_constants();
            let g = params.gamma_n;
            LN_2 + quadratic_branch(a, g, at, bt).min(quartic_branch(a, g, at, bt))
        }
    };
    bound.min(LN_2)
}

/// `a` such that `2 e^{−a²/2} = 1 − coverage`.
pub fn coverage_radius(coverage: f64) -> Result<f64> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::Domain(format!("coverage must lie in (0,1), got {coverage}")));
    }
    Ok((2.0 * (2.0 / (1.0 - coverage)).ln()).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalMode {
    Plain,
    Slutsky,
    Lipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
    /// `max(0, 1 − 2e^{−a²/2})`
    pub coverage: f64,
}

/// Interval around `ν_n(f)` of half-width `a s [f]_1/(α√Γ_n)`, with
/// `s = ‖σ‖_∞` (plain, Lipschitz) or `s = √ν_n(‖σ‖²)` (Slutsky).
pub fn confidence_interval(
    nu_n_f: f64,
    a: f64,
    params: &BoundParams,
    mode: IntervalMode,
    nu_n_sigma2: Option<f64>,
) -> Result<ConfidenceInterval> {
    if !(params.alpha > 0.0) {
        return Err(Error::Domain("alpha must be positive".into()));
    }
    let spread = match mode {
        IntervalMode::Plain | IntervalMode::Lipschitz => params.sigma_sup,
        IntervalMode::Slutsky => match nu_n_sigma2 {
            Some(v) if v > 0.0 => v.sqrt(),
            _ => return Err(Error::Data("Slutsky interval needs a positive ν_n(‖σ‖²)".into())),
        },
    };
    let half = a * spread * params.f_lip / (params.alpha * params.gamma_n.sqrt());
    Ok(ConfidenceInterval {
        lower: nu_n_f - half,
        upper: nu_n_f + half,
        half_width: half,
        coverage: (1.0 - 2.0 * (-a * a / 2.0).exp()).max(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub a: f64,
    pub s_n: f64,
    pub s_nc: f64,
    pub s_na: f64,
    pub p_lambda_min: f64,
    pub p_lambda_min_carre: Option<f64>,
}

impl CurveRow {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("S_n", self.s_n),
            ("S_nc", self.s_nc),
            ("S_nA", self.s_na),
            ("P_lambda_min", self.p_lambda_min),
        ];
        if let Some(c) = self.p_lambda_min_carre {
            v.push(("P_lambda_min_carre", c));
        }
        v
    }
}

/// Comparison exponents on `grid`, all evaluated at the radius `(a − a_n)₊`.
pub fn comparison_curves(grid: &[f64], params: &BoundParams, carre: bool) -> Vec<CurveRow> {
    let (at, bt, _) = params.coboundary_constants();
    let at_carre = params.nu_carre / 2.0;
    let g2 = params.grad_sup.powi(2);
    grid.iter()
        .map(|&a| {
            let r = (a - params.a_n).max(0.0);
            CurveRow {
                a,
                s_n: -r * r / (2.0 * params.sigma_sup.powi(2) * g2),
                s_nc: -r * r / (2.0 * params.nu_sigma2 * g2),
                s_na: -r * r / (2.0 * params.nu_carre),
                p_lambda_min: optimize_rho(r, params.gamma_n, at, bt).1,
                p_lambda_min_carre: carre.then(|| optimize_rho(r, params.gamma_n, at_carre, bt).1),
            }
        })
        .collect()
}

/// `−a²α²/(2[f]_1²)`.
pub fn sigma_curve(a: f64, alpha: f64, f_lip: f64) -> f64 {
    -a * a * alpha * alpha / (2.0 * f_lip * f_lip)
}
