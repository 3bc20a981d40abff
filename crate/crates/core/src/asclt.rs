//! Almost-sure central limit theorem viewed as a perturbed Euler scheme.
//!
//! With `S_n = U_1 + … + U_n`, `Z_n = S_n/√n` and `γ_k = 1/k`,
//!
//! ```text
//! Z_{n+1} = Z_n − (γ_{n+1}/2) Z_n + √γ_{n+1} U_{n+1} + r_n Z_n
//! r_n     = √(1 − 1/(n+1)) − 1 + 1/(2(n+1))
//! ```
//!
//! The companion `X` drops `r_n` (Ornstein–Uhlenbeck Euler scheme on the same
//! innovations) and `Δ_n = Z_n − X_n`. The log-weighted measure
//! `ν_n^Z = Γ_n^{−1} Σ γ_k δ_{Z_{k−1}}` satisfies
//!
//! ```text
//! log P[√(log n + 1) |ν_n^Z(f)| ≥ a] ≤ log 2 − a² / (2 (2[f]_1)²)
//! ```

use rayon::prelude::*;

use crate::bounds::LN_2;
use crate::error::{Error, Result};
use crate::model::{innovation_expectation, InnovationKind, Observable, Point};
use crate::montecarlo::clopper_pearson;
use crate::scheme::trajectory_rng;
use crate::steps::CompensatedSum;

/// Kernel constant of the coupling estimate
/// `Σ γ_k |Δ_{k−1}| ≤ C̄₄ Σ_{l<n} |U_l| / l^{3/2}`.
pub const COUPLING_CONSTANT: f64 = 0.17;

/// `√(1 − 1/(n+1)) − 1 + 1/(2(n+1))`, evaluated as `−h²/(2(1+√(1−h))²)`, `h = 1/(n+1)`.
pub fn r_n(n: u64) -> f64 {
    let h = 1.0 / (n as f64 + 1.0);
    let s = 1.0 + (1.0 - h).sqrt();
    -h * h / (2.0 * s * s)
}

/// `Π_{k=1}^n 2k/(2k−1)`.
pub fn wallis_rho(n: u64) -> f64 {
    if n <= 1000 {
        (1..=n).fold(1.0, |p, k| p * (2 * k) as f64 / (2 * k - 1) as f64)
    } else {
        let mut s = CompensatedSum::new();
        for k in 1..=n {
            s.add(-(-1.0 / (2 * k) as f64).ln_1p());
        }
        s.value().exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscltRun {
    pub n: u64,
    /// `Γ_n = Σ_{k≤n} 1/k`
    pub gamma_n: f64,
    pub nu_z: Vec<f64>,
    pub nu_x: Vec<f64>,
    /// `max_k |Δ_k|`
    pub max_coupling: f64,
    /// `Σ γ_k |Δ_{k−1}|`
    pub coupling_lhs: f64,
    /// `C̄₄ Σ_{l<n} |U_l| / l^{3/2}`
    pub coupling_rhs: f64,
    /// `max_k |Z_k − S_k/√k|`
    pub recursion_error: f64,
}

impl AscltRun {
    /// `√(log n + 1) ν_n^Z(f_i)`.
    pub fn statistic(&self, i: usize) -> f64 {
        ((self.n as f64).ln() + 1.0).sqrt() * self.nu_z[i]
    }
}

pub fn simulate_asclt<const D: usize>(
    innov: InnovationKind,
    n: u64,
    seed: u64,
    index: u64,
    observables: &[Observable<D>],
) -> Result<AscltRun> {
    if n == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let mut rng = trajectory_rng(seed, index);
    let mut z = Point::<D>::zeros();
    let mut x = Point::<D>::zeros();
    let mut s = Point::<D>::zeros();
    let k_obs = observables.len();
    let mut nu_z = vec![CompensatedSum::new(); k_obs];
    let mut nu_x = vec![CompensatedSum::new(); k_obs];
    let mut weight = CompensatedSum::new();
    let mut lhs = CompensatedSum::new();
    let mut rhs = CompensatedSum::new();
    let mut max_coupling: f64 = 0.0;
    let mut recursion_error: f64 = 0.0;
    for k in 1..=n {
        let g = 1.0 / k as f64;
        weight.add(g);
        for (i, f) in observables.iter().enumerate() {
            nu_z[i].add(g * f(&z));
            nu_x[i].add(g * f(&x));
        }
        lhs.add(g * (z - x).norm());
        let u: Point<D> = innov.sample(&mut rng);
        if k < n {
            rhs.add(u.norm() / (k as f64).powf(1.5));
        }
        let sg = g.sqrt();
        z = z * (1.0 - 0.5 * g + r_n(k - 1)) + u * sg;
        x = x * (1.0 - 0.5 * g) + u * sg;
        s += u;
        recursion_error = recursion_error.max((z - s / (k as f64).sqrt()).amax());
        max_coupling = max_coupling.max((z - x).norm());
    }
    let w = weight.value();
    Ok(AscltRun {
        n,
        gamma_n: w,
        nu_z: nu_z.iter().map(|v| v.value() / w).collect(),
        nu_x: nu_x.iter().map(|v| v.value() / w).collect(),
        max_coupling,
        coupling_lhs: lhs.value(),
        coupling_rhs: COUPLING_CONSTANT * rhs.value(),
        recursion_error,
    })
}

/// `log 2 − a²/(2(2[f]_1)²)`.
pub fn asclt_log_bound(a: f64, f_lip: f64) -> f64 {
    LN_2 - a * a / (8.0 * f_lip * f_lip)
}

/// `E[f(G)]` for a standard Gaussian `G` in `R^D` by Gauss–Hermite.
pub fn gaussian_mean<const D: usize>(f: &Observable<D>, nodes: usize) -> Result<f64> {
    innovation_expectation::<D>(InnovationKind::Gaussian, nodes, |u| f(u))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscltTailRow {
    pub a: f64,
    pub hits: u64,
    pub log_tail: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub bound: f64,
}

/// Empirical tail of `√(log n + 1)|ν_n^Z(f − G(f))|` over `runs` independent runs.
pub fn asclt_tail<const D: usize>(
    innov: InnovationKind,
    n: u64,
    runs: u64,
    seed: u64,
    f: Observable<D>,
    f_lip: f64,
    grid: &[f64],
) -> Result<Vec<AscltTailRow>> {
    let centre = gaussian_mean(&f, 40)?;
    let centred: Observable<D> = {
        let f = f.clone();
        std::sync::Arc::new(move |x: &Point<D>| f(x) - centre)
    };
    let obs = [centred];
    let hits = (0..runs)
        .into_par_iter()
        .map(|i| simulate_asclt(innov, n, seed, i, &obs).map(|r| r.statistic(0).abs()))
        .try_fold(
            || vec![0u64; grid.len()],
            |mut acc, v| {
                let v = v?;
                for (h, a) in acc.iter_mut().zip(grid) {
                    if v >= *a {
                        *h += 1;
                    }
                }
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(|| vec![0u64; grid.len()], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
    Ok(grid
        .iter()
        .zip(&hits)
        .map(|(&a, &h)| {
            let (lo, hi) = clopper_pearson(h, runs);
            AscltTailRow {
                a,
                hits: h,
                log_tail: (h as f64 / runs as f64).ln(),
                ci_lo: lo.ln(),
                ci_hi: hi.ln(),
                bound: asclt_log_bound(a, f_lip),
            }
        })
        .collect())
}
