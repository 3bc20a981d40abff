//! Monte Carlo deviation curves `g_{n,θ}(a) = log P[|statistic| ≥ a]`.
//!
//! Each trajectory contributes one statistic; only hit counters are kept.
//! Counters are integers, so the parallel merge is exact and the table is
//! independent of the number of workers.

use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::bias::BiasConfig;
use crate::error::{Error, Result};
use crate::model::{ModelSetup, Observable};
use crate::scheme::{run_trajectory, TrajectoryConfig};
use crate::steps::StepSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatisticMode {
    /// `√Γ_n ν_n(Aφ)`
    Unbiased,
    /// `√Γ_n ν_n(Aφ) + (B_{n,1} − E_n^1)`, or `+ B_{n,1}` when `full`.
    Biased { full: bool, quadrature_nodes: usize },
    /// `√Γ_n (ν_n(f) − ν_ref) / √ν_n(‖σ‖²)`
    Slutsky { nu_ref: f64 },
}

impl StatisticMode {
    pub fn label(&self) -> String {
        match self {
            Self::Unbiased => "unbiased".into(),
            Self::Biased { full: false, quadrature_nodes } => format!("biased(M={quadrature_nodes})"),
            Self::Biased { full: true, quadrature_nodes } => format!("biased-full(M={quadrature_nodes})"),
            Self::Slutsky { nu_ref } => format!("slutsky(nu_ref={nu_ref})"),
        }
    }
}

/// `θ_j = 1/3 + (2/3) j/5`, `j = 1..5`.
pub fn theta_grid() -> Vec<f64> {
    (1..=5).map(|j| 1.0 / 3.0 + (2.0 / 3.0) * j as f64 / 5.0).collect()
}

/// Two-sided 95% Clopper–Pearson band for `k` successes out of `n`.
pub fn clopper_pearson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(k as f64, (n - k + 1) as f64).map(|b| b.inverse_cdf(0.025)).unwrap_or(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new((k + 1) as f64, (n - k) as f64).map(|b| b.inverse_cdf(0.975)).unwrap_or(1.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailEstimate {
    pub theta: f64,
    pub mc: u64,
    pub grid: Vec<f64>,
    pub hits: Vec<u64>,
}

impl TailEstimate {
    pub fn probability(&self, i: usize) -> f64 {
        self.hits[i] as f64 / self.mc as f64
    }

    /// `log` of the empirical probability, `−∞` without hits.
    pub fn log_probability(&self, i: usize) -> f64 {
        self.probability(i).ln()
    }

    /// Clopper–Pearson band on the probability scale.
    pub fn band(&self, i: usize) -> (f64, f64) {
        clopper_pearson(self.hits[i], self.mc)
    }
}

pub struct DeviationExperiment<'a, const D: usize> {
    pub setup: &'a ModelSetup<D>,
    pub thetas: Vec<f64>,
    pub gamma0: f64,
    pub n: u64,
    pub mc: u64,
    pub grid: Vec<f64>,
    pub mode: StatisticMode,
    pub seed: u64,
}

/// Master seed used for the `j`-th step exponent.
pub fn theta_seed(seed: u64, j: usize) -> u64 {
    seed.wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn statistic<const D: usize>(
    cfg: &TrajectoryConfig<'_, D>,
    mode: StatisticMode,
    n: u64,
    seed: u64,
    index: u64,
) -> Result<f64> {
    let s = run_trajectory(cfg, n, seed, index)?;
    let root = s.gamma_n.sqrt();
    match mode {
        StatisticMode::Unbiased => s
            .scaled_generator()
            .ok_or_else(|| Error::Config("this statistic needs a test function".into())),
        StatisticMode::Biased { full, .. } => {
            let g = s
                .scaled_generator()
                .ok_or_else(|| Error::Config("this statistic needs a test function".into()))?;
            let b = s.bias.expect("bias configured");
            Ok(g + if full { b.full() } else { b.without_e() })
        }
        StatisticMode::Slutsky { nu_ref } => {
            if !(s.nu_sigma2 > 0.0) {
                return Err(Error::Data("ν_n(‖σ‖²) vanished along a trajectory".into()));
            }
            Ok(root * (s.nu[0] - nu_ref) / s.nu_sigma2.sqrt())
        }
    }
}

pub fn run_deviation_curve<const D: usize>(exp: &DeviationExperiment<'_, D>) -> Result<Vec<TailEstimate>> {
    if exp.mc == 0 {
        return Err(Error::Config("at least one Monte Carlo trajectory is needed".into()));
    }
    if exp.grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("the a-grid must be strictly increasing".into()));
    }
    let phi = exp.setup.phi.as_deref();
    let observables: Vec<Observable<D>> = match exp.mode {
        StatisticMode::Slutsky { .. } => vec![exp
            .setup
            .source
            .clone()
            .ok_or_else(|| Error::Config("Slutsky statistic needs a source function".into()))?],
        _ => {
            if phi.is_none() {
                return Err(Error::Config(format!("model '{}' has no test function", exp.setup.name)));
            }
            Vec::new()
        }
    };
    let bias = match exp.mode {
        StatisticMode::Biased { quadrature_nodes, .. } => {
            Some(BiasConfig { quadrature_nodes, ..Default::default() })
        }
        _ => None,
    };
    let mut out = Vec::with_capacity(exp.thetas.len());
    for (j, &theta) in exp.thetas.iter().enumerate() {
        let steps = StepSequence::new(theta, exp.gamma0)?;
        let cfg = TrajectoryConfig {
            diffusion: exp.setup.diffusion.as_ref(),
            phi,
            steps: &steps,
            innovation: exp.setup.innovation,
            initial: &exp.setup.initial,
            observables: &observables,
            bias: bias.clone(),
        };
        let seed = theta_seed(exp.seed, j);
        let grid = &exp.grid;
        let hits = (0..exp.mc)
            .into_par_iter()
            .map(|i| statistic(&cfg, exp.mode, exp.n, seed, i))
            .try_fold(
                || vec![0u64; grid.len()],
                |mut acc, v| {
                    let v = v?.abs();
                    for (h, a) in acc.iter_mut().zip(grid) {
                        if v >= *a {
                            *h += 1;
                        }
                    }
                    Ok::<_, Error>(acc)
                },
            )
            .try_reduce(|| vec![0u64; grid.len()], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
        out.push(TailEstimate { theta, mc: exp.mc, grid: grid.clone(), hits });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEstimate {
    /// replicate mean of `ν_{n_c}(f)`
    pub value: f64,
    /// 95% normal half-width across replicates
    pub ci_half_width: f64,
    pub nu_sigma2: f64,
    pub nu_carre: Option<f64>,
    pub replicates: u64,
    pub n_c: u64,
    pub theta_c: f64,
    pub seed: u64,
}

fn mean_and_half_width(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Replicate-averaged ergodic estimates of `ν(f)`, `ν(‖σ‖²)` and, with a test
/// function, `ν(|σ*∇φ|²)`. `f` defaults to the model's source.
#[allow(clippy::too_many_arguments)]
pub fn estimate_reference<const D: usize>(
    setup: &ModelSetup<D>,
    f: Option<Observable<D>>,
    gamma0: f64,
    n_c: u64,
    theta_c: f64,
    seed: u64,
    replicates: u64,
) -> Result<ReferenceEstimate> {
    if replicates == 0 {
        return Err(Error::Config("at least one replicate is needed".into()));
    }
    let steps = StepSequence::new(theta_c, gamma0)?;
    let observables: Vec<Observable<D>> = f.or_else(|| setup.source.clone()).into_iter().collect();
    let cfg = TrajectoryConfig {
        diffusion: setup.diffusion.as_ref(),
        phi: setup.phi.as_deref(),
        steps: &steps,
        innovation: setup.innovation,
        initial: &setup.initial,
        observables: &observables,
        bias: None,
    };
    let runs: Vec<_> = (0..replicates)
        .into_par_iter()
        .map(|i| run_trajectory(&cfg, n_c, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = runs.iter().map(|r| r.nu.first().copied().unwrap_or(f64::NAN)).collect();
    let (value, ci) = mean_and_half_width(&values);
    let sig: Vec<f64> = runs.iter().map(|r| r.nu_sigma2).collect();
    let carre: Option<Vec<f64>> = runs.iter().map(|r| r.nu_carre).collect();
    Ok(ReferenceEstimate {
        value,
        ci_half_width: ci,
        nu_sigma2: mean_and_half_width(&sig).0,
        nu_carre: carre.map(|c| mean_and_half_width(&c).0),
        replicates,
        n_c,
        theta_c,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{registry_get, Point, RegistryModel, RegistryParams};
    use std::sync::Arc;

    fn one_d(name: &str) -> ModelSetup<1> {
        match registry_get(name, &RegistryParams::default()).unwrap() {
            RegistryModel::OneD(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn theta_grid_values() {
        let g = theta_grid();
        assert_eq!(g.len(), 5);
        assert!((g[0] - (1.0 / 3.0 + 2.0 / 15.0)).abs() < 1e-15);
        assert!((g[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clopper_pearson_properties() {
        let (lo, hi) = clopper_pearson(5000, 10_000);
        assert!((hi - lo) / 2.0 <= 0.016, "{lo} {hi}");
        assert!(lo < 0.5 && hi > 0.5);
        assert_eq!(clopper_pearson(0, 100).0, 0.0);
        assert_eq!(clopper_pearson(100, 100).1, 1.0);
        // exact binomial tail check at the lower limit
        let (lo, _) = clopper_pearson(3, 20);
        let tail: f64 = (3..=20)
            .map(|j| {
                let c = statrs::function::factorial::binomial(20, j);
                c * lo.powi(j as i32) * (1.0 - lo).powi(20 - j as i32)
            })
            .sum();
        assert!((tail - 0.025).abs() < 1e-8);
    }

    #[test]
    fn tail_counts_and_determinism() {
        let setup = one_d("hypo1d-drifted");
        let exp = DeviationExperiment {
            setup: &setup,
            thetas: vec![0.6, 0.8],
            gamma0: 1.0,
            n: 500,
            mc: 300,
            grid: vec![0.0, 0.25, 0.5, 1.0, 2.0, 50.0],
            mode: StatisticMode::Unbiased,
            seed: 17,
        };
        let a = run_deviation_curve(&exp).unwrap();
        for t in &a {
            assert_eq!(t.log_probability(0), 0.0);
            assert!(t.hits.windows(2).all(|w| w[0] >= w[1]));
            assert_eq!(t.log_probability(5), f64::NEG_INFINITY);
        }
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = one.install(|| run_deviation_curve(&exp).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_grids() {
        let setup = one_d("hypo1d-cos");
        let exp = DeviationExperiment {
            setup: &setup,
            thetas: vec![0.5],
            gamma0: 1.0,
            n: 10,
            mc: 10,
            grid: vec![1.0, 1.0],
            mode: StatisticMode::Unbiased,
            seed: 1,
        };
        assert!(run_deviation_curve(&exp).is_err());
    }

    #[test]
    fn constant_reference_is_exact() {
        let setup = one_d("ou1d");
        for c in [0.5, -2.0, 4.0] {
            let f: Observable<1> = Arc::new(move |_x: &Point<1>| c);
            let r = estimate_reference(&setup, Some(f), 1.0, 1000, 0.5, 3, 8).unwrap();
            assert_eq!(r.value, c);
        }
    }

    #[test]
    fn ou_second_moment_reference() {
        let setup = one_d("ou1d");
        let r = estimate_reference(&setup, None, 1.0, 100_000, 0.5, 5, 100).unwrap();
        assert!((r.value - 1.0).abs() < 0.02, "{}", r.value);
        assert_eq!(r.nu_sigma2, 1.0);
    }
}
