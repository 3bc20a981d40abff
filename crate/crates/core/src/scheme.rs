//! Decreasing-step Euler scheme
//!
//! ```text
//! X_{n+1} = X_n + γ_{n+1} b(X_n) + √γ_{n+1} σ(X_n) U_{n+1}
//! ν_n(f)  = (1/Γ_n) Σ_{k=1}^n γ_k f(X_{k−1})
//! ```
//!
//! Weighted sums are accumulated online, so memory per trajectory does not
//! depend on the horizon. Randomness comes from a ChaCha stream selected by
//! the trajectory index, which makes results independent of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bias::{BiasAccumulator, BiasConfig, BiasTotals};
use crate::error::{Error, Result};
use crate::model::{
    generator_apply, Diffusion, InitialCondition, InnovationKind, Observable, Point, TestFunction,
};
use crate::steps::{CompensatedSum, StepSequence};

/// Generator for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone)]
pub struct SchemeState<const D: usize> {
    pub n: u64,
    pub x: Point<D>,
    pub rng: ChaCha8Rng,
    pub gamma_sum_running: CompensatedSum,
}

/// What one step consumed: the pre-step point, the step and the innovation.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<const D: usize> {
    pub x_prev: Point<D>,
    pub gamma: f64,
    pub u: Point<D>,
}

impl<const D: usize> SchemeState<D> {
    pub fn new(x0: Point<D>, rng: ChaCha8Rng) -> Self {
        Self { n: 0, x: x0, rng, gamma_sum_running: CompensatedSum::new() }
    }

    pub fn gamma_sum(&self) -> f64 {
        self.gamma_sum_running.value()
    }

    pub fn step(
        &mut self,
        model: &dyn Diffusion<D>,
        steps: &StepSequence,
        innov: InnovationKind,
    ) -> Result<StepRecord<D>> {
        let gamma = steps.gamma_unchecked(self.n + 1);
        let u: Point<D> = innov.sample(&mut self.rng);
        let x_prev = self.x;
        let next = x_prev + model.drift(&x_prev) * gamma + model.sigma(&x_prev) * u * gamma.sqrt();
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Simulation {
                step: self.n + 1,
                reason: "state left the finite range".into(),
            });
        }
        self.x = next;
        self.n += 1;
        self.gamma_sum_running.add(gamma);
        Ok(StepRecord { x_prev, gamma, u })
    }
}

/// Running `Σ γ_k f_i(X_{k−1})` for a list of observables.
#[derive(Debug, Clone)]
pub struct EmpiricalAccumulator {
    sums: Vec<CompensatedSum>,
    weight: CompensatedSum,
}

impl EmpiricalAccumulator {
    pub fn new(count: usize) -> Self {
        Self { sums: vec![CompensatedSum::new(); count], weight: CompensatedSum::new() }
    }

    pub fn add(&mut self, gamma: f64, values: &[f64]) {
        self.weight.add(gamma);
        for (s, v) in self.sums.iter_mut().zip(values) {
            s.add(gamma * v);
        }
    }

    pub fn gamma_sum(&self) -> f64 {
        self.weight.value()
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sums[i].value() / self.weight.value()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.sums.len()).map(|i| self.mean(i)).collect()
    }
}

pub struct TrajectoryConfig<'a, const D: usize> {
    pub diffusion: &'a dyn Diffusion<D>,
    pub phi: Option<&'a dyn TestFunction<D>>,
    pub steps: &'a StepSequence,
    pub innovation: InnovationKind,
    pub initial: &'a InitialCondition<D>,
    pub observables: &'a [Observable<D>],
    pub bias: Option<BiasConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary<const D: usize> {
    pub n: u64,
    pub gamma_n: f64,
    /// `ν_n(f)` for each requested observable, in order.
    pub nu: Vec<f64>,
    /// `ν_n(Aφ)` when a test function is present.
    pub nu_generator: Option<f64>,
    /// `ν_n(‖σ‖²)`.
    pub nu_sigma2: f64,
    /// `ν_n(|σ*∇φ|²)` when a test function is present.
    pub nu_carre: Option<f64>,
    pub final_x: Point<D>,
    pub bias: Option<BiasTotals>,
}

impl<const D: usize> TrajectorySummary<D> {
    /// `√Γ_n ν_n(Aφ)`.
    pub fn scaled_generator(&self) -> Option<f64> {
        self.nu_generator.map(|v| self.gamma_n.sqrt() * v)
    }
}

/// Runs `n` steps of trajectory `index` under `seed`.
pub fn run_trajectory<const D: usize>(
    cfg: &TrajectoryConfig<'_, D>,
    n: u64,
    seed: u64,
    index: u64,
) -> Result<TrajectorySummary<D>> {
    if n == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    let mut rng = trajectory_rng(seed, index);
    let x0 = cfg.initial.draw(&mut rng);
    let mut state = SchemeState::new(x0, rng);
    let extra = if cfg.phi.is_some() { 3 } else { 1 };
    let nobs = cfg.observables.len();
    let mut acc = EmpiricalAccumulator::new(nobs + extra);
    let mut bias = match (&cfg.bias, cfg.phi) {
        (Some(b), Some(_)) => Some(BiasAccumulator::new(b.clone())?),
        (Some(_), None) => {
            return Err(Error::Config("bias correction needs a test function".into()));
        }
        _ => None,
    };
    let mut values = vec![0.0; nobs + extra];
    for _ in 0..n {
        let rec = state.step(cfg.diffusion, cfg.steps, cfg.innovation)?;
        let x = &rec.x_prev;
        for (slot, f) in values.iter_mut().zip(cfg.observables) {
            *slot = f(x);
        }
        let sigma = cfg.diffusion.sigma(x);
        values[nobs] = sigma.norm_squared();
        if let Some(phi) = cfg.phi {
            values[nobs + 1] = generator_apply(cfg.diffusion, phi, x);
            values[nobs + 2] = (sigma.transpose() * phi.gradient(x)).norm_squared();
            if let Some(b) = bias.as_mut() {
                b.observe(cfg.diffusion, phi, x, rec.gamma, cfg.innovation)?;
            }
        }
        acc.add(rec.gamma, &values);
    }
    let means = acc.means();
    Ok(TrajectorySummary {
        n,
        gamma_n: acc.gamma_sum(),
        nu: means[..nobs].to_vec(),
        nu_sigma2: means[nobs],
        nu_generator: cfg.phi.map(|_| means[nobs + 1]),
        nu_carre: cfg.phi.map(|_| means[nobs + 2]),
        final_x: state.x,
        bias: bias.map(|b| b.totals()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    /// Empirical `E[exp(λV(X_k))]`, `k = 0..=n`, over trajectories that stayed finite.
    pub means: Vec<f64>,
    /// Running mean exceeded twice its maximum over the first tenth of the horizon.
    pub growth_flagged: bool,
    /// First step at which some trajectory overflowed, if any.
    pub overflow_step: Option<u64>,
}

const LYAPUNOV_CHUNK: u64 = 32;

#[allow(clippy::too_many_arguments)]
pub fn lyapunov_diagnostic<const D: usize>(
    model: &dyn Diffusion<D>,
    steps: &StepSequence,
    innov: InnovationKind,
    initial: &InitialCondition<D>,
    v: &dyn TestFunction<D>,
    lambda: f64,
    n: u64,
    trajectories: u64,
    seed: u64,
) -> LyapunovReport {
    let len = n as usize + 1;
    let chunks: Vec<u64> = (0..trajectories.div_ceil(LYAPUNOV_CHUNK)).collect();
    let partial: Vec<(Vec<f64>, Option<u64>, u64)> = chunks
        .par_iter()
        .map(|&c| {
            let mut sums = vec![0.0; len];
            let mut overflow: Option<u64> = None;
            let mut failed = 0u64;
            let lo = c * LYAPUNOV_CHUNK;
            let hi = (lo + LYAPUNOV_CHUNK).min(trajectories);
            for index in lo..hi {
                let mut rng = trajectory_rng(seed, index);
                let x0 = initial.draw(&mut rng);
                let mut state = SchemeState::new(x0, rng);
                let mut local = vec![0.0; len];
                let mut failed_at = None;
                local[0] = (lambda * v.value(&state.x)).exp();
                for k in 1..=n {
                    let ok = state.step(model, steps, innov).is_ok();
                    let e = (lambda * v.value(&state.x)).exp();
                    if !ok || !e.is_finite() {
                        failed_at = Some(k);
                        break;
                    }
                    local[k as usize] = e;
                }
                match failed_at {
                    Some(k) => {
                        overflow = Some(overflow.map_or(k, |o| o.min(k)));
                        failed += 1;
                    }
                    None => sums.iter_mut().zip(&local).for_each(|(s, l)| *s += l),
                }
            }
            (sums, overflow, failed)
        })
        .collect();
    let mut total = vec![0.0; len];
    let mut overflow_step = None;
    let mut failures = 0u64;
    for (s, o, f) in &partial {
        total.iter_mut().zip(s).for_each(|(t, v)| *t += v);
        if let Some(k) = o {
            overflow_step = Some(overflow_step.map_or(*k, |p: u64| p.min(*k)));
        }
        failures += f;
    }
    let denom = trajectories.saturating_sub(failures).max(1) as f64;
    let means: Vec<f64> = total.iter().map(|t| t / denom).collect();
    let head = (len / 10).max(1);
    let early = means[..head].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let late = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    LyapunovReport { growth_flagged: overflow_step.is_some() || late > 2.0 * early, means, overflow_step }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        registry_get, HalfMeanReverting, LinearDiffusion, Mat, Quadratic, RegistryModel, RegistryParams,
        ScalarSigma,
    };
    use std::sync::Arc;

    fn ou() -> HalfMeanReverting {
        HalfMeanReverting { sigma: ScalarSigma::Unit }
    }

    #[test]
    fn deterministic_euler_step() {
        let m = LinearDiffusion { drift: Mat::<1>::new(-0.5), sigma: Mat::<1>::zeros() };
        let steps = StepSequence::new(1.0, 1.0).unwrap();
        let mut s = SchemeState::new(Point::<1>::new(2.0), trajectory_rng(1, 0));
        s.step(&m, &steps, InnovationKind::Gaussian).unwrap();
        assert_eq!(s.x[0], 1.0);
    }

    #[test]
    fn pure_innovation_step() {
        let m = LinearDiffusion { drift: Mat::<1>::zeros(), sigma: Mat::<1>::new(1.0) };
        let steps = StepSequence::new(1.0, 1.0).unwrap();
        for seed in 0..20 {
            let mut s = SchemeState::new(Point::<1>::zeros(), trajectory_rng(seed, 3));
            s.step(&m, &steps, InnovationKind::Rademacher).unwrap();
            assert!(s.x[0] == 1.0 || s.x[0] == -1.0);
        }
    }

    #[test]
    fn overflow_is_a_simulation_error() {
        let m = LinearDiffusion { drift: Mat::<1>::new(1e200), sigma: Mat::<1>::zeros() };
        let steps = StepSequence::new(1.0, 1.0).unwrap();
        let mut s = SchemeState::new(Point::<1>::new(1e200), trajectory_rng(1, 0));
        let err = s.step(&m, &steps, InnovationKind::Gaussian).unwrap_err();
        assert!(matches!(err, Error::Simulation { step: 1, .. }));
    }

    #[test]
    fn single_step_measure_is_dirac_at_start() {
        let m = ou();
        let steps = StepSequence::new(0.5, 1.0).unwrap();
        let obs: Vec<Observable<1>> = vec![Arc::new(|x: &Point<1>| x[0].exp())];
        let init = InitialCondition::Fixed(Point::<1>::new(0.3));
        let cfg = TrajectoryConfig {
            diffusion: &m,
            phi: None,
            steps: &steps,
            innovation: InnovationKind::Gaussian,
            initial: &init,
            observables: &obs,
            bias: None,
        };
        let s = run_trajectory(&cfg, 1, 5, 0).unwrap();
        assert_eq!(s.nu[0], 0.3f64.exp());
    }

    #[test]
    fn running_gamma_matches_step_sums_and_unit_mass() {
        let m = ou();
        let steps = StepSequence::new(0.45, 0.7).unwrap();
        let obs: Vec<Observable<1>> = vec![Arc::new(|_x: &Point<1>| 1.0)];
        let init = InitialCondition::Fixed(Point::<1>::zeros());
        let cfg = TrajectoryConfig {
            diffusion: &m,
            phi: None,
            steps: &steps,
            innovation: InnovationKind::Gaussian,
            initial: &init,
            observables: &obs,
            bias: None,
        };
        for n in [1u64, 10, 1000, 50_000] {
            let s = run_trajectory(&cfg, n, 9, 1).unwrap();
            let exact = steps.gamma_sum(n, 1.0);
            assert!(((s.gamma_n - exact) / exact).abs() <= 1e-14);
            assert_eq!(s.nu[0], 1.0);
        }
    }

    #[test]
    fn linearity_of_weighted_measure() {
        let m = ou();
        let steps = StepSequence::new(0.5, 1.0).unwrap();
        let alpha = -2.7;
        let obs: Vec<Observable<1>> = vec![
            Arc::new(|x: &Point<1>| x[0].sin()),
            Arc::new(|x: &Point<1>| x[0] * x[0]),
            Arc::new(move |x: &Point<1>| alpha * x[0].sin() + x[0] * x[0]),
        ];
        let init = InitialCondition::Fixed(Point::<1>::zeros());
        let cfg = TrajectoryConfig {
            diffusion: &m,
            phi: None,
            steps: &steps,
            innovation: InnovationKind::Gaussian,
            initial: &init,
            observables: &obs,
            bias: None,
        };
        let s = run_trajectory(&cfg, 20_000, 3, 0).unwrap();
        assert!((s.nu[2] - (alpha * s.nu[0] + s.nu[1])).abs() < 1e-12);
    }

    #[test]
    fn hypo_cos_statistic_envelope_and_determinism() {
        let RegistryModel::OneD(setup) = registry_get("hypo1d-cos", &RegistryParams::default()).unwrap() else {
            panic!()
        };
        let steps = StepSequence::new(1.0 / 3.0, 1.0).unwrap();
        let cfg = TrajectoryConfig {
            diffusion: setup.diffusion.as_ref(),
            phi: setup.phi.as_deref(),
            steps: &steps,
            innovation: setup.innovation,
            initial: &setup.initial,
            observables: &[],
            bias: None,
        };
        for index in 0..20 {
            let a = run_trajectory(&cfg, 10_000, 11, index).unwrap();
            let v = a.scaled_generator().unwrap();
            assert!(v.is_finite() && v.abs() < 10.0);
            let b = run_trajectory(&cfg, 10_000, 11, index).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lyapunov_zero_lambda_is_constant() {
        let v = Quadratic { q: Mat::<1>::new(2.0), c: Point::<1>::zeros() };
        let steps = StepSequence::new(0.5, 1.0).unwrap();
        let r = lyapunov_diagnostic(
            &ou(),
            &steps,
            InnovationKind::Gaussian,
            &InitialCondition::Fixed(Point::<1>::zeros()),
            &v,
            0.0,
            200,
            50,
            1,
        );
        assert!(r.means.iter().all(|m| *m == 1.0));
        assert!(!r.growth_flagged);
    }

    #[test]
    fn lyapunov_bounded_for_mean_reverting_model() {
        // V = 1 + x², the constant only rescales by e^λ
        let v = Quadratic { q: Mat::<1>::new(2.0), c: Point::<1>::zeros() };
        let steps = StepSequence::new(0.5, 1.0).unwrap();
        let r = lyapunov_diagnostic(
            &ou(),
            &steps,
            InnovationKind::Gaussian,
            &InitialCondition::Fixed(Point::<1>::zeros()),
            &v,
            0.05,
            10_000,
            1000,
            4,
        );
        assert!(!r.growth_flagged, "{:?}", r.means.iter().copied().fold(0.0, f64::max));
        assert!(r.overflow_step.is_none());
        assert!(r.means.iter().all(|m| *m < 1.2));
    }

    #[test]
    fn lyapunov_flags_explosive_drift() {
        let m = LinearDiffusion { drift: Mat::<1>::new(0.5), sigma: Mat::<1>::zeros() };
        let v = Quadratic { q: Mat::<1>::new(2.0), c: Point::<1>::zeros() };
        let steps = StepSequence::new(0.5, 1.0).unwrap();
        let r = lyapunov_diagnostic(
            &m,
            &steps,
            InnovationKind::Gaussian,
            &InitialCondition::Fixed(Point::<1>::new(1.0)),
            &v,
            0.05,
            2000,
            4,
            0,
        );
        assert!(r.growth_flagged);
    }
}
