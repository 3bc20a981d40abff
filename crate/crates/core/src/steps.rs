//! Power-law step sequences `γ_k = γ₀ k^{−θ}` and their partial sums
//! `Γ_n^{(ℓ)} = Σ_{k≤n} γ_k^ℓ`.
//!
//! Partial sums are accumulated with Neumaier compensation and cached per
//! exponent, so growing `n` costs one new term per index.

use std::collections::HashMap;
use std::sync::RwLock;

use crate::error::{Error, Result};

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Default)]
struct SumTable {
    acc: CompensatedSum,
    prefix: Vec<f64>,
}

#[derive(Debug)]
pub struct StepSequence {
    theta: f64,
    gamma0: f64,
    cache: RwLock<HashMap<u64, SumTable>>,
}

impl Clone for StepSequence {
    fn clone(&self) -> Self {
        Self { theta: self.theta, gamma0: self.gamma0, cache: RwLock::new(HashMap::new()) }
    }
}

impl StepSequence {
    pub fn new(theta: f64, gamma0: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::Domain(format!("theta must lie in (0,1], got {theta}")));
        }
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(Error::Domain(format!("gamma0 must be positive, got {gamma0}")));
        }
        Ok(Self { theta, gamma0, cache: RwLock::new(HashMap::new()) })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn gamma(&self, k: u64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("step index starts at 1".into()));
        }
        Ok(self.gamma_unchecked(k))
    }

    #[inline]
    pub(crate) fn gamma_unchecked(&self, k: u64) -> f64 {
        self.gamma0 * (k as f64).powf(-self.theta)
    }

    #[inline]
    fn term(&self, k: u64, ell: f64) -> f64 {
        self.gamma0.powf(ell) * (k as f64).powf(-self.theta * ell)
    }

    /// `Γ_n^{(ℓ)}`; returns 0 for `n = 0`.
    pub fn gamma_sum(&self, n: u64, ell: f64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let key = ell.to_bits();
        {
            let cache = self.cache.read().expect("step cache poisoned");
            if let Some(table) = cache.get(&key) {
                if let Some(v) = table.prefix.get(n as usize - 1) {
                    return *v;
                }
            }
        }
        let mut cache = self.cache.write().expect("step cache poisoned");
        let table = cache.entry(key).or_default();
        let have = table.prefix.len() as u64;
        table.prefix.reserve((n - have.min(n)) as usize);
        for k in have + 1..=n {
            table.acc.add(self.term(k, ell));
            table.prefix.push(table.acc.value());
        }
        table.prefix[n as usize - 1]
    }

    /// `Γ_n^{((3+β)/2)} / √Γ_n`.
    pub fn bias_ratio(&self, n: u64, beta: f64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Domain("n must be at least 1".into()));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Domain(format!("beta must lie in (0,1], got {beta}")));
        }
        Ok(self.gamma_sum(n, (3.0 + beta) / 2.0) / self.gamma_sum(n, 1.0).sqrt())
    }
}
