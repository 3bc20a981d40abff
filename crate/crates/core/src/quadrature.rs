//! Gauss–Legendre, Gauss–Hermite and midpoint rules.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..m {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = m as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes and weights for `E[g(Z)]`, `Z ~ N(0,1)`: `Σ w_i g(x_i)` with `Σ w_i = 1`.
pub fn gauss_hermite_normal(m: usize) -> (Vec<f64>, Vec<f64>) {
    // physicists' rule for weight exp(−x²), rescaled
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let pim4 = PI.powf(-0.25);
    let mut z = 0.0f64;
    for i in 0..(m + 1) / 2 {
        z = match i {
            0 => (2.0 * m as f64 + 1.0).sqrt() - 1.85575 * (2.0 * m as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (m as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..m {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
            }
            pp = (2.0 * m as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[m - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[m - 1 - i] = w[i];
    }
    let s = PI.sqrt();
    let nodes = x.iter().rev().map(|v| v * 2f64.sqrt()).collect();
    let weights = w.iter().rev().map(|v| v / s).collect();
    (nodes, weights)
}

/// Midpoint quantization of Unif[0,1]: nodes `(2i−1)/(2M)`.
pub fn midpoints(m: usize) -> Vec<f64> {
    (1..=m).map(|i| (2 * i - 1) as f64 / (2 * m) as f64).collect()
}
