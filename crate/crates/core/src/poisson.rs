//! Gradient bounds for the Poisson equation and mollified sources.
//!
//! The confluence form at `x` in unit direction `ξ` is
//!
//! ```text
//! Q_p(x,ξ) = ⟨½(Db + Db*) ξ, ξ⟩ + ½ Σ_j ((p−2) ⟨Dσ_{·j} ξ, ξ⟩² + |Dσ_{·j} ξ|²)
//! ```
//!
//! and `α = −sup Q_p` over a sampled box and sphere, best over `p`. Then
//! `‖∇φ‖_∞ ≤ [f]_1/α`.
//!
//! Mollification uses `η(u) ∝ exp(−1/(1−|u|²))` on the unit ball and
//! `f_δ(x) = ∫ f(x − δu) η(u) du`.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Diffusion, Mat, Observable, Point};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfluenceOptions {
    pub p_values: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    /// grid points per axis
    pub resolution: usize,
    /// sampled directions on the sphere
    pub xi_samples: usize,
    /// include the `Dσ` terms; off gives the drift part alone.
    pub include_diffusion: bool,
}

impl Default for ConfluenceOptions {
    fn default() -> Self {
        Self {
            p_values: vec![1.0, 1.5, 2.0 - 1e-6],
            lower: -10.0,
            upper: 10.0,
            resolution: 200,
            xi_samples: 720,
            include_diffusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfluenceEstimate {
    pub alpha: f64,
    pub p_exponent: f64,
    pub witness_x: Vec<f64>,
    pub witness_xi: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub resolution: usize,
    pub xi_samples: usize,
}

/// Unit directions: `±1` in 1-d, half-circle angles in 2-d, Fibonacci sphere in 3-d.
pub fn sphere_directions<const D: usize>(count: usize) -> Result<Vec<Point<D>>> {
    let count = count.max(1);
    match D {
        1 => Ok(vec![Point::<D>::from_element(1.0)]),
        2 => Ok((0..count)
            .map(|k| {
                let t = std::f64::consts::PI * k as f64 / count as f64;
                Point::<D>::from_fn(|i, _| if i == 0 { t.cos() } else { t.sin() })
            })
            .collect()),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            Ok((0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    let c = [r * t.cos(), r * t.sin(), z];
                    Point::<D>::from_fn(|i, _| c[i])
                })
                .collect())
        }
        _ => Err(Error::Config(format!("direction sampling supports d <= 3, got {D}"))),
    }
}

/// `Q_p(x, ξ)` for unit `ξ`.
pub fn confluence_form<const D: usize>(
    sym_db: &Mat<D>,
    dsig: &[Mat<D>],
    p: f64,
    xi: &Point<D>,
) -> f64 {
    let mut v = (xi.transpose() * sym_db * xi)[(0, 0)];
    let mut s = 0.0;
    for m in dsig {
        let w = m * xi;
        let inner = xi.dot(&w);
        s += (p - 2.0) * inner * inner + w.norm_squared();
    }
    v += 0.5 * s;
    v
}

#[derive(Debug, Clone, Copy)]
struct Best {
    value: f64,
    cell: usize,
    dir: usize,
}

fn better(a: Best, b: Best) -> Best {
    if b.value > a.value || (b.value == a.value && (b.cell, b.dir) < (a.cell, a.dir)) {
        b
    } else {
        a
    }
}

pub fn confluence_alpha<const D: usize>(
    model: &dyn Diffusion<D>,
    opts: &ConfluenceOptions,
) -> Result<ConfluenceEstimate> {
    if opts.p_values.is_empty() || opts.p_values.iter().any(|p| !(1.0..2.0).contains(p)) {
        return Err(Error::Domain("p exponents must lie in [1,2)".into()));
    }
    if opts.resolution < 2 || !(opts.upper > opts.lower) {
        return Err(Error::Config("grid needs at least two points per axis and a nonempty box".into()));
    }
    let dirs = sphere_directions::<D>(opts.xi_samples)?;
    let r = opts.resolution;
    let cells = r.pow(D as u32);
    let h = (opts.upper - opts.lower) / (r - 1) as f64;
    let point = |cell: usize| {
        let mut rem = cell;
        Point::<D>::from_fn(|_, _| {
            let i = rem % r;
            rem /= r;
            opts.lower + h * i as f64
        })
    };
    let np = opts.p_values.len();
    let init = vec![Best { value: f64::NEG_INFINITY, cell: usize::MAX, dir: usize::MAX }; np];
    let best = (0..cells)
        .into_par_iter()
        .fold(
            || init.clone(),
            |mut acc, cell| {
                let x = point(cell);
                let db = model.drift_jacobian(&x);
                let sym = (db + db.transpose()) * 0.5;
                let dsig: Vec<Mat<D>> = if opts.include_diffusion {
                    (0..D).map(|j| model.sigma_column_jacobian(&x, j)).collect()
                } else {
                    Vec::new()
                };
                for (k, &p) in opts.p_values.iter().enumerate() {
                    for (d, xi) in dirs.iter().enumerate() {
                        let v = confluence_form(&sym, &dsig, p, xi);
                        acc[k] = better(acc[k], Best { value: v, cell, dir: d });
                    }
                }
                acc
            },
        )
        .reduce(|| init.clone(), |a, b| a.into_iter().zip(b).map(|(x, y)| better(x, y)).collect());
    let (k, chosen) = best
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .map(|(k, b)| (k, *b))
        .expect("at least one exponent");
    let wx: Vec<f64> = point(chosen.cell).iter().copied().collect();
    let wxi: Vec<f64> = dirs[chosen.dir].iter().copied().collect();
    if chosen.value >= 0.0 {
        return Err(Error::Domain(format!(
            "confluence fails: form reaches {} at x = {:?}, xi = {:?}",
            chosen.value, wx, wxi
        )));
    }
    Ok(ConfluenceEstimate {
        alpha: -chosen.value,
        p_exponent: opts.p_values[k],
        witness_x: wx,
        witness_xi: wxi,
        lower: opts.lower,
        upper: opts.upper,
        resolution: opts.resolution,
        xi_samples: opts.xi_samples,
    })
}

/// `ρ (κ/σ̲)^{−1/2}` for `d ≥ 2`, `ρ` for `d = 1`.
pub fn bakry_emery_alpha(rho: f64, kappa: f64, sigma_lower: f64, d: usize) -> Result<f64> {
    if !(rho > 0.0 && kappa > 0.0 && sigma_lower > 0.0) || d == 0 {
        return Err(Error::Domain("curvature, trace bound and ellipticity must be positive".into()));
    }
    Ok(if d == 1 { rho } else { rho * (kappa / sigma_lower).powf(-0.5) })
}

/// `[f]_1 / α`.
pub fn gradient_bound(f_lip: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    Ok(f_lip / alpha)
}

/// Unnormalized bump `exp(−1/(1−s))`, `s = |u|²`.
fn bump(s: f64) -> f64 {
    if s < 1.0 {
        (-1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}

/// `∫_{|u|<1} exp(−1/(1−|u|²)) du` in dimension `d ∈ {1, 2}`.
pub fn bump_mass(d: usize) -> Result<f64> {
    static MASS: OnceLock<[f64; 2]> = OnceLock::new();
    if d == 0 || d > 2 {
        return Err(Error::Config(format!("mollification supports d <= 2, got {d}")));
    }
    Ok(MASS.get_or_init(|| [radial_mass(1), radial_mass(2)])[d - 1])
}

fn radial_mass(d: usize) -> f64 {
    let surface = if d == 1 { 2.0 } else { 2.0 * std::f64::consts::PI };
    let (x, w) = gauss_legendre(20);
    let panels = 400;
    let mut s = 0.0;
    for k in 0..panels {
        let a = k as f64 / panels as f64;
        let half = 0.5 / panels as f64;
        for (xi, wi) in x.iter().zip(&w) {
            let r = a + half * (1.0 + xi);
            s += half * wi * r.powi(d as i32 - 1) * bump(r * r);
        }
    }
    surface * s
}

/// `η_δ(y) = η(y/δ)/δ^d` with exact normalization.
pub fn kernel_density<const D: usize>(delta: f64, y: &Point<D>) -> Result<f64> {
    Ok(bump((y / delta).norm_squared()) / (bump_mass(D)? * delta.powi(D as i32)))
}

struct KernelNode<const D: usize> {
    u: Point<D>,
    w: f64,
    grad: Point<D>,
    hess: Mat<D>,
}

/// Mollified source `f_δ = f ⋆ η_δ` and its first two derivatives.
pub struct Mollified<const D: usize> {
    f: Observable<D>,
    delta: f64,
    nodes: Vec<KernelNode<D>>,
    c_eta: f64,
}

impl<const D: usize> Mollified<D> {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `∫|u|η(u)du` under the rule in use.
    pub fn c_eta(&self) -> f64 {
        self.c_eta
    }

    pub fn value(&self, x: &Point<D>) -> f64 {
        self.nodes.iter().map(|n| n.w * (self.f)(&(x - n.u * self.delta))).sum()
    }

    pub fn gradient(&self, x: &Point<D>) -> Point<D> {
        let mut g = Point::<D>::zeros();
        for n in &self.nodes {
            g += n.grad * (self.f)(&(x - n.u * self.delta));
        }
        g / self.delta
    }

    pub fn hessian(&self, x: &Point<D>) -> Mat<D> {
        let mut h = Mat::<D>::zeros();
        for n in &self.nodes {
            h += n.hess * (self.f)(&(x - n.u * self.delta));
        }
        h / (self.delta * self.delta)
    }
}

/// Polar rule: `order` radial panels of 8 Gauss–Legendre nodes, and in the
/// plane `4·order` equally spaced angles. Weights are normalized by the
/// discrete kernel mass.
pub fn mollify<const D: usize>(f: Observable<D>, delta: f64, order: usize) -> Result<Mollified<D>> {
    if D == 0 || D > 2 {
        return Err(Error::Config(format!("mollification supports d <= 2, got {D}")));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {delta}")));
    }
    if order == 0 {
        return Err(Error::Config("mollifier rule needs at least one panel".into()));
    }
    let (x, w) = gauss_legendre(8);
    let half = 0.5 / order as f64;
    let mut radial = Vec::with_capacity(8 * order);
    for k in 0..order {
        let a = k as f64 / order as f64;
        for (xi, wi) in x.iter().zip(&w) {
            radial.push((a + half * (1.0 + xi), half * wi));
        }
    }
    let mut points: Vec<(Point<D>, f64)> = Vec::new();
    if D == 1 {
        for &(r, wr) in &radial {
            points.push((Point::<D>::from_element(r), wr));
            points.push((Point::<D>::from_element(-r), wr));
        }
    } else {
        let angles = 4 * order;
        let dphi = 2.0 * std::f64::consts::PI / angles as f64;
        for &(r, wr) in &radial {
            for m in 0..angles {
                let t = dphi * (m as f64 + 0.5);
                let mut u = Point::<D>::zeros();
                u[0] = r * t.cos();
                u[1] = r * t.sin();
                points.push((u, wr * r * dphi));
            }
        }
    }
    let mut nodes = Vec::with_capacity(points.len());
    let mut mass = 0.0;
    for (u, weight) in points {
        let s = u.norm_squared();
        let e = bump(s);
        if e == 0.0 {
            continue;
        }
        let q = 1.0 - s;
        let grad = u * (-2.0 * e / (q * q));
        let hess = Mat::<D>::from_fn(|i, j| {
            let delta_ij = if i == j { 1.0 } else { 0.0 };
            e * (-2.0 * delta_ij / (q * q) + 4.0 * u[i] * u[j] / q.powi(4) - 8.0 * u[i] * u[j] / q.powi(3))
        });
        mass += weight * e;
        nodes.push(KernelNode { u, w: weight * e, grad: grad * weight, hess: hess * weight });
    }
    for n in &mut nodes {
        n.w /= mass;
        n.grad /= mass;
        n.hess /= mass;
    }
    let c_eta = nodes.iter().map(|n| n.w * n.u.norm()).sum();
    Ok(Mollified { f, delta, nodes, c_eta })
}
