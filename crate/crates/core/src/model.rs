//! Diffusion models, test functions, innovations and the generator.
//!
//! A model in dimension `d` supplies
//!
//! ```text
//!   b(x) ∈ R^d,  Db(x) ∈ R^{d×d},  σ(x) ∈ R^{d×d},  Σ = σσ*,
//!   D(σ_{·j})(x) with entries ∂_l σ_{ij}(x),
//!   ‖σ‖_∞ = sup_x ‖σ(x)‖_F.
//! ```
//!
//! Test functions carry derivatives up to order three together with the
//! seminorms the deviation bounds consume. The third derivative is stored as
//! `d` matrices, `third[k][(i, j)] = ∂_i ∂_j ∂_k φ`.
//!
//! The generator is `Aφ = b·∇φ + ½ Tr(Σ D²φ)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite_normal;

pub type Point<const D: usize> = SVector<f64, D>;
pub type Mat<const D: usize> = SMatrix<f64, D, D>;
pub type Tensor3<const D: usize> = [Mat<D>; D];
pub type Observable<const D: usize> = Arc<dyn Fn(&Point<D>) -> f64 + Send + Sync>;

pub trait Diffusion<const D: usize>: Send + Sync {
    fn drift(&self, x: &Point<D>) -> Point<D>;
    /// Entry `(i, j)` is `∂_j b_i`.
    fn drift_jacobian(&self, x: &Point<D>) -> Mat<D>;
    fn sigma(&self, x: &Point<D>) -> Mat<D>;
    /// Entry `(i, l)` is `∂_l σ_{ij}`.
    fn sigma_column_jacobian(&self, x: &Point<D>, j: usize) -> Mat<D>;
    /// `sup_x ‖σ(x)‖_F`.
    fn sigma_sup(&self) -> f64;

    fn diffusion_matrix(&self, x: &Point<D>) -> Mat<D> {
        let s = self.sigma(x);
        s * s.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seminorms {
    pub grad_sup: f64,
    pub lip1: f64,
    pub hess_lip: f64,
}

pub trait TestFunction<const D: usize>: Send + Sync {
    fn value(&self, x: &Point<D>) -> f64;
    fn gradient(&self, x: &Point<D>) -> Point<D>;
    fn hessian(&self, x: &Point<D>) -> Mat<D>;
    fn third(&self, x: &Point<D>) -> Tensor3<D>;
    fn seminorms(&self) -> Seminorms;
    /// `[φ^{(3)}]_β`.
    fn third_holder(&self, beta: f64) -> f64;
}

/// `b·∇φ + ½ Tr(Σ D²φ)` at `x`.
pub fn generator_apply<const D: usize>(
    model: &dyn Diffusion<D>,
    phi: &dyn TestFunction<D>,
    x: &Point<D>,
) -> f64 {
    let b = model.drift(x);
    let sig = model.diffusion_matrix(x);
    b.dot(&phi.gradient(x)) + 0.5 * (sig * phi.hessian(x)).trace()
}

/// `Σ_{ijk} T_{ijk} v_i v_j v_k`, the scalar form of `Tr((T v)(v ⊗ v))`.
pub fn cubic_contraction<const D: usize>(t: &Tensor3<D>, v: &Point<D>) -> f64 {
    let mut s = 0.0;
    for (k, m) in t.iter().enumerate() {
        s += v[k] * (v.transpose() * m * v)[(0, 0)];
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnovationKind {
    Gaussian,
    Rademacher,
}

impl InnovationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "rademacher" | "bernoulli" => Ok(Self::Rademacher),
            other => Err(Error::Config(format!("unknown innovation '{other}' (gaussian, rademacher)"))),
        }
    }

    pub fn sample<const D: usize, R: Rng + ?Sized>(self, rng: &mut R) -> Point<D> {
        match self {
            Self::Gaussian => Point::<D>::from_fn(|_, _| rng.sample(StandardNormal)),
            Self::Rademacher => Point::<D>::from_fn(|_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }),
        }
    }
}

impl fmt::Display for InnovationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Rademacher => "rademacher",
        })
    }
}

pub const MAX_RADEMACHER_DIM: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnovationDistribution {
    pub kind: InnovationKind,
    pub dim: usize,
}

impl InnovationDistribution {
    pub fn new(kind: InnovationKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("innovation dimension must be positive".into()));
        }
        Ok(Self { kind, dim })
    }

    /// `E|U|^p`.
    pub fn abs_moment(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0) {
            return Err(Error::Domain(format!("moment order must be nonnegative, got {p}")));
        }
        let r = self.dim as f64;
        Ok(match self.kind {
            InnovationKind::Rademacher => r.powf(p / 2.0),
            InnovationKind::Gaussian => {
                (0.5 * p * std::f64::consts::LN_2 + ln_gamma((r + p) / 2.0) - ln_gamma(r / 2.0)).exp()
            }
        })
    }
}

/// `E[g(U)]` with `U ∈ R^D`: exact over sign vectors for Rademacher, tensor
/// Gauss–Hermite with `nodes` points per axis for Gaussian.
pub fn innovation_expectation<const D: usize>(
    kind: InnovationKind,
    nodes: usize,
    mut g: impl FnMut(&Point<D>) -> f64,
) -> Result<f64> {
    match kind {
        InnovationKind::Rademacher => {
            if D > MAX_RADEMACHER_DIM {
                return Err(Error::Config(format!(
                    "sign enumeration needs r <= {MAX_RADEMACHER_DIM}, got {D}"
                )));
            }
            let count = 1usize << D;
            let mut s = 0.0;
            for mask in 0..count {
                let u = Point::<D>::from_fn(|i, _| if mask >> i & 1 == 1 { 1.0 } else { -1.0 });
                s += g(&u);
            }
            Ok(s / count as f64)
        }
        InnovationKind::Gaussian => {
            if nodes == 0 {
                return Err(Error::Config("Gauss-Hermite needs at least one node".into()));
            }
            let (x, w) = gauss_hermite_normal(nodes);
            let total = nodes.pow(D as u32);
            let mut s = 0.0;
            for idx in 0..total {
                let mut rem = idx;
                let mut weight = 1.0;
                let mut u = Point::<D>::zeros();
                for i in 0..D {
                    let a = rem % nodes;
                    rem /= nodes;
                    u[i] = x[a];
                    weight *= w[a];
                }
                s += weight * g(&u);
            }
            Ok(s)
        }
    }
}

// ---------------------------------------------------------------------------
// Diffusions

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarSigma {
    /// `σ(x) = cos x`
    Cosine,
    /// `σ ≡ 1`
    Unit,
    /// `σ(x) = x + ε cos x`
    DriftedCosine(f64),
}

/// One-dimensional model with drift `−x/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfMeanReverting {
    pub sigma: ScalarSigma,
}

impl Diffusion<1> for HalfMeanReverting {
    fn drift(&self, x: &Point<1>) -> Point<1> {
        Point::<1>::new(-0.5 * x[0])
    }
    fn drift_jacobian(&self, _x: &Point<1>) -> Mat<1> {
        Mat::<1>::new(-0.5)
    }
    fn sigma(&self, x: &Point<1>) -> Mat<1> {
        Mat::<1>::new(match self.sigma {
            ScalarSigma::Cosine => x[0].cos(),
            ScalarSigma::Unit => 1.0,
            ScalarSigma::DriftedCosine(e) => x[0] + e * x[0].cos(),
        })
    }
    fn sigma_column_jacobian(&self, x: &Point<1>, _j: usize) -> Mat<1> {
        Mat::<1>::new(match self.sigma {
            ScalarSigma::Cosine => -x[0].sin(),
            ScalarSigma::Unit => 0.0,
            ScalarSigma::DriftedCosine(e) => 1.0 - e * x[0].sin(),
        })
    }
    fn sigma_sup(&self) -> f64 {
        match self.sigma {
            ScalarSigma::Cosine | ScalarSigma::Unit => 1.0,
            ScalarSigma::DriftedCosine(_) => f64::INFINITY,
        }
    }
}

/// `b(x) = Bx`, constant `σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDiffusion<const D: usize> {
    pub drift: Mat<D>,
    pub sigma: Mat<D>,
}

impl<const D: usize> Diffusion<D> for LinearDiffusion<D> {
    fn drift(&self, x: &Point<D>) -> Point<D> {
        self.drift * x
    }
    fn drift_jacobian(&self, _x: &Point<D>) -> Mat<D> {
        self.drift
    }
    fn sigma(&self, _x: &Point<D>) -> Mat<D> {
        self.sigma
    }
    fn sigma_column_jacobian(&self, _x: &Point<D>, _j: usize) -> Mat<D> {
        Mat::<D>::zeros()
    }
    fn sigma_sup(&self) -> f64 {
        self.sigma.norm()
    }
}

/// Two-dimensional model with rotating linear drift and state-dependent
/// diffusion matrix, `σ` its lower Cholesky factor.
///
/// ```text
/// b(x)  = (−4x₁ + 6x₂, −5x₁ − 5x₂)
/// Σ₁₁ = cos(x₁+x₂)/2 + 1,  Σ₁₂ = sin x₁ sin x₂ / 4,  Σ₂₂ = 1 − sin(x₂)/2
/// ```
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Confluent2d;

impl Confluent2d {
    fn entries(x: &Point<2>) -> (f64, f64, f64) {
        let s11 = 0.5 * (x[0] + x[1]).cos() + 1.0;
        let s12 = 0.25 * x[0].sin() * x[1].sin();
        let s22 = 1.0 - 0.5 * x[1].sin();
        (s11, s12, s22)
    }
}

impl Diffusion<2> for Confluent2d {
    fn drift(&self, x: &Point<2>) -> Point<2> {
        Point::<2>::new(-4.0 * x[0] + 6.0 * x[1], -5.0 * x[0] - 5.0 * x[1])
    }
    fn drift_jacobian(&self, _x: &Point<2>) -> Mat<2> {
        Mat::<2>::new(-4.0, 6.0, -5.0, -5.0)
    }
    fn sigma(&self, x: &Point<2>) -> Mat<2> {
        let (s11, s12, s22) = Self::entries(x);
        let a = s11.sqrt();
        let c = s12 / a;
        Mat::<2>::new(a, 0.0, c, (s22 - c * c).sqrt())
    }
    fn diffusion_matrix(&self, x: &Point<2>) -> Mat<2> {
        let (s11, s12, s22) = Self::entries(x);
        Mat::<2>::new(s11, s12, s12, s22)
    }
    fn sigma_column_jacobian(&self, x: &Point<2>, j: usize) -> Mat<2> {
        let (s11, s12, s22) = Self::entries(x);
        let a = s11.sqrt();
        let c = s12 / a;
        let e = (s22 - c * c).sqrt();
        let ds11 = [-0.5 * (x[0] + x[1]).sin(); 2];
        let ds12 = [0.25 * x[0].cos() * x[1].sin(), 0.25 * x[0].sin() * x[1].cos()];
        let ds22 = [0.0, -0.5 * x[1].cos()];
        let mut m = Mat::<2>::zeros();
        for l in 0..2 {
            let da = ds11[l] / (2.0 * a);
            let dc = (ds12[l] * a - s12 * da) / (a * a);
            let de = (ds22[l] - 2.0 * c * dc) / (2.0 * e);
            if j == 0 {
                m[(0, l)] = da;
                m[(1, l)] = dc;
            } else {
                m[(1, l)] = de;
            }
        }
        m
    }
    fn sigma_sup(&self) -> f64 {
        3f64.sqrt()
    }
}

// ---------------------------------------------------------------------------
// Test functions

/// `φ(x) = x + ε cos x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftedCosine {
    pub eps: f64,
}

impl TestFunction<1> for DriftedCosine {
    fn value(&self, x: &Point<1>) -> f64 {
        x[0] + self.eps * x[0].cos()
    }
    fn gradient(&self, x: &Point<1>) -> Point<1> {
        Point::<1>::new(1.0 - self.eps * x[0].sin())
    }
    fn hessian(&self, x: &Point<1>) -> Mat<1> {
        Mat::<1>::new(-self.eps * x[0].cos())
    }
    fn third(&self, x: &Point<1>) -> Tensor3<1> {
        [Mat::<1>::new(self.eps * x[0].sin())]
    }
    fn seminorms(&self) -> Seminorms {
        let e = self.eps.abs();
        Seminorms { grad_sup: 1.0 + e, lip1: 1.0 + e, hess_lip: e }
    }
    fn third_holder(&self, beta: f64) -> f64 {
        self.eps.abs() * 2f64.powf(1.0 - beta)
    }
}

/// `φ(x) = cos x`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cosine;

impl TestFunction<1> for Cosine {
    fn value(&self, x: &Point<1>) -> f64 {
        x[0].cos()
    }
    fn gradient(&self, x: &Point<1>) -> Point<1> {
        Point::<1>::new(-x[0].sin())
    }
    fn hessian(&self, x: &Point<1>) -> Mat<1> {
        Mat::<1>::new(-x[0].cos())
    }
    fn third(&self, x: &Point<1>) -> Tensor3<1> {
        [Mat::<1>::new(x[0].sin())]
    }
    fn seminorms(&self) -> Seminorms {
        Seminorms { grad_sup: 1.0, lip1: 1.0, hess_lip: 1.0 }
    }
    fn third_holder(&self, beta: f64) -> f64 {
        2f64.powf(1.0 - beta)
    }
}

/// `φ(x) = ½ xᵀQx + c·x`, `Q` symmetric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic<const D: usize> {
    pub q: Mat<D>,
    pub c: Point<D>,
}

impl<const D: usize> TestFunction<D> for Quadratic<D> {
    fn value(&self, x: &Point<D>) -> f64 {
        0.5 * (x.transpose() * self.q * x)[(0, 0)] + self.c.dot(x)
    }
    fn gradient(&self, x: &Point<D>) -> Point<D> {
        self.q * x + self.c
    }
    fn hessian(&self, _x: &Point<D>) -> Mat<D> {
        self.q
    }
    fn third(&self, _x: &Point<D>) -> Tensor3<D> {
        [Mat::<D>::zeros(); D]
    }
    fn seminorms(&self) -> Seminorms {
        let unbounded = self.q.iter().any(|v| *v != 0.0);
        let g = if unbounded { f64::INFINITY } else { self.c.norm() };
        Seminorms { grad_sup: g, lip1: g, hess_lip: 0.0 }
    }
    fn third_holder(&self, _beta: f64) -> f64 {
        0.0
    }
}

/// `|x|^{1+β}/(1+|x|^β)`, or `|x|^β/(1+|x|^β)` when `short` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialSource {
    pub beta: f64,
    pub short: bool,
}

impl RadialSource {
    pub fn eval<const D: usize>(&self, x: &Point<D>) -> f64 {
        let r = x.norm();
        let rb = r.powf(self.beta);
        if self.short {
            rb / (1.0 + rb)
        } else {
            r * rb / (1.0 + rb)
        }
    }

    /// `[f]_1`.
    pub fn lipschitz(&self) -> f64 {
        if self.short {
            f64::INFINITY
        } else if self.beta <= 1.0 {
            1.0
        } else {
            // sup_s ((1+β)s + s²)/(1+s)², attained at s = 1/(β−1)
            let s = 1.0 / (self.beta - 1.0);
            ((1.0 + self.beta) * s + s * s) / ((1.0 + s) * (1.0 + s))
        }
    }
}

// ---------------------------------------------------------------------------
// Registry

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition<const D: usize> {
    Fixed(Point<D>),
    /// `X₀ = ±m` componentwise, equiprobable.
    Signs(f64),
}

impl<const D: usize> InitialCondition<D> {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Point<D> {
        match self {
            Self::Fixed(p) => *p,
            Self::Signs(m) => Point::<D>::from_fn(|_, _| if rng.random::<bool>() { *m } else { -*m }),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Fixed(p) => {
                let parts: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                format!("fixed({})", parts.join(" "))
            }
            Self::Signs(m) => format!("signs({m})"),
        }
    }
}

#[derive(Clone)]
pub struct ModelSetup<const D: usize> {
    pub name: String,
    pub diffusion: Arc<dyn Diffusion<D>>,
    pub phi: Option<Arc<dyn TestFunction<D>>>,
    pub source: Option<Observable<D>>,
    pub source_label: String,
    pub source_lip: f64,
    pub initial: InitialCondition<D>,
    pub innovation: InnovationKind,
    pub gamma0: f64,
    pub params: Vec<(String, String)>,
}

impl<const D: usize> fmt::Debug for ModelSetup<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSetup")
            .field("name", &self.name)
            .field("dim", &D)
            .field("source", &self.source_label)
            .field("initial", &self.initial)
            .field("innovation", &self.innovation)
            .field("gamma0", &self.gamma0)
            .finish()
    }
}

#[derive(Debug)]
pub enum RegistryModel {
    OneD(ModelSetup<1>),
    TwoD(ModelSetup<2>),
}

impl RegistryModel {
    pub fn name(&self) -> &str {
        match self {
            Self::OneD(m) => &m.name,
            Self::TwoD(m) => &m.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryParams {
    /// `ε` in `x + ε cos x`.
    pub epsilon: f64,
    /// radial source exponent.
    pub beta: f64,
    /// swap to the alternative diffusion (drifted model) or source (2-d model).
    pub variant: bool,
    /// force the `±1` start on or off; `None` keeps the model default.
    pub sign_start: Option<bool>,
}

impl Default for RegistryParams {
    fn default() -> Self {
        Self { epsilon: 0.01, beta: 0.5, variant: false, sign_start: None }
    }
}

pub const REGISTRY: [&str; 5] = ["hypo1d-drifted", "hypo1d-cos", "ou1d", "confluent2d", "asclt-ou"];

fn start<const D: usize>(params: &RegistryParams, signs_by_default: bool) -> InitialCondition<D> {
    if params.sign_start.unwrap_or(signs_by_default) {
        InitialCondition::Signs(1.0)
    } else {
        InitialCondition::Fixed(Point::<D>::zeros())
    }
}

pub fn registry_get(name: &str, params: &RegistryParams) -> Result<RegistryModel> {
    match name {
        "hypo1d-drifted" => {
            let eps = params.epsilon;
            let sigma = if params.variant { ScalarSigma::DriftedCosine(eps) } else { ScalarSigma::Cosine };
            Ok(RegistryModel::OneD(ModelSetup {
                name: name.into(),
                diffusion: Arc::new(HalfMeanReverting { sigma }),
                phi: Some(Arc::new(DriftedCosine { eps })),
                source: None,
                source_label: "none".into(),
                source_lip: f64::NAN,
                initial: start(params, true),
                innovation: InnovationKind::Rademacher,
                gamma0: 1.0,
                params: vec![
                    ("epsilon".into(), eps.to_string()),
                    ("sigma".into(), if params.variant { "x+eps*cos(x)" } else { "cos(x)" }.into()),
                ],
            }))
        }
        "hypo1d-cos" => Ok(RegistryModel::OneD(ModelSetup {
            name: name.into(),
            diffusion: Arc::new(HalfMeanReverting { sigma: ScalarSigma::Cosine }),
            phi: Some(Arc::new(Cosine)),
            source: None,
            source_label: "none".into(),
            source_lip: f64::NAN,
            initial: start(params, true),
            innovation: InnovationKind::Rademacher,
            gamma0: 1.0,
            params: vec![],
        })),
        "ou1d" => Ok(RegistryModel::OneD(ModelSetup {
            name: name.into(),
            diffusion: Arc::new(HalfMeanReverting { sigma: ScalarSigma::Unit }),
            phi: Some(Arc::new(Quadratic { q: Mat::<1>::new(2.0), c: Point::<1>::zeros() })),
            source: Some(Arc::new(|x: &Point<1>| x[0] * x[0])),
            source_label: "x^2".into(),
            source_lip: f64::INFINITY,
            initial: start(params, false),
            innovation: InnovationKind::Gaussian,
            gamma0: 1.0,
            params: vec![],
        })),
        "asclt-ou" => Ok(RegistryModel::OneD(ModelSetup {
            name: name.into(),
            diffusion: Arc::new(HalfMeanReverting { sigma: ScalarSigma::Unit }),
            phi: None,
            source: Some(Arc::new(|x: &Point<1>| x[0].sin())),
            source_label: "sin(x)".into(),
            source_lip: 1.0,
            initial: start(params, false),
            innovation: InnovationKind::Gaussian,
            gamma0: 1.0,
            params: vec![],
        })),
        "confluent2d" => {
            let src = RadialSource { beta: params.beta, short: params.variant };
            let label = if src.short { "|x|^b/(1+|x|^b)" } else { "|x|^(1+b)/(1+|x|^b)" };
            Ok(RegistryModel::TwoD(ModelSetup {
                name: name.into(),
                diffusion: Arc::new(Confluent2d),
                phi: None,
                source: Some(Arc::new(move |x: &Point<2>| src.eval(x))),
                source_label: label.into(),
                source_lip: src.lipschitz(),
                initial: start(params, false),
                innovation: InnovationKind::Gaussian,
                gamma0: 0.1,
                params: vec![("beta".into(), params.beta.to_string())],
            }))
        }
        other => Err(Error::Config(format!(
            "unknown model '{other}'; registry: {}",
            REGISTRY.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;

    fn fd_grad<const D: usize>(f: impl Fn(&Point<D>) -> f64, x: &Point<D>) -> Point<D> {
        Point::<D>::from_fn(|i, _| {
            let mut p = *x;
            let mut m = *x;
            p[i] += H;
            m[i] -= H;
            (f(&p) - f(&m)) / (2.0 * H)
        })
    }

    fn fd_jac<const D: usize>(f: impl Fn(&Point<D>) -> Point<D>, x: &Point<D>) -> Mat<D> {
        let mut out = Mat::<D>::zeros();
        for l in 0..D {
            let mut p = *x;
            let mut m = *x;
            p[l] += H;
            m[l] -= H;
            out.set_column(l, &((f(&p) - f(&m)) / (2.0 * H)));
        }
        out
    }

    fn check_diffusion<const D: usize>(m: &dyn Diffusion<D>, x: &Point<D>) {
        let db = fd_jac(|y| m.drift(y), x);
        assert!((db - m.drift_jacobian(x)).abs().max() < 1e-6);
        for j in 0..D {
            let ds = fd_jac(|y| m.sigma(y).column(j).into_owned(), x);
            let err = (ds - m.sigma_column_jacobian(x, j)).abs().max();
            assert!(err < 1e-6, "column {j} at {x:?}: {err}");
        }
        let sig = m.diffusion_matrix(x);
        assert!((sig - sig.transpose()).abs().max() == 0.0);
        for v in crate::poisson::sphere_directions::<D>(64).unwrap() {
            assert!(v.dot(&(sig * v)) >= -1e-12);
        }
        assert!(m.sigma(x).norm() <= m.sigma_sup() + 1e-12);
    }

    fn check_phi<const D: usize>(phi: &dyn TestFunction<D>, x: &Point<D>) {
        let g = fd_grad(|y| phi.value(y), x);
        assert!((g - phi.gradient(x)).abs().max() < 1e-6);
        let h = fd_jac(|y| phi.gradient(y), x);
        assert!((h - phi.hessian(x)).abs().max() < 1e-6);
        let t = phi.third(x);
        for k in 0..D {
            let mut p = *x;
            let mut m = *x;
            p[k] += H;
            m[k] -= H;
            let dk = (phi.hessian(&p) - phi.hessian(&m)) / (2.0 * H);
            assert!((dk - t[k]).abs().max() < 1e-6);
        }
    }

    fn points<const D: usize>(seed: u64) -> Vec<Point<D>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..100).map(|_| Point::<D>::from_fn(|_, _| rng.random_range(-5.0..5.0))).collect()
    }

    #[test]
    fn registry_derivatives_match_finite_differences() {
        for name in REGISTRY {
            for variant in [false, true] {
                let params = RegistryParams { variant, ..Default::default() };
                match registry_get(name, &params).unwrap() {
                    RegistryModel::OneD(m) => {
                        for x in points::<1>(1) {
                            check_diffusion(m.diffusion.as_ref(), &x);
                            if let Some(phi) = &m.phi {
                                check_phi(phi.as_ref(), &x);
                            }
                        }
                    }
                    RegistryModel::TwoD(m) => {
                        for x in points::<2>(2) {
                            check_diffusion(m.diffusion.as_ref(), &x);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_model_lists_registry() {
        let err = registry_get("nope", &RegistryParams::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(REGISTRY.iter().all(|n| msg.contains(n)));
    }

    #[test]
    fn drifted_model_seminorms_dominate_grid() {
        let phi = DriftedCosine { eps: 0.01 };
        let m = HalfMeanReverting { sigma: ScalarSigma::Cosine };
        let s = phi.seminorms();
        assert!((s.grad_sup - 1.01).abs() < 1e-15);
        assert_eq!(m.sigma_sup(), 1.0);
        let mut gmax: f64 = 0.0;
        let mut smax: f64 = 0.0;
        for i in 0..=20000 {
            let x = Point::<1>::new(-10.0 + 20.0 * i as f64 / 20000.0);
            gmax = gmax.max(phi.gradient(&x)[0].abs());
            smax = smax.max(m.sigma(&x)[0].abs());
        }
        assert!(gmax <= s.grad_sup && gmax > 1.0099);
        assert!(smax <= 1.0 && smax > 0.9999);
    }

    #[test]
    fn cosine_third_derivative_lipschitz() {
        let phi = Cosine;
        let mut worst: f64 = 0.0;
        for i in 0..2000 {
            let x = -10.0 + 0.01 * i as f64;
            for h in [1e-3, 0.1, 0.5, 2.0] {
                let a = phi.third(&Point::<1>::new(x))[0][(0, 0)];
                let b = phi.third(&Point::<1>::new(x + h))[0][(0, 0)];
                worst = worst.max((a - b).abs() / h);
            }
        }
        assert!(worst <= phi.third_holder(1.0) && worst > 0.999);
        for beta in [0.25, 0.5, 0.75] {
            let mut w: f64 = 0.0;
            for i in 0..500 {
                let x = -5.0 + 0.02 * i as f64;
                for k in 1..200 {
                    let h = 0.02 * k as f64;
                    w = w.max((x.sin() - (x + h).sin()).abs() / h.powf(beta));
                }
            }
            assert!(w <= phi.third_holder(beta) + 1e-12);
        }
    }

    #[test]
    fn confluent_drift_symmetric_eigenvalues() {
        let j = Confluent2d.drift_jacobian(&Point::<2>::zeros());
        let mut e: Vec<f64> = ((j + j.transpose()) / 2.0).symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        let s2 = 2f64.sqrt();
        assert!((e[0] + (s2 + 9.0) / 2.0).abs() < 1e-12);
        assert!((e[1] - (s2 - 9.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn confluent_cholesky_and_ellipticity() {
        let m = Confluent2d;
        for x in points::<2>(9) {
            let s = m.sigma(&x);
            assert!((s * s.transpose() - m.diffusion_matrix(&x)).abs().max() < 1e-12);
        }
        let mut lo = f64::INFINITY;
        let mut fro: f64 = 0.0;
        for i in 0..100 {
            for k in 0..100 {
                let x = Point::<2>::new(-10.0 + 20.0 * i as f64 / 99.0, -10.0 + 20.0 * k as f64 / 99.0);
                lo = lo.min(m.diffusion_matrix(&x).symmetric_eigenvalues().min());
                fro = fro.max(m.sigma(&x).norm());
            }
        }
        assert!(lo >= 0.2, "{lo}");
        assert!(fro <= m.sigma_sup());
    }

    #[test]
    fn radial_source_lipschitz_on_grid() {
        let f = RadialSource { beta: 0.5, short: false };
        let mut worst: f64 = 0.0;
        for i in 0..4000 {
            let r = 10f64.powf(-4.0 + 12.0 * i as f64 / 4000.0);
            let h = 1e-6 * r.max(1e-2);
            let a = f.eval(&Point::<2>::new(r, 0.0));
            let b = f.eval(&Point::<2>::new(r + h, 0.0));
            worst = worst.max((b - a) / h);
        }
        assert!(worst <= f.lipschitz() && worst > 0.99);
    }

    #[test]
    fn generator_examples() {
        let m = HalfMeanReverting { sigma: ScalarSigma::Cosine };
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.1] {
            let p = Point::<1>::new(x);
            let v = generator_apply(&m, &Cosine, &p);
            let expect = 0.5 * x * x.sin() - 0.5 * x.cos().powi(3);
            assert!((v - expect).abs() < 1e-12);
            // finite-difference oracle
            let h = 1e-4;
            let d1 = ((x + h).cos() - (x - h).cos()) / (2.0 * h);
            let d2 = ((x + h).cos() - 2.0 * x.cos() + (x - h).cos()) / (h * h);
            let fd = -0.5 * x * d1 + 0.5 * x.cos().powi(2) * d2;
            assert!((v - fd).abs() < 1e-6);
        }
        let constant = Quadratic { q: Mat::<2>::zeros(), c: Point::<2>::zeros() };
        assert_eq!(generator_apply(&Confluent2d, &constant, &Point::<2>::new(0.3, -1.0)), 0.0);
        let ou = HalfMeanReverting { sigma: ScalarSigma::Unit };
        let sq = Quadratic { q: Mat::<1>::new(2.0), c: Point::<1>::zeros() };
        assert!((generator_apply(&ou, &sq, &Point::<1>::zeros()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn abs_moments() {
        let rad = InnovationDistribution::new(InnovationKind::Rademacher, 1).unwrap();
        assert_eq!(rad.abs_moment(4.0).unwrap(), 1.0);
        let g1 = InnovationDistribution::new(InnovationKind::Gaussian, 1).unwrap();
        assert!((g1.abs_moment(2.0).unwrap() - 1.0).abs() < 1e-12);
        let g2 = InnovationDistribution::new(InnovationKind::Gaussian, 2).unwrap();
        let exact = g2.abs_moment(4.0).unwrap();
        assert!((exact - 8.0).abs() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let n = 10_000_000;
        let mut s = 0.0;
        for _ in 0..n {
            let u: Point<2> = InnovationKind::Gaussian.sample(&mut rng);
            s += u.norm_squared().powi(2);
        }
        assert!((s / n as f64 - 8.0).abs() / 8.0 < 0.01);
        assert!(rad.abs_moment(-1.0).is_err());
    }

    fn moment_check<const D: usize>(kind: InnovationKind) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000usize;
        let us: Vec<Point<D>> = (0..n).map(|_| kind.sample(&mut rng)).collect();
        let within = |vals: &mut dyn Iterator<Item = f64>| {
            let (mut s, mut s2) = (0.0, 0.0);
            for v in vals {
                s += v;
                s2 += v * v;
            }
            let mean = s / n as f64;
            let sd = (s2 / n as f64 - mean * mean).max(0.0).sqrt();
            mean.abs() <= 5.0 * sd / (n as f64).sqrt() + 1e-15
        };
        for i in 0..D {
            assert!(within(&mut us.iter().map(|u| u[i])));
            for j in 0..D {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!(within(&mut us.iter().map(|u| u[i] * u[j] - id)));
                for k in 0..D {
                    assert!(within(&mut us.iter().map(|u| u[i] * u[j] * u[k])));
                }
            }
        }
    }

    #[test]
    fn innovation_sample_moments() {
        moment_check::<1>(InnovationKind::Rademacher);
        moment_check::<2>(InnovationKind::Rademacher);
        moment_check::<2>(InnovationKind::Gaussian);
    }

    #[test]
    fn expectation_rules() {
        let v = innovation_expectation::<2>(InnovationKind::Rademacher, 0, |u| u[0] * u[0] * u[1] * u[1]).unwrap();
        assert_eq!(v, 1.0);
        let v = innovation_expectation::<2>(InnovationKind::Gaussian, 8, |u| u[0].powi(4) + u[1].powi(2)).unwrap();
        assert!((v - 4.0).abs() < 1e-11);
        assert!(innovation_expectation::<21>(InnovationKind::Rademacher, 0, |_| 1.0).is_err());
    }

    #[test]
    fn cubic_contraction_matches_sum() {
        let t = [Mat::<2>::new(1.0, 2.0, 2.0, 3.0), Mat::<2>::new(2.0, 3.0, 3.0, 4.0)];
        let v = Point::<2>::new(0.5, -1.5);
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    s += t[k][(i, j)] * v[i] * v[j] * v[k];
                }
            }
        }
        assert!((cubic_contraction(&t, &v) - s).abs() < 1e-14);
    }
}
