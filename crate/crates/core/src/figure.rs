//! Deviation-curve tables for the four reference experiments.

use std::fmt::{self, Write as _};

use crate::bias::bias_radius_a_n;
use crate::bounds::{comparison_curves, sigma_curve, BoundParams};
use crate::error::{Error, Result};
use crate::model::{registry_get, InnovationDistribution, ModelSetup, RegistryModel, RegistryParams};
use crate::montecarlo::{
    estimate_reference, run_deviation_curve, theta_grid, DeviationExperiment, StatisticMode, TailEstimate,
};
use crate::poisson::{confluence_alpha, ConfluenceOptions};
use crate::steps::StepSequence;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Published gradient-bound constant of the planar model.
pub const PUBLISHED_ALPHA: f64 = 3.085;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
}

impl FigureId {
    pub const ALL: [FigureId; 4] = [Self::Fig1, Self::Fig2, Self::Fig3, Self::Fig4];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fig1" => Ok(Self::Fig1),
            "fig2" => Ok(Self::Fig2),
            "fig3" => Ok(Self::Fig3),
            "fig4" => Ok(Self::Fig4),
            other => Err(Error::Config(format!("unknown figure '{other}'; expected one of fig1, fig2, fig3, fig4"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Fig1 => "fig1",
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self {
            Self::Fig1 => "hypo1d-drifted",
            Self::Fig2 | Self::Fig3 => "hypo1d-cos",
            Self::Fig4 => "confluent2d",
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fully resolved figure settings. [`FigureConfig::new`] gives the published
/// defaults; every field may be overridden afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureConfig {
    pub id: FigureId,
    pub model: RegistryParams,
    pub thetas: Vec<f64>,
    pub n: u64,
    pub mc: u64,
    pub a_min: f64,
    pub a_max: f64,
    pub a_count: usize,
    pub seed: u64,
    /// `None` keeps the model's registered `γ₀`.
    pub gamma0: Option<f64>,
    pub calibration_n: u64,
    pub calibration_theta: f64,
    pub calibration_replicates: u64,
    /// add the bias corrector to the statistic (one-dimensional figures)
    pub biased: bool,
    pub quadrature_nodes: usize,
    pub full_bias: bool,
    pub carre: bool,
    pub alpha: f64,
    pub recompute_alpha: bool,
    /// `None` estimates `ν(f)` by a calibration run.
    pub nu_ref: Option<f64>,
}

impl FigureConfig {
    pub fn new(id: FigureId) -> Self {
        Self::with_model(id, RegistryParams::default())
    }

    /// Published defaults; the planar step exponent follows the source exponent.
    pub fn with_model(id: FigureId, model: RegistryParams) -> Self {
        let base = Self {
            id,
            model,
            thetas: theta_grid(),
            n: 50_000,
            mc: 10_000,
            a_min: 0.0,
            a_max: 3.0,
            a_count: 61,
            seed: 20161,
            gamma0: None,
            calibration_n: 10_000,
            calibration_theta: 1.0 / 3.0 + 1e-3,
            calibration_replicates: 100,
            biased: false,
            quadrature_nodes: 10,
            full_bias: false,
            carre: false,
            alpha: PUBLISHED_ALPHA,
            recompute_alpha: false,
            nu_ref: None,
        };
        match id {
            FigureId::Fig1 => base,
            FigureId::Fig2 => Self { thetas: vec![1.0 / 3.0], n: 5_000_000, biased: true, ..base },
            FigureId::Fig3 => Self { carre: true, ..base },
            FigureId::Fig4 => {
                let theta = 1.0 / (2.0 + base.model.beta) + 1e-3;
                Self {
                    thetas: vec![theta],
                    mc: 1_000,
                    a_max: 2.0,
                    a_count: 41,
                    calibration_n: 500_000,
                    calibration_theta: theta,
                    ..base
                }
            }
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.a_count < 2 || !(self.a_max > self.a_min) || self.a_min < 0.0 {
            return Err(Error::Config(format!(
                "a-grid needs 0 <= a_min < a_max and at least 2 points, got [{}, {}] x {}",
                self.a_min, self.a_max, self.a_count
            )));
        }
        let h = (self.a_max - self.a_min) / (self.a_count - 1) as f64;
        Ok((0..self.a_count).map(|i| self.a_min + h * i as f64).collect())
    }

    fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() {
            return Err(Error::Config("at least one step exponent is needed".into()));
        }
        if self.n == 0 || self.mc == 0 || self.calibration_n == 0 || self.calibration_replicates == 0 {
            return Err(Error::Config("horizons, sample counts and replicates must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureRow {
    pub theta: f64,
    pub a: f64,
    pub hits: u64,
    pub g_emp: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub curves: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureTable {
    pub metadata: Vec<(String, String)>,
    pub curve_names: Vec<&'static str>,
    pub rows: Vec<FigureRow>,
}

/// `f64` with `−∞`/`∞`/`NaN` spelled out.
pub fn fmt_num(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

impl FigureTable {
    pub fn curve(&self, row: &FigureRow, name: &str) -> Option<f64> {
        self.curve_names.iter().position(|c| *c == name).map(|i| row.curves[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str("theta,a,hits,g_emp,ci_lo,ci_hi");
        for c in &self.curve_names {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                fmt_num(r.theta),
                fmt_num(r.a),
                r.hits,
                fmt_num(r.g_emp),
                fmt_num(r.ci_lo),
                fmt_num(r.ci_hi)
            );
            for c in &r.curves {
                out.push(',');
                out.push_str(&fmt_num(*c));
            }
            out.push('\n');
        }
        out
    }
}

fn calibration_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_5EED
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(";")
}

fn tail_rows(t: &TailEstimate, curves: impl Fn(usize) -> Vec<f64>) -> Vec<FigureRow> {
    (0..t.grid.len())
        .map(|i| {
            let (lo, hi) = t.band(i);
            FigureRow {
                theta: t.theta,
                a: t.grid[i],
                hits: t.hits[i],
                g_emp: t.log_probability(i),
                ci_lo: lo.ln(),
                ci_hi: hi.ln(),
                curves: curves(i),
            }
        })
        .collect()
}

fn common_metadata(cfg: &FigureConfig, model: &str, extra: &[(String, String)]) -> Vec<(String, String)> {
    let mut m = vec![
        ("version".to_string(), VERSION.to_string()),
        ("figure".into(), cfg.id.to_string()),
        ("model".into(), model.into()),
    ];
    m.extend(extra.iter().cloned());
    m.extend([
        ("seed".into(), cfg.seed.to_string()),
        ("n".into(), cfg.n.to_string()),
        ("mc".into(), cfg.mc.to_string()),
        ("thetas".into(), list(&cfg.thetas)),
        ("a_grid".into(), format!("{}:{}:{}", fmt_num(cfg.a_min), fmt_num(cfg.a_max), cfg.a_count)),
        ("calibration_n".into(), cfg.calibration_n.to_string()),
        ("calibration_theta".into(), fmt_num(cfg.calibration_theta)),
        ("calibration_replicates".into(), cfg.calibration_replicates.to_string()),
        ("calibration_seed".into(), calibration_seed(cfg.seed).to_string()),
        ("proof_sequences".into(), "c_n = C_n = 1, e_n = 0 (limits)".into()),
    ]);
    m
}

pub fn generate_figure(cfg: &FigureConfig) -> Result<FigureTable> {
    cfg.validate()?;
    match registry_get(cfg.id.model_name(), &cfg.model)? {
        RegistryModel::OneD(setup) => coboundary_figure(cfg, &setup),
        RegistryModel::TwoD(setup) => slutsky_figure(cfg, &setup),
    }
}

fn coboundary_figure(cfg: &FigureConfig, setup: &ModelSetup<1>) -> Result<FigureTable> {
    let phi = setup
        .phi
        .as_deref()
        .ok_or_else(|| Error::Config(format!("model '{}' has no test function", setup.name)))?;
    let grid = cfg.grid()?;
    let gamma0 = cfg.gamma0.unwrap_or(setup.gamma0);
    let mode = if cfg.biased {
        StatisticMode::Biased { full: cfg.full_bias, quadrature_nodes: cfg.quadrature_nodes }
    } else {
        StatisticMode::Unbiased
    };
    let reference = estimate_reference(
        setup,
        None,
        gamma0,
        cfg.calibration_n,
        cfg.calibration_theta,
        calibration_seed(cfg.seed),
        cfg.calibration_replicates,
    )?;
    let nu_carre = reference
        .nu_carre
        .ok_or_else(|| Error::Data("carré du champ estimate unavailable".into()))?;
    let semi = phi.seminorms();
    let innov = InnovationDistribution::new(setup.innovation, 1)?;
    let tails = run_deviation_curve(&DeviationExperiment {
        setup,
        thetas: cfg.thetas.clone(),
        gamma0,
        n: cfg.n,
        mc: cfg.mc,
        grid: grid.clone(),
        mode,
        seed: cfg.seed,
    })?;

    let mut rows = Vec::new();
    let mut gammas = Vec::new();
    let mut radii = Vec::new();
    for t in &tails {
        let steps = StepSequence::new(t.theta, gamma0)?;
        let gamma_n = steps.gamma_sum(cfg.n, 1.0);
        let a_n = match mode {
            StatisticMode::Biased { .. } => bias_radius_a_n(phi, setup.diffusion.as_ref(), &steps, innov, cfg.n, 1.0)?,
            _ => 0.0,
        };
        gammas.push(gamma_n);
        radii.push(a_n);
        let params = BoundParams {
            sigma_sup: setup.diffusion.sigma_sup(),
            grad_sup: semi.grad_sup,
            phi_lip: semi.lip1,
            theta_lip: semi.lip1,
            nu_sigma2: reference.nu_sigma2,
            nu_carre,
            gamma_n,
            a_n,
            ..Default::default()
        };
        let curves = comparison_curves(&grid, &params, cfg.carre);
        rows.extend(tail_rows(t, |i| curves[i].named().into_iter().map(|(_, v)| v).collect()));
    }
    let mut curve_names = vec!["S_n", "S_nc", "S_nA", "P_lambda_min"];
    if cfg.carre {
        curve_names.push("P_lambda_min_carre");
    }
    let mut extra: Vec<(String, String)> = setup.params.clone();
    extra.extend([
        ("statistic".to_string(), mode.label()),
        ("innovation".into(), setup.innovation.to_string()),
        ("initial".into(), setup.initial.describe()),
        ("gamma0".into(), fmt_num(gamma0)),
        ("gamma_n".into(), list(&gammas)),
        ("a_n".into(), list(&radii)),
        ("sigma_sup".into(), fmt_num(setup.diffusion.sigma_sup())),
        ("grad_sup".into(), fmt_num(semi.grad_sup)),
        ("phi_lip".into(), fmt_num(semi.lip1)),
        ("theta_lip".into(), format!("{} (taken equal to phi_lip)", fmt_num(semi.lip1))),
        ("nu_sigma2".into(), fmt_num(reference.nu_sigma2)),
        ("nu_carre".into(), fmt_num(nu_carre)),
    ]);
    Ok(FigureTable { metadata: common_metadata(cfg, &setup.name, &extra), curve_names, rows })
}

fn slutsky_figure(cfg: &FigureConfig, setup: &ModelSetup<2>) -> Result<FigureTable> {
    let grid = cfg.grid()?;
    let gamma0 = cfg.gamma0.unwrap_or(setup.gamma0);
    let (alpha, alpha_source) = if cfg.recompute_alpha {
        let est = confluence_alpha(setup.diffusion.as_ref(), &ConfluenceOptions::default())?;
        (est.alpha, format!("recomputed (p = {}, witness x = {:?})", fmt_num(est.p_exponent), est.witness_x.as_slice()))
    } else {
        (cfg.alpha, if cfg.alpha == PUBLISHED_ALPHA { "published".into() } else { "user".into() })
    };
    let (nu_ref, nu_source, nu_sigma2) = match cfg.nu_ref {
        Some(v) => (v, "user".to_string(), f64::NAN),
        None => {
            let r = estimate_reference(
                setup,
                None,
                gamma0,
                cfg.calibration_n,
                cfg.calibration_theta,
                calibration_seed(cfg.seed),
                cfg.calibration_replicates,
            )?;
            (r.value, format!("estimated, 95% half-width {}", fmt_num(r.ci_half_width)), r.nu_sigma2)
        }
    };
    let tails = run_deviation_curve(&DeviationExperiment {
        setup,
        thetas: cfg.thetas.clone(),
        gamma0,
        n: cfg.n,
        mc: cfg.mc,
        grid: grid.clone(),
        mode: StatisticMode::Slutsky { nu_ref },
        seed: cfg.seed,
    })?;
    let f_lip = setup.source_lip;
    let mut rows = Vec::new();
    let mut gammas = Vec::new();
    for t in &tails {
        gammas.push(StepSequence::new(t.theta, gamma0)?.gamma_sum(cfg.n, 1.0));
        rows.extend(tail_rows(t, |i| vec![sigma_curve(grid[i], alpha, f_lip)]));
    }
    let mut extra: Vec<(String, String)> = setup.params.clone();
    extra.extend([
        ("source".to_string(), setup.source_label.clone()),
        ("statistic".into(), StatisticMode::Slutsky { nu_ref }.label()),
        ("innovation".into(), setup.innovation.to_string()),
        ("initial".into(), setup.initial.describe()),
        ("gamma0".into(), fmt_num(gamma0)),
        ("gamma_n".into(), list(&gammas)),
        ("alpha".into(), fmt_num(alpha)),
        ("alpha_source".into(), alpha_source),
        ("f_lip".into(), fmt_num(f_lip)),
        ("nu_ref".into(), fmt_num(nu_ref)),
        ("nu_ref_source".into(), nu_source),
        ("nu_sigma2".into(), fmt_num(nu_sigma2)),
    ]);
    Ok(FigureTable { metadata: common_metadata(cfg, &setup.name, &extra), curve_names: vec!["S_sigma"], rows })
}
