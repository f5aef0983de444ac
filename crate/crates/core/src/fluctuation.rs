//! Limiting Gaussian laws of the fluctuation theory.
//!
//! Every covariance here is a pairing on `L²(dr ⊗ ϱ dλ)` of profiles of the form
//! `c(λ)·(1{A > αr} − 1{B(λ) > αr})`. The `r`-integral of a product of two such
//! indicator differences is an interval overlap, evaluated exactly per λ; the
//! λ-integral uses the spectral grid, split at every λ where two interval
//! endpoints cross and graded toward logarithmic singularities.

use crate::ghd::kernels::{GRADE_LEVELS, GRADE_RATIO};
use crate::ghd::{GhdKernels, PanelSet};
use crate::spectral::{reg_log, EPS_LOG};
use crate::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Largest clipped eigenvalue mass, relative to the trace, tolerated by the field sampler.
pub const MAX_CLIP_FRACTION: f64 = 1e-6;

/// The indicator profiles ψ and φ^[m] in `(r, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IndicatorProfile {
    /// `2 log|Λ − λ| · (1{α(κ − r) > 0} − 1{α(κ − r) + τ(v(Λ) − v(λ)) > 0})`.
    Psi { lambda: f64, kappa: f64, tau: f64 },
    /// `λ^m · (1{q > αr} − 1{q′ > αr + τ v(λ)})`.
    PhiM { m: u32, q: f64, q_prime: f64, tau: f64 },
}

impl IndicatorProfile {
    pub fn psi(lambda: f64, kappa: f64, tau: f64) -> Result<Self> {
        let p = Self::Psi { lambda, kappa, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn phi_m(m: u32, q: f64, q_prime: f64, tau: f64) -> Result<Self> {
        let p = Self::PhiM { m, q, q_prime, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn tau(&self) -> f64 {
        match *self {
            Self::Psi { tau, .. } | Self::PhiM { tau, .. } => tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tau = self.tau();
        if tau < 0.0 {
            return Err(Error::NegativeTau(tau));
        }
        let finite = match *self {
            Self::Psi { lambda, kappa, tau } => lambda.is_finite() && kappa.is_finite() && tau.is_finite(),
            Self::PhiM { q, q_prime, tau, .. } => q.is_finite() && q_prime.is_finite() && tau.is_finite(),
        };
        if finite {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("profile parameters must be finite: {self:?}")))
        }
    }

    /// The spectral point carrying a logarithmic singularity, if any.
    pub fn singular_point(&self) -> Option<f64> {
        match *self {
            Self::Psi { lambda, .. } => Some(lambda),
            Self::PhiM { .. } => None,
        }
    }

    /// Endpoints `(A, B)` with the profile's `r`-dependence equal to
    /// `1{A > αr} − 1{B > αr}`, given `v(Λ)` (ignored for φ) and `v(λ)`.
    pub fn endpoints(&self, alpha: f64, v_singular: f64, v_lambda: f64) -> (f64, f64) {
        match *self {
            Self::Psi { kappa, tau, .. } => (alpha * kappa, alpha * kappa + tau * (v_singular - v_lambda)),
            Self::PhiM { q, q_prime, tau, .. } => (q, q_prime - tau * v_lambda),
        }
    }

    /// Endpoints as affine functions `c − t·v(λ)` of the velocity, as `(c, t)` pairs.
    fn endpoint_lines(&self, alpha: f64, v_singular: f64) -> [(f64, f64); 2] {
        match *self {
            Self::Psi { kappa, tau, .. } => [(alpha * kappa, 0.0), (alpha * kappa + tau * v_singular, tau)],
            Self::PhiM { q, q_prime, tau, .. } => [(q, 0.0), (q_prime, tau)],
        }
    }

    /// True when the profile vanishes identically.
    fn is_zero(&self) -> bool {
        match *self {
            Self::Psi { tau, .. } => tau == 0.0,
            Self::PhiM { q, q_prime, tau, .. } => tau == 0.0 && q == q_prime,
        }
    }
}

/// `∫ (1{A₁ > αr} − 1{B₁ > αr})(1{A₂ > αr} − 1{B₂ > αr}) dr` in closed form.
///
/// Each factor is `sgn(A − B)` on the interval between `A` and `B` in the
/// variable `s = αr`, so the integral is a signed overlap length over `|α|`.
pub fn r_overlap(e1: (f64, f64), e2: (f64, f64), alpha: f64) -> f64 {
    let sign = |e: (f64, f64)| (e.0 - e.1).signum() * f64::from(e.0 != e.1);
    let s = sign(e1) * sign(e2);
    if s == 0.0 {
        return 0.0;
    }
    let lo = e1.0.min(e1.1).max(e2.0.min(e2.1));
    let hi = e1.0.max(e1.1).min(e2.0.max(e2.1));
    s * (hi - lo).max(0.0) / alpha.abs()
}

/// A white-noise pairing request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceQuery {
    pub left: IndicatorProfile,
    pub right: IndicatorProfile,
    /// Replace the coefficients by their dressed versions: `λ^m → ς_m^dr`,
    /// `2 log|Λ − λ| → T^dr(λ, Λ)`.
    pub dressed: bool,
}

fn require_alpha(kernels: &GhdKernels) -> Result<f64> {
    let alpha = kernels.alpha();
    if alpha.is_finite() && alpha != 0.0 {
        Ok(alpha)
    } else {
        Err(Error::InvalidConfig("fluctuation limits need theta > 0 (finite stretch)".into()))
    }
}

/// Lagrange interpolation of base-node values at `x`.
fn interp(kernels: &GhdKernels, values: &[f64], x: f64) -> f64 {
    kernels.grid.panels.interpolate(values, x).unwrap_or(0.0)
}

/// `v⁻¹(target)` refined by Newton steps on the interpolated velocity, so kinks
/// sit exactly where the integrand evaluates them.
fn velocity_preimage(kernels: &GhdKernels, target: f64) -> Option<f64> {
    let mut x = kernels.v_eff_inverse(target)?;
    let (lo, hi) = (kernels.grid.panels.lo(), kernels.grid.panels.hi());
    for _ in 0..4 {
        let slope = kernels.v_eff_derivative(x);
        if !(slope > 0.0) {
            break;
        }
        let step = (interp(kernels, &kernels.dressed.v_eff, x) - target) / slope;
        x = (x - step).clamp(lo, hi);
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    Some(x)
}

/// Points λ where any two of the given affine endpoints `c − t·v(λ)` meet.
fn crossing_points(kernels: &GhdKernels, lines: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, a) in lines.iter().enumerate() {
        for b in &lines[i + 1..] {
            let dt = a.1 - b.1;
            if dt != 0.0 {
                if let Some(x) = velocity_preimage(kernels, (a.0 - b.0) / dt) {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Integration grid: base panels graded toward the singular points and split at the kinks.
fn integration_grid(kernels: &GhdKernels, singular: &[f64], kinks: &[f64]) -> PanelSet {
    let graded = kernels.grid.panels.graded_at(singular, GRADE_RATIO, GRADE_LEVELS).0;
    if kinks.is_empty() {
        graded
    } else {
        graded.graded_at(kinks, 0.5, 0).0
    }
}

fn check_in_grid(kernels: &GhdKernels, x: f64) -> Result<()> {
    let l = kernels.grid.lambda_max;
    if x.is_finite() && x.abs() <= l {
        Ok(())
    } else {
        Err(Error::OutOfRange { value: x, lo: -l, hi: l })
    }
}

/// `ς_m^dr` (or `λ^m` when undressed) at the base nodes.
fn power_coefficient(kernels: &GhdKernels, m: u32, dressed: bool) -> Vec<f64> {
    match (m, dressed) {
        (0, true) => kernels.dressed.s0_dr.clone(),
        (1, true) => kernels.dressed.s1_dr.clone(),
        _ => {
            let plain: Vec<f64> = kernels.nodes().iter().map(|x| x.powi(m as i32)).collect();
            if dressed {
                kernels.dress(&plain)
            } else {
                plain
            }
        }
    }
}

/// Gram matrix `∫∫ f_i f_j ϱ dr dλ` of the profiles, on one shared integration grid.
pub fn wn_gram(kernels: &GhdKernels, profiles: &[IndicatorProfile], dressed: bool) -> Result<Vec<Vec<f64>>> {
    let alpha = require_alpha(kernels)?;
    for p in profiles {
        p.validate()?;
        if let Some(z) = p.singular_point() {
            check_in_grid(kernels, z)?;
        }
    }
    let live: Vec<usize> = (0..profiles.len()).filter(|&i| !profiles[i].is_zero()).collect();
    let v_at = |x: f64| interp(kernels, &kernels.dressed.v_eff, x);
    let v_singular: Vec<f64> = profiles.iter().map(|p| p.singular_point().map_or(0.0, v_at)).collect();

    let mut singular: Vec<f64> = live.iter().filter_map(|&i| profiles[i].singular_point()).collect();
    singular.sort_by(f64::total_cmp);
    singular.dedup();
    let lines: Vec<(f64, f64)> = live.iter().flat_map(|&i| profiles[i].endpoint_lines(alpha, v_singular[i])).collect();
    let kinks = crossing_points(kernels, &lines);
    let grid = integration_grid(kernels, &singular, &kinks);
    let nodes = &grid.nodes;
    let rho: Vec<f64> = nodes.iter().map(|&x| interp(kernels, &kernels.profiles.rho, x)).collect();
    let v: Vec<f64> = nodes.iter().map(|&x| v_at(x)).collect();

    // Coefficients at the integration nodes, computed once per distinct Λ or m.
    let mut t_cache: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut power_cache: Vec<(u32, Vec<f64>)> = Vec::new();
    let mut coeff: Vec<Vec<f64>> = vec![Vec::new(); profiles.len()];
    for &i in &live {
        coeff[i] = match profiles[i] {
            IndicatorProfile::Psi { lambda, .. } => {
                if let Some((_, c)) = t_cache.iter().find(|(z, _)| *z == lambda) {
                    c.clone()
                } else {
                    let c: Vec<f64> = if dressed {
                        let kernel = kernels.t_dressed(lambda)?;
                        nodes.par_iter().map(|&x| kernel.eval(x)).collect()
                    } else {
                        nodes.iter().map(|&x| 2.0 * reg_log(x - lambda, EPS_LOG)).collect()
                    };
                    t_cache.push((lambda, c.clone()));
                    c
                }
            }
            IndicatorProfile::PhiM { m, .. } => {
                if let Some((_, c)) = power_cache.iter().find(|(k, _)| *k == m) {
                    c.clone()
                } else {
                    let base = power_coefficient(kernels, m, dressed);
                    let c: Vec<f64> = nodes.iter().map(|&x| interp(kernels, &base, x)).collect();
                    power_cache.push((m, c.clone()));
                    c
                }
            }
        };
    }

    let n = profiles.len();
    let mut gram = vec![vec![0.0; n]; n];
    for (a, &i) in live.iter().enumerate() {
        for &j in &live[a..] {
            let s: f64 = (0..grid.len())
                .map(|k| {
                    let e1 = profiles[i].endpoints(alpha, v_singular[i], v[k]);
                    let e2 = profiles[j].endpoints(alpha, v_singular[j], v[k]);
                    let overlap = r_overlap(e1, e2, alpha);
                    if overlap == 0.0 {
                        0.0
                    } else {
                        grid.weights[k] * rho[k] * coeff[i][k] * coeff[j][k] * overlap
                    }
                })
                .sum();
            gram[i][j] = s;
            gram[j][i] = s;
        }
    }
    Ok(gram)
}

/// `Cov(𝒲(f), 𝒲(g)) = ∫∫ f g ϱ dr dλ`, with dressed coefficients on request.
pub fn wn_cov(query: &CovarianceQuery, kernels: &GhdKernels) -> Result<f64> {
    Ok(wn_gram(kernels, &[query.left, query.right], query.dressed)?[0][1])
}

/// One integrated-current observable `J^[m]` between `q` and `q′` over macroscopic time τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentSpec {
    pub m: u32,
    pub q: f64,
    pub q_prime: f64,
    pub tau: f64,
}

impl CurrentSpec {
    pub fn profile(&self) -> Result<IndicatorProfile> {
        IndicatorProfile::phi_m(self.m, self.q, self.q_prime, self.tau)
    }
}

/// Covariance of the limiting current fluctuations `𝒲(ς_m^dr(λ)(1{q > αr} − 1{q′ > αr + τv(λ)}))`.
pub fn current_limit_cov(i: &CurrentSpec, j: &CurrentSpec, kernels: &GhdKernels) -> Result<f64> {
    Ok(wn_gram(kernels, &[i.profile()?, j.profile()?], true)?[0][1])
}

/// Variance `ατ ∫ |ς₀^dr|² |v| ϱ dλ` of the limiting height process at time τ.
pub fn q0_variance(tau: f64, kernels: &GhdKernels) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::NegativeTau(tau));
    }
    let alpha = require_alpha(kernels)?;
    let d = &kernels.dressed;
    let integral: f64 = (0..kernels.len())
        .map(|k| kernels.weights()[k] * d.s0_dr[k] * d.s0_dr[k] * d.v_eff[k].abs() * kernels.profiles.rho[k])
        .sum();
    Ok(alpha * tau * integral)
}

/// Compactly supported test functions for the two-point scaling limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// Piece `i` on `[knots[i], knots[i+1]]` is `Σ_j coeffs[i][j] (x − knots[i])^j`; zero outside.
    PiecewiseCubic { knots: Vec<f64>, coeffs: Vec<[f64; 4]> },
    /// `exp(−(x − center)²/(2σ²))` truncated at 8σ.
    Gaussian { center: f64, sigma: f64 },
}

impl TestFunction {
    /// Cubic B-spline with knot spacing `h` centred at `center`, scaled to peak 1.
    pub fn bump(center: f64, h: f64) -> Self {
        let unit: [[f64; 4]; 4] =
            [[0.0, 0.0, 0.0, 0.25], [0.25, 0.75, 0.75, -0.75], [1.0, 0.0, -1.5, 0.75], [0.25, -0.75, 0.75, -0.25]];
        let knots = (0..5).map(|i| center + (i as f64 - 2.0) * h).collect();
        Self::PiecewiseCubic { knots, coeffs: unit.iter().map(|c| scale_piece(c, h)).collect() }
    }

    /// Equal to 1 on `[lo, hi]` with smoothstep ramps of width `ramp` on either side.
    pub fn plateau(lo: f64, hi: f64, ramp: f64) -> Self {
        let up = scale_piece(&[0.0, 0.0, 3.0, -2.0], ramp);
        let down = scale_piece(&[1.0, 0.0, -3.0, 2.0], ramp);
        Self::PiecewiseCubic { knots: vec![lo - ramp, lo, hi, hi + ramp], coeffs: vec![up, [1.0, 0.0, 0.0, 0.0], down] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::PiecewiseCubic { knots, coeffs } => {
                let increasing = knots.windows(2).all(|w| w[1] > w[0]);
                if knots.len() < 2 || coeffs.len() + 1 != knots.len() || !increasing {
                    return Err(Error::InvalidConfig(
                        "piecewise cubic needs increasing knots and one piece per gap".into(),
                    ));
                }
                if !knots.iter().chain(coeffs.iter().flatten()).all(|v| v.is_finite()) {
                    return Err(Error::InvalidConfig("piecewise cubic data must be finite".into()));
                }
                Ok(())
            }
            Self::Gaussian { center, sigma } => {
                if center.is_finite() && *sigma > 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig("gaussian test function needs finite center and sigma > 0".into()))
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::PiecewiseCubic { knots, coeffs } => {
                if x < knots[0] || x > knots[knots.len() - 1] {
                    return 0.0;
                }
                let i = (knots.partition_point(|&k| k <= x) - 1).min(coeffs.len() - 1);
                let u = x - knots[i];
                let c = coeffs[i];
                c[0] + u * (c[1] + u * (c[2] + u * c[3]))
            }
            Self::Gaussian { center, sigma } => {
                let z = (x - center) / sigma;
                if z.abs() > 8.0 {
                    0.0
                } else {
                    (-0.5 * z * z).exp()
                }
            }
        }
    }

    /// Points where the function may fail to be smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::PiecewiseCubic { knots, .. } => knots.clone(),
            Self::Gaussian { center, sigma } => vec![center - 8.0 * sigma, center + 8.0 * sigma],
        }
    }
}

fn scale_piece(c: &[f64; 4], h: f64) -> [f64; 4] {
    [c[0], c[1] / h, c[2] / (h * h), c[3] / (h * h * h)]
}

/// Value of the pointwise two-point density together with its light-cone flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseValue {
    pub value: f64,
    /// False when `αx/τ` lies beyond the range of `v_eff` on the grid; the value is then 0.
    pub inside_light_cone: bool,
}

/// The two-point scaling function of the charges `m` and `n`.
#[derive(Debug, Clone)]
pub struct TwoPoint<'k> {
    kernels: &'k GhdKernels,
    alpha: f64,
    pub m: u32,
    pub n: u32,
    /// Integrand entry at the base nodes (before the factor `f(α⁻¹τv)ϱ`).
    entry: Vec<f64>,
}

impl<'k> TwoPoint<'k> {
    pub fn new(kernels: &'k GhdKernels, m: u32, n: u32) -> Result<Self> {
        let alpha = require_alpha(kernels)?;
        let s0 = &kernels.dressed.s0_dr;
        let f = |k: u32| -> Vec<f64> {
            let plain: Vec<f64> = kernels.nodes().iter().map(|x| x.powi(k as i32)).collect();
            kernels.operator_f(&plain)
        };
        let entry: Vec<f64> = match (m, n) {
            (0, 0) => s0.iter().map(|s| alpha * alpha * s * s).collect(),
            (0, k) | (k, 0) => f(k).iter().zip(s0).map(|(a, s)| -alpha * s * a).collect(),
            (m, n) => {
                let (fm, fn_) = (f(m), f(n));
                fm.iter().zip(&fn_).map(|(a, b)| a * b).collect()
            }
        };
        Ok(Self { kernels, alpha, m, n, entry })
    }

    /// `∫ entry(λ) f(α⁻¹τ v(λ)) ϱ(λ) dλ`.
    pub fn limit(&self, tau: f64, f: &TestFunction) -> Result<f64> {
        if tau < 0.0 {
            return Err(Error::NegativeTau(tau));
        }
        f.validate()?;
        let k = self.kernels;
        let kinks: Vec<f64> = if tau > 0.0 {
            f.breakpoints().iter().filter_map(|&b| velocity_preimage(k, self.alpha * b / tau)).collect()
        } else {
            Vec::new()
        };
        let grid = integration_grid(k, &[], &kinks);
        Ok((0..grid.len())
            .map(|i| {
                let x = grid.nodes[i];
                let v = interp(k, &k.dressed.v_eff, x);
                let weight = f.eval(tau * v / self.alpha);
                if weight == 0.0 {
                    return 0.0;
                }
                grid.weights[i] * interp(k, &self.entry, x) * weight * interp(k, &k.profiles.rho, x)
            })
            .sum())
    }

    /// Density in `x` of the scaling limit at time τ > 0, by the change of variables
    /// `x = α⁻¹τ v(λ)`.
    pub fn pointwise(&self, x: f64, tau: f64) -> Result<PointwiseValue> {
        if tau < 0.0 {
            return Err(Error::NegativeTau(tau));
        }
        if !(tau > 0.0) || !x.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "pointwise two-point density needs tau > 0 and finite x, got tau = {tau}, x = {x}"
            )));
        }
        let k = self.kernels;
        let Some(star) = k.v_eff_inverse(self.alpha * x / tau) else {
            return Ok(PointwiseValue { value: 0.0, inside_light_cone: false });
        };
        let slope = k.v_eff_derivative(star);
        if !(slope > 0.0) {
            return Ok(PointwiseValue { value: 0.0, inside_light_cone: false });
        }
        let rho = interp(k, &k.profiles.rho, star);
        let value = interp(k, &self.entry, star) * rho * self.alpha.abs() / (tau * slope);
        Ok(PointwiseValue { value, inside_light_cone: true })
    }
}

pub fn twopoint_limit(m: u32, n: u32, tau: f64, f: &TestFunction, kernels: &GhdKernels) -> Result<f64> {
    TwoPoint::new(kernels, m, n)?.limit(tau, f)
}

pub fn twopoint_pointwise(m: u32, n: u32, x: f64, tau: f64, kernels: &GhdKernels) -> Result<PointwiseValue> {
    TwoPoint::new(kernels, m, n)?.pointwise(x, tau)
}

/// One row of an exported scaling-function table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub x: f64,
    pub tau: f64,
    pub m: u32,
    pub n: u32,
    pub value: f64,
}

/// Writes `x,tau,m,n,value` rows.
pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

/// A point `(Λ, 𝔮, τ)` of the dressed Lévy–Chentsov field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldPoint {
    pub lambda: f64,
    pub q: f64,
    pub tau: f64,
}

/// Covariance matrix of the dressed Lévy–Chentsov field at the given points.
///
/// Dressing the ψ pairing in both spectral arguments collapses, for a profile
/// whose κ is tied to its Λ, to the coefficient `T^dr(λ, Λ)` in front of the
/// indicator difference, so the entry is
/// `(ς₀^dr(Λ)ς₀^dr(Λ′))⁻¹ ∫ T^dr(λ,Λ) T^dr(λ,Λ′) overlap(λ) ϱ(λ) dλ`.
pub fn lc_field_matrix(points: &[FieldPoint], kernels: &GhdKernels) -> Result<Vec<Vec<f64>>> {
    let alpha = require_alpha(kernels)?;
    let mut profiles = Vec::with_capacity(points.len());
    let mut scale = Vec::with_capacity(points.len());
    for p in points {
        if p.tau < 0.0 {
            return Err(Error::NegativeTau(p.tau));
        }
        check_in_grid(kernels, p.lambda)?;
        let v = interp(kernels, &kernels.dressed.v_eff, p.lambda);
        profiles.push(IndicatorProfile::psi(p.lambda, (p.q - p.tau * v) / alpha, p.tau)?);
        scale.push(1.0 / interp(kernels, &kernels.dressed.s0_dr, p.lambda));
    }
    let mut gram = wn_gram(kernels, &profiles, true)?;
    for (i, row) in gram.iter_mut().enumerate() {
        for (j, g) in row.iter_mut().enumerate() {
            *g *= scale[i] * scale[j];
        }
    }
    Ok(gram)
}

pub fn lc_field_cov(p1: &FieldPoint, p2: &FieldPoint, kernels: &GhdKernels) -> Result<f64> {
    Ok(lc_field_matrix(&[*p1, *p2], kernels)?[0][1])
}

/// Gaussian sampler for a fixed covariance, through a clipped symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    pub covariance: Vec<Vec<f64>>,
    /// Total magnitude of the negative eigenvalues set to zero.
    pub clipped: f64,
    factor: DMatrix<f64>,
}

impl FieldSampler {
    pub fn from_covariance(covariance: Vec<Vec<f64>>) -> Result<Self> {
        let n = covariance.len();
        if covariance.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidConfig("covariance must be square".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (covariance[i][j] + covariance[j][i]));
        let trace = m.trace();
        let eig = SymmetricEigen::new(m);
        let clipped: f64 = eig.eigenvalues.iter().filter(|&&e| e < 0.0).map(|e| -e).sum();
        if clipped > MAX_CLIP_FRACTION * trace.abs() && clipped > 0.0 {
            return Err(Error::ExcessiveClipping { clipped, trace });
        }
        let roots = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self { covariance, clipped, factor })
    }

    pub fn new(points: &[FieldPoint], kernels: &GhdKernels) -> Result<Self> {
        Self::from_covariance(lc_field_matrix(points, kernels)?)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.covariance.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n).map(|i| (0..n).map(|j| self.factor[(i, j)] * z[j]).sum()).collect()
    }
}

/// One joint draw of the field at the given points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub clipped: f64,
}

pub fn sample_field(points: &[FieldPoint], seed: u64, kernels: &GhdKernels) -> Result<FieldSample> {
    let sampler = FieldSampler::new(points, kernels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(FieldSample { values: sampler.draw(&mut rng), clipped: sampler.clipped })
}
