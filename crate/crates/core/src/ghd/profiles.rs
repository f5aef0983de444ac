//! The Fourier-type integral 𝔉(θ; x) and the equilibrium spectral densities
//! `ϱ_β` and `ϱ = ∂_θ(θ ϱ_β)`.

use super::quadrature::GaussLegendre;
use crate::special::ln_gamma;
use crate::{Error, Result};
use nalgebra::Complex;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Points per sub-panel of the 𝔉 quadrature.
const F_POINTS: usize = 16;
/// Dyadic levels of the `u = y^θ` substitution on `[0, 1]`.
const F_LEVELS: usize = 52;
/// Upper cut of the `y` integral: `e^{−y²/2} < 1e−18` beyond it.
pub const Y_CUT: f64 = 9.1;
/// Largest phase change allowed across one sub-panel.
const MAX_PHASE: f64 = 3.0;

fn f_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(F_POINTS))
}

/// Sub-panel layout for one `(θ, x)` pair. Building it once and reusing it for
/// nearby shapes keeps finite differences in θ free of layout jitter.
struct FLayout {
    /// Sub-intervals of `u ∈ [0, 1]` (excluding the tiny tail `[0, u_tail]`).
    u_panels: Vec<(f64, f64)>,
    u_tail: f64,
    /// Sub-intervals of `y ∈ [1, Y_CUT]`.
    y_panels: Vec<(f64, f64)>,
}

impl FLayout {
    fn new(theta: f64, x: f64) -> Self {
        let ax = x.abs();
        let mut u_panels = Vec::new();
        for k in 0..F_LEVELS {
            let (hi, lo) = (0.5f64.powi(k as i32), 0.5f64.powi(k as i32 + 1));
            let dy = hi.powf(1.0 / theta) - lo.powf(1.0 / theta);
            let pieces = ((ax * dy / MAX_PHASE).ceil() as usize).max(1);
            let w = (hi - lo) / pieces as f64;
            for s in 0..pieces {
                u_panels.push((lo + s as f64 * w, if s + 1 == pieces { hi } else { lo + (s + 1) as f64 * w }));
            }
        }
        let per_unit = (ax / MAX_PHASE).max(2.0);
        let n_y = ((Y_CUT - 1.0) * per_unit).ceil() as usize;
        let w = (Y_CUT - 1.0) / n_y as f64;
        let y_panels = (0..n_y).map(|s| (1.0 + s as f64 * w, 1.0 + (s + 1) as f64 * w)).collect();
        Self { u_panels, u_tail: 0.5f64.powi(F_LEVELS as i32), y_panels }
    }

    /// `∫₀^∞ y^{θ−1} e^{ixy − y²/2} dy` (without the normalizing prefactor).
    fn integral(&self, theta: f64, x: f64) -> Complex<f64> {
        let rule = f_rule();
        let g = |y: f64| Complex::from_polar((-0.5 * y * y).exp(), x * y);
        let inv = 1.0 / theta;
        // [0, 1] in u = y^θ: ∫₀¹ y^{θ−1} g dy = θ⁻¹ ∫₀¹ g(u^{1/θ}) du.
        let mut low = Complex::new(self.u_tail, 0.0);
        for &(a, b) in &self.u_panels {
            let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
            let mut acc = Complex::new(0.0, 0.0);
            for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                acc += g((c + h * t).powf(inv)) * *w;
            }
            low += acc * h;
        }
        let mut high = Complex::new(0.0, 0.0);
        for &(a, b) in &self.y_panels {
            let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
            let mut acc = Complex::new(0.0, 0.0);
            for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                let y = c + h * t;
                acc += g(y) * (w * y.powf(theta - 1.0));
            }
            high += acc * h;
        }
        low * inv + high
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("theta must be positive and finite, got {theta}")))
    }
}

fn prefactor(theta: f64) -> f64 {
    (0.5 * (theta.ln() - ln_gamma(theta))).exp()
}

/// `𝔉(θ; x) = (θ/Γ(θ))^{1/2} ∫₀^∞ y^{θ−1} e^{ixy − y²/2} dy`.
pub fn mathfrak_f(theta: f64, x: f64) -> Result<Complex<f64>> {
    check_theta(theta)?;
    if !x.is_finite() {
        return Err(Error::InvalidConfig(format!("mathfrak_f argument must be finite, got {x}")));
    }
    let value = FLayout::new(theta, x.abs()).integral(theta, x.abs()) * prefactor(theta);
    Ok(if x < 0.0 { value.conj() } else { value })
}

fn rho_beta_from(beta: f64, f: Complex<f64>, x: f64) -> f64 {
    (beta / (2.0 * PI)).sqrt() * (-0.5 * beta * x * x).exp() / f.norm_sqr()
}

/// `ϱ_β(x) = (β/2π)^{1/2} |𝔉(θ; √β x)|⁻² e^{−βx²/2}`.
pub fn rho_beta_at(beta: f64, theta: f64, x: f64) -> Result<f64> {
    let f = mathfrak_f(theta, beta.sqrt() * x)?;
    Ok(rho_beta_from(beta, f, x))
}

/// `(ϱ_β(x), ϱ(x))` with `ϱ = ∂_θ(θ ϱ_{β;θ})` by a central difference of step `dtheta`.
pub fn densities_at(beta: f64, theta: f64, dtheta: f64, x: f64) -> Result<(f64, f64)> {
    check_theta(theta)?;
    if !(dtheta > 0.0 && dtheta < theta / 10.0) {
        return Err(Error::InvalidConfig(format!("dtheta must lie in (0, theta/10), got {dtheta}")));
    }
    let sx = beta.sqrt() * x.abs();
    let layout = FLayout::new(theta, sx);
    let eval = |t: f64| rho_beta_from(beta, layout.integral(t, sx) * prefactor(t), x);
    let (lo, mid, hi) = (theta - dtheta, theta, theta + dtheta);
    let rho = (hi * eval(hi) - lo * eval(lo)) / (2.0 * dtheta);
    Ok((eval(mid), rho))
}

/// Gaussian limit of both densities as `θ → 0`.
pub fn gaussian_density(beta: f64, x: f64) -> f64 {
    (beta / (2.0 * PI)).sqrt() * (-0.5 * beta * x * x).exp()
}
