//! Deterministic identity checks of the spectral kernels (no Monte Carlo).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ghd::kernels::MAX_CONDITION;
use crate::ghd::{GhdConfig, GhdKernels};
use crate::mc::Tolerances;
use crate::special::trigamma;
use crate::Result;

/// Number of node pairs sampled by the symmetry check.
pub const SYMMETRY_PAIRS: usize = 20;
const SYMMETRY_SEED: u64 = 0x5eed;

/// Outcome of one identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        Self { name: name.into(), residual, tolerance, passed: residual <= tolerance }
    }
}

fn sup(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, nan_max)
}

/// Maximum of absolute values that propagates NaN.
fn nan_max(m: f64, x: f64) -> f64 {
    if m.is_nan() || x.is_nan() {
        f64::NAN
    } else {
        m.max(x.abs())
    }
}

/// Builds the kernels and runs every identity check on them.
///
/// Kernel construction itself fails (with a named error) when the grid
/// cannot normalize `ϱ` or the dressing operator is ill-conditioned.
pub fn validate_suite(config: &GhdConfig, tol: &Tolerances) -> Result<Vec<IdentityCheck>> {
    let kernels = GhdKernels::new(config)?;
    Ok(identity_checks(&kernels, tol))
}

/// Identity checks on existing kernels.
///
/// At θ = 0 the stretch is infinite, so the identities are checked in their
/// free form (`ϱ = ϱ_β`, `ς₀^dr v_eff = λ`) and the trigamma sum rule is left out.
pub fn identity_checks(k: &GhdKernels, tol: &Tolerances) -> Vec<IdentityCheck> {
    let (d, p) = (&k.dressed, &k.profiles);
    let (theta, beta) = (k.theta(), k.beta());
    let free = theta == 0.0;
    let alpha = k.alpha();
    let n = k.len();
    let mut out = Vec::new();

    out.push(IdentityCheck::new("normalization", (p.mass_rho - 1.0).abs(), tol.normalization));

    let rho0 = if free {
        sup((0..n).map(|i| p.rho[i] - p.rho_beta[i]))
    } else {
        sup((0..n).map(|i| p.rho[i] - alpha * theta * d.s0_dr[i] * p.rho_beta[i]))
    };
    out.push(IdentityCheck::new("rho0", rho0, tol.rho0));

    let rv: Vec<f64> = (0..n).map(|i| p.rho[i] * d.v_eff[i]).collect();
    let t_rv = if free { vec![0.0; n] } else { k.apply_t(&rv) };
    let inv_alpha = if free { 0.0 } else { 1.0 / alpha };
    let vt = sup((0..n).map(|i| {
        let x = k.nodes()[i];
        (d.s0_dr[i] * d.v_eff[i] - inv_alpha * t_rv[i] - x) / (1.0 + x.abs())
    }));
    out.push(IdentityCheck::new("vt", vt, tol.vt));

    out.push(IdentityCheck::new("t_dr_symmetry", symmetry_defect(k), tol.symmetry));

    let increasing = d.v_eff.windows(2).filter(|w| !(w[1] > w[0])).count();
    out.push(IdentityCheck::new("v_eff_monotone", increasing as f64, 0.0));

    if !free {
        let psi1 = trigamma(theta);
        let chain = alpha * alpha * k.inner_rho(&d.s0_dr, &d.s0_dr);
        out.push(IdentityCheck::new("trigamma", (chain - psi1).abs() / psi1, tol.trigamma_relative));
    }
    let momentum = (k.inner_rho(&d.s1_dr, &d.s1_dr) - 1.0 / beta).abs() * beta;
    out.push(IdentityCheck::new("momentum", momentum, tol.trigamma_relative));

    out.push(IdentityCheck::new("condition", d.condition_estimate, MAX_CONDITION));
    out
}

/// Largest `|T^dr(x, y) − T^dr(y, x)|` over node pairs drawn from the central 80% of the grid.
pub fn symmetry_defect(k: &GhdKernels) -> f64 {
    let n = k.len();
    let mut rng = ChaCha8Rng::seed_from_u64(SYMMETRY_SEED);
    let (lo, hi) = (n / 10, n - n / 10);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    while pairs < SYMMETRY_PAIRS {
        let (i, j) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        if i == j {
            continue;
        }
        pairs += 1;
        let (x, y) = (k.nodes()[i], k.nodes()[j]);
        let defect = match (k.t_dressed(x), k.t_dressed(y)) {
            (Ok(tx), Ok(ty)) => (ty.eval(x) - tx.eval(y)).abs(),
            _ => f64::NAN,
        };
        worst = nan_max(worst, defect);
    }
    worst
}
