//! Limiting objects of generalized hydrodynamics on a spectral quadrature grid.

use super::interp::MonotoneCubic;
use super::linalg::Lu;
use super::profiles::{densities_at, gaussian_density};
use super::quadrature::{Mat, PanelSet};
use crate::special::stretch;
use crate::spectral::{reg_log, EPS_LOG};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Width ratio of successive sub-panels graded toward a singular point.
pub const GRADE_RATIO: f64 = 0.2;
/// Number of graded sub-panels on each side of a singular point.
pub const GRADE_LEVELS: usize = 16;
/// Largest tolerated deviation of `∫ϱ` from one.
pub const MASS_TOLERANCE: f64 = 1e-3;
/// Largest tolerated condition estimate of the Nyström matrix.
pub const MAX_CONDITION: f64 = 1e12;
const TWO_GRID_TOL: f64 = 1e-14;
const TWO_GRID_MAX_ITER: usize = 60;

/// Parameters of the spectral discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhdConfig {
    pub beta: f64,
    /// Gamma shape; zero selects the free (undressed) limit.
    pub theta: f64,
    /// Requested number of nodes `M`, rounded up to whole panels.
    pub n_nodes: usize,
    /// Gauss–Legendre points per panel.
    pub panel_order: usize,
    /// Half-width of the spectral window; `None` means `12/√β`.
    pub lambda_max: Option<f64>,
    /// Finite-difference step in θ relative to θ.
    pub dtheta_rel: f64,
    /// Rescale `ϱ` to unit mass after finite differencing.
    pub renormalize: bool,
}

impl Default for GhdConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            theta: 0.25,
            n_nodes: 2000,
            panel_order: 10,
            lambda_max: None,
            dtheta_rel: 1e-4,
            renormalize: false,
        }
    }
}

impl GhdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad(format!("theta must be nonnegative, got {}", self.theta));
        }
        if !(2..=40).contains(&self.panel_order) {
            return bad(format!("panel_order must lie in 2..=40, got {}", self.panel_order));
        }
        if self.n_nodes < 2 * self.panel_order {
            return bad(format!("n_nodes must be at least two panels, got {}", self.n_nodes));
        }
        if let Some(l) = self.lambda_max {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda_max must be positive, got {l}"));
            }
        }
        if !(self.dtheta_rel > 0.0 && self.dtheta_rel < 0.1) {
            return bad(format!("dtheta_rel must lie in (0, 0.1), got {}", self.dtheta_rel));
        }
        Ok(())
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max.unwrap_or(12.0 / self.beta.sqrt())
    }
}

/// Spectral nodes with plain and log-kernel product-integration weights.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub panels: PanelSet,
    pub lambda_max: f64,
    /// `(log_kernel · g)_i ≈ ∫ log|x_i − y| g(y) dy`.
    pub log_kernel: Mat,
}

impl QuadratureGrid {
    pub fn new(lambda_max: f64, n_nodes: usize, order: usize) -> Self {
        let n_panels = n_nodes.div_ceil(order);
        let panels = PanelSet::symmetric(lambda_max, n_panels, order);
        let log_kernel = log_matrix(&panels, &panels.nodes);
        Self { panels, lambda_max, log_kernel }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.panels.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.panels.weights
    }

    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }
}

/// Product-integration matrix of `panels` at `targets`, rows built in parallel.
pub fn log_matrix(panels: &PanelSet, targets: &[f64]) -> Mat {
    let mut m = Mat::zeros(targets.len(), panels.len());
    let cols = m.cols;
    m.data.par_chunks_mut(cols.max(1)).zip(targets.par_iter()).for_each(|(row, &x)| panels.log_weights_row(x, row));
    m
}

/// `ϱ_β`, `ϱ` and the stretch at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumProfiles {
    pub beta: f64,
    pub theta: f64,
    pub dtheta: f64,
    pub rho_beta: Vec<f64>,
    pub rho: Vec<f64>,
    /// `log β − ψ(θ)`; infinite at θ = 0.
    pub alpha: f64,
    /// `∫ϱ` before any renormalization.
    pub mass_rho: f64,
    pub mass_rho_beta: f64,
}

/// Densities at one point; the θ = 0 limit is the Gaussian.
fn point_densities(beta: f64, theta: f64, dtheta: f64, x: f64) -> Result<(f64, f64)> {
    if theta == 0.0 {
        let g = gaussian_density(beta, x);
        Ok((g, g))
    } else {
        densities_at(beta, theta, dtheta, x)
    }
}

/// Evaluates the equilibrium profiles on a grid and checks their mass.
pub fn equilibrium_profiles(grid: &QuadratureGrid, beta: f64, theta: f64, dtheta: f64) -> Result<EquilibriumProfiles> {
    if theta > 0.0 && !(dtheta > 0.0 && dtheta < theta / 10.0) {
        return Err(Error::InvalidConfig(format!("dtheta must lie in (0, theta/10), got {dtheta}")));
    }
    let pairs: Vec<(f64, f64)> =
        grid.nodes().par_iter().map(|&x| point_densities(beta, theta, dtheta, x)).collect::<Result<_>>()?;
    let (rho_beta, rho): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let integrate = |f: &[f64]| f.iter().zip(grid.weights()).map(|(a, w)| a * w).sum::<f64>();
    let (mass_rho, mass_rho_beta) = (integrate(&rho), integrate(&rho_beta));
    if (mass_rho - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::Normalization { mass: mass_rho, tolerance: MASS_TOLERANCE });
    }
    let alpha = if theta == 0.0 { f64::INFINITY } else { stretch(beta, theta) };
    Ok(EquilibriumProfiles { beta, theta, dtheta, rho_beta, rho, alpha, mass_rho, mass_rho_beta })
}

/// Dressed charges, effective velocity and its monotone inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct DressedProfiles {
    pub s0_dr: Vec<f64>,
    pub s1_dr: Vec<f64>,
    pub v_eff: Vec<f64>,
    pub v_eff_inverse: MonotoneCubic,
    pub condition_estimate: f64,
}

/// Grid, profiles, cached factorization and dressed profiles.
#[derive(Debug, Clone)]
pub struct GhdKernels {
    pub config: GhdConfig,
    pub grid: QuadratureGrid,
    pub profiles: EquilibriumProfiles,
    pub dressed: DressedProfiles,
    /// Factor applied to `ϱ` by renormalization (1 when off).
    pub rho_scale: f64,
    lu: Option<Lu>,
}

impl GhdKernels {
    pub fn new(config: &GhdConfig) -> Result<Self> {
        config.validate()?;
        let grid = QuadratureGrid::new(config.lambda_max(), config.n_nodes, config.panel_order);
        let mut profiles = equilibrium_profiles(
            &grid,
            config.beta,
            config.theta,
            config.dtheta_rel * config.theta.max(f64::MIN_POSITIVE),
        )?;
        let rho_scale = if config.renormalize { 1.0 / profiles.mass_rho } else { 1.0 };
        profiles.rho.iter_mut().for_each(|r| *r *= rho_scale);
        let theta = config.theta;
        let m = grid.len();
        let (lu, condition_estimate) = if theta == 0.0 {
            (None, 1.0)
        } else {
            let mut a = Mat::zeros(m, m);
            for i in 0..m {
                let (src, dst) = (grid.log_kernel.row(i), a.row_mut(i));
                for j in 0..m {
                    dst[j] = -2.0 * theta * src[j] * profiles.rho_beta[j];
                }
                dst[i] += 1.0;
            }
            let lu = Lu::new(a).ok_or(Error::IllConditioned { theta, condition: f64::INFINITY })?;
            let cond = lu.condition_estimate();
            if !(cond <= MAX_CONDITION) {
                return Err(Error::IllConditioned { theta, condition: cond });
            }
            (Some(lu), cond)
        };
        let mut kernels = Self {
            config: config.clone(),
            grid,
            profiles,
            dressed: DressedProfiles {
                s0_dr: Vec::new(),
                s1_dr: Vec::new(),
                v_eff: Vec::new(),
                v_eff_inverse: MonotoneCubic::new(&[0.0, 1.0], &[0.0, 1.0]).expect("trivial interpolant"),
                condition_estimate,
            },
            rho_scale,
            lu,
        };
        let ones = vec![1.0; m];
        let s0_dr = kernels.dress(&ones);
        let s1_dr = kernels.dress(kernels.grid.nodes());
        let sign = kernels.profiles.alpha.signum();
        if let Some(i) = s0_dr.iter().position(|s| !(s * sign > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "dressed charge s0 has the wrong sign at lambda = {}",
                kernels.grid.nodes()[i]
            )));
        }
        let v_eff: Vec<f64> = s1_dr.iter().zip(&s0_dr).map(|(a, b)| a / b).collect();
        let inverse = MonotoneCubic::new(kernels.grid.nodes(), &v_eff)
            .map_err(|i| Error::NonMonotone { lambda: kernels.grid.nodes()[i] })?;
        kernels.dressed = DressedProfiles { s0_dr, s1_dr, v_eff, v_eff_inverse: inverse, condition_estimate };
        Ok(kernels)
    }

    pub fn theta(&self) -> f64 {
        self.config.theta
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    pub fn alpha(&self) -> f64 {
        self.profiles.alpha
    }

    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn weights(&self) -> &[f64] {
        self.grid.weights()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `(T u)(x_i) = 2 ∫ log|x_i − y| u(y) dy` at the nodes.
    pub fn apply_t(&self, u: &[f64]) -> Vec<f64> {
        self.grid.log_kernel.mul_vec(u).into_iter().map(|v| 2.0 * v).collect()
    }

    /// `θ T ϱ_β u` at the nodes.
    fn apply_k(&self, u: &[f64]) -> Vec<f64> {
        if self.theta() == 0.0 {
            return vec![0.0; u.len()];
        }
        let weighted: Vec<f64> = u.iter().zip(&self.profiles.rho_beta).map(|(a, b)| a * b).collect();
        self.apply_t(&weighted).into_iter().map(|v| self.theta() * v).collect()
    }

    /// `(I − θ T ϱ_β) u`, the forward dressing operator.
    pub fn forward(&self, u: &[f64]) -> Vec<f64> {
        let k = self.apply_k(u);
        u.iter().zip(k).map(|(a, b)| a - b).collect()
    }

    /// Solves `(I − θ T ϱ_β) f^dr = f` at the nodes.
    pub fn dress(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.len(), "dress expects one value per node");
        match &self.lu {
            None => f.to_vec(),
            Some(lu) => lu.solve(f),
        }
    }

    /// `⟨f, g⟩_ϱ` by grid quadrature.
    pub fn inner_rho(&self, f: &[f64], g: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.weights()[i] * self.profiles.rho[i] * f[i] * g[i]).sum()
    }

    /// `μ_φ = ∫ φ ϱ`.
    pub fn mean(&self, phi: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.weights()[i] * self.profiles.rho[i] * phi[i]).sum()
    }

    /// `𝐅h = h^dr − ⟨h, ς₀⟩_ϱ ς₀^dr`.
    pub fn operator_f(&self, h: &[f64]) -> Vec<f64> {
        let mu = self.mean(h);
        self.dress(h).iter().zip(&self.dressed.s0_dr).map(|(a, b)| a - mu * b).collect()
    }

    /// The bilinear form `𝒞(φ₁, φ₂)`.
    pub fn bilinear_c(&self, phi1: &[f64], phi2: &[f64]) -> f64 {
        let centred = |phi: &[f64]| {
            let shift = (1.0 + self.alpha()) * self.mean(phi);
            let g: Vec<f64> = phi.iter().map(|p| p - shift).collect();
            self.dress(&g)
        };
        self.inner_rho(&centred(phi1), &centred(phi2))
    }

    /// `σ²(φ) = ‖𝐅φ‖²_ϱ`.
    pub fn sigma2(&self, phi: &[f64]) -> f64 {
        let f = self.operator_f(phi);
        self.inner_rho(&f, &f)
    }

    fn check_range(&self, x: f64) -> Result<()> {
        let l = self.grid.lambda_max;
        if x.is_finite() && x.abs() <= l {
            Ok(())
        } else {
            Err(Error::OutOfRange { value: x, lo: -l, hi: l })
        }
    }

    /// Nyström extension of a dressed function: `f(x) + θ (T ϱ_β f^dr)(x)`.
    pub fn nystrom(&self, x: f64, f_at_x: f64, f_dr: &[f64]) -> f64 {
        if self.theta() == 0.0 {
            return f_at_x;
        }
        let mut row = vec![0.0; self.len()];
        self.grid.panels.log_weights_row(x, &mut row);
        let s: f64 = (0..self.len()).map(|k| row[k] * self.profiles.rho_beta[k] * f_dr[k]).sum();
        f_at_x + 2.0 * self.theta() * s
    }

    /// `(ς₀^dr(x), ς₁^dr(x))` at an arbitrary point of the window.
    pub fn s_dr_at(&self, x: f64) -> Result<(f64, f64)> {
        self.check_range(x)?;
        Ok((self.nystrom(x, 1.0, &self.dressed.s0_dr), self.nystrom(x, x, &self.dressed.s1_dr)))
    }

    pub fn v_eff_at(&self, x: f64) -> Result<f64> {
        let (s0, s1) = self.s_dr_at(x)?;
        Ok(s1 / s0)
    }

    /// Derivative of the monotone interpolant of `v_eff`.
    pub fn v_eff_derivative(&self, x: f64) -> f64 {
        self.dressed.v_eff_inverse.derivative(x)
    }

    /// `v_eff⁻¹(v)`, `None` outside the range covered by the grid.
    pub fn v_eff_inverse(&self, v: f64) -> Option<f64> {
        self.dressed.v_eff_inverse.inverse(v)
    }

    /// `(ϱ_β(x), ϱ(x))` evaluated directly, with the same renormalization as the nodes.
    pub fn densities_at(&self, x: f64) -> Result<(f64, f64)> {
        let (rb, r) = point_densities(self.beta(), self.theta(), self.profiles.dtheta, x)?;
        Ok((rb, r * self.rho_scale))
    }

    /// Refined grid graded toward the given points.
    pub fn fine_grid(&self, breakpoints: &[f64]) -> Result<FineGrid<'_>> {
        for &z in breakpoints {
            self.check_range(z)?;
        }
        FineGrid::new(self, breakpoints)
    }

    /// `T^dr(·, Λ)` on a grid graded at Λ.
    pub fn t_dressed(&self, lambda: f64) -> Result<DressedKernel<'_>> {
        let fine = self.fine_grid(&[lambda])?;
        let values = fine.t_dressed(lambda)?;
        Ok(DressedKernel { lambda, values, fine })
    }

    /// Tracer diffusivity `𝒟(Λ)`.
    pub fn diffusivity(&self, lambda: f64) -> Result<f64> {
        let kernel = self.t_dressed(lambda)?;
        let fine = &kernel.fine;
        let v0 = self.v_eff_at(lambda)?;
        let s0 = self.s_dr_at(lambda)?.0;
        let integral: f64 = (0..fine.len())
            .map(|k| fine.weights()[k] * kernel.values[k].powi(2) * (fine.v_eff[k] - v0).abs() * fine.rho[k])
            .sum();
        Ok(integral / (self.alpha().abs() * s0 * s0))
    }

    /// Writes `lambda,rho_beta,rho,s0_dr,s1_dr,v_eff` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "rho_beta", "rho", "s0_dr", "s1_dr", "v_eff"])?;
        for i in 0..self.len() {
            w.serialize((
                self.nodes()[i],
                self.profiles.rho_beta[i],
                self.profiles.rho[i],
                self.dressed.s0_dr[i],
                self.dressed.s1_dr[i],
                self.dressed.v_eff[i],
            ))?;
        }
        w.flush()
    }
}

/// Base grid refined toward singular points, with profile data at its nodes and
/// the cross-grid weights needed by the two-grid dressing iteration.
#[derive(Debug, Clone)]
pub struct FineGrid<'a> {
    base: &'a GhdKernels,
    pub panels: PanelSet,
    pub rho_beta: Vec<f64>,
    pub rho: Vec<f64>,
    pub s0_dr: Vec<f64>,
    pub s1_dr: Vec<f64>,
    pub v_eff: Vec<f64>,
    /// Base node identical to each fine node, if any.
    coarse_of_fine: Vec<Option<usize>>,
    fine_of_coarse: Vec<Option<usize>>,
    new_fine: Vec<usize>,
    /// Base log weights at the fine nodes without a base twin.
    w_new_coarse: Mat,
    lost_coarse: Vec<usize>,
    /// Fine log weights at the base nodes without a fine twin.
    w_lost_fine: Mat,
    /// Fine log weights at the fine nodes.
    w_fine: Mat,
}

impl<'a> FineGrid<'a> {
    fn new(base: &'a GhdKernels, breakpoints: &[f64]) -> Result<Self> {
        let (panels, origin) = base.grid.panels.graded_at(breakpoints, GRADE_RATIO, GRADE_LEVELS);
        let p = panels.order();
        let mut coarse_of_fine = vec![None; panels.len()];
        let mut fine_of_coarse = vec![None; base.len()];
        for (k, o) in origin.iter().enumerate() {
            if let Some(c) = o {
                for j in 0..p {
                    coarse_of_fine[k * p + j] = Some(c * p + j);
                    fine_of_coarse[c * p + j] = Some(k * p + j);
                }
            }
        }
        let new_fine: Vec<usize> = (0..panels.len()).filter(|&i| coarse_of_fine[i].is_none()).collect();
        let lost_coarse: Vec<usize> = (0..base.len()).filter(|&c| fine_of_coarse[c].is_none()).collect();
        let new_x: Vec<f64> = new_fine.iter().map(|&i| panels.nodes[i]).collect();
        let lost_x: Vec<f64> = lost_coarse.iter().map(|&c| base.nodes()[c]).collect();
        let w_new_coarse = log_matrix(&base.grid.panels, &new_x);
        let w_lost_fine = log_matrix(&panels, &lost_x);
        let w_fine = log_matrix(&panels, &panels.nodes);

        let n = panels.len();
        let (mut rho_beta, mut rho, mut s0_dr, mut s1_dr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            if let Some(c) = coarse_of_fine[i] {
                rho_beta[i] = base.profiles.rho_beta[c];
                rho[i] = base.profiles.rho[c];
                s0_dr[i] = base.dressed.s0_dr[c];
                s1_dr[i] = base.dressed.s1_dr[c];
            }
        }
        let fresh: Vec<(f64, f64)> = new_x.par_iter().map(|&x| base.densities_at(x)).collect::<Result<_>>()?;
        let theta = base.theta();
        let weighted = |f: &[f64]| -> Vec<f64> { f.iter().zip(&base.profiles.rho_beta).map(|(a, b)| a * b).collect() };
        let (ws0, ws1) = (weighted(&base.dressed.s0_dr), weighted(&base.dressed.s1_dr));
        for (r, &i) in new_fine.iter().enumerate() {
            rho_beta[i] = fresh[r].0;
            rho[i] = fresh[r].1;
            let row = w_new_coarse.row(r);
            let dot = |w: &[f64]| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            s0_dr[i] = 1.0 + 2.0 * theta * dot(&ws0);
            s1_dr[i] = panels.nodes[i] + 2.0 * theta * dot(&ws1);
        }
        let v_eff = s1_dr.iter().zip(&s0_dr).map(|(a, b)| a / b).collect();
        Ok(Self {
            base,
            panels,
            rho_beta,
            rho,
            s0_dr,
            s1_dr,
            v_eff,
            coarse_of_fine,
            fine_of_coarse,
            new_fine,
            w_new_coarse,
            lost_coarse,
            w_lost_fine,
            w_fine,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.panels.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.panels.weights
    }

    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    /// `θ T ϱ_β u` on the fine grid, at the fine nodes.
    fn apply_k_fine(&self, weighted: &[f64]) -> Vec<f64> {
        let c = 2.0 * self.base.theta();
        self.w_fine.mul_vec(weighted).into_iter().map(|v| c * v).collect()
    }

    fn weigh(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.rho_beta).map(|(a, b)| a * b).collect()
    }

    /// Solves `(I − θ T ϱ_β) u = g` on the fine grid by two-grid iteration
    /// preconditioned with the cached base factorization.
    pub fn solve(&self, g: &[f64]) -> Result<Vec<f64>> {
        let base = self.base;
        let theta = base.theta();
        if theta == 0.0 {
            return Ok(g.to_vec());
        }
        let c2 = 2.0 * theta;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut u = g.to_vec();
        for _ in 0..TWO_GRID_MAX_ITER {
            let ku = self.apply_k_fine(&self.weigh(&u));
            let r: Vec<f64> = (0..self.len()).map(|i| g[i] + ku[i] - u[i]).collect();
            let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rmax <= TWO_GRID_TOL * scale {
                return Ok(u);
            }
            let wr = self.weigh(&r);
            let kr = self.apply_k_fine(&wr);
            // Restrict K_f r to the base nodes.
            let mut rhs = vec![0.0; base.len()];
            for c in 0..base.len() {
                if let Some(i) = self.fine_of_coarse[c] {
                    rhs[c] = kr[i];
                }
            }
            for (row, &c) in self.lost_coarse.iter().enumerate() {
                rhs[c] = c2 * self.w_lost_fine.row(row).iter().zip(&wr).map(|(a, b)| a * b).sum::<f64>();
            }
            let wc = base.dress(&rhs);
            // Prolong K_c w_c to the fine nodes.
            let wcw: Vec<f64> = wc.iter().zip(&base.profiles.rho_beta).map(|(a, b)| a * b).collect();
            let kc_coarse = base.grid.log_kernel.mul_vec(&wcw);
            let mut kc = vec![0.0; self.len()];
            for i in 0..self.len() {
                if let Some(c) = self.coarse_of_fine[i] {
                    kc[i] = c2 * kc_coarse[c];
                }
            }
            for (row, &i) in self.new_fine.iter().enumerate() {
                kc[i] = c2 * self.w_new_coarse.row(row).iter().zip(&wcw).map(|(a, b)| a * b).sum::<f64>();
            }
            for i in 0..self.len() {
                u[i] += r[i] + kr[i] + kc[i];
            }
        }
        Err(Error::NoConvergence { index: 0, iterations: TWO_GRID_MAX_ITER })
    }

    /// `T^dr(·, Λ)` at the fine nodes; Λ should be one of the breakpoints.
    pub fn t_dressed(&self, lambda: f64) -> Result<Vec<f64>> {
        let g: Vec<f64> = self.nodes().iter().map(|&y| 2.0 * reg_log(y - lambda, EPS_LOG)).collect();
        self.solve(&g)
    }

    /// Nyström extension `g(x) + θ (T ϱ_β u)(x)` of a fine-grid solution.
    pub fn extend(&self, x: f64, g_at_x: f64, u: &[f64]) -> f64 {
        if self.base.theta() == 0.0 {
            return g_at_x;
        }
        let mut row = vec![0.0; self.len()];
        self.panels.log_weights_row(x, &mut row);
        let wu = self.weigh(u);
        g_at_x + 2.0 * self.base.theta() * row.iter().zip(&wu).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// `T^dr(·, Λ)` on its graded grid.
#[derive(Debug, Clone)]
pub struct DressedKernel<'a> {
    pub lambda: f64,
    /// Values at the fine nodes.
    pub values: Vec<f64>,
    pub fine: FineGrid<'a>,
}

impl DressedKernel<'_> {
    /// `T^dr(x, Λ)` at any point of the window.
    pub fn eval(&self, x: f64) -> f64 {
        self.fine.extend(x, 2.0 * reg_log(x - self.lambda, EPS_LOG), &self.values)
    }

    /// Values at the base grid nodes.
    pub fn on_base_nodes(&self) -> Vec<f64> {
        let base = self.fine.base;
        (0..base.len())
            .map(|c| match self.fine.fine_of_coarse[c] {
                Some(i) => self.values[i],
                None => self.eval(base.nodes()[c]),
            })
            .collect()
    }
}
