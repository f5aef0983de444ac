//! Reproducible Monte Carlo ensembles and their comparison with the limit laws.
//!
//! Every sample `i` is drawn from its own stream seeded by `mix_seed(base_seed, i)`.
//! Samples run in parallel, but their results are collected in index order and
//! reduced sequentially, so every reported number is a pure function of the
//! configuration, whatever the number of workers.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fluctuation::{current_limit_cov, q0_variance, twopoint_limit, CurrentSpec, TestFunction};
use crate::ghd::{GhdConfig, GhdKernels};
use crate::lattice::{
    charge_at_slot, evolve, integrated_current, mix_seed, sample_equilibrium, LatticeConfig, TodaState,
};
use crate::special::stretch;
use crate::spectral::{ql_eigenvalues, quasi_frame_fast, scattering_residual_for, track_ranks, QuasiFrame, EPS_LOG};
use crate::{Error, Result};

/// Which experiment a configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Dos,
    Stretch,
    Linstat,
    Twopoint,
    Current,
    Tracer,
    Q0,
    Conservation,
    Scattering,
}

/// Numerical settings of the spectral grid; β and θ come from the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    pub n_nodes: usize,
    pub panel_order: usize,
    pub lambda_max: Option<f64>,
    pub dtheta_rel: f64,
    pub renormalize: bool,
}

impl Default for GridSettings {
    fn default() -> Self {
        let g = GhdConfig::default();
        Self {
            n_nodes: g.n_nodes,
            panel_order: g.panel_order,
            lambda_max: g.lambda_max,
            dtheta_rel: g.dtheta_rel,
            renormalize: g.renormalize,
        }
    }
}

/// Pass/fail thresholds applied to experiment outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest accepted `|z|` for statistical reproductions of a limit.
    pub z_max: f64,
    /// Moment identities must hold within this many standard errors.
    pub moment_se: f64,
    /// Increment-independence slope must vanish within this many standard errors.
    pub increment_se: f64,
    /// Relative tolerance of the variance reproductions (current, q₀, tracer).
    pub relative: f64,
    /// Relative tolerance of linear-statistic variances.
    pub linstat_relative: f64,
    /// Largest accepted total-variation distance of the eigenvalue histogram.
    pub dos_tv: f64,
    /// Largest accepted median of `|residual|/√t` in the scattering check.
    pub scattering_median: f64,
    /// Sup-norm residual of `ϱ = αθ ς₀^dr ϱ_β`.
    pub rho0: f64,
    /// Sup-norm residual of the effective-velocity identity.
    pub vt: f64,
    /// Largest asymmetry of the dressed kernel on sampled node pairs.
    pub symmetry: f64,
    /// Relative tolerance of the trigamma and momentum sum rules.
    pub trigamma_relative: f64,
    /// Largest deviation of `∫ϱ` from 1.
    pub normalization: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            z_max: 3.0,
            moment_se: 4.0,
            increment_se: 5.0,
            relative: 0.15,
            linstat_relative: 0.05,
            dos_tv: 0.02,
            scattering_median: 3.0,
            rho0: 1e-5,
            vt: 1e-6,
            symmetry: 1e-6,
            trigamma_relative: 5e-3,
            normalization: 1e-3,
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub lattice: LatticeConfig,
    pub grid: GridSettings,
    /// Macroscopic scale `T`; observation times are `τ·T`.
    pub t_scale: f64,
    pub tau_list: Vec<f64>,
    /// Charge indices `m` of the observed field or current.
    pub m_list: Vec<u32>,
    /// Charge indices `n` of the reference field in two-point functions.
    pub n_list: Vec<u32>,
    /// Macroscopic positions `𝔮` of current observations (with `𝔮′ = 𝔮`).
    pub q_list: Vec<f64>,
    pub ensemble_size: usize,
    /// Fraction of the window, centred at site 0, used as bulk.
    pub bulk_fraction: f64,
    pub base_seed: u64,
    pub experiment: Experiment,
    /// Bound on quasi-particle speeds used by the window check.
    pub velocity_bound: f64,
    /// Test function `f` of the two-point sums `Σ_j f(j/T) S(j, τT)`.
    pub test_function: TestFunction,
    /// Spectral bin `(center, halfwidth)` of the tracer experiment.
    pub lambda_bin: [f64; 2],
    /// Coefficients `p_0, p_1, …` of the linear-statistic polynomial.
    pub polynomial: Vec<f64>,
    pub histogram_bins: usize,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeConfig::default(),
            grid: GridSettings::default(),
            t_scale: 64.0,
            tau_list: vec![1.0],
            m_list: vec![1],
            n_list: vec![1],
            q_list: vec![0.0],
            ensemble_size: 100,
            bulk_fraction: 0.5,
            base_seed: 0,
            experiment: Experiment::Twopoint,
            velocity_bound: 10.0,
            test_function: TestFunction::bump(0.0, 1.0),
            lambda_bin: [0.0, 0.1],
            polynomial: vec![0.0, 0.0, 1.0],
            histogram_bins: 100,
            tolerances: Tolerances::default(),
        }
    }
}

impl ExperimentConfig {
    /// Kernel configuration matching the lattice parameters.
    pub fn ghd_config(&self) -> GhdConfig {
        GhdConfig {
            beta: self.lattice.beta,
            theta: self.lattice.theta,
            n_nodes: self.grid.n_nodes,
            panel_order: self.grid.panel_order,
            lambda_max: self.grid.lambda_max,
            dtheta_rel: self.grid.dtheta_rel,
            renormalize: self.grid.renormalize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.lattice.validate()?;
        self.ghd_config().validate()?;
        if !(self.t_scale > 0.0 && self.t_scale.is_finite()) {
            return bad(format!("t_scale must be positive, got {}", self.t_scale));
        }
        if let Some(&tau) = self.tau_list.iter().find(|t| !t.is_finite()) {
            return bad(format!("tau values must be finite, got {tau}"));
        }
        if let Some(&tau) = self.tau_list.iter().find(|&&t| t < 0.0) {
            return Err(Error::NegativeTau(tau));
        }
        if self.q_list.iter().any(|q| !q.is_finite()) {
            return bad("q values must be finite".into());
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be positive".into());
        }
        if !(self.bulk_fraction > 0.0 && self.bulk_fraction <= 1.0) {
            return bad(format!("bulk_fraction must lie in (0, 1], got {}", self.bulk_fraction));
        }
        if !(self.velocity_bound > 0.0 && self.velocity_bound.is_finite()) {
            return bad(format!("velocity_bound must be positive, got {}", self.velocity_bound));
        }
        self.test_function.validate()?;
        let [center, half] = self.lambda_bin;
        if !(center.is_finite() && half > 0.0 && half.is_finite()) {
            return bad("lambda_bin needs a finite center and a positive half-width".into());
        }
        if self.polynomial.is_empty() || self.polynomial.len() > 5 || self.polynomial.iter().any(|c| !c.is_finite()) {
            return bad("polynomial needs 1 to 5 finite coefficients (degree at most 4)".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be positive".into());
        }
        Ok(())
    }

    /// Array slots of the bulk window, centred at site 0.
    pub fn bulk_slots(&self) -> Range<usize> {
        let n = self.lattice.n_sites;
        let center = n / 2;
        let half = ((self.bulk_fraction * n as f64) / 2.0).floor().max(1.0) as usize;
        center.saturating_sub(half)..(center + half).min(n)
    }

    /// Checks that disturbances from the free ends cannot reach any observed
    /// site within time `t`. `reach` is the largest distance, in sites, of an
    /// observed site from site 0.
    pub fn check_window(&self, reach: f64, t: f64) -> Result<()> {
        let alpha = stretch(self.lattice.beta, self.lattice.theta);
        if !(alpha > 0.0) {
            return Err(Error::Window(format!("the stretch {alpha} is not positive, so site speeds are unbounded")));
        }
        let n = self.lattice.n_sites;
        let center = (n / 2) as f64;
        let room = center.min((n - 1) as f64 - center) - reach;
        let needed = t * self.velocity_bound / alpha;
        if room < needed {
            return Err(Error::Window(format!(
                "observed sites reach {reach:.1} sites from the centre, leaving {room:.1} sites to the ends, \
                 but signals may travel {needed:.1} sites by t = {t}"
            )));
        }
        Ok(())
    }
}

/// Ensemble summary of one observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub id: String,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub count: usize,
    pub predicted: Option<f64>,
    pub z_score: Option<f64>,
}

impl EnsembleStats {
    /// Builds the summary from a mean and a per-observation variance.
    pub fn new(id: impl Into<String>, mean: f64, variance: f64, count: usize, predicted: Option<f64>) -> Self {
        let std_error = (variance / count as f64).sqrt();
        let z_score = predicted.map(|p| (mean - p) / std_error);
        Self { id: id.into(), mean, variance, std_error, count, predicted, z_score }
    }

    /// Summary of i.i.d. observations.
    pub fn from_samples(id: impl Into<String>, xs: &[f64], predicted: Option<f64>) -> Self {
        let (mean, variance) = moments(xs);
        Self::new(id, mean, variance, xs.len(), predicted)
    }

    /// `|mean/predicted − 1|`, or the absolute deviation when nothing nonzero is predicted.
    pub fn relative_error(&self) -> f64 {
        match self.predicted {
            Some(p) if p != 0.0 => (self.mean / p - 1.0).abs(),
            Some(p) => (self.mean - p).abs(),
            None => f64::NAN,
        }
    }
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let (l, r) = xs.split_at(xs.len() / 2);
        pairwise_sum(l) + pairwise_sum(r)
    }
}

/// Mean and unbiased variance, computed about the first observation so that
/// identical observations give exactly zero variance.
pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let shift = xs[0];
    let d: Vec<f64> = xs.iter().map(|x| x - shift).collect();
    let sum = pairwise_sum(&d);
    let mean = shift + sum / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = d.iter().map(|x| x * x).collect();
    let variance = ((pairwise_sum(&sq) - sum * sum / n as f64) / (n - 1) as f64).max(0.0);
    (mean, variance)
}

/// Per-sample squared deviations `(x_i − x̄)²·n/(n−1)`, whose mean is the unbiased variance.
fn squared_deviations(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let (mean, _) = moments(xs);
    let factor = if n > 1 { n as f64 / (n - 1) as f64 } else { 0.0 };
    xs.iter().map(|x| (x - mean) * (x - mean) * factor).collect()
}

/// One observable measured on the shared snapshot ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    /// `Σ_j f(j/T) Cov(K_j^[m](τT), K_0^[n](0))`, reference site averaged over the bulk.
    TwoPoint { m: u32, n: u32, tau: f64, t_scale: f64, f: TestFunction },
    /// Variance of `T^{−1/2} J_{τT}^[m](T𝔮, T𝔮′)`.
    Current { m: u32, q: f64, q_prime: f64, tau: f64, t_scale: f64 },
    /// Variance of `T^{−1/2} q₀(τT)` and the excess kurtosis of `q₀(τT)`.
    Q0 { tau: f64, t_scale: f64 },
    /// Regression slope of `q₀(2τT) − q₀(τT)` on `q₀(τT)`.
    Q0Increment { tau: f64, t_scale: f64 },
}

impl Observable {
    fn times(&self) -> Vec<f64> {
        match *self {
            Self::TwoPoint { tau, t_scale, .. } | Self::Current { tau, t_scale, .. } | Self::Q0 { tau, t_scale } => {
                vec![tau * t_scale]
            }
            Self::Q0Increment { tau, t_scale } => vec![tau * t_scale, 2.0 * tau * t_scale],
        }
    }

    fn validate(&self) -> Result<()> {
        let (tau, t_scale) = match self {
            Self::TwoPoint { tau, t_scale, f, .. } => {
                f.validate()?;
                (*tau, *t_scale)
            }
            Self::Current { tau, t_scale, q, q_prime, .. } => {
                if !(q.is_finite() && q_prime.is_finite()) {
                    return Err(Error::InvalidConfig("current positions must be finite".into()));
                }
                (*tau, *t_scale)
            }
            Self::Q0 { tau, t_scale } | Self::Q0Increment { tau, t_scale } => (*tau, *t_scale),
        };
        if !tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau must be finite, got {tau}")));
        }
        if tau < 0.0 {
            return Err(Error::NegativeTau(tau));
        }
        if !(t_scale > 0.0 && t_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("t_scale must be positive, got {t_scale}")));
        }
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Position of the modified charge in slot `k` relative to site `k`. The
/// spacing lives on the bond between `k` and `k + 1`; `[L^m]_kk` is centred on `k`.
fn charge_center(m: u32) -> f64 {
    if m == 0 {
        0.5
    } else {
        0.0
    }
}

/// Slot offsets `j` with `f(x/T) ≠ 0` and their weights, where
/// `x = j + shift` is the physical distance between the two charges.
fn offsets(f: &TestFunction, t_scale: f64, shift: f64) -> Vec<(i64, f64)> {
    let bp = f.breakpoints();
    let lo = bp.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = bp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (jlo, jhi) = ((lo * t_scale - shift).ceil() as i64, (hi * t_scale - shift).floor() as i64);
    (jlo..=jhi).map(|j| (j, f.eval((j as f64 + shift) / t_scale))).filter(|(_, w)| *w != 0.0).collect()
}

/// Modified charge `K^[m]` at an array slot: the spacing for `m = 0`, `[L^m]_kk` otherwise.
fn modified_charge(state: &TodaState, m: u32, k: usize) -> f64 {
    if m == 0 {
        state.spacing(k)
    } else {
        charge_at_slot(&state.a, &state.b, m as usize, k)
    }
}

/// Per-sample raw numbers of one observable, before the ensemble reduction.
struct Plan {
    obs: Observable,
    /// Snapshot indices of the observation times.
    snaps: Vec<usize>,
    offsets: Vec<(i64, f64)>,
}

impl Plan {
    fn measure(&self, snapshots: &[TodaState], bulk: &Range<usize>, center: usize) -> Vec<f64> {
        let s0 = &snapshots[0];
        match self.obs {
            Observable::TwoPoint { m, n, .. } => {
                let st = &snapshots[self.snaps[0]];
                let (mut p, mut u, mut v, mut mbar) = (0.0, 0.0, 0.0, 0.0);
                for r in bulk.clone() {
                    let k0 = modified_charge(s0, n, r);
                    let mut row = 0.0;
                    for &(j, w) in &self.offsets {
                        row += w * modified_charge(st, m, (r as i64 + j) as usize);
                    }
                    p += row * k0;
                    u += row;
                    v += k0;
                    mbar += modified_charge(st, m, r);
                }
                let c = bulk.len() as f64;
                vec![p / c, u / c, v / c, mbar / c]
            }
            Observable::Current { m, q, q_prime, t_scale, .. } => {
                let st = &snapshots[self.snaps[0]];
                let j = integrated_current(s0, st, m as usize, t_scale * q, t_scale * q_prime)
                    .expect("snapshots share one window");
                vec![j]
            }
            Observable::Q0 { .. } => vec![snapshots[self.snaps[0]].q[center] - s0.q[center]],
            Observable::Q0Increment { .. } => {
                let x = snapshots[self.snaps[0]].q[center] - s0.q[center];
                let y = snapshots[self.snaps[1]].q[center] - snapshots[self.snaps[0]].q[center];
                vec![x, y]
            }
        }
    }

    /// Largest distance from site 0 of any site this observable reads.
    fn reach(&self, cfg: &ExperimentConfig, alpha: f64) -> f64 {
        let bulk = cfg.bulk_slots();
        let center = cfg.lattice.n_sites / 2;
        let bulk_reach = (center - bulk.start).max(bulk.end - center) as f64;
        match self.obs {
            Observable::TwoPoint { .. } => {
                let far = self.offsets.iter().map(|(j, _)| j.unsigned_abs()).max().unwrap_or(0);
                bulk_reach + far as f64 + 1.0
            }
            Observable::Current { q, q_prime, t_scale, .. } => t_scale * q.abs().max(q_prime.abs()) / alpha + 1.0,
            Observable::Q0 { .. } | Observable::Q0Increment { .. } => 0.0,
        }
    }
}

/// Experiment driver holding a configuration and the matching kernels.
#[derive(Debug, Clone)]
pub struct Harness {
    config: ExperimentConfig,
    kernels: Arc<GhdKernels>,
}

impl Harness {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let kernels = Arc::new(GhdKernels::new(&config.ghd_config())?);
        Ok(Self { config, kernels })
    }

    /// A harness for another configuration, reusing the kernels when the
    /// spectral settings agree.
    pub fn reconfigure(&self, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        if config.ghd_config() == self.kernels.config {
            Ok(Self { config, kernels: Arc::clone(&self.kernels) })
        } else {
            Self::new(config)
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn kernels(&self) -> &GhdKernels {
        &self.kernels
    }

    fn seed(&self, i: usize) -> u64 {
        mix_seed(self.config.base_seed, i as u64)
    }

    fn ensemble<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(TodaState) -> Result<T> + Sync + Send,
    {
        (0..self.config.ensemble_size)
            .into_par_iter()
            .map(|i| f(sample_equilibrium(&self.config.lattice, self.seed(i))?))
            .collect()
    }

    fn evolve_to(&self, state: &TodaState, t: f64) -> Result<TodaState> {
        evolve(state, t, self.config.lattice.dt, self.config.lattice.integrator)
    }

    /// Sample mean of the spacings against the stretch `log β − ψ(θ)`.
    pub fn run_stretch(&self) -> Result<EnsembleStats> {
        let means = self.ensemble(|s| {
            let r: Vec<f64> = (0..s.len() - 1).map(|k| s.spacing(k)).collect();
            Ok(pairwise_sum(&r) / r.len() as f64)
        })?;
        let alpha = stretch(self.config.lattice.beta, self.config.lattice.theta);
        // Spacings are i.i.d., so each sample mean carries the variance of N − 1 spacings.
        let per_spacing = self.config.lattice.n_sites - 1;
        let (mean, var_of_means) = moments(&means);
        Ok(EnsembleStats::new(
            "stretch",
            mean,
            var_of_means * per_spacing as f64,
            means.len() * per_spacing,
            Some(alpha),
        ))
    }

    /// Pooled eigenvalue histogram against the bin integrals of `ϱ`.
    pub fn run_dos(&self) -> Result<DosResult> {
        let bins = self.config.histogram_bins;
        let lmax = self.kernels.grid.lambda_max;
        let width = 2.0 * lmax / bins as f64;
        let per_sample = self.ensemble(|s| {
            let vals = ql_eigenvalues(&s.b, &s.a)?;
            let mut counts = vec![0u64; bins];
            for v in &vals {
                let k = (((v + lmax) / width).floor().max(0.0) as usize).min(bins - 1);
                counts[k] += 1;
            }
            let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
            Ok((counts, pairwise_sum(&sq) / vals.len() as f64))
        })?;
        let mut counts = vec![0u64; bins];
        for (c, _) in &per_sample {
            counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        let total: u64 = counts.iter().sum();
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let edges: Vec<f64> = (0..=bins).map(|k| -lmax + k as f64 * width).collect();
        let predicted: Vec<f64> = edges.windows(2).map(|e| self.rho_integral(e[0], e[1])).collect();
        let tv = 0.5 * empirical.iter().zip(&predicted).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let seconds: Vec<f64> = per_sample.iter().map(|(_, m2)| *m2).collect();
        let (beta, theta) = (self.config.lattice.beta, self.config.lattice.theta);
        let second_moment =
            EnsembleStats::from_samples("dos_second_moment", &seconds, Some((1.0 + 2.0 * theta) / beta));
        Ok(DosResult { edges, counts, empirical, predicted, tv, second_moment })
    }

    /// `∫_a^b ϱ` by Gauss–Legendre on the interpolated density.
    fn rho_integral(&self, a: f64, b: f64) -> f64 {
        const X: [f64; 4] =
            [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
        const W: [f64; 4] =
            [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
        let panels = &self.kernels.grid.panels;
        let rho = &self.kernels.profiles.rho;
        // Two sub-intervals per bin keep the rule well inside the resolution of ϱ.
        let mut total = 0.0;
        for s in 0..2 {
            let lo = a + (b - a) * s as f64 / 2.0;
            let (c, h) = (lo + (b - a) / 4.0, (b - a) / 4.0);
            for (x, w) in X.iter().zip(&W) {
                for sign in [-1.0, 1.0] {
                    let y = (c + sign * x * h).clamp(panels.lo(), panels.hi());
                    total += w * h * panels.interpolate(rho, y).unwrap_or(0.0);
                }
            }
        }
        total
    }

    /// `N⁻¹ Var(Σ p(λ_i))` from eigenvalues against `σ²(p)`.
    pub fn run_linstat(&self) -> Result<EnsembleStats> {
        let p = self.config.polynomial.clone();
        let eval = |x: f64| p.iter().rev().fold(0.0, |acc, c| acc * x + c);
        let sums = self.ensemble(|s| {
            let vals = ql_eigenvalues(&s.b, &s.a)?;
            let terms: Vec<f64> = vals.iter().map(|&x| eval(x)).collect();
            Ok(pairwise_sum(&terms))
        })?;
        let n = self.config.lattice.n_sites as f64;
        let scaled: Vec<f64> = squared_deviations(&sums).iter().map(|d| d / n).collect();
        let phi: Vec<f64> = self.kernels.nodes().iter().map(|&x| eval(x)).collect();
        let predicted = self.kernels.sigma2(&phi);
        let id = format!("linstat[p={}]", p.iter().map(|c| fmt_num(*c)).collect::<Vec<_>>().join(" "));
        Ok(EnsembleStats::from_samples(id, &scaled, Some(predicted)))
    }

    /// Relative drift of `Tr L^m` (m = 1..4) and of the eigenvalues at `t = τ·T`
    /// for the first entry of `tau_list`, maximized over the ensemble.
    pub fn run_conservation(&self) -> Result<ConservationReport> {
        let t = self.config.tau_list.first().copied().unwrap_or(1.0) * self.config.t_scale;
        let per = self.ensemble(|s0| {
            let st = self.evolve_to(&s0, t)?;
            let mut drift = [0.0; 4];
            for (m, d) in drift.iter_mut().enumerate() {
                let m = m + 1;
                let scale: f64 = (0..s0.len()).map(|k| charge_at_slot(&s0.a, &s0.b, m, k).abs()).sum();
                *d = (st.trace_power(m) - s0.trace_power(m)).abs() / scale;
            }
            let mut l0 = ql_eigenvalues(&s0.b, &s0.a)?;
            let mut lt = ql_eigenvalues(&st.b, &st.a)?;
            l0.sort_by(f64::total_cmp);
            lt.sort_by(f64::total_cmp);
            let top = l0.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let eig = l0.iter().zip(&lt).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / top;
            Ok((drift, eig))
        })?;
        let mut trace_drift = [0.0f64; 4];
        let mut eigenvalue_drift = 0.0f64;
        for (d, e) in &per {
            trace_drift.iter_mut().zip(d).for_each(|(a, b)| *a = a.max(*b));
            eigenvalue_drift = eigenvalue_drift.max(*e);
        }
        Ok(ConservationReport { time: t, trace_drift, eigenvalue_drift })
    }

    /// Measures several snapshot observables on one shared ensemble.
    ///
    /// Every sample is evolved once through all requested times. Results come
    /// back in request order; a [`Observable::Q0`] contributes two entries
    /// (variance, then excess kurtosis).
    pub fn run_batch(&self, observables: &[Observable]) -> Result<Vec<EnsembleStats>> {
        let cfg = &self.config;
        let alpha = stretch(cfg.lattice.beta, cfg.lattice.theta);
        let mut times = vec![0.0];
        for o in observables {
            o.validate()?;
            times.extend(o.times());
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        let plans: Vec<Plan> = observables
            .iter()
            .map(|o| {
                let snaps = o.times().iter().map(|t| times.iter().position(|x| x == t).expect("time listed")).collect();
                let offsets = match o {
                    Observable::TwoPoint { m, n, f, t_scale, .. } => {
                        offsets(f, *t_scale, charge_center(*m) - charge_center(*n))
                    }
                    _ => Vec::new(),
                };
                Plan { obs: o.clone(), snaps, offsets }
            })
            .collect();
        for plan in &plans {
            let t_max = plan.obs.times().iter().copied().fold(0.0, f64::max);
            cfg.check_window(plan.reach(cfg, alpha), t_max)?;
        }
        let bulk = cfg.bulk_slots();
        let center = cfg.lattice.n_sites / 2;
        let raw: Vec<Vec<Vec<f64>>> = self.ensemble(|s0| {
            let mut snaps = Vec::with_capacity(times.len());
            let mut current = s0;
            for &t in &times {
                current = self.evolve_to(&current, t)?;
                snaps.push(current.clone());
            }
            Ok(plans.iter().map(|p| p.measure(&snaps, &bulk, center)).collect())
        })?;
        let mut out = Vec::new();
        for (i, plan) in plans.iter().enumerate() {
            let column = |c: usize| -> Vec<f64> { raw.iter().map(|r| r[i][c]).collect() };
            match &plan.obs {
                Observable::TwoPoint { m, n, tau, t_scale, f } => {
                    let (p, u, v, mbar) = (column(0), column(1), column(2), column(3));
                    let (mu_m, _) = moments(&mbar);
                    let (mu_n, _) = moments(&v);
                    let fsum: f64 = plan.offsets.iter().map(|(_, w)| w).sum();
                    let x: Vec<f64> =
                        (0..p.len()).map(|s| p[s] - mu_n * u[s] - mu_m * fsum * v[s] + mu_m * mu_n * fsum).collect();
                    let predicted = twopoint_limit(*m, *n, *tau, f, &self.kernels)?;
                    let id = format!("twopoint[m={m},n={n},tau={},T={}]", fmt_num(*tau), fmt_num(*t_scale));
                    out.push(EnsembleStats::from_samples(id, &x, Some(predicted)));
                }
                Observable::Current { m, q, q_prime, tau, t_scale } => {
                    let y: Vec<f64> = squared_deviations(&column(0)).iter().map(|d| d / t_scale).collect();
                    let spec = CurrentSpec { m: *m, q: *q, q_prime: *q_prime, tau: *tau };
                    let predicted = current_limit_cov(&spec, &spec, &self.kernels)?;
                    let id = format!(
                        "current_variance[m={m},q={},q'={},tau={},T={}]",
                        fmt_num(*q),
                        fmt_num(*q_prime),
                        fmt_num(*tau),
                        fmt_num(*t_scale)
                    );
                    out.push(EnsembleStats::from_samples(id, &y, Some(predicted)));
                }
                Observable::Q0 { tau, t_scale } => {
                    let q = column(0);
                    let y: Vec<f64> = squared_deviations(&q).iter().map(|d| d / t_scale).collect();
                    let predicted = q0_variance(*tau, &self.kernels)?;
                    let tag = format!("tau={},T={}", fmt_num(*tau), fmt_num(*t_scale));
                    out.push(EnsembleStats::from_samples(format!("q0_variance[{tag}]"), &y, Some(predicted)));
                    out.push(excess_kurtosis(format!("q0_excess_kurtosis[{tag}]"), &q));
                }
                Observable::Q0Increment { tau, t_scale } => {
                    let id = format!("q0_increment_slope[tau={},T={}]", fmt_num(*tau), fmt_num(*t_scale));
                    out.push(regression_slope(id, &column(0), &column(1)));
                }
            }
        }
        Ok(out)
    }

    pub fn run_twopoint(&self, m: u32, n: u32, tau: f64, f: &TestFunction) -> Result<EnsembleStats> {
        let obs = Observable::TwoPoint { m, n, tau, t_scale: self.config.t_scale, f: f.clone() };
        Ok(self.run_batch(&[obs])?.remove(0))
    }

    pub fn run_current(&self, m: u32, q: f64, q_prime: f64, tau: f64) -> Result<EnsembleStats> {
        let obs = Observable::Current { m, q, q_prime, tau, t_scale: self.config.t_scale };
        Ok(self.run_batch(&[obs])?.remove(0))
    }

    /// Variance of `T^{−1/2} q₀(τT)` followed by the excess kurtosis of `q₀(τT)`.
    pub fn run_q0(&self, tau: f64) -> Result<Vec<EnsembleStats>> {
        self.run_batch(&[Observable::Q0 { tau, t_scale: self.config.t_scale }])
    }

    /// Residual variance per unit time of bulk quasi-particles in a spectral bin.
    pub fn run_tracer(&self, center: f64, halfwidth: f64, tau: f64) -> Result<EnsembleStats> {
        if tau < 0.0 {
            return Err(Error::NegativeTau(tau));
        }
        let cfg = &self.config;
        let t = tau * cfg.t_scale;
        let bulk = cfg.bulk_slots();
        let center_slot = cfg.lattice.n_sites / 2;
        cfg.check_window((center_slot - bulk.start).max(bulk.end - center_slot) as f64, t)?;
        let kernels = &*self.kernels;
        let per = self.ensemble(|s0| {
            let st = self.evolve_to(&s0, t)?;
            let f0 = quasi_frame_fast(&s0)?;
            let ft = quasi_frame_fast(&st)?;
            let perm = track_ranks(&f0, &ft);
            let mut sum = 0.0;
            let mut count = 0usize;
            for k in 0..f0.eigenvalues.len() {
                let lam = f0.eigenvalues[k];
                let slot = (f0.phi[k] - s0.n1) as usize;
                if (lam - center).abs() > halfwidth || !bulk.contains(&slot) {
                    continue;
                }
                let displacement = ft.q_by_rank[perm[k]] - f0.q_by_rank[k];
                let r = if t == 0.0 { displacement } else { displacement - t * kernels.v_eff_at(lam)? };
                sum += r * r;
                count += 1;
            }
            Ok((sum, count))
        })?;
        let total: usize = per.iter().map(|p| p.1).sum();
        if total == 0 {
            return Err(Error::EmptyBin { center, halfwidth });
        }
        let sums: Vec<f64> = per.iter().map(|p| p.0).collect();
        let ratio = pairwise_sum(&sums) / total as f64;
        // Cluster-robust variance of the ratio estimator, samples as clusters.
        let n = per.len() as f64;
        let dev: Vec<f64> = per.iter().map(|(s, c)| (s - ratio * *c as f64).powi(2)).collect();
        let ratio_var = if n > 1.0 { n / (n - 1.0) * pairwise_sum(&dev) / (total as f64).powi(2) } else { 0.0 };
        let scale = if t > 0.0 { 1.0 / t } else { 1.0 };
        let predicted = kernels.diffusivity(center)?;
        let id = format!(
            "tracer[center={},halfwidth={},tau={},T={}]",
            fmt_num(center),
            fmt_num(halfwidth),
            fmt_num(tau),
            fmt_num(cfg.t_scale)
        );
        Ok(EnsembleStats::new(id, ratio * scale, ratio_var * scale * scale * total as f64, total, Some(predicted)))
    }

    /// Distribution of `|residual|/√t` of bulk quasi-particles at `t = τ·T`.
    pub fn run_scattering(&self, tau: f64) -> Result<ScatteringSummary> {
        if tau < 0.0 {
            return Err(Error::NegativeTau(tau));
        }
        let t = tau * self.config.t_scale;
        let bulk = self.config.bulk_slots();
        let per = self.ensemble(|s0| {
            let st = self.evolve_to(&s0, t)?;
            let f0 = quasi_frame_fast(&s0)?;
            let ft = quasi_frame_fast(&st)?;
            Ok(scaled_residuals(&f0, &ft, t, s0.n1, &bulk))
        })?;
        let pooled: Vec<f64> = per.into_iter().flatten().collect();
        Ok(ScatteringSummary::from_values(
            format!("scattering[tau={},T={}]", fmt_num(tau), fmt_num(self.config.t_scale)),
            pooled,
        ))
    }
}

/// `|residual_k|/√t` for ranks whose localization center at time 0 lies in `bulk`
/// (plain `|residual_k|` at `t = 0`).
pub fn scaled_residuals(f0: &QuasiFrame, ft: &QuasiFrame, t: f64, n1: i64, bulk: &Range<usize>) -> Vec<f64> {
    let ranks: Vec<usize> = (0..f0.phi.len()).filter(|&k| bulk.contains(&((f0.phi[k] - n1) as usize))).collect();
    let scale = if t > 0.0 { 1.0 / t.sqrt() } else { 1.0 };
    scattering_residual_for(f0, ft, t, EPS_LOG, &ranks).iter().map(|r| r.abs() * scale).collect()
}

fn excess_kurtosis(id: String, xs: &[f64]) -> EnsembleStats {
    let n = xs.len();
    let (mean, var) = moments(xs);
    let m4: Vec<f64> = xs.iter().map(|x| (x - mean).powi(4)).collect();
    let m2: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let (m4, m2) = (pairwise_sum(&m4) / n as f64, pairwise_sum(&m2) / n as f64);
    let g2 = if var > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    // Large-sample variance of the excess kurtosis of Gaussian data is 24/n.
    EnsembleStats::new(id, g2, 24.0, n, Some(0.0))
}

fn regression_slope(id: String, x: &[f64], y: &[f64]) -> EnsembleStats {
    let n = x.len();
    let (mx, _) = moments(x);
    let (my, _) = moments(y);
    let sxx: Vec<f64> = x.iter().map(|a| (a - mx).powi(2)).collect();
    let sxy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let (sxx, sxy) = (pairwise_sum(&sxx), pairwise_sum(&sxy));
    if !(sxx > 0.0) || n < 3 {
        return EnsembleStats::new(id, 0.0, 0.0, n.max(1), Some(0.0));
    }
    let slope = sxy / sxx;
    let res: Vec<f64> = x.iter().zip(y).map(|(a, b)| ((b - my) - slope * (a - mx)).powi(2)).collect();
    let se2 = pairwise_sum(&res) / (n - 2) as f64 / sxx;
    EnsembleStats::new(id, slope, se2 * n as f64, n, Some(0.0))
}

/// Pooled eigenvalue histogram and its comparison with `ϱ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosResult {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Fraction of eigenvalues per bin; eigenvalues beyond the window fall in the end bins.
    pub empirical: Vec<f64>,
    /// `∫ϱ` over each bin.
    pub predicted: Vec<f64>,
    /// Total-variation distance `½ Σ |empirical − predicted|`.
    pub tv: f64,
    pub second_moment: EnsembleStats,
}

impl DosResult {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lo", "hi", "count", "empirical", "predicted"])?;
        for k in 0..self.counts.len() {
            w.write_record([
                fmt_num(self.edges[k]),
                fmt_num(self.edges[k + 1]),
                self.counts[k].to_string(),
                fmt_num(self.empirical[k]),
                fmt_num(self.predicted[k]),
            ])?;
        }
        w.flush()
    }
}

/// Maximal conservation defects over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub time: f64,
    /// `|ΔTr L^m| / Σ_k |[L^m]_kk|` for m = 1..4.
    pub trace_drift: [f64; 4],
    /// `max_k |λ_k(t) − λ_k(0)| / max_k |λ_k(0)|`.
    pub eigenvalue_drift: f64,
}

/// Median and 95th percentile of pooled scaled residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringSummary {
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub stats: EnsembleStats,
}

impl ScatteringSummary {
    pub fn from_values(id: String, values: Vec<f64>) -> Self {
        let stats = EnsembleStats::from_samples(id, &values, None);
        let mut sorted = values;
        sorted.sort_by(f64::total_cmp);
        let quantile = |p: f64| {
            if sorted.is_empty() {
                return f64::NAN;
            }
            let k = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
            sorted[k]
        };
        Self { median: quantile(0.5), p95: quantile(0.95), max: sorted.last().copied().unwrap_or(f64::NAN), stats }
    }
}

/// Writes one CSV row per observable.
pub fn write_stats_csv<W: Write>(experiment: &str, stats: &[EnsembleStats], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["experiment", "id", "mean", "variance", "std_error", "count", "predicted", "z_score"])?;
    let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    for s in stats {
        w.write_record([
            experiment.to_string(),
            s.id.clone(),
            fmt_num(s.mean),
            fmt_num(s.variance),
            fmt_num(s.std_error),
            s.count.to_string(),
            opt(s.predicted),
            opt(s.z_score),
        ])?;
    }
    w.flush()
}
