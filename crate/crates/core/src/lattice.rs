//! Finite Toda lattice with free ends, in positions/momenta and Flaschka variables.
//!
//! Sites run over the window `[n1, n2]` with `n1 = −⌊N/2⌋` and `n2 = n1 + N − 1`.
//! The Hamiltonian is `Σ p_j²/2 + Σ exp(q_j − q_{j+1})` with free ends, and the
//! Flaschka variables are `a_i = exp(−(q_{i+1} − q_i)/2)`, `b_i = p_i`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symplectic splitting scheme used by [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// Position Verlet, second order.
    Verlet2,
    /// Yoshida triple composition of position Verlet, fourth order.
    Yoshida4,
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verlet2" => Ok(Self::Verlet2),
            "yoshida4" => Ok(Self::Yoshida4),
            other => Err(Error::InvalidConfig(format!("unknown integrator `{other}`"))),
        }
    }
}

/// Physical and numerical parameters of a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    /// Inverse temperature.
    pub beta: f64,
    /// Gamma shape of `a_i²` (the pressure-like parameter).
    pub theta: f64,
    /// Number of particles `N`.
    pub n_sites: usize,
    /// Integrator time step.
    pub dt: f64,
    /// Splitting scheme.
    pub integrator: Integrator,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { beta: 1.0, theta: 0.25, n_sites: 1024, dt: 0.005, integrator: Integrator::Yoshida4 }
    }
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidConfig(format!("theta must be positive, got {}", self.theta)));
        }
        if self.n_sites < 2 {
            return Err(Error::InvalidConfig(format!("n_sites must be at least 2, got {}", self.n_sites)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    /// Leftmost site index `n1 = −⌊N/2⌋`.
    pub fn n1(&self) -> i64 {
        -((self.n_sites / 2) as i64)
    }

    /// Rightmost site index `n2 = n1 + N − 1`.
    pub fn n2(&self) -> i64 {
        self.n1() + self.n_sites as i64 - 1
    }
}

/// Microscopic state at one time stamp.
///
/// Arrays are stored left to right, so array slot `k` holds site `n1 + k`.
/// `a` has one entry fewer than `b` and `q` because `a_{n2}` vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct TodaState {
    pub n1: i64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub q: Vec<f64>,
    pub time: f64,
}

impl TodaState {
    /// Builds a state from positions and momenta, recomputing the Flaschka `a`.
    pub fn from_positions(n1: i64, q: Vec<f64>, p: Vec<f64>, time: f64) -> Result<Self> {
        if q.len() != p.len() || q.len() < 2 {
            return Err(Error::InvalidConfig("positions and momenta must have equal length ≥ 2".into()));
        }
        let mut state = Self { n1, a: vec![0.0; q.len() - 1], b: p, q, time };
        state.refresh_flaschka();
        Ok(state)
    }

    /// Builds a state from Flaschka variables, anchoring the site-0 position at 0
    /// (or the leftmost site when 0 lies outside the window).
    pub fn from_flaschka(n1: i64, a: Vec<f64>, b: Vec<f64>, time: f64) -> Result<Self> {
        if a.len() + 1 != b.len() {
            return Err(Error::InvalidConfig("need exactly one fewer a than b".into()));
        }
        if let Some(bad) = a.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidConfig(format!("Flaschka a must be positive, got {bad}")));
        }
        let n = b.len();
        let mut q = vec![0.0; n];
        for k in 0..n - 1 {
            q[k + 1] = q[k] - 2.0 * a[k].ln();
        }
        let anchor = usize::try_from(-n1).ok().filter(|&k| k < n).unwrap_or(0);
        let shift = q[anchor];
        q.iter_mut().for_each(|x| *x -= shift);
        Ok(Self { n1, a, b, q, time })
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn n2(&self) -> i64 {
        self.n1 + self.len() as i64 - 1
    }

    /// Momenta; identical to the diagonal Flaschka variables.
    pub fn p(&self) -> &[f64] {
        &self.b
    }

    /// Array slot of a site index, or an error when outside the window.
    pub fn slot(&self, site: i64) -> Result<usize> {
        if site < self.n1 || site > self.n2() {
            return Err(Error::OutOfWindow { index: site, n1: self.n1, n2: self.n2() });
        }
        Ok((site - self.n1) as usize)
    }

    /// Spacing `r_k = q_{k+1} − q_k` at array slot `k`.
    pub fn spacing(&self, k: usize) -> f64 {
        self.q[k + 1] - self.q[k]
    }

    /// Recomputes `a` from the current positions.
    pub fn refresh_flaschka(&mut self) {
        for k in 0..self.a.len() {
            self.a[k] = (-0.5 * (self.q[k + 1] - self.q[k])).exp();
        }
    }

    /// `Tr L^m` of the Lax matrix.
    pub fn trace_power(&self, m: usize) -> f64 {
        (0..self.len()).map(|k| charge_at_slot(&self.a, &self.b, m, k)).sum()
    }
}

/// 64-bit mixing of a base seed and a stream index (SplitMix64 finalizer).
///
/// Used to derive per-sample seeds so that ensembles are reproducible
/// regardless of how samples are distributed over workers.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws a state from the thermal equilibrium measure.
///
/// `b_i ~ N(0, 1/β)` and `a_i² ~ Gamma(shape θ, rate β)`, all independent.
pub fn sample_equilibrium(cfg: &LatticeConfig, seed: u64) -> Result<TodaState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_sites;
    let gamma = Gamma::new(cfg.theta, 1.0 / cfg.beta).map_err(|e| Error::InvalidConfig(format!("gamma law: {e}")))?;
    let normal =
        Normal::new(0.0, 1.0 / cfg.beta.sqrt()).map_err(|e| Error::InvalidConfig(format!("normal law: {e}")))?;
    let mut a = Vec::with_capacity(n - 1);
    for _ in 0..n - 1 {
        // a² can underflow to zero for tiny θ. Clamping at the smallest normal
        // double keeps the spacing finite (r ≤ 709) without visibly changing the law.
        let a2: f64 = gamma.sample(&mut rng);
        a.push(a2.max(f64::MIN_POSITIVE).sqrt());
    }
    let b: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    TodaState::from_flaschka(cfg.n1(), a, b, 0.0)
}

/// Fourth-order Yoshida weights for a symmetric second-order base step.
const YOSHIDA_W1: f64 = 1.351_207_191_959_657_8;
const YOSHIDA_W0: f64 = -1.702_414_383_919_315_3;

/// Reusable integrator buffers.
struct Stepper {
    force: Vec<f64>,
}

impl Stepper {
    fn new(n: usize) -> Self {
        Self { force: vec![0.0; n] }
    }

    /// One position-Verlet step of size `h`: drift h/2, kick h, drift h/2.
    fn verlet(&mut self, q: &mut [f64], p: &mut [f64], h: f64, time: f64) -> Result<()> {
        let half = 0.5 * h;
        q.iter_mut().zip(p.iter()).for_each(|(x, v)| *x += half * v);
        self.kick(q, p, h, time)?;
        q.iter_mut().zip(p.iter()).for_each(|(x, v)| *x += half * v);
        Ok(())
    }

    fn kick(&mut self, q: &[f64], p: &mut [f64], h: f64, time: f64) -> Result<()> {
        let n = q.len();
        // force[k] = exp(q_k − q_{k+1}) is the bond tension between slots k and k+1.
        let mut finite = true;
        for k in 0..n - 1 {
            let e = (q[k] - q[k + 1]).exp();
            finite &= e.is_finite();
            self.force[k] = e;
        }
        if !finite {
            return Err(Error::Overflow { time });
        }
        p[0] -= h * self.force[0];
        for k in 1..n - 1 {
            p[k] += h * (self.force[k - 1] - self.force[k]);
        }
        p[n - 1] += h * self.force[n - 2];
        Ok(())
    }

    fn step(&mut self, scheme: Integrator, q: &mut [f64], p: &mut [f64], h: f64, time: f64) -> Result<()> {
        match scheme {
            Integrator::Verlet2 => self.verlet(q, p, h, time),
            Integrator::Yoshida4 => {
                self.verlet(q, p, YOSHIDA_W1 * h, time)?;
                self.verlet(q, p, YOSHIDA_W0 * h, time)?;
                self.verlet(q, p, YOSHIDA_W1 * h, time)
            }
        }
    }
}

/// Advances `state` to `t_final` under the Toda flow.
pub fn evolve(state: &TodaState, t_final: f64, dt: f64, scheme: Integrator) -> Result<TodaState> {
    let mut out = state.clone();
    integrate(&mut out, t_final, dt, scheme, None)?;
    Ok(out)
}

/// Advances a state in place, calling `observer` after every completed step.
///
/// The Flaschka `a` are refreshed before each observer call. Steps have size
/// `dt` except the last, which is shortened to land exactly on `t_final`.
pub fn evolve_in_place<F>(
    state: &mut TodaState,
    t_final: f64,
    dt: f64,
    scheme: Integrator,
    mut observer: F,
) -> Result<()>
where
    F: FnMut(&TodaState),
{
    integrate(state, t_final, dt, scheme, Some(&mut observer))
}

fn integrate(
    state: &mut TodaState,
    t_final: f64,
    dt: f64,
    scheme: Integrator,
    mut observer: Option<&mut dyn FnMut(&TodaState)>,
) -> Result<()> {
    if t_final < state.time {
        return Err(Error::BackwardsTime { requested: t_final, current: state.time });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let span = t_final - state.time;
    if span == 0.0 {
        return Ok(());
    }
    let t0 = state.time;
    let steps = (span / dt).ceil().max(1.0) as u64;
    let mut stepper = Stepper::new(state.len());
    for s in 0..steps {
        let start = t0 + s as f64 * dt;
        let end = if s + 1 == steps { t_final } else { t0 + (s + 1) as f64 * dt };
        stepper.step(scheme, &mut state.q, &mut state.b, end - start, start)?;
        state.time = end;
        // Without an observer nobody looks at `a` between steps, so refreshing
        // once at the end is equivalent and saves one exponential per bond.
        if let Some(obs) = observer.as_mut() {
            state.refresh_flaschka();
            obs(state);
        }
    }
    state.refresh_flaschka();
    Ok(())
}

/// Applies the Lax matrix restricted to slots `lo..=hi` (free ends outside).
fn lax_apply_band(a: &[f64], b: &[f64], v: &[f64], lo: usize, hi: usize, out: &mut [f64]) {
    for k in lo..=hi {
        let mut acc = b[k] * v[k - lo];
        if k > lo {
            acc += a[k - 1] * v[k - 1 - lo];
        }
        if k < hi {
            acc += a[k] * v[k + 1 - lo];
        }
        out[k - lo] = acc;
    }
}

/// Computes `L^m e_k` on the band of slots within distance `m` of `k`.
///
/// Returns the band's first slot together with the band values.
fn lax_power_column(a: &[f64], b: &[f64], m: usize, k: usize) -> (usize, Vec<f64>) {
    let n = b.len();
    let lo = k.saturating_sub(m);
    let hi = (k + m).min(n - 1);
    let width = hi - lo + 1;
    let mut v = vec![0.0; width];
    let mut w = vec![0.0; width];
    v[k - lo] = 1.0;
    for _ in 0..m {
        lax_apply_band(a, b, &v, lo, hi, &mut w);
        std::mem::swap(&mut v, &mut w);
    }
    (lo, v)
}

/// `[L^m]_{kk}` at array slot `k` by banded recursion.
pub fn charge_at_slot(a: &[f64], b: &[f64], m: usize, k: usize) -> f64 {
    match m {
        0 => 1.0,
        1 => b[k],
        _ => {
            let (lo, v) = lax_power_column(a, b, m, k);
            v[k - lo]
        }
    }
}

/// `a_{k−1} [L^m]_{k,k−1}` at array slot `k ≥ 1` by banded recursion.
pub fn current_at_slot(a: &[f64], b: &[f64], m: usize, k: usize) -> f64 {
    match m {
        0 => 0.0,
        1 => a[k - 1] * a[k - 1],
        _ => {
            let (lo, v) = lax_power_column(a, b, m, k);
            a[k - 1] * v[k - 1 - lo]
        }
    }
}

/// Local charge `k_i^[m] = [L^m]_{ii}` at site `i`, or the modified charge
/// `K_i^[m]` which replaces `m = 0` by the spacing `r_i`.
pub fn local_charge(state: &TodaState, m: usize, site: i64, modified: bool) -> Result<f64> {
    let k = state.slot(site)?;
    if modified && m == 0 {
        if k + 1 >= state.len() {
            return Err(Error::OutOfWindow { index: site, n1: state.n1, n2: state.n2() - 1 });
        }
        return Ok(state.spacing(k));
    }
    Ok(charge_at_slot(&state.a, &state.b, m, k))
}

/// Local current `j_i^[m] = a_{i−1} [L^m]_{i,i−1}` at site `i > n1`.
pub fn local_current(state: &TodaState, m: usize, site: i64) -> Result<f64> {
    let k = state.slot(site)?;
    if k == 0 {
        return Err(Error::OutOfWindow { index: site, n1: state.n1 + 1, n2: state.n2() });
    }
    Ok(current_at_slot(&state.a, &state.b, m, k))
}

/// Charges at every slot (modified charges stop one slot short of the right end).
pub fn charge_field(state: &TodaState, m: usize, modified: bool) -> Vec<f64> {
    if modified && m == 0 {
        (0..state.len() - 1).map(|k| state.spacing(k)).collect()
    } else {
        (0..state.len()).map(|k| charge_at_slot(&state.a, &state.b, m, k)).collect()
    }
}

/// Finite-window integrated current `J_t^[m](q, q′)`.
pub fn integrated_current(state0: &TodaState, state_t: &TodaState, m: usize, q: f64, q_prime: f64) -> Result<f64> {
    check_shapes(state0, state_t)?;
    let mut total = 0.0;
    for k in 0..state0.len() {
        if state0.q[k] < q {
            total += charge_at_slot(&state0.a, &state0.b, m, k);
        }
        if state_t.q[k] < q_prime {
            total -= charge_at_slot(&state_t.a, &state_t.b, m, k);
        }
    }
    Ok(total)
}

/// Anchored form of the integrated current: partial sums over slots `≥ anchor`
/// plus the time-integrated current through the anchor slot.
pub fn integrated_current_anchored(
    state0: &TodaState,
    state_t: &TodaState,
    m: usize,
    q: f64,
    q_prime: f64,
    anchor: usize,
    current_time_integral: f64,
) -> Result<f64> {
    check_shapes(state0, state_t)?;
    let mut total = current_time_integral;
    for k in anchor..state0.len() {
        if state0.q[k] < q {
            total += charge_at_slot(&state0.a, &state0.b, m, k);
        }
        if state_t.q[k] < q_prime {
            total -= charge_at_slot(&state_t.a, &state_t.b, m, k);
        }
    }
    Ok(total)
}

fn check_shapes(s0: &TodaState, st: &TodaState) -> Result<()> {
    if s0.len() != st.len() || s0.n1 != st.n1 {
        return Err(Error::InvalidConfig("states belong to different windows".into()));
    }
    Ok(())
}

/// Evolves while accumulating `∫ j_anchor^[m](s) ds` with the trapezoid rule.
pub fn evolve_with_current_integral(
    state: &TodaState,
    t_final: f64,
    dt: f64,
    scheme: Integrator,
    m: usize,
    anchor: usize,
) -> Result<(TodaState, f64)> {
    let mut out = state.clone();
    let mut prev_time = out.time;
    let mut prev = current_at_slot(&out.a, &out.b, m, anchor);
    let mut integral = 0.0;
    evolve_in_place(&mut out, t_final, dt, scheme, |s| {
        let now = current_at_slot(&s.a, &s.b, m, anchor);
        integral += 0.5 * (now + prev) * (s.time - prev_time);
        prev = now;
        prev_time = s.time;
    })?;
    Ok((out, integral))
}
