//! Spectral side of the Lax matrix: eigendecomposition, localization centers,
//! quasi-particle frames and the asymptotic scattering residual.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::lattice::TodaState;

/// Maximum QL sweeps per eigenvalue before giving up.
const QL_MAX_SWEEPS: usize = 60;

/// Default floor of the regularized logarithm `ℓ(x) = ½ log(x² + eps²)`.
pub const EPS_LOG: f64 = 1e-12;

/// Regularized logarithm `½ log(x² + eps²)`.
pub fn reg_log(x: f64, eps: f64) -> f64 {
    0.5 * (x * x + eps * eps).ln()
}

/// Which tridiagonal algorithm computes the eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorMethod {
    /// Implicit-shift QL with accumulated rotations, O(N³).
    Ql,
    /// QL eigenvalues followed by inverse iteration, O(N²).
    InverseIteration,
}

/// Eigenvalues sorted in decreasing order, optionally with eigenvectors.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Vector `j` occupies `vectors[j*n .. (j+1)*n]`.
    vectors: Option<Vec<f64>>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn has_vectors(&self) -> bool {
        self.vectors.is_some()
    }

    /// Eigenvector paired with `eigenvalues[j]`.
    pub fn vector(&self, j: usize) -> Option<&[f64]> {
        let n = self.len();
        self.vectors.as_ref().map(|v| &v[j * n..(j + 1) * n])
    }

    /// Builds a spectrum from explicit parts; used for synthetic tests and by
    /// callers that run their own solver. Pairs are re-sorted by decreasing eigenvalue.
    pub fn from_parts(eigenvalues: Vec<f64>, vectors: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let n = eigenvalues.len();
        if let Some(v) = &vectors {
            if v.len() != n || v.iter().any(|x| x.len() != n) {
                return Err(Error::InvalidConfig("eigenvector array must be N vectors of length N".into()));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eigenvalues[j].total_cmp(&eigenvalues[i]).then(i.cmp(&j)));
        let vals = order.iter().map(|&i| eigenvalues[i]).collect();
        let vecs = vectors.map(|v| order.iter().flat_map(|&i| v[i].iter().copied()).collect());
        Ok(Self { eigenvalues: vals, vectors: vecs })
    }
}

/// Full spectrum of the Lax matrix of `state` by implicit-shift QL.
pub fn eigendecompose(state: &TodaState, vectors: bool) -> Result<Spectrum> {
    let method = VectorMethod::Ql;
    eigendecompose_tridiagonal(&state.b, &state.a, vectors.then_some(method))
}

/// Full spectrum of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (`e[k]` couples `k` and `k+1`).
pub fn eigendecompose_tridiagonal(d: &[f64], e: &[f64], vectors: Option<VectorMethod>) -> Result<Spectrum> {
    let n = d.len();
    if e.len() + 1 != n {
        return Err(Error::InvalidConfig("off-diagonal must have length N − 1".into()));
    }
    match vectors {
        None => {
            let mut vals = ql_eigenvalues(d, e)?;
            vals.sort_by(|x, y| y.total_cmp(x));
            Ok(Spectrum { eigenvalues: vals, vectors: None })
        }
        Some(VectorMethod::Ql) => {
            let (vals, z) = ql_with_vectors(d, e)?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
            let eigenvalues = order.iter().map(|&i| vals[i]).collect();
            let mut vecs = Vec::with_capacity(n * n);
            for &i in &order {
                vecs.extend_from_slice(&z[i * n..(i + 1) * n]);
            }
            Ok(Spectrum { eigenvalues, vectors: Some(vecs) })
        }
        Some(VectorMethod::InverseIteration) => {
            let mut vals = ql_eigenvalues(d, e)?;
            vals.sort_by(|x, y| y.total_cmp(x));
            let mut vecs = vec![0.0; n * n];
            inverse_iteration(d, e, &vals, |j, v| vecs[j * n..(j + 1) * n].copy_from_slice(v));
            Ok(Spectrum { eigenvalues: vals, vectors: Some(vecs) })
        }
    }
}

/// Core implicit-shift QL iteration on `(diag, off)`; `off` has length n with
/// a trailing zero. When `z` is given, rotations are accumulated into its rows
/// (row `i` of `z` is the vector that ends up paired with `diag[i]`).
fn ql_core(diag: &mut [f64], off: &mut [f64], mut z: Option<&mut [f64]>) -> Result<()> {
    let n = diag.len();
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > QL_MAX_SWEEPS {
                return Err(Error::NoConvergence { index: l, iterations: sweeps });
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_deref_mut() {
                    let (lo, hi) = z.split_at_mut((i + 1) * n);
                    let zi = &mut lo[i * n..];
                    let zi1 = &mut hi[..n];
                    for k in 0..n {
                        let f = zi1[k];
                        zi1[k] = s * zi[k] + c * f;
                        zi[k] = c * zi[k] - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Eigenvalues only (unsorted), O(N²).
pub fn ql_eigenvalues(d: &[f64], e: &[f64]) -> Result<Vec<f64>> {
    let mut diag = d.to_vec();
    let mut off: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).collect();
    ql_core(&mut diag, &mut off, None)?;
    Ok(diag)
}

/// Eigenvalues (unsorted) and the row-stored eigenvector matrix.
fn ql_with_vectors(d: &[f64], e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = d.len();
    let mut diag = d.to_vec();
    let mut off: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).collect();
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    ql_core(&mut diag, &mut off, Some(&mut z))?;
    Ok((diag, z))
}

/// Number of eigenvalues strictly below `x` (Sturm sequence count).
pub fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = d[0] - x;
    for k in 0.. {
        if q == 0.0 {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
        if k + 1 == d.len() {
            break;
        }
        q = d[k + 1] - x - e[k] * e[k] / q;
    }
    count
}

/// Eigenvalues in decreasing order by Sturm bisection, to about machine precision.
pub fn bisection_eigenvalues(d: &[f64], e: &[f64]) -> Vec<f64> {
    let n = d.len();
    // Gershgorin bounds.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..n {
        let r = if k > 0 { e[k - 1].abs() } else { 0.0 } + if k + 1 < n { e[k].abs() } else { 0.0 };
        lo = lo.min(d[k] - r);
        hi = hi.max(d[k] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    (0..n)
        .map(|j| {
            // j-th largest is the (n − j)-th smallest: count(x) ≥ n − j  ⇔  x > λ.
            let target = n - j;
            let (mut a, mut b) = (lo - 1e-12 * scale, hi + 1e-12 * scale);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if sturm_count(d, e, mid) >= target {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

/// Tridiagonal LU with partial pivoting of `T − λ I`, reused across inverse iterations.
struct ShiftedLu {
    u0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mult: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedLu {
    fn new(d: &[f64], e: &[f64], lambda: f64, floor: f64) -> Self {
        let n = d.len();
        let mut u0 = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        let mut mult = vec![0.0; n];
        let mut swapped = vec![false; n];
        // Active row k holds (diag, sup) at columns (k, k+1).
        let mut diag = d[0] - lambda;
        let mut sup = if n > 1 { e[0] } else { 0.0 };
        for k in 0..n - 1 {
            let sub = e[k];
            let next_diag = d[k + 1] - lambda;
            let next_sup = if k + 2 < n { e[k + 1] } else { 0.0 };
            if diag.abs() >= sub.abs() {
                let piv = if diag == 0.0 { floor } else { diag };
                let m = sub / piv;
                u0[k] = piv;
                u1[k] = sup;
                u2[k] = 0.0;
                mult[k] = m;
                diag = next_diag - m * sup;
                sup = next_sup;
            } else {
                let m = diag / sub;
                u0[k] = sub;
                u1[k] = next_diag;
                u2[k] = next_sup;
                mult[k] = m;
                swapped[k] = true;
                diag = sup - m * next_diag;
                sup = -m * next_sup;
            }
        }
        u0[n - 1] = if diag.abs() < floor { floor.copysign(if diag == 0.0 { 1.0 } else { diag }) } else { diag };
        for k in 0..n - 1 {
            if u0[k].abs() < floor {
                u0[k] = floor.copysign(if u0[k] == 0.0 { 1.0 } else { u0[k] });
            }
        }
        Self { u0, u1, u2, mult, swapped }
    }

    fn solve(&self, y: &mut [f64]) {
        let n = y.len();
        for k in 0..n - 1 {
            if self.swapped[k] {
                y.swap(k, k + 1);
            }
            y[k + 1] -= self.mult[k] * y[k];
        }
        for k in (0..n).rev() {
            let mut acc = y[k];
            if k + 1 < n {
                acc -= self.u1[k] * y[k + 1];
            }
            if k + 2 < n {
                acc -= self.u2[k] * y[k + 2];
            }
            y[k] = acc / self.u0[k];
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Eigenvectors for known eigenvalues (sorted decreasingly) by inverse iteration.
///
/// Eigenvalues closer than `1e-5·‖T‖` form clusters whose vectors are
/// re-orthogonalized against each other. Each finished vector is handed to
/// `sink(j, vector)`, so callers can keep only what they need.
pub fn inverse_iteration<F>(d: &[f64], e: &[f64], eigenvalues: &[f64], mut sink: F)
where
    F: FnMut(usize, &[f64]),
{
    let n = d.len();
    let norm = (0..n)
        .map(|k| d[k].abs() + if k > 0 { e[k - 1].abs() } else { 0.0 } + if k + 1 < n { e[k].abs() } else { 0.0 })
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let cluster_gap = 1e-5 * norm;
    let floor = f64::EPSILON * norm;
    let mut cluster: Vec<Vec<f64>> = Vec::new();
    let mut v = vec![0.0; n];
    for (j, &lambda) in eigenvalues.iter().enumerate() {
        if j == 0 || (eigenvalues[j - 1] - lambda).abs() > cluster_gap {
            cluster.clear();
        }
        // Members of a cluster get slightly separated shifts so the factorizations differ.
        let shift = lambda + cluster.len() as f64 * 10.0 * floor;
        let lu = ShiftedLu::new(d, e, shift, floor);
        let mut state = (j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xd1b5_4a32_d192_ed03;
        for x in v.iter_mut() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            *x = 0.5 + (state >> 11) as f64 / (1u64 << 53) as f64;
        }
        normalize(&mut v);
        for _ in 0..3 {
            lu.solve(&mut v);
            if v.iter().any(|x| !x.is_finite()) {
                // Pathological growth: restart from a unit vector.
                v.iter_mut().for_each(|x| *x = 0.0);
                v[j % n] = 1.0;
                lu.solve(&mut v);
            }
            for u in &cluster {
                let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, a)| *x -= dot * a);
            }
            normalize(&mut v);
        }
        // Fix the sign so that the largest component is positive.
        let (imax, _) =
            v.iter().enumerate().fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        sink(j, &v);
        cluster.push(v.clone());
    }
}

/// Admissible localization edges of one eigenvector: `(slot, |u(slot)|²)`.
pub type Candidates = Vec<(usize, f64)>;

/// Result of the localization-center assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    /// `phi[j]` is the slot holding the localization center of eigenvector `j`.
    pub phi: Vec<usize>,
    /// Inverse map: `phi_inv[slot]` is the eigenvector rank centred there.
    pub phi_inv: Vec<usize>,
    /// `min_j |u_j(phi(j))|`.
    pub zeta_achieved: f64,
    /// `Σ_j |u_j(phi(j))|²`.
    pub weight: f64,
}

/// Relative slack on the `1/(2N)` admissibility threshold, absorbing rounding.
const ADMISSIBLE_SLACK: f64 = 1e-9;

/// Admissible edges of one eigenvector for a lattice of `n` sites.
pub fn admissible_candidates(v: &[f64]) -> Candidates {
    let n = v.len();
    let thr = (1.0 - ADMISSIBLE_SLACK) / (2.0 * n as f64);
    let thr2 = thr * thr;
    v.iter().enumerate().filter(|(_, x)| *x * *x >= thr2).map(|(i, x)| (i, x * x)).collect()
}

/// Localization bijection maximizing `Σ_j |u_j(φ(j))|²` among all bijections
/// that satisfy `|u_j(φ(j))| ≥ 1/(2N)`.
pub fn localization_bijection(spec: &Spectrum) -> Result<Localization> {
    let n = spec.len();
    let mut cands = Vec::with_capacity(n);
    for j in 0..n {
        let v = spec.vector(j).ok_or(Error::MissingEigenvectors)?;
        cands.push(admissible_candidates(v));
    }
    match assign_max_weight(n, &cands) {
        Some(loc) => Ok(loc),
        None => {
            // The admissible graph always carries a perfect matching for exact
            // eigenvectors; fall back to all edges if rounding broke that.
            let dense: Vec<Candidates> =
                (0..n).map(|j| spec.vector(j).unwrap().iter().enumerate().map(|(i, x)| (i, x * x)).collect()).collect();
            Ok(assign_max_weight(n, &dense).expect("complete bipartite graph has a perfect matching"))
        }
    }
}

#[derive(PartialEq)]
struct HeapItem {
    dist: f64,
    col: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, ties to the lower site index.
        other.dist.total_cmp(&self.dist).then(other.col.cmp(&self.col))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Maximum-weight perfect matching of eigenvectors (rows) to sites (columns)
/// over the sparse edge lists `cands`, by successive shortest augmenting paths
/// with Dijkstra on reduced costs `1 − w`. Returns `None` if no perfect
/// matching exists.
pub fn assign_max_weight(n: usize, cands: &[Candidates]) -> Option<Localization> {
    let cost = |w: f64| 1.0 - w;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut row_of_col = vec![usize::MAX; n];
    let mut col_of_row = vec![usize::MAX; n];

    // Greedy start: each row claims its cheapest column if still free.
    for (r, edges) in cands.iter().enumerate() {
        let best = edges.iter().min_by(|a, b| cost(a.1).total_cmp(&cost(b.1)).then(a.0.cmp(&b.0)))?;
        u[r] = cost(best.1);
        if row_of_col[best.0] == usize::MAX {
            row_of_col[best.0] = r;
            col_of_row[r] = best.0;
        }
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut heap = BinaryHeap::new();
    for s in 0..n {
        if col_of_row[s] != usize::MAX {
            continue;
        }
        for &c in &touched {
            dist[c] = f64::INFINITY;
            pred[c] = usize::MAX;
            done[c] = false;
        }
        touched.clear();
        heap.clear();
        for &(c, w) in &cands[s] {
            let d = cost(w) - u[s] - v[c];
            if d < dist[c] {
                if dist[c] == f64::INFINITY {
                    touched.push(c);
                }
                dist[c] = d;
                pred[c] = s;
                heap.push(HeapItem { dist: d, col: c });
            }
        }
        let mut finalized: Vec<usize> = Vec::new();
        let mut sink = usize::MAX;
        while let Some(HeapItem { dist: d, col: c }) = heap.pop() {
            if done[c] || d > dist[c] {
                continue;
            }
            done[c] = true;
            if row_of_col[c] == usize::MAX {
                sink = c;
                break;
            }
            finalized.push(c);
            let r = row_of_col[c];
            for &(k, w) in &cands[r] {
                if done[k] {
                    continue;
                }
                let nd = d + cost(w) - u[r] - v[k];
                if nd < dist[k] {
                    if dist[k] == f64::INFINITY {
                        touched.push(k);
                    }
                    dist[k] = nd;
                    pred[k] = r;
                    heap.push(HeapItem { dist: nd, col: k });
                }
            }
        }
        if sink == usize::MAX {
            return None;
        }
        let big_d = dist[sink];
        for &c in &finalized {
            let delta = big_d - dist[c];
            v[c] -= delta;
            u[row_of_col[c]] += delta;
        }
        u[s] += big_d;
        // Augment along predecessor links.
        let mut c = sink;
        loop {
            let r = pred[c];
            let prev = col_of_row[r];
            row_of_col[c] = r;
            col_of_row[r] = c;
            if r == s {
                break;
            }
            c = prev;
        }
    }

    let mut zeta = f64::INFINITY;
    let mut weight = 0.0;
    for (r, edges) in cands.iter().enumerate() {
        let c = col_of_row[r];
        let w = edges.iter().find(|e| e.0 == c).map(|e| e.1).unwrap_or(0.0);
        zeta = zeta.min(w.sqrt());
        weight += w;
    }
    Some(Localization { phi: col_of_row, phi_inv: row_of_col, zeta_achieved: zeta, weight })
}

/// Eigenvalues, localization bijection and quasi-particle coordinates at one time.
#[derive(Debug, Clone)]
pub struct QuasiFrame {
    pub time: f64,
    /// Decreasing eigenvalues `λ_1 ≥ … ≥ λ_N`.
    pub eigenvalues: Vec<f64>,
    /// `phi[j]`: site index (not slot) of the localization center of rank `j`.
    pub phi: Vec<i64>,
    /// `lambda_by_site[slot] = Λ_i`, the eigenvalue centred at that site.
    pub lambda_by_site: Vec<f64>,
    /// `q_by_rank[j] = Q_j = q_{φ(j)}`.
    pub q_by_rank: Vec<f64>,
    pub zeta_achieved: f64,
    pub weight: f64,
}

fn frame_from_localization(state: &TodaState, eigenvalues: Vec<f64>, loc: Localization) -> QuasiFrame {
    let phi = loc.phi.iter().map(|&c| state.n1 + c as i64).collect();
    let lambda_by_site = loc.phi_inv.iter().map(|&r| eigenvalues[r]).collect();
    let q_by_rank = loc.phi.iter().map(|&c| state.q[c]).collect();
    QuasiFrame {
        time: state.time,
        eigenvalues,
        phi,
        lambda_by_site,
        q_by_rank,
        zeta_achieved: loc.zeta_achieved,
        weight: loc.weight,
    }
}

/// Quasi-particle frame of `state` from a spectrum that carries eigenvectors.
pub fn quasiparticles(state: &TodaState, spec: &Spectrum) -> Result<QuasiFrame> {
    if spec.len() != state.len() {
        return Err(Error::InvalidConfig("spectrum and state sizes differ".into()));
    }
    let loc = localization_bijection(spec)?;
    Ok(frame_from_localization(state, spec.eigenvalues.clone(), loc))
}

/// Quasi-particle frame by the O(N²) path: QL eigenvalues, inverse-iteration
/// eigenvectors streamed into sparse admissible edge lists.
pub fn quasi_frame_fast(state: &TodaState) -> Result<QuasiFrame> {
    let n = state.len();
    let mut vals = ql_eigenvalues(&state.b, &state.a)?;
    vals.sort_by(|x, y| y.total_cmp(x));
    let mut cands: Vec<Candidates> = vec![Vec::new(); n];
    inverse_iteration(&state.b, &state.a, &vals, |j, v| cands[j] = admissible_candidates(v));
    let loc = match assign_max_weight(n, &cands) {
        Some(loc) => loc,
        None => {
            let spec = eigendecompose_tridiagonal(&state.b, &state.a, Some(VectorMethod::InverseIteration))?;
            localization_bijection(&spec)?
        }
    };
    Ok(frame_from_localization(state, vals, loc))
}

/// Groups of nearly equal eigenvalues are formed when their gap is below this
/// multiple of the largest eigenvalue drift between the two frames.
const TRACK_GROUP_FACTOR: f64 = 4.0;
/// Largest group resolved by exhaustive search; larger groups fall back to greedy pairing.
const TRACK_EXHAUSTIVE: usize = 7;

/// Quasi-particle identity across two frames of one trajectory: rank `k` of
/// `frame0` is rank `perm[k]` of `frame_t`.
///
/// Eigenvalues are conserved, so sorted order identifies particles except among
/// nearly equal eigenvalues, where integration drift can swap neighbours. Such
/// neighbours are far apart in space for a localized spectrum. Ranks whose gap in
/// either frame is below a few times the largest drift of the sorted spectra are
/// grouped, and inside a group the pairing with the least summed squared
/// displacement is chosen.
pub fn track_ranks(frame0: &QuasiFrame, frame_t: &QuasiFrame) -> Vec<usize> {
    let (l0, lt) = (&frame0.eigenvalues, &frame_t.eigenvalues);
    let n = l0.len();
    let mut perm: Vec<usize> = (0..n).collect();
    if n < 2 || lt.len() != n {
        return perm;
    }
    let scale = l0.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let drift = l0.iter().zip(lt).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let tol = TRACK_GROUP_FACTOR * drift + 64.0 * f64::EPSILON * scale;
    let (q0, qt) = (&frame0.q_by_rank, &frame_t.q_by_rank);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && ((l0[end - 1] - l0[end]).abs() < tol || (lt[end - 1] - lt[end]).abs() < tol) {
            end += 1;
        }
        if end - start > 1 {
            let group: Vec<usize> = (start..end).collect();
            let cost = |a: usize, b: usize| (qt[b] - q0[a]).powi(2);
            let best = if group.len() <= TRACK_EXHAUSTIVE {
                best_permutation(&group, &cost)
            } else {
                greedy_pairing(&group, &cost)
            };
            for (i, &k) in group.iter().enumerate() {
                perm[k] = best[i];
            }
        }
        start = end;
    }
    perm
}

/// Exhaustive minimum-cost assignment of `items` onto themselves.
fn best_permutation(items: &[usize], cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    fn search(
        i: usize,
        items: &[usize],
        cost: &dyn Fn(usize, usize) -> f64,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        acc: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if acc >= best.0 {
            return;
        }
        if i == items.len() {
            *best = (acc, cur.clone());
            return;
        }
        for j in 0..items.len() {
            if !used[j] {
                used[j] = true;
                cur.push(items[j]);
                search(i + 1, items, cost, used, cur, acc + cost(items[i], items[j]), best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, items.to_vec());
    search(0, items, cost, &mut vec![false; items.len()], &mut Vec::new(), 0.0, &mut best);
    best.1
}

/// Repeatedly pairs the cheapest remaining (source, target) couple.
fn greedy_pairing(items: &[usize], cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    let m = items.len();
    let mut pairs: Vec<(f64, usize, usize)> =
        (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| (cost(items[i], items[j]), i, j)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut src, mut dst) = (vec![false; m], vec![false; m]);
    let mut out = vec![0; m];
    for (_, i, j) in pairs {
        if !src[i] && !dst[j] {
            src[i] = true;
            dst[j] = true;
            out[i] = items[j];
        }
    }
    out
}

/// Scattering residual of every quasi-particle between two frames of one
/// trajectory, `t` apart, indexed by the ranks of `frame0`.
pub fn scattering_residual(frame0: &QuasiFrame, frame_t: &QuasiFrame, t: f64, eps_log: f64) -> Vec<f64> {
    let ranks: Vec<usize> = (0..frame0.eigenvalues.len()).collect();
    scattering_residual_for(frame0, frame_t, t, eps_log, &ranks)
}

/// Scattering residual restricted to the given ranks of `frame0`. Particles are
/// followed across frames with [`track_ranks`].
pub fn scattering_residual_for(
    frame0: &QuasiFrame,
    frame_t: &QuasiFrame,
    t: f64,
    eps_log: f64,
    ranks: &[usize],
) -> Vec<f64> {
    let lam = &frame0.eigenvalues;
    let perm = track_ranks(frame0, frame_t);
    let q0 = &frame0.q_by_rank;
    let qt: Vec<f64> = perm.iter().map(|&p| frame_t.q_by_rank[p]).collect();
    ranks
        .iter()
        .map(|&k| {
            let mut shift = 0.0;
            for j in 0..lam.len() {
                if j == k {
                    continue;
                }
                let before = q0[j] < q0[k];
                let after = qt[j] < qt[k];
                if before != after {
                    let sign = if before { 1.0 } else { -1.0 };
                    shift += sign * reg_log(lam[k] - lam[j], eps_log);
                }
            }
            qt[k] - q0[k] - lam[k] * t - 2.0 * shift
        })
        .collect()
}
