//! Composite Gauss–Legendre panels and product-integration weights for
//! `∫ log|x − y| g(y) dy` with `g` known at panel nodes.

use std::sync::OnceLock;

/// Number of points of the auxiliary rule used on graded sub-intervals.
const AUX_POINTS: usize = 16;

/// Relative distance (in panel half-widths) beyond which plain quadrature of
/// the log kernel is accurate to machine precision with a 10-point panel.
const NEAR_RATIO: f64 = 3.0;

/// Gauss–Legendre rule on `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Barycentric weights of the nodes, for Lagrange interpolation.
    bary: Vec<f64>,
    /// `leg[n][j] = (2n+1)/2 · w_j · P_n(s_j)`: Legendre coefficients of the
    /// Lagrange basis polynomial `ℓ_j`.
    leg: Vec<Vec<f64>>,
}

/// Legendre polynomials `P_0..P_{n}` at `x`.
fn legendre_all(n: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if n == 0 {
        return;
    }
    out.push(x);
    for k in 1..n {
        let next = ((2 * k + 1) as f64 * x * out[k] - k as f64 * out[k - 1]) / (k + 1) as f64;
        out.push(next);
    }
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 1..n {
                    let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pnm1 = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        // Exact mirror symmetry keeps parity identities bitwise.
        for i in 0..n / 2 {
            nodes[i] = -nodes[n - 1 - i];
            weights[i] = weights[n - 1 - i];
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let bary = (0..n)
            .map(|j| {
                let prod: f64 = (0..n).filter(|&k| k != j).map(|k| nodes[j] - nodes[k]).product();
                1.0 / prod
            })
            .collect();
        let mut leg = vec![vec![0.0; n]; n];
        let mut p = Vec::new();
        for j in 0..n {
            legendre_all(n - 1, nodes[j], &mut p);
            for deg in 0..n {
                leg[deg][j] = (2 * deg + 1) as f64 / 2.0 * weights[j] * p[deg];
            }
        }
        Self { nodes, weights, bary, leg }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values of all Lagrange basis polynomials at `s`.
    pub fn lagrange(&self, s: f64, out: &mut [f64]) {
        if let Some(j) = self.nodes.iter().position(|&x| x == s) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j] = 1.0;
            return;
        }
        let mut denom = 0.0;
        for j in 0..self.len() {
            let t = self.bary[j] / (s - self.nodes[j]);
            out[j] = t;
            denom += t;
        }
        out.iter_mut().for_each(|v| *v /= denom);
    }

    /// `∫_{−1}^{1} log|ξ − s| ℓ_j(s) ds` for every basis polynomial `ℓ_j`, from
    /// exact Legendre moments. Valid for `|ξ| < 1`.
    pub fn log_moments_analytic(&self, xi: f64, out: &mut [f64]) {
        let n = self.len();
        // Ferrers functions of the second kind by forward recurrence (stable for |ξ| < 1).
        let mut q = vec![0.0; n + 1];
        q[0] = 0.5 * ((1.0 + xi) / (1.0 - xi)).abs().ln();
        if n >= 1 {
            q[1] = xi * q[0] - 1.0;
        }
        for k in 1..n {
            q[k + 1] = ((2 * k + 1) as f64 * xi * q[k] - k as f64 * q[k - 1]) / (k + 1) as f64;
        }
        let m0 = (1.0 + xi) * (1.0 + xi).abs().ln() + (1.0 - xi) * (1.0 - xi).abs().ln() - 2.0;
        out.iter_mut().for_each(|v| *v = 0.0);
        for deg in 0..n {
            let moment = if deg == 0 { m0 } else { 2.0 * (q[deg + 1] - q[deg - 1]) / (2 * deg + 1) as f64 };
            for j in 0..n {
                out[j] += moment * self.leg[deg][j];
            }
        }
    }

    /// Same moments by graded auxiliary quadrature toward the singular point;
    /// valid for every `ξ` including panel endpoints and outside targets.
    pub fn log_moments_graded(&self, xi: f64, out: &mut [f64]) {
        let aux = aux_rule();
        let n = self.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        let star = xi.clamp(-1.0, 1.0);
        let gap = (xi - star).abs();
        let mut basis = vec![0.0; n];
        let mut add_interval = |lo: f64, hi: f64, out: &mut [f64]| {
            if hi <= lo {
                return;
            }
            let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for (t, w) in aux.nodes.iter().zip(&aux.weights) {
                let s = c + h * t;
                let lg = (xi - s).abs().max(f64::MIN_POSITIVE).ln();
                self.lagrange(s, &mut basis);
                for j in 0..n {
                    out[j] += h * w * lg * basis[j];
                }
            }
        };
        for (side_lo, side_hi, toward_hi) in [(-1.0, star, true), (star, 1.0, false)] {
            let len = side_hi - side_lo;
            if len <= 0.0 {
                continue;
            }
            // Geometric pieces with distances len·2^{−k−1} .. len·2^{−k} from the singular end.
            let mut d = len;
            loop {
                let d_next = 0.5 * d;
                let (lo, hi) =
                    if toward_hi { (side_hi - d, side_hi - d_next) } else { (side_lo + d_next, side_lo + d) };
                add_interval(lo, hi, out);
                d = d_next;
                if d <= gap || d < 1e-18 * len.max(1.0) {
                    break;
                }
            }
            let (lo, hi) = if toward_hi { (side_hi - d, side_hi) } else { (side_lo, side_lo + d) };
            add_interval(lo, hi, out);
        }
    }
}

fn aux_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(AUX_POINTS))
}

/// One quadrature panel `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub a: f64,
    pub b: f64,
}

impl Panel {
    pub fn center(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.b - self.a)
    }
}

/// Panels sharing one Gauss–Legendre rule, with their flattened nodes and weights.
#[derive(Debug, Clone)]
pub struct PanelSet {
    pub rule: GaussLegendre,
    pub panels: Vec<Panel>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PanelSet {
    pub fn new(rule: GaussLegendre, panels: Vec<Panel>) -> Self {
        let mut nodes = Vec::with_capacity(panels.len() * rule.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for p in &panels {
            let (c, h) = (p.center(), p.half_width());
            for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                nodes.push(c + h * t);
                weights.push(h * w);
            }
        }
        Self { rule, panels, nodes, weights }
    }

    /// Uniform panels over `[−half, half]`, mirror-symmetric to the last bit.
    pub fn symmetric(half: f64, n_panels: usize, order: usize) -> Self {
        let edge = |k: usize| (2 * k as i64 - n_panels as i64) as f64 / n_panels as f64 * half;
        let panels = (0..n_panels).map(|k| Panel { a: edge(k), b: edge(k + 1) }).collect();
        Self::new(GaussLegendre::new(order), panels)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn order(&self) -> usize {
        self.rule.len()
    }

    pub fn lo(&self) -> f64 {
        self.panels.first().map_or(0.0, |p| p.a)
    }

    pub fn hi(&self) -> f64 {
        self.panels.last().map_or(0.0, |p| p.b)
    }

    /// Product-integration weights of `∫ log|x − y| g(y) dy` over all panels,
    /// written into `row` (length `self.len()`).
    pub fn log_weights_row(&self, x: f64, row: &mut [f64]) {
        let p = self.order();
        let mut moments = vec![0.0; p];
        for (k, panel) in self.panels.iter().enumerate() {
            let (c, h) = (panel.center(), panel.half_width());
            let xi = (x - c) / h;
            let out = &mut row[k * p..(k + 1) * p];
            if xi.abs() >= NEAR_RATIO {
                for j in 0..p {
                    let y = self.nodes[k * p + j];
                    out[j] = self.weights[k * p + j] * (x - y).abs().ln();
                }
                continue;
            }
            if xi.abs() < 1.0 - 1e-9 {
                self.rule.log_moments_analytic(xi, &mut moments);
            } else {
                self.rule.log_moments_graded(xi, &mut moments);
            }
            let lh = h.ln();
            for j in 0..p {
                out[j] = h * (lh * self.rule.weights[j] + moments[j]);
            }
        }
    }

    /// Dense product-integration matrix for the given targets.
    pub fn log_weights(&self, targets: &[f64]) -> Mat {
        let mut m = Mat::zeros(targets.len(), self.len());
        for (i, &x) in targets.iter().enumerate() {
            self.log_weights_row(x, m.row_mut(i));
        }
        m
    }

    /// Panel index containing `x` (the left one at a shared endpoint).
    pub fn locate(&self, x: f64) -> Option<usize> {
        if x < self.lo() || x > self.hi() {
            return None;
        }
        let k = self.panels.partition_point(|p| p.b < x);
        Some(k.min(self.panels.len() - 1))
    }

    /// Interpolates node values at `x` with the Lagrange polynomial of its panel.
    pub fn interpolate(&self, values: &[f64], x: f64) -> Option<f64> {
        let k = self.locate(x)?;
        let p = self.order();
        let panel = self.panels[k];
        let s = (x - panel.center()) / panel.half_width();
        let mut basis = vec![0.0; p];
        self.rule.lagrange(s, &mut basis);
        Some((0..p).map(|j| basis[j] * values[k * p + j]).sum())
    }

    /// Refines the panels around each breakpoint by geometric grading toward it.
    ///
    /// A panel containing a breakpoint in its interior is split there; every
    /// piece adjacent to a breakpoint, or within one panel width of it, is
    /// replaced by `levels + 1` sub-panels whose widths shrink by `ratio`
    /// toward the breakpoint side. The second return
    /// value maps each new panel to the index of the base panel it copies, if any.
    pub fn graded_at(&self, breakpoints: &[f64], ratio: f64, levels: usize) -> (PanelSet, Vec<Option<usize>>) {
        let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|z| *z >= self.lo() && *z <= self.hi()).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
        let mut panels = Vec::new();
        let mut origin = Vec::new();
        for (index, panel) in self.panels.iter().enumerate() {
            let tol = 1e-12 * (panel.b - panel.a);
            let inside: Vec<f64> = cuts.iter().copied().filter(|&z| z > panel.a + tol && z < panel.b - tol).collect();
            // A breakpoint just outside the panel still spoils polynomial
            // approximation of the solution there, so grade toward it too.
            let width = panel.b - panel.a;
            let touches_left = cuts.iter().any(|&z| z <= panel.a + tol && panel.a - z < width);
            let touches_right = cuts.iter().any(|&z| z >= panel.b - tol && z - panel.b < width);
            if inside.is_empty() && !touches_left && !touches_right {
                panels.push(*panel);
                origin.push(Some(index));
                continue;
            }
            let mut edges = vec![panel.a];
            edges.extend(inside.iter().copied());
            edges.push(panel.b);
            let n_seg = edges.len() - 1;
            for s in 0..n_seg {
                let (l, r) = (edges[s], edges[s + 1]);
                let grade_left = s > 0 || touches_left;
                let grade_right = s + 1 < n_seg || touches_right;
                match (grade_left, grade_right) {
                    (true, true) => {
                        let mid = 0.5 * (l + r);
                        push_graded(&mut panels, l, mid, true, ratio, levels);
                        push_graded(&mut panels, mid, r, false, ratio, levels);
                    }
                    (true, false) => push_graded(&mut panels, l, r, true, ratio, levels),
                    (false, true) => push_graded(&mut panels, l, r, false, ratio, levels),
                    (false, false) => panels.push(Panel { a: l, b: r }),
                }
            }
            origin.resize(panels.len(), None);
        }
        (PanelSet::new(self.rule.clone(), panels), origin)
    }
}

/// Pushes sub-panels of `[l, r]` graded toward `l` (if `toward_left`) or `r`.
fn push_graded(out: &mut Vec<Panel>, l: f64, r: f64, toward_left: bool, ratio: f64, levels: usize) {
    let len = r - l;
    // Offsets from the graded end: 0, len·ratio^levels, …, len·ratio, len.
    let mut offsets: Vec<f64> = (0..=levels).rev().map(|k| len * ratio.powi(k as i32)).collect();
    offsets.insert(0, 0.0);
    let mut pieces: Vec<Panel> = offsets
        .windows(2)
        .map(|w| if toward_left { Panel { a: l + w[0], b: l + w[1] } } else { Panel { a: r - w[1], b: r - w[0] } })
        .collect();
    if !toward_left {
        pieces.reverse();
    }
    // Land exactly on the segment ends despite rounding.
    if let Some(first) = pieces.first_mut() {
        first.a = l;
    }
    if let Some(last) = pieces.last_mut() {
        last.b = r;
    }
    out.extend(pieces);
}

/// Minimal dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}
