//! Dense LU factorization with partial pivoting and a 1-norm condition estimate.

use super::quadrature::Mat;

/// Block size of the right-looking factorization.
const BLOCK: usize = 48;

/// `PA = LU`, stored in place (unit lower triangle implicit).
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    /// `perm[i]` is the original row now at position `i`.
    perm: Vec<usize>,
    norm1: f64,
}

impl Lu {
    /// Factorizes a square matrix. Returns `None` if an exact zero pivot appears.
    pub fn new(a: Mat) -> Option<Self> {
        assert_eq!(a.rows, a.cols, "LU needs a square matrix");
        let n = a.rows;
        let norm1 = (0..n).map(|j| (0..n).map(|i| a.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut lu = a.data;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut k0 = 0;
        while k0 < n {
            let k1 = (k0 + BLOCK).min(n);
            // Unblocked factorization of the panel columns k0..k1, applied to the
            // panel columns only (rows k0..n).
            for k in k0..k1 {
                let (p, pmax) =
                    (k..n).map(|i| (i, lu[i * n + k].abs())).fold((k, -1.0), |b, c| if c.1 > b.1 { c } else { b });
                if pmax == 0.0 {
                    return None;
                }
                if p != k {
                    for j in 0..n {
                        lu.swap(k * n + j, p * n + j);
                    }
                    perm.swap(k, p);
                }
                let pivot = lu[k * n + k];
                let (top, bottom) = lu.split_at_mut((k + 1) * n);
                let row_k = &top[k * n + k + 1..k * n + k1];
                for i in 0..n - k - 1 {
                    let row_i = &mut bottom[i * n..(i + 1) * n];
                    let l = row_i[k] / pivot;
                    row_i[k] = l;
                    if l != 0.0 {
                        for (x, y) in row_i[k + 1..k1].iter_mut().zip(row_k) {
                            *x -= l * y;
                        }
                    }
                }
            }
            if k1 < n {
                // U12 = L11⁻¹ A12.
                for k in k0..k1 {
                    let (top, rest) = lu.split_at_mut((k + 1) * n);
                    let row_k = &top[k * n + k1..k * n + n];
                    for i in k + 1..k1 {
                        let row_i = &mut rest[(i - k - 1) * n..(i - k) * n];
                        let l = row_i[k];
                        for (x, y) in row_i[k1..].iter_mut().zip(row_k) {
                            *x -= l * y;
                        }
                    }
                }
                // A22 −= L21 U12.
                let (top, bottom) = lu.split_at_mut(k1 * n);
                for i in 0..n - k1 {
                    let row_i = &mut bottom[i * n..(i + 1) * n];
                    for k in k0..k1 {
                        let l = row_i[k];
                        if l == 0.0 {
                            continue;
                        }
                        let row_k = &top[k * n + k1..k * n + n];
                        for (x, y) in row_i[k1..].iter_mut().zip(row_k) {
                            *x -= l * y;
                        }
                    }
                }
            }
            k0 = k1;
        }
        Some(Self { n, lu, perm, norm1 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Aᵀ = Uᵀ Lᵀ P: solve Uᵀ z = b, then Lᵀ w = z, then x = Pᵀ w.
        let mut z = b.to_vec();
        for i in 0..n {
            z[i] /= self.lu[i * n + i];
            let zi = z[i];
            for (zj, u) in z[i + 1..].iter_mut().zip(&self.lu[i * n + i + 1..(i + 1) * n]) {
                *zj -= u * zi;
            }
        }
        for i in (0..n).rev() {
            let zi = z[i];
            for (zj, l) in z[..i].iter_mut().zip(&self.lu[i * n..i * n + i]) {
                *zj -= l * zi;
            }
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }

    /// Hager–Higham estimate of `‖A‖₁ ‖A⁻¹‖₁`.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        let norm1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = norm1(&y);
            let sign: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&sign);
            let (j, zmax) =
                z.iter().enumerate().fold((0, -1.0), |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x = vec![0.0; n];
            x[j] = 1.0;
        }
        // Higham's alternating test vector guards against unlucky cancellations.
        let alt: Vec<f64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                s * (1.0 + i as f64 / (n.max(2) - 1) as f64)
            })
            .collect();
        let alt_est = 2.0 * norm1(&self.solve(&alt)) / (3.0 * n as f64);
        est.max(alt_est) * self.norm1
    }
}
