//! Monotonicity-preserving piecewise cubic Hermite interpolation and its inverse.

use serde::{Deserialize, Serialize};

/// Fritsch–Butland cubic through strictly increasing data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl MonotoneCubic {
    /// Builds the interpolant. Returns the index of the first non-increasing
    /// pair if `y` is not strictly increasing.
    pub fn new(x: &[f64], y: &[f64]) -> std::result::Result<Self, usize> {
        assert_eq!(x.len(), y.len());
        assert!(x.len() >= 2);
        if let Some(i) = (1..y.len()).find(|&i| y[i] <= y[i - 1] || x[i] <= x[i - 1]) {
            return Err(i);
        }
        let n = x.len();
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut slope = vec![0.0; n];
        for i in 1..n - 1 {
            let (h0, h1) = (h[i - 1], h[i]);
            let (d0, d1) = (delta[i - 1], delta[i]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            slope[i] = (w1 + w2) / (w1 / d0 + w2 / d1);
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            // Three-point one-sided estimate, limited to keep monotonicity.
            let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s <= 0.0 {
                0.0
            } else if s > 3.0 * d0 {
                3.0 * d0
            } else {
                s
            }
        };
        if n == 2 {
            slope[0] = delta[0];
            slope[1] = delta[0];
        } else {
            slope[0] = end(h[0], h[1], delta[0], delta[1]);
            slope[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), slope })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    pub fn range(&self) -> (f64, f64) {
        (self.y[0], *self.y.last().unwrap())
    }

    fn interval(&self, t: f64) -> usize {
        self.x.partition_point(|&v| v <= t).clamp(1, self.x.len() - 1) - 1
    }

    /// Value and derivative at `t` (clamped to the domain).
    pub fn eval_with_derivative(&self, t: f64) -> (f64, f64) {
        let (lo, hi) = self.domain();
        let t = t.clamp(lo, hi);
        let i = self.interval(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.slope[i] * h, self.slope[i + 1] * h);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let value = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1;
        let d = (6.0 * s * s - 6.0 * s) * (y0 - y1) + (3.0 * s * s - 4.0 * s + 1.0) * m0 + (3.0 * s * s - 2.0 * s) * m1;
        (value, d / h)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.eval_with_derivative(t).1
    }

    /// Inverse by bisection to absolute tolerance 1e−12; `None` outside the range.
    pub fn inverse(&self, v: f64) -> Option<f64> {
        let (ylo, yhi) = self.range();
        if !(v >= ylo && v <= yhi) {
            return None;
        }
        let j = self.y.partition_point(|&y| y < v);
        if j < self.y.len() && self.y[j] == v {
            return Some(self.x[j]);
        }
        let (mut lo, mut hi) = (self.x[j - 1], self.x[j]);
        for _ in 0..200 {
            if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) * 1e-2 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}
