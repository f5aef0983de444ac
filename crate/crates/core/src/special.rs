//! Gamma-family special functions on the positive half-line.
//!
//! The stretch `log β − ψ(θ)` and the spacing variance `ψ′(θ)` both come from
//! these routines, so they are kept self-contained and tested against
//! independent series in `tests/special.rs`.

use std::f64::consts::PI;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Catalan's constant.
pub const CATALAN: f64 = 0.915_965_594_177_219_1;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Shift point above which the asymptotic expansions are used.
const ASYMPTOTIC_FROM: f64 = 10.0;

/// Natural logarithm of the Gamma function for `x > 0`.
///
/// Lanczos approximation with the reflection formula below `x = 1/2`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1−x) = π / sin(πx), valid here because 0 < x < 1/2.
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (k, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Gamma function for `x > 0`.
pub fn gamma(x: f64) -> f64 {
    ln_gamma(x).exp()
}

/// Digamma function ψ(x) = Γ′(x)/Γ(x) for `x > 0`.
///
/// Upward recurrence ψ(x) = ψ(x+1) − 1/x until the argument is large enough
/// for the Bernoulli asymptotic series.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0, "digamma is implemented for positive arguments only");
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Σ B_{2k} / (2k x^{2k}), k = 1..7, Horner in 1/x².
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Trigamma function ψ′(x) for `x > 0`.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma is implemented for positive arguments only");
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x²) + Σ B_{2k} / x^{2k+1}, k = 1..7.
    let series = inv
        * inv2
        * (1.0 / 6.0
            - inv2
                * (1.0 / 30.0
                    - inv2
                        * (1.0 / 42.0
                            - inv2
                                * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2_730.0 - inv2 * 7.0 / 6.0))))));
    acc + inv + 0.5 * inv2 + series
}

/// Stretch α = log β − ψ(θ): the mean of `r_i = q_{i+1} − q_i` at equilibrium.
pub fn stretch(beta: f64, theta: f64) -> f64 {
    beta.ln() - digamma(theta)
}
