//! Calibrated constants. The bounds these enter hold "for some constant";
//! the values below were fixed by the pilots named alongside each one and are
//! not derived quantities.
//!
//! Reproduce with `cargo run --release --example calibrate`.

/// `|bᵀβ(0)|/√p ≤ c √log(1/δ)`. Pilot: 10⁵ draws at p = 4096, smallest `c`
/// reaching coverage 1 − δ for every δ in {0.01, 0.05, 0.1, 0.2} was 1.1996
/// (the Gaussian value is max_δ z_{δ/2}/√log(1/δ) = 1.200).
pub const C_BB: f64 = 1.20;

/// `‖bᵀW(0)‖/√p ≤ c √(d log(d/δ))`, same pilot with d = 32: 0.4868.
pub const C_BW: f64 = 0.49;

/// `|‖b‖²/p − 1| ≤ (c/√p) √log(1/δ)`, same pilot: 1.7046.
pub const C_BN: f64 = 1.71;

/// Scale of the cutoff budget `S_λ = c_S γ√(γp)/(η√n M)`. Pilot: linear
/// nets, n = 50, d = 150, η = 0.1, 1000 steps, p ∈ {200, 800, 3200, 12800},
/// 10 repeats. Smallest grid value (1, 2, 5, 10, 20, 50) with mean cos ≥ 0.1
/// at every p and, at p = 12800, ≥ 10× the unregularized mean |cos|: twice
/// the accepted 0.05 and 5×. Measured at 10: min cos 0.122, ratio 14.9.
pub const CUTOFF_CS: f64 = 10.0;

/// `λ = Lγ` for the cutoff schedule.
pub const CUTOFF_L: f64 = 12.0;

/// Default threshold on `ηŜ(t)/(√(pγ)‖ŝ(t)‖)`.
pub const ALIGNMENT_THRESHOLD: f64 = 0.1;

/// Accepted slope of `log mean|cos∠(b,β)|` against `log p` without regularization.
pub const NO_ALIGNMENT_SLOPE_BAND: (f64, f64) = (-0.65, -0.35);

/// Entrywise z-score allowed between the sample mean of `G(0)` and the reference.
pub const GRAM_MEAN_Z: f64 = 5.0;

/// Allowed frequency of `λ_min(G(0)) ≤ 0`.
pub const GRAM_LMIN_DELTA: f64 = 0.01;

/// Allowed frequency of `‖H(0)‖ > λ_min(G(0))/2`.
pub const GRAM_H_DELTA: f64 = 0.05;
