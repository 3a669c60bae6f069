//! Monte-Carlo and per-run checks of the concentration, isometry, Gram,
//! contraction and alignment bounds.
//!
//! Every check reduces to a violation count. It passes when
//! `violations/trials ≤ δ + 3·√(δ(1−δ)/trials)` for its nominal `δ`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::Serialize;

use crate::constants;
use crate::diagnostics::{gbar_reference, gram_pair};
use crate::error::{Error, Result};
use crate::linalg::{self, dot_unchecked, norm2, sym_eig, Matrix};
use crate::network::{Activation, TwoLayerNet};
use crate::rng::derive_stream;
use crate::trainers::{Schedule, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    pub nominal_delta: f64,
    pub pass: bool,
    pub details: BTreeMap<String, f64>,
}

/// The binomial three-sigma pass rule.
pub fn binomial_pass(trials: usize, violations: usize, nominal_delta: f64) -> bool {
    if trials == 0 {
        return violations == 0;
    }
    let t = trials as f64;
    let margin = 3.0 * (nominal_delta * (1.0 - nominal_delta) / t).sqrt();
    violations as f64 / t <= nominal_delta + margin
}

impl CheckResult {
    pub fn new(name: impl Into<String>, trials: usize, violations: usize, nominal_delta: f64) -> Self {
        CheckResult {
            name: name.into(),
            trials,
            violations,
            nominal_delta,
            pass: binomial_pass(trials, violations, nominal_delta),
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn frequency(&self) -> f64 {
        self.violations as f64 / self.trials.max(1) as f64
    }
}

/// Worker count used when none is requested.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Evaluates `f(0..count)` on up to `threads` workers; results keep index order.
pub fn par_map<T, F>(count: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(count.max(1));
    if threads == 1 {
        return (0..count).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= count {
                    break;
                }
                if tx.send((k, f(k))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
        for (k, v) in rx {
            slots[k] = Some(v);
        }
        slots.into_iter().map(|v| v.expect("every index computed")).collect()
    })
}

fn trial_label(k: usize) -> String {
    format!("trial{k}")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationParams {
    pub p: usize,
    pub d: usize,
    pub trials: usize,
    pub delta: f64,
    pub epsilon: f64,
    /// Deviation parameter of the χ² and inner-product tails.
    pub t: f64,
}

impl Default for ConcentrationParams {
    fn default() -> Self {
        ConcentrationParams {
            p: 4096,
            d: 32,
            trials: 10_000,
            delta: 0.05,
            epsilon: 0.5,
            t: 3.0,
        }
    }
}

/// Per-draw statistics of `(W(0), β(0), b)` used by the concentration events.
#[derive(Clone, Copy, Debug)]
pub struct InitStats {
    pub b_dot_beta: f64,
    pub b_norm_sq: f64,
    pub wtb_norm: f64,
    pub ww_dev: f64,
    pub mean_abs_b: f64,
    pub mean_abs_b_beta: f64,
    pub max_abs_b: f64,
}

/// Draws one standard Gaussian initialization and summarizes it.
pub fn init_stats(p: usize, d: usize, seed: u64, label: &str) -> Result<InitStats> {
    let mut s = derive_stream(seed, label);
    let b = s.gaussian(p, 1.0);
    let beta = s.gaussian(p, 1.0);
    let w = Matrix::from_vec(p, d, s.gaussian(p * d, 1.0))?;
    let wtb = linalg::matvec_t(&w, &b)?;
    let mut wtw = linalg::matmul_tn(&w, &w)?.scaled(1.0 / p as f64);
    for j in 0..d {
        wtw[(j, j)] -= 1.0;
    }
    // symmetric, so the spectral norm is the largest |eigenvalue|
    let eig = sym_eig(&wtw)?;
    Ok(InitStats {
        b_dot_beta: dot_unchecked(&b, &beta),
        b_norm_sq: dot_unchecked(&b, &b),
        wtb_norm: norm2(&wtb),
        ww_dev: eig.max().abs().max(eig.min().abs()),
        mean_abs_b: b.iter().map(|v| v.abs()).sum::<f64>() / p as f64,
        mean_abs_b_beta: b.iter().zip(&beta).map(|(u, v)| (u * v).abs()).sum::<f64>() / p as f64,
        max_abs_b: b.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    })
}

struct Event {
    name: &'static str,
    nominal: f64,
    bound: f64,
    violated: Box<dyn Fn(&InitStats) -> bool + Sync>,
}

fn concentration_events(cp: &ConcentrationParams) -> Vec<Event> {
    let p = cp.p as f64;
    let d = cp.d as f64;
    let dl = cp.delta;
    let t = cp.t;
    let sp = p.sqrt();
    let mut ev = Vec::new();

    let bb = constants::C_BB * (1.0 / dl).ln().sqrt();
    ev.push(Event {
        name: "init_b_beta",
        nominal: dl,
        bound: bb,
        violated: Box::new(move |s| s.b_dot_beta.abs() / sp > bb),
    });
    let bw = constants::C_BW * (d * (d / dl).ln()).sqrt();
    ev.push(Event {
        name: "init_b_w0",
        nominal: dl,
        bound: bw,
        violated: Box::new(move |s| s.wtb_norm / sp > bw),
    });
    let bn = constants::C_BN / sp * (1.0 / dl).ln().sqrt();
    ev.push(Event {
        name: "init_b_norm",
        nominal: dl,
        bound: bn,
        violated: Box::new(move |s| (s.b_norm_sq / p - 1.0).abs() > bn),
    });
    let eps = cp.epsilon;
    ev.push(Event {
        name: "init_w0_gram",
        nominal: dl,
        bound: eps,
        violated: Box::new(move |s| s.ww_dev > eps),
    });

    let up = 2.0 * (p * t).sqrt() + 2.0 * t;
    ev.push(Event {
        name: "chi2_upper_tail",
        nominal: (-t).exp(),
        bound: up,
        violated: Box::new(move |s| s.b_norm_sq - p >= up),
    });
    let lo = 2.0 * (p * t).sqrt();
    ev.push(Event {
        name: "chi2_lower_tail",
        nominal: (-t).exp(),
        bound: lo,
        violated: Box::new(move |s| s.b_norm_sq - p <= -lo),
    });
    let ip = (2.0 * p * t).sqrt() + 2.0 * t;
    ev.push(Event {
        name: "inner_product_tail",
        nominal: (2.0 * (-t).exp()).min(1.0),
        bound: ip,
        violated: Box::new(move |s| s.b_dot_beta.abs() >= ip),
    });
    let ipl = (8.0 * (2.0 / dl).ln()).sqrt();
    ev.push(Event {
        name: "inner_product_scaled",
        nominal: dl,
        bound: ipl,
        violated: Box::new(move |s| s.b_dot_beta.abs() / sp > ipl),
    });
    let wb = (8.0 * d * (2.0 * d / dl).ln()).sqrt();
    ev.push(Event {
        name: "w0_b_tail",
        nominal: dl,
        bound: wb,
        violated: Box::new(move |s| s.wtb_norm / sp > wb),
    });
    let r = ((2.0 / dl).ln() / p).sqrt();
    ev.push(Event {
        name: "b_norm_interval",
        nominal: dl,
        bound: r,
        violated: Box::new(move |s| {
            let q = s.b_norm_sq / p;
            q < 1.0 - 2.0 * r || q > 1.0 + 4.0 * r
        }),
    });

    // Mean-absolute bounds with constant c = E + 1; Chebyshev gives Var/p.
    let mean_b = (2.0 / std::f64::consts::PI).sqrt();
    let cb = mean_b + 1.0;
    ev.push(Event {
        name: "mean_abs_b",
        nominal: (1.0 - 2.0 / std::f64::consts::PI) / p,
        bound: cb,
        violated: Box::new(move |s| s.mean_abs_b > cb),
    });
    let mean_bb = 2.0 / std::f64::consts::PI;
    let cbb = mean_bb + 1.0;
    ev.push(Event {
        name: "mean_abs_b_beta",
        nominal: (1.0 - mean_bb * mean_bb) / p,
        bound: cbb,
        violated: Box::new(move |s| s.mean_abs_b_beta > cbb),
    });
    // Union bound: p · 2e^{−u²/2} at u = 2√log p.
    let mb = 2.0 * p.ln().sqrt();
    ev.push(Event {
        name: "max_abs_b",
        nominal: (2.0 / p).min(1.0),
        bound: mb,
        violated: Box::new(move |s| s.max_abs_b > mb),
    });
    ev
}

/// Violation frequencies of the initialization events over independent draws.
pub fn check_init_concentration(cp: &ConcentrationParams, seed: u64, threads: usize) -> Result<Vec<CheckResult>> {
    if cp.p < 2 || cp.trials < 100 {
        return Err(Error::Contract("concentration checks need p >= 2 and trials >= 100".into()));
    }
    if !(cp.delta > 0.0 && cp.delta < 1.0) || !(cp.t >= 0.0) || !(cp.epsilon > 0.0) {
        return Err(Error::Contract("need delta in (0, 1), t >= 0, epsilon > 0".into()));
    }
    let stats = par_map(cp.trials, threads, |k| init_stats(cp.p, cp.d, seed, &trial_label(k)));
    let stats: Vec<InitStats> = stats.into_iter().collect::<Result<_>>()?;
    Ok(concentration_events(cp)
        .into_iter()
        .map(|ev| {
            let v = stats.iter().filter(|s| (ev.violated)(s)).count();
            CheckResult::new(ev.name, cp.trials, v, ev.nominal)
                .with("bound", ev.bound)
                .with("p", cp.p as f64)
                .with("d", cp.d as f64)
        })
        .collect())
}

/// Eigenvalue range of `XXᵀ` for X with N(0, 1/d) entries.
pub fn isometry_extremes(n: usize, d: usize, seed: u64, label: &str) -> Result<(f64, f64)> {
    let x = Matrix::from_vec(n, d, derive_stream(seed, label).gaussian(n * d, 1.0 / (d as f64).sqrt()))?;
    let eig = sym_eig(&linalg::gram(&x))?;
    Ok((eig.min(), eig.max()))
}

/// Frequency with which `X` fails to be `(1−ε, 4ε)`-isometric.
pub fn check_isometry(
    n: usize,
    d: usize,
    epsilon: f64,
    trials: usize,
    nominal_delta: f64,
    seed: u64,
    threads: usize,
) -> Result<CheckResult> {
    if n == 0 || n >= d {
        return Err(Error::Contract(format!("isometry needs 0 < n < d, got n={n}, d={d}")));
    }
    let lo = 1.0 - epsilon;
    let hi = (1.0 + 4.0 * epsilon) * (1.0 - epsilon);
    let ext = par_map(trials, threads, |k| isometry_extremes(n, d, seed, &trial_label(k)));
    let ext: Vec<(f64, f64)> = ext.into_iter().collect::<Result<_>>()?;
    let v = ext.iter().filter(|(mn, mx)| *mn < lo || *mx > hi).count();
    let mean_min = ext.iter().map(|e| e.0).sum::<f64>() / trials.max(1) as f64;
    let mean_max = ext.iter().map(|e| e.1).sum::<f64>() / trials.max(1) as f64;
    Ok(CheckResult::new(format!("isometry_n{n}_d{d}"), trials, v, nominal_delta)
        .with("epsilon", epsilon)
        .with("mean_lambda_min", mean_min)
        .with("mean_lambda_max", mean_max))
}

/// Counts steps with `‖e(t+1)‖ > (1 − κηγ − ηλ(t))‖e(t)‖ + ηλ(t)‖y‖ + 1e-9`.
/// `err_norms` holds `‖e(0)‖, …, ‖e(T)‖`; κ is ½ for linear nets and ¼ otherwise.
pub fn check_contraction_norms(
    err_norms: &[f64],
    y_norm: f64,
    gamma: f64,
    eta: f64,
    schedule: &Schedule,
    kappa: f64,
) -> CheckResult {
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for t in 0..err_norms.len().saturating_sub(1) {
        let lam = schedule.lambda_at(t);
        let bound = (1.0 - kappa * eta * gamma - eta * lam) * err_norms[t] + eta * lam * y_norm + 1e-9;
        let next = err_norms[t + 1];
        let excess = next - bound;
        if !(excess <= 0.0) {
            violations += 1;
        }
        worst_excess = worst_excess.max(excess);
        if err_norms[t] > 0.0 {
            worst_ratio = worst_ratio.max(next / err_norms[t]);
        }
    }
    CheckResult::new("contraction", err_norms.len().saturating_sub(1), violations, 0.0)
        .with("gamma", gamma)
        .with("kappa", kappa)
        .with("factor", 1.0 - kappa * eta * gamma)
        .with("worst_ratio", worst_ratio)
        .with("worst_excess", worst_excess)
}

pub fn check_contraction(traj: &Trajectory, gamma: f64, schedule: &Schedule) -> CheckResult {
    let kappa = if traj.linear { 0.5 } else { 0.25 };
    check_contraction_norms(&traj.err_norms(), traj.y_norm, gamma, traj.eta, schedule, kappa)
}

/// `ηŜ(t) / (√(pγ) ‖ŝ(t)‖)`
pub fn alignment_ratio(s_hat_big: f64, s_hat_norm: f64, p: usize, eta: f64, gamma: f64) -> f64 {
    eta * s_hat_big / ((p as f64 * gamma).sqrt() * s_hat_norm)
}

/// Counts steps after the cutoff `T` whose ratio falls below `threshold`.
pub fn check_alignment_condition(
    traj: &Trajectory,
    p: usize,
    eta: f64,
    gamma: f64,
    cutoff: usize,
    threshold: f64,
) -> CheckResult {
    let after: Vec<f64> = traj
        .records
        .iter()
        .filter(|r| r.t > cutoff)
        .map(|r| alignment_ratio(r.s_hat_big, r.s_hat_norm, p, eta, gamma))
        .collect();
    let violations = after.iter().filter(|r| !(**r >= threshold)).count();
    let min_ratio = after.iter().cloned().fold(f64::INFINITY, f64::min);
    let final_cos = traj.last().map_or(f64::NAN, |r| r.cos_align);
    CheckResult::new("alignment_condition", after.len(), violations, 0.0)
        .with("threshold", threshold)
        .with("min_ratio_after_cutoff", min_ratio)
        .with("final_ratio", after.last().copied().unwrap_or(f64::NAN))
        .with("final_cos", final_cos)
        .with("cutoff", cutoff as f64)
}

/// Counts `t ∈ [τ, T]` with `a(t) < (λ−γ)/(λ+γ)·‖y‖ − slack`.
pub fn check_error_decomposition(
    traj: &Trajectory,
    lambda: f64,
    gamma: f64,
    tau: usize,
    cutoff: usize,
    slack: f64,
) -> CheckResult {
    let bound = (lambda - gamma) / (lambda + gamma) * traj.y_norm - slack;
    let window: Vec<f64> = traj
        .records
        .iter()
        .filter(|r| r.t >= tau && r.t <= cutoff)
        .map(|r| r.a_t)
        .collect();
    let violations = window.iter().filter(|a| !(**a >= bound)).count();
    CheckResult::new("error_decomposition", window.len(), violations, 0.0)
        .with("bound", bound)
        .with("min_a", window.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract("slope needs at least two matching points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Contract("log-log slope needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

/// Slope of `log mean|cos|` vs `log p` must land in `[lo, hi]`.
pub fn check_slope_band(
    name: &str,
    widths: &[usize],
    mean_abs_cos: &[f64],
    repeats: usize,
    lo: f64,
    hi: f64,
) -> Result<CheckResult> {
    if widths.len() < 4 {
        return Err(Error::InsufficientWidths {
            needed: 4,
            got: widths.len(),
        });
    }
    if repeats < 20 {
        return Err(Error::Contract(format!("need at least 20 repeats per width, got {repeats}")));
    }
    let xs: Vec<f64> = widths.iter().map(|&p| p as f64).collect();
    let slope = log_log_slope(&xs, mean_abs_cos)?;
    let ok = slope >= lo && slope <= hi;
    Ok(CheckResult::new(name, 1, usize::from(!ok), 0.0)
        .with("slope", slope)
        .with("band_lo", lo)
        .with("band_hi", hi))
}

pub fn check_no_alignment_scaling(widths: &[usize], mean_abs_cos: &[f64], repeats: usize) -> Result<CheckResult> {
    let (lo, hi) = constants::NO_ALIGNMENT_SLOPE_BAND;
    check_slope_band("no_alignment_scaling", widths, mean_abs_cos, repeats, lo, hi)
}

#[derive(Clone, Copy, Debug)]
pub struct GramStats {
    pub lambda_min_g: f64,
    pub norm_h: f64,
}

/// Per-init statistics and the entrywise sample mean of `G(0)` over random inits.
#[derive(Clone, Debug)]
pub struct GramSamples {
    pub p: usize,
    pub stats: Vec<GramStats>,
    pub mean: Matrix,
    /// Standard error of each entry of `mean`.
    pub std_err: Matrix,
}

pub fn sample_grams(x: &Matrix, act: Activation, p: usize, trials: usize, seed: u64, threads: usize) -> Result<GramSamples> {
    if trials < 2 {
        return Err(Error::Contract("need at least two inits".into()));
    }
    let n = x.rows();
    let d = x.cols();
    let per = par_map(trials, threads, |k| -> Result<(GramStats, Matrix)> {
        let net = TwoLayerNet::init_gaussian(d, p, act, derive_stream(seed, &trial_label(k)).next_u64());
        let gp = gram_pair(&net, x)?;
        Ok((
            GramStats {
                lambda_min_g: gp.lambda_min_g,
                norm_h: gp.norm_h,
            },
            gp.g,
        ))
    });
    let mut sum = Matrix::zeros(n, n);
    let mut sum_sq = Matrix::zeros(n, n);
    let mut stats = Vec::with_capacity(trials);
    for r in per {
        let (s, g) = r?;
        for ((a, b), v) in sum.as_mut_slice().iter_mut().zip(sum_sq.as_mut_slice()).zip(g.as_slice()) {
            *a += v;
            *b += v * v;
        }
        stats.push(s);
    }
    let t = trials as f64;
    let mut mean = Matrix::zeros(n, n);
    let mut std_err = Matrix::zeros(n, n);
    for ((m, se), (a, b)) in mean
        .as_mut_slice()
        .iter_mut()
        .zip(std_err.as_mut_slice())
        .zip(sum.as_slice().iter().zip(sum_sq.as_slice()))
    {
        *m = a / t;
        let var = (b / t - *m * *m).max(0.0) * t / (t - 1.0);
        *se = (var / t).sqrt();
    }
    Ok(GramSamples { p, stats, mean, std_err })
}

/// Upper-triangle entries whose sample mean lies more than `z_max` standard
/// errors from `reference`, with the largest finite z-score.
pub fn mean_outliers(samples: &GramSamples, reference: &Matrix, z_max: f64) -> (usize, usize, f64) {
    let n = samples.mean.rows();
    let (mut entries, mut outside, mut worst) = (0, 0, 0.0f64);
    for i in 0..n {
        for j in i..n {
            let z = (samples.mean[(i, j)] - reference[(i, j)]).abs() / samples.std_err[(i, j)];
            entries += 1;
            if !(z <= z_max) {
                outside += 1;
            }
            if z.is_finite() {
                worst = worst.max(z);
            }
        }
    }
    (entries, outside, worst)
}

/// λ_min(G(0)) > 0, ‖H(0)‖ ≤ λ_min(G(0))/2, and the sample mean of G(0)
/// against `reference` within the z-score bound entrywise.
pub fn gram_checks(samples: &GramSamples, reference: &Matrix) -> Vec<CheckResult> {
    let z_max = constants::GRAM_MEAN_Z;
    let (entries, outside, worst_z) = mean_outliers(samples, reference, z_max);
    // two-sided normal tail at z_max
    let entry_delta = erfc(z_max / std::f64::consts::SQRT_2);
    let stats = &samples.stats;
    let t = stats.len() as f64;
    let nonpos = stats.iter().filter(|s| !(s.lambda_min_g > 0.0)).count();
    let h_big = stats.iter().filter(|s| !(s.norm_h <= s.lambda_min_g / 2.0)).count();
    let mean_lmin = stats.iter().map(|s| s.lambda_min_g).sum::<f64>() / t;
    let mean_h = stats.iter().map(|s| s.norm_h).sum::<f64>() / t;
    vec![
        CheckResult::new("gram_mean_vs_reference", entries, outside, entry_delta)
            .with("z_max", z_max)
            .with("worst_z", worst_z)
            .with("inits", t),
        CheckResult::new("gram_lambda_min_positive", stats.len(), nonpos, constants::GRAM_LMIN_DELTA)
            .with("p", samples.p as f64)
            .with("mean_lambda_min", mean_lmin),
        CheckResult::new("gram_h_bound", stats.len(), h_big, constants::GRAM_H_DELTA)
            .with("p", samples.p as f64)
            .with("mean_norm_h", mean_h),
    ]
}

/// [`gram_checks`] against [`gbar_reference`] over `trials` fresh inits.
pub fn check_gram_conditions(
    x: &Matrix,
    act: Activation,
    p: usize,
    trials: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<CheckResult>> {
    let reference = gbar_reference(x, act)?;
    let samples = sample_grams(x, act, p, trials, seed, threads)?;
    Ok(gram_checks(&samples, &reference))
}

/// Complementary error function (Numerical Recipes `erfcc`, |rel err| < 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainers::StepRecord;

    #[test]
    fn pass_rule() {
        assert!(binomial_pass(100, 0, 0.0));
        assert!(!binomial_pass(100, 1, 0.0));
        // 0.05 + 3·√(0.0475/10⁴) = 0.05654
        assert!(binomial_pass(10_000, 565, 0.05));
        assert!(!binomial_pass(10_000, 566, 0.05));
    }

    #[test]
    fn par_map_keeps_order() {
        let v = par_map(50, 4, |k| k * k);
        assert_eq!(v, (0..50).map(|k| k * k).collect::<Vec<_>>());
        assert_eq!(par_map(3, 1, |k| k), vec![0, 1, 2]);
        assert!(par_map(0, 4, |k| k).is_empty());
    }

    #[test]
    fn slope_of_inverse_sqrt() {
        let ps = [200usize, 800, 3200, 12800];
        let ys: Vec<f64> = ps.iter().map(|&p| 3.0 / (p as f64).sqrt()).collect();
        let r = check_no_alignment_scaling(&ps, &ys, 20).unwrap();
        assert!((r.details["slope"] + 0.5).abs() < 1e-12);
        assert!(r.pass);
        assert!(matches!(
            check_no_alignment_scaling(&ps[..3], &ys[..3], 20),
            Err(Error::InsufficientWidths { needed: 4, got: 3 })
        ));
    }

    fn traj_from(norms: &[f64], linear: bool) -> Trajectory {
        let records = norms[..norms.len() - 1]
            .iter()
            .enumerate()
            .map(|(t, &e)| StepRecord {
                t,
                loss: 0.5 * e * e,
                err_norm: e,
                cos_align: 0.0,
                a_t: 0.0,
                xi_norm: e,
                max_w_drift: 0.0,
                max_beta_drift: 0.0,
                lambda_t: 0.0,
                s_hat_norm: 1.0,
                s_hat_big: 0.0,
            })
            .collect();
        Trajectory {
            records,
            final_err_norm: *norms.last().unwrap(),
            y_norm: 1.0,
            eta: 0.1,
            linear,
            ..Default::default()
        }
    }

    #[test]
    fn contraction_counts() {
        let zero = traj_from(&[0.0; 5], true);
        assert_eq!(check_contraction(&zero, 1.0, &Schedule::Zero).violations, 0);
        // factor 1 − 0.1·1/2 = 0.95
        let good = traj_from(&[1.0, 0.95, 0.9], true);
        assert!(check_contraction(&good, 1.0, &Schedule::Zero).pass);
        let bad = traj_from(&[1.0, 0.96, 0.9], true);
        let r = check_contraction(&bad, 1.0, &Schedule::Zero);
        assert_eq!((r.trials, r.violations, r.pass), (2, 1, false));
        // nonlinear factor 1 − 0.1/4 = 0.975 admits 0.96
        assert!(check_contraction(&traj_from(&[1.0, 0.96, 0.9], false), 1.0, &Schedule::Zero).pass);
    }

    #[test]
    fn chi2_frequencies_within_nominal() {
        let cp = ConcentrationParams {
            p: 64,
            d: 4,
            trials: 2000,
            ..Default::default()
        };
        let res = check_init_concentration(&cp, 3, 2).unwrap();
        for r in &res {
            if r.name.starts_with("chi2") || r.name == "inner_product_tail" {
                assert!(r.pass, "{r:?}");
            }
        }
        let again = check_init_concentration(&cp, 3, 1).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn scalar_isometry_is_chi_square() {
        let (mn, mx) = isometry_extremes(1, 500, 4, "t").unwrap();
        assert_eq!(mn, mx);
        assert!((mn - 1.0).abs() < 0.3);
    }

    #[test]
    fn erfc_values() {
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.157_299_207).abs() < 1e-7);
        assert!((erfc(-1.0) - 1.842_700_793).abs() < 1e-7);
    }
}
