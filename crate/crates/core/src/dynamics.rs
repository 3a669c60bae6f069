//! Exact error recurrence for the linear network under (regularized) feedback
//! alignment, plus the closed forms for `W(t)` and `β(t)`.
//!
//! The state at step `t` carries `e(t)`, `s(t−1)`, `ŝ(t−1)`, `Ŝ(t−1)` and
//! `Π_{i<t}(1 − ηλ(i))`. A step first advances the discounted sums with
//! `λ(t)`, then applies
//!
//! ```text
//! e(t+1) = [(1−ηλ)I − (η/p) X W₀ᵀ W₀ Xᵀ − η(J₁ + J₂ + J₃)] e(t) − ηλ y
//! J₁ = (1/p) bᵀβ₀ Π_{i≤t}(1−ηλ(i)) XXᵀ
//! J₂ = −(η/p) (v̄ᵀXᵀŝ(t) XXᵀ + XXᵀ s(t−1) v̄ᵀXᵀ + X v̄ s(t−1)ᵀ XXᵀ)
//! J₃ = (η²/p²) ‖b‖² (Ŝ(t) XXᵀ + XXᵀ s(t−1) s(t−1)ᵀ XXᵀ)
//! ```
//!
//! with `v̄ = W₀ᵀb/√p`. No J matrix is formed; each acts through matvecs.

use crate::error::{Error, Result};
use crate::linalg::{self, dot_unchecked, Matrix};
use crate::trainers::Schedule;

#[derive(Clone, Debug)]
pub struct DynState {
    e: Vec<f64>,
    s_prev: Vec<f64>,
    s_hat_prev: Vec<f64>,
    s_hat_big_prev: f64,
    decay_prev: f64,
    t: usize,

    x: Matrix,
    y: Vec<f64>,
    w0: Matrix,
    beta0: Vec<f64>,
    b: Vec<f64>,
    v_bar: Vec<f64>,
    x_v_bar: Vec<f64>,
    xxt: Matrix,
    /// `(1/p) X W₀ᵀ W₀ Xᵀ`
    k0: Matrix,
    b_dot_beta0: f64,
    b_norm_sq: f64,
}

/// `β(t)` split into its initial, `W(0)`-span and `b`-span parts.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaDecomposition {
    pub init: Vec<f64>,
    pub w0_span: Vec<f64>,
    pub b_span: Vec<f64>,
    pub total: Vec<f64>,
}

pub fn dyn_init(x: &Matrix, y: &[f64], w0: &Matrix, beta0: &[f64], b: &[f64]) -> Result<DynState> {
    let (n, d) = x.shape();
    let p = w0.rows();
    if y.len() != n {
        return Err(Error::dims("dyn_init", format!("{n} labels"), y.len()));
    }
    if w0.cols() != d {
        return Err(Error::dims("dyn_init", format!("W0 with {d} columns"), w0.cols()));
    }
    if beta0.len() != p || b.len() != p {
        return Err(Error::dims(
            "dyn_init",
            format!("width {p}"),
            format!("beta0 {} / b {}", beta0.len(), b.len()),
        ));
    }
    if p == 0 {
        return Err(Error::Contract("network width must be positive".into()));
    }
    let inv_sqrt_p = 1.0 / (p as f64).sqrt();

    let xw0t = linalg::matmul_nt(x, w0)?;
    let k0 = linalg::gram(&xw0t).scaled(1.0 / p as f64);
    let mut e = linalg::matvec(&xw0t, beta0)?;
    for (ei, yi) in e.iter_mut().zip(y) {
        *ei = *ei * inv_sqrt_p - yi;
    }
    let v_bar: Vec<f64> = linalg::matvec_t(w0, b)?.into_iter().map(|v| v * inv_sqrt_p).collect();
    let x_v_bar = linalg::matvec(x, &v_bar)?;

    Ok(DynState {
        e,
        s_prev: vec![0.0; n],
        s_hat_prev: vec![0.0; n],
        s_hat_big_prev: 0.0,
        decay_prev: 1.0,
        t: 0,
        xxt: linalg::gram(x),
        x: x.clone(),
        y: y.to_vec(),
        w0: w0.clone(),
        beta0: beta0.to_vec(),
        b_dot_beta0: dot_unchecked(b, beta0),
        b_norm_sq: dot_unchecked(b, b),
        b: b.to_vec(),
        v_bar,
        x_v_bar,
        k0,
    })
}

/// Advances the state from `t` to `t + 1` under `λ(t) = lambda_t`.
pub fn dyn_step(state: &mut DynState, eta: f64, lambda_t: f64) -> Result<()> {
    if !(eta > 0.0) || !(lambda_t >= 0.0) {
        return Err(Error::Contract(format!("need eta > 0 and lambda >= 0, got {eta}, {lambda_t}")));
    }
    let st = state;
    let n = st.e.len();
    let p = st.w0.rows() as f64;
    let decay = 1.0 - eta * lambda_t;
    let e = &st.e;

    let xxt_e = linalg::matvec(&st.xxt, e)?;
    let xxt_s = linalg::matvec(&st.xxt, &st.s_prev)?;
    let k0_e = linalg::matvec(&st.k0, e)?;

    // ŝ(t), Ŝ(t) and Π_{i≤t}(1 − ηλ(i))
    let s_hat: Vec<f64> = st.s_hat_prev.iter().zip(e).map(|(sh, ei)| decay * sh + ei).collect();
    let s_hat_big = decay * st.s_hat_big_prev + dot_unchecked(e, &xxt_s);
    let decay_t = st.decay_prev * decay;

    let vbar_xt_e = dot_unchecked(&st.x_v_bar, e);
    let vbar_xt_shat = dot_unchecked(&st.x_v_bar, &s_hat);
    let s_xxt_e = dot_unchecked(&st.s_prev, &xxt_e);

    let j1 = st.b_dot_beta0 * decay_t / p;
    let j2 = -eta / p;
    let j3 = eta * eta * st.b_norm_sq / (p * p);

    let mut next = vec![0.0; n];
    for i in 0..n {
        let j_e = j1 * xxt_e[i]
            + j2 * (vbar_xt_shat * xxt_e[i] + xxt_s[i] * vbar_xt_e + st.x_v_bar[i] * s_xxt_e)
            + j3 * (s_hat_big * xxt_e[i] + xxt_s[i] * s_xxt_e);
        next[i] = decay * e[i] - eta * k0_e[i] - eta * j_e - eta * lambda_t * st.y[i];
    }

    for (si, ei) in st.s_prev.iter_mut().zip(&st.e) {
        *si += ei;
    }
    st.s_hat_prev = s_hat;
    st.s_hat_big_prev = s_hat_big;
    st.decay_prev = decay_t;
    st.e = next;
    st.t += 1;
    Ok(())
}

impl DynState {
    pub fn t(&self) -> usize {
        self.t
    }

    /// `e(t)`
    pub fn e(&self) -> &[f64] {
        &self.e
    }

    /// `s(t−1)`
    pub fn s_prev(&self) -> &[f64] {
        &self.s_prev
    }

    /// `ŝ(t−1)`
    pub fn s_hat_prev(&self) -> &[f64] {
        &self.s_hat_prev
    }

    /// `Ŝ(t−1)`
    pub fn s_hat_big_prev(&self) -> f64 {
        self.s_hat_big_prev
    }

    pub fn v_bar(&self) -> &[f64] {
        &self.v_bar
    }

    pub fn xxt(&self) -> &Matrix {
        &self.xxt
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// `W(t) = W(0) − (η/√p) b s(t−1)ᵀ X`
    pub fn closed_form_w(&self, eta: f64) -> Result<Matrix> {
        let p = self.w0.rows() as f64;
        let sx = linalg::matvec_t(&self.x, &self.s_prev)?;
        let mut w = self.w0.clone();
        w.rank1_update(-eta / p.sqrt(), &self.b, &sx);
        Ok(w)
    }

    /// `β(t) = Π_{i<t}(1−ηλ(i)) β(0) − (η/√p) W(0) Xᵀ ŝ(t−1) + (η²/p) b Ŝ(t−1)`
    pub fn closed_form_beta(&self, eta: f64) -> Result<BetaDecomposition> {
        let p = self.w0.rows() as f64;
        let init: Vec<f64> = self.beta0.iter().map(|v| self.decay_prev * v).collect();
        let xs = linalg::matvec_t(&self.x, &self.s_hat_prev)?;
        let w0_span: Vec<f64> = linalg::matvec(&self.w0, &xs)?
            .into_iter()
            .map(|v| -eta / p.sqrt() * v)
            .collect();
        let c = eta * eta / p * self.s_hat_big_prev;
        let b_span: Vec<f64> = self.b.iter().map(|v| c * v).collect();
        let total = init
            .iter()
            .zip(&w0_span)
            .zip(&b_span)
            .map(|((a, b), c)| a + b + c)
            .collect();
        Ok(BetaDecomposition {
            init,
            w0_span,
            b_span,
            total,
        })
    }
}

/// Error vectors `e(0), …, e(steps)` under `schedule`.
#[allow(clippy::too_many_arguments)]
pub fn replay(
    x: &Matrix,
    y: &[f64],
    w0: &Matrix,
    beta0: &[f64],
    b: &[f64],
    eta: f64,
    schedule: &Schedule,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut st = dyn_init(x, y, w0, beta0, b)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(st.e.clone());
    for t in 0..steps {
        dyn_step(&mut st, eta, schedule.lambda_at(t))?;
        out.push(st.e.clone());
    }
    Ok(out)
}

/// `Ŝ(t)` straight from its double-sum definition, O(t²) matvec-free dot
/// products. `errors` holds `e(0), …, e(t)`; `lambdas[k] = λ(k)`.
pub fn s_hat_big_direct(errors: &[Vec<f64>], xxt: &Matrix, eta: f64, lambdas: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Ok(0.0);
    }
    let t = errors.len() - 1;
    if lambdas.len() < errors.len() {
        return Err(Error::dims("s_hat_big_direct", errors.len(), lambdas.len()));
    }
    let mut total = 0.0;
    for i in 0..=t {
        let factor: f64 = (i + 1..=t).map(|k| 1.0 - eta * lambdas[k]).product();
        let xxt_ei = linalg::matvec(xxt, &errors[i])?;
        let inner: f64 = errors[..i].iter().map(|ej| dot_unchecked(&xxt_ei, ej)).sum();
        total += factor * inner;
    }
    Ok(total)
}
