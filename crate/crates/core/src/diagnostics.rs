//! Alignment, error decomposition, weight drift, and the kernel matrices
//! `G(0)` / `H(0)` with the reference `G̃`.

use crate::dynamics::BetaDecomposition;
use crate::error::{Error, Result};
use crate::linalg::{self, dot_unchecked, norm2, sym_eig, Matrix, Op};
use crate::network::{Activation, TwoLayerNet};

/// Nodes of the Gauss–Hermite rule used for activation moments.
pub const HERMITE_NODES: usize = 64;

/// `cos∠(b, β)`, clamped to [−1, 1].
pub fn cos_alignment(b: &[f64], beta: &[f64]) -> Result<f64> {
    let num = linalg::dot(b, beta)?;
    let nb = norm2(b);
    let nbeta = norm2(beta);
    if nb == 0.0 || nbeta == 0.0 {
        return Err(Error::UndefinedAlignment);
    }
    Ok((num / (nb * nbeta)).clamp(-1.0, 1.0))
}

/// Splits `e = a ȳ + ξ` with `ȳ = −y/‖y‖` and `ξ ⟂ y`.
pub fn decompose_error(e: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if e.len() != y.len() {
        return Err(Error::dims("decompose_error", y.len(), e.len()));
    }
    let ny = norm2(y);
    if ny == 0.0 {
        return Err(Error::Contract("decompose_error needs a nonzero label vector".into()));
    }
    let y_bar: Vec<f64> = y.iter().map(|v| -v / ny).collect();
    let a = dot_unchecked(e, &y_bar);
    let xi = e.iter().zip(&y_bar).map(|(ei, yb)| ei - a * yb).collect();
    Ok((a, xi))
}

/// `(max_r ‖w_r(t) − w_r(0)‖, max_r |β_r(t) − β_r(0)|)`
pub fn weight_drift(net_t: &TwoLayerNet, net_0: &TwoLayerNet) -> Result<(f64, f64)> {
    if net_t.w().shape() != net_0.w().shape() {
        return Err(Error::dims(
            "weight_drift",
            format!("{:?}", net_0.w().shape()),
            format!("{:?}", net_t.w().shape()),
        ));
    }
    let mut max_w: f64 = 0.0;
    for r in 0..net_t.p() {
        let d2: f64 = net_t
            .w()
            .row(r)
            .iter()
            .zip(net_0.w().row(r))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        max_w = max_w.max(d2.sqrt());
    }
    let max_beta = net_t
        .beta()
        .iter()
        .zip(net_0.beta())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok((max_w, max_beta))
}

#[derive(Clone, Debug)]
pub struct AlignmentReport {
    pub cos_b_beta: f64,
    /// Norms of the initial, `W(0)`-span and `b`-span parts of β(t) (linear case only).
    pub component_norms: Option<[f64; 3]>,
    /// `Ŝ(t) / ‖ŝ(t)‖`
    pub s_hat_big_over_s_hat: f64,
}

pub fn alignment_report(
    b: &[f64],
    beta: &[f64],
    decomposition: Option<&BetaDecomposition>,
    s_hat_big: f64,
    s_hat_norm: f64,
) -> Result<AlignmentReport> {
    Ok(AlignmentReport {
        cos_b_beta: cos_alignment(b, beta)?,
        component_norms: decomposition.map(|d| [norm2(&d.init), norm2(&d.w0_span), norm2(&d.b_span)]),
        s_hat_big_over_s_hat: s_hat_big / s_hat_norm,
    })
}

#[derive(Clone, Debug)]
pub struct GramPair {
    pub g: Matrix,
    pub h: Matrix,
    pub lambda_min_g: f64,
    /// Spectral norm of `H`.
    pub norm_h: f64,
}

/// `G_ij = ψ(W x_i)·ψ(W x_j)/p` and `H_ij = (x_i·x_j/p) Σ_r β_r b_r ψ′(w_r·x_i) ψ′(w_r·x_j)`.
pub fn gram_pair(net: &TwoLayerNet, x: &Matrix) -> Result<GramPair> {
    let z = net.preactivations(x)?;
    let (n, p) = z.shape();
    let act = net.act();
    let mut phi = z.clone();
    let mut dz = z;
    for (v, u) in phi.as_mut_slice().iter_mut().zip(dz.as_mut_slice().iter_mut()) {
        *v = act.eval(*u);
        *u = act.derivative_given(*u, *v);
    }
    let inv_p = 1.0 / p as f64;
    let g = linalg::gram(&phi).scaled(inv_p);

    let mut weighted = dz.clone();
    for i in 0..n {
        for ((v, &bt), &bb) in weighted.row_mut(i).iter_mut().zip(net.beta()).zip(net.b()) {
            *v *= bt * bb;
        }
    }
    let mut h = linalg::gemm(inv_p, &weighted, Op::N, &dz, Op::T)?;
    let xxt = linalg::gram(x);
    for i in 0..n {
        for j in i..n {
            h[(i, j)] *= xxt[(i, j)];
        }
    }
    linalg::symmetrize_from_upper(&mut h);

    let lambda_min_g = sym_eig(&g)?.min();
    let norm_h = linalg::spectral_norm(&h);
    Ok(GramPair {
        g,
        h,
        lambda_min_g,
        norm_h,
    })
}

/// Nodes and weights for `∫ e^{−u²} f(u) du`. Nodes start from the
/// eigenvalues of the Hermite Jacobi matrix and are polished by Newton steps on
/// the orthonormal recurrence; weights come from the Christoffel function.
pub fn gauss_hermite(nodes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if nodes == 0 {
        return Err(Error::Contract("quadrature needs at least one node".into()));
    }
    let mut jac = Matrix::zeros(nodes, nodes);
    for k in 1..nodes {
        let off = (k as f64 / 2.0).sqrt();
        jac[(k - 1, k)] = off;
        jac[(k, k - 1)] = off;
    }
    let mut us = sym_eig(&jac)?.values;
    let mut weights = Vec::with_capacity(nodes);
    for u in us.iter_mut() {
        for _ in 0..3 {
            let (pn, pn1, _) = hermite_orthonormal(nodes, *u);
            // p_n′ = √(2n) p_{n−1}
            *u -= pn / ((2.0 * nodes as f64).sqrt() * pn1);
        }
        let (_, _, sum_sq) = hermite_orthonormal(nodes, *u);
        weights.push(1.0 / sum_sq);
    }
    Ok((us, weights))
}

/// `(p_n(u), p_{n−1}(u), Σ_{k<n} p_k(u)²)` for Hermite polynomials orthonormal
/// under `e^{−u²}`.
fn hermite_orthonormal(n: usize, u: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = u * (2.0 / (k as f64 + 1.0)).sqrt() * cur - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// `E f(Z)` for `Z ~ N(0, 1)` by 64-node Gauss–Hermite quadrature.
pub fn gaussian_expectation(f: impl Fn(f64) -> f64) -> Result<f64> {
    let (nodes, weights) = gauss_hermite(HERMITE_NODES)?;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    Ok(nodes
        .iter()
        .zip(&weights)
        .map(|(&u, &w)| w * f(std::f64::consts::SQRT_2 * u))
        .sum::<f64>()
        * inv_sqrt_pi)
}

/// `(E ψ′(Z), E ψ(Z)²)`
pub fn activation_moments(act: Activation) -> Result<(f64, f64)> {
    if act == Activation::Relu {
        return Err(Error::Contract(
            "reference Gram matrix needs a smooth activation; relu is not supported".into(),
        ));
    }
    Ok((
        gaussian_expectation(|z| act.derivative(z))?,
        gaussian_expectation(|z| act.eval(z).powi(2))?,
    ))
}

/// `G̃_ij = (Eψ′)² cos(x_i, x_j) + (Eψ² − (Eψ′)²) 1{i = j}`
pub fn gbar_reference(x: &Matrix, act: Activation) -> Result<Matrix> {
    let (m1, m2) = activation_moments(act)?;
    let n = x.rows();
    let norms: Vec<f64> = (0..n).map(|i| norm2(x.row(i))).collect();
    if norms.contains(&0.0) {
        return Err(Error::Contract("gbar_reference needs nonzero rows".into()));
    }
    let xxt = linalg::gram(x);
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = m1 * m1 * xxt[(i, j)] / (norms[i] * norms[j]);
        }
        out[(i, i)] = m1 * m1 + (m2 - m1 * m1);
    }
    Ok(out)
}

/// `E_W G(0)` without the unit-norm approximation: entry (i, j) is
/// `E ψ(U)ψ(V)` for centered Gaussian (U, V) with the covariance of
/// `(w·xᵢ, w·xⱼ)`, by tensor Gauss–Hermite quadrature.
pub fn gram_expectation(x: &Matrix, act: Activation) -> Result<Matrix> {
    let (us, ws) = gauss_hermite(HERMITE_NODES)?;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let z: Vec<f64> = us.iter().map(|u| std::f64::consts::SQRT_2 * u).collect();
    let w: Vec<f64> = ws.iter().map(|v| v * inv_sqrt_pi).collect();
    let n = x.rows();
    let xxt = linalg::gram(x);
    let norms: Vec<f64> = (0..n).map(|i| xxt[(i, i)].sqrt()).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let a = norms[i];
        let psi_a: Vec<f64> = z.iter().map(|&zk| act.eval(a * zk)).collect();
        out[(i, i)] = w.iter().zip(&psi_a).map(|(wk, v)| wk * v * v).sum();
        for j in i + 1..n {
            let b = norms[j];
            // U = a Z₁, V = r Z₁ + s Z₂
            let (r, s) = if a > 0.0 {
                let r = xxt[(i, j)] / a;
                (r, (b * b - r * r).max(0.0).sqrt())
            } else {
                (0.0, b)
            };
            let mut e = 0.0;
            for (k, &zk) in z.iter().enumerate() {
                let inner: f64 = w.iter().zip(&z).map(|(wl, &zl)| wl * act.eval(r * zk + s * zl)).sum();
                e += w[k] * psi_a[k] * inner;
            }
            out[(i, j)] = e;
            out[(j, i)] = e;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn cos_examples() {
        assert_eq!(cos_alignment(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cos_alignment(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cos_alignment(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(cos_alignment(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::UndefinedAlignment)));
    }

    #[test]
    fn cos_scale_behaviour() {
        let b = [0.3, -1.2, 0.8];
        let beta = [1.1, 0.4, -0.2];
        let c = cos_alignment(&b, &beta).unwrap();
        let scaled: Vec<f64> = b.iter().map(|v| 4.0 * v).collect();
        assert_eq!(cos_alignment(&scaled, &beta).unwrap(), c);
        let flipped: Vec<f64> = b.iter().map(|v| -v).collect();
        assert_eq!(cos_alignment(&flipped, &beta).unwrap(), -c);
    }

    #[test]
    fn decomposition_examples() {
        let y = [3.0, 4.0];
        let e = [-0.6, -0.8];
        let (a, xi) = decompose_error(&e, &y).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        assert!(norm2(&xi) < 1e-15);

        let e = [4.0, -3.0];
        let (a, xi) = decompose_error(&e, &y).unwrap();
        assert!(a.abs() < 1e-15);
        assert!(norm2(&linalg::sub_vec(&xi, &e)) < 1e-15);

        assert!(matches!(decompose_error(&e, &[0.0, 0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn decomposition_pythagoras() {
        let mut s = derive_stream(1, "decomp");
        for _ in 0..50 {
            let e = s.gaussian(7, 1.0);
            let y = s.gaussian(7, 2.0);
            let (a, xi) = decompose_error(&e, &y).unwrap();
            assert!((a * a + dot_unchecked(&xi, &xi) - dot_unchecked(&e, &e)).abs() < 1e-12);
            assert!(dot_unchecked(&xi, &y).abs() < 1e-10);
        }
    }

    #[test]
    fn drift_examples() {
        let net = TwoLayerNet::init_gaussian(2, 3, Activation::Tanh, 4);
        assert_eq!(weight_drift(&net, &net).unwrap(), (0.0, 0.0));
        let mut w = net.w().clone();
        w[(1, 0)] += 3.0;
        w[(1, 1)] += 4.0;
        let moved = TwoLayerNet::new(w, net.beta().to_vec(), net.b().to_vec(), net.act()).unwrap();
        let (dw, db) = weight_drift(&moved, &net).unwrap();
        assert!((dw - 5.0).abs() < 1e-14);
        assert_eq!(db, 0.0);
    }

    #[test]
    fn gram_expectation_oracles() {
        let x = Matrix::from_rows(&[[1.0, 0.5, 0.0], [0.3, -2.0, 1.0], [0.0, 0.0, 0.7]]).unwrap();
        // E[UV] is the covariance itself
        let lin = gram_expectation(&x, Activation::Identity).unwrap();
        assert!(lin.max_abs_diff(&linalg::gram(&x)) < 1e-12);
        // sigmoid(u) = ½ + ½ tanh(u/2): E σ(U)σ(V) = ¼ + ¼ E tanh(U/2) tanh(V/2)
        let sig = gram_expectation(&x, Activation::Sigmoid).unwrap();
        let th = gram_expectation(&x.clone().scaled(0.5), Activation::Tanh).unwrap();
        for (a, b) in sig.as_slice().iter().zip(th.as_slice()) {
            assert!((a - (0.25 + 0.25 * b)).abs() < 1e-12);
        }
        // unit rows: the diagonal is E ψ(Z)²
        let unit = Matrix::from_rows(&[[0.6, 0.8], [1.0, 0.0]]).unwrap();
        let (_, m2) = activation_moments(Activation::Tanh).unwrap();
        let g = gram_expectation(&unit, Activation::Tanh).unwrap();
        assert!((g[(0, 0)] - m2).abs() < 1e-12 && (g[(1, 1)] - m2).abs() < 1e-12);
    }

    #[test]
    fn identity_gram_pair_collapses() {
        let net = TwoLayerNet::init_gaussian(6, 9, Activation::Identity, 5);
        let x = Matrix::from_vec(4, 6, derive_stream(6, "x").gaussian(24, 0.4)).unwrap();
        let gp = gram_pair(&net, &x).unwrap();
        let xw = linalg::matmul_nt(&x, net.w()).unwrap();
        let g_ref = linalg::matmul_nt(&xw, &xw).unwrap().scaled(1.0 / 9.0);
        assert!(gp.g.max_abs_diff(&g_ref) < 1e-12);
        let btb = dot_unchecked(net.b(), net.beta()) / 9.0;
        let h_ref = linalg::gram(&x).scaled(btb);
        assert!(gp.h.max_abs_diff(&h_ref) < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(gp.h[(i, j)], gp.h[(j, i)]);
            }
        }
        assert!(gp.lambda_min_g >= -1e-10);
    }

    #[test]
    fn hermite_rule_integrates_polynomials() {
        let (nodes, weights) = gauss_hermite(HERMITE_NODES).unwrap();
        let total: f64 = weights.iter().sum();
        assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        let m2 = gaussian_expectation(|z| z * z).unwrap();
        assert!((m2 - 1.0).abs() < 1e-13, "{m2}");
        assert!((gaussian_expectation(|z| z.powi(4)).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_moments_and_reference() {
        let (m1, m2) = activation_moments(Activation::Identity).unwrap();
        assert!((m1 - 1.0).abs() < 1e-13 && (m2 - 1.0).abs() < 1e-12);
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        let g = gbar_reference(&x, Activation::Identity).unwrap();
        assert!((g[(0, 1)] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((g[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(gbar_reference(&x, Activation::Relu).is_err());
    }

    #[test]
    fn sigmoid_derivative_at_zero_weights() {
        // E σ′(Z) < σ′(0) = 1/4 since σ′ peaks at the origin.
        let (m1, _) = activation_moments(Activation::Sigmoid).unwrap();
        assert!(m1 < 0.25 && m1 > 0.2);
    }
}
