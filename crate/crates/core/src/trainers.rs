//! Full-batch update rules (backpropagation, feedback alignment, regularized
//! feedback alignment), regularization schedules, and the recording loop.
//!
//! Every step computes both parameter updates from the same pre-step
//! `(W, β, e)` before assigning either.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{cos_alignment, decompose_error, weight_drift};
use crate::error::{Error, Result};
use crate::linalg::{self, dot_unchecked, norm2, Matrix, Op};
use crate::network::{Dataset, TwoLayerNet};

/// Error norms above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bp,
    Fa,
    FaReg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bp => "bp",
            Algorithm::Fa => "fa",
            Algorithm::FaReg => "fa_reg",
        }
    }
}

/// Regularization sequence `t ↦ λ(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Zero,
    Constant { lambda: f64 },
    /// `λ` for `t ≤ until`, zero afterwards.
    Cutoff { lambda: f64, until: usize },
    /// `λ₀ (1 − rate)^t`
    ExpDecay { lambda0: f64, rate: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Schedule::Zero => true,
            Schedule::Constant { lambda } | Schedule::Cutoff { lambda, .. } => {
                lambda.is_finite() && lambda >= 0.0
            }
            Schedule::ExpDecay { lambda0, rate } => {
                lambda0.is_finite() && lambda0 >= 0.0 && rate > 0.0 && rate <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule {self:?}")))
        }
    }

    pub fn lambda_at(&self, t: usize) -> f64 {
        match *self {
            Schedule::Zero => 0.0,
            Schedule::Constant { lambda } => lambda,
            Schedule::Cutoff { lambda, until } => {
                if t <= until {
                    lambda
                } else {
                    0.0
                }
            }
            Schedule::ExpDecay { lambda0, rate } => lambda0 * (1.0 - rate).powi(t.min(i32::MAX as usize) as i32),
        }
    }

    /// `S_λ = Σ_t λ(t)`, `None` when the sum diverges.
    pub fn total(&self) -> Option<f64> {
        match *self {
            Schedule::Zero => Some(0.0),
            Schedule::Constant { lambda } => (lambda == 0.0).then_some(0.0),
            Schedule::Cutoff { lambda, until } => Some(lambda * (until as f64 + 1.0)),
            Schedule::ExpDecay { lambda0, rate } => Some(lambda0 / rate),
        }
    }

    pub fn max_lambda(&self) -> f64 {
        match *self {
            Schedule::Zero => 0.0,
            Schedule::Constant { lambda } | Schedule::Cutoff { lambda, .. } => lambda,
            Schedule::ExpDecay { lambda0, .. } => lambda0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.max_lambda() == 0.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Feedback {
    /// Backpropagate through the current forward weights β.
    Forward,
    /// Backpropagate through the fixed random weights b.
    Random,
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("step size must be positive, got {eta}")))
    }
}

/// One simultaneous update; returns the pre-update error `e(t)`.
fn apply_step(
    net: &mut TwoLayerNet,
    data: &Dataset,
    eta: f64,
    lambda: f64,
    feedback: Feedback,
) -> Result<Vec<f64>> {
    if data.d() != net.d() {
        return Err(Error::dims("step", format!("{} input columns", net.d()), data.d()));
    }
    let scale = net.scale();
    let act = net.act();
    let shrink = 1.0 - eta * lambda;

    if act.is_identity() {
        let e = net.error(data)?;
        // g = Xᵀe; β-direction W g / √p; W-direction fb gᵀ / √p
        let g = linalg::matvec_t(&data.x, &e)?;
        let wg = linalg::matvec(net.w(), &g)?;
        let new_beta: Vec<f64> = net
            .beta()
            .iter()
            .zip(&wg)
            .map(|(&bt, &v)| shrink * bt - eta * scale * v)
            .collect();
        let fb = match feedback {
            Feedback::Forward => net.beta().to_vec(),
            Feedback::Random => net.b().to_vec(),
        };
        let (w, beta) = net.params_mut();
        w.rank1_update(-eta * scale, &fb, &g);
        *beta = new_beta;
        return Ok(e);
    }

    let mut z = net.preactivations(&data.x)?;
    let (n, p) = z.shape();
    let beta = net.beta();
    // z becomes ψ′(Z) in place; phi holds ψ(Z)
    let mut phi = z.clone();
    for (v, u) in phi.as_mut_slice().iter_mut().zip(z.as_mut_slice().iter_mut()) {
        *v = act.eval(*u);
        *u = act.derivative_given(*u, *v);
    }
    let e: Vec<f64> = (0..n).map(|i| scale * dot_unchecked(phi.row(i), beta) - data.y[i]).collect();
    let fb = match feedback {
        Feedback::Forward => beta,
        Feedback::Random => net.b(),
    };
    let mut grad_beta = vec![0.0; p];
    for i in 0..n {
        linalg::axpy(e[i], phi.row(i), &mut grad_beta);
        let ei = e[i];
        for (c, &f) in z.row_mut(i).iter_mut().zip(fb) {
            *c *= ei * f;
        }
    }
    let coeff = z;
    // ΔW = −(η/√p) Σᵢ diag(ψ′(W xᵢ)) fb xᵢᵀ eᵢ = −(η/√p) Cᵀ X
    let delta_w = linalg::gemm(-eta * scale, &coeff, Op::T, &data.x, Op::N)?;
    let new_beta: Vec<f64> = beta
        .iter()
        .zip(&grad_beta)
        .map(|(&bt, &gb)| shrink * bt - eta * scale * gb)
        .collect();
    let (w, beta) = net.params_mut();
    linalg::axpy(1.0, delta_w.as_slice(), w.as_mut_slice());
    *beta = new_beta;
    Ok(e)
}

/// Gradient descent on the squared loss; returns `e(t)`.
pub fn bp_step(net: &mut TwoLayerNet, data: &Dataset, eta: f64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    apply_step(net, data, eta, 0.0, Feedback::Forward)
}

/// Feedback alignment: the hidden-layer error travels through `b`; returns `e(t)`.
pub fn fa_step(net: &mut TwoLayerNet, data: &Dataset, eta: f64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    apply_step(net, data, eta, 0.0, Feedback::Random)
}

/// Feedback alignment with the extra contraction `β ← (1 − ηλ)β − …`.
pub fn fa_reg_step(net: &mut TwoLayerNet, data: &Dataset, eta: f64, lambda_t: f64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    if !(lambda_t >= 0.0) {
        return Err(Error::Contract(format!("regularization must be nonnegative, got {lambda_t}")));
    }
    if eta * lambda_t >= 1.0 {
        return Err(Error::Contract(format!(
            "contraction factor 1 - eta*lambda = {} is not positive",
            1.0 - eta * lambda_t
        )));
    }
    apply_step(net, data, eta, lambda_t, Feedback::Random)
}

/// Analytic gradients of `½‖e‖² + ½λ‖β‖²` with respect to `(W, β)`.
pub fn loss_gradients(net: &TwoLayerNet, data: &Dataset, lambda: f64) -> Result<(Matrix, Vec<f64>)> {
    let e = net.error(data)?;
    let z = net.preactivations(&data.x)?;
    let (n, p) = z.shape();
    let act = net.act();
    let scale = net.scale();
    let mut grad_beta: Vec<f64> = net.beta().iter().map(|&bt| lambda * bt).collect();
    let mut coeff = Matrix::zeros(n, p);
    for i in 0..n {
        for r in 0..p {
            let u = z[(i, r)];
            grad_beta[r] += scale * e[i] * act.eval(u);
            coeff[(i, r)] = e[i] * net.beta()[r] * act.derivative(u);
        }
    }
    let grad_w = linalg::gemm(scale, &coeff, Op::T, &data.x, Op::N)?;
    Ok((grad_w, grad_beta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub loss: f64,
    pub err_norm: f64,
    pub cos_align: f64,
    pub a_t: f64,
    pub xi_norm: f64,
    pub max_w_drift: f64,
    pub max_beta_drift: f64,
    pub lambda_t: f64,
    /// `‖ŝ(t)‖`
    pub s_hat_norm: f64,
    /// `Ŝ(t)`
    pub s_hat_big: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// `s(t) = Σ_{i≤t} e(i)` after the last step.
    pub s: Vec<f64>,
    /// `ŝ(t)` after the last step.
    pub s_hat: Vec<f64>,
    /// `Ŝ(t)` after the last step.
    pub s_hat_big: f64,
    /// `‖e(T)‖` of the network after the final update.
    pub final_err_norm: f64,
    /// `cos∠(b, β(T))` after the final update (NaN when undefined).
    pub final_cos: f64,
    pub final_max_w_drift: f64,
    pub final_max_beta_drift: f64,
    pub y_norm: f64,
    pub eta: f64,
    pub linear: bool,
}

impl Trajectory {
    /// Error norms `‖e(0)‖, …, ‖e(T)‖` including the post-training error.
    pub fn err_norms(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.records.iter().map(|r| r.err_norm).collect();
        v.push(self.final_err_norm);
        v
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

/// Step-by-step training driver that records one [`StepRecord`] per update and
/// maintains the running sums `s(t)`, `ŝ(t)` and `Ŝ(t)`.
pub struct Trainer<'a> {
    net: &'a mut TwoLayerNet,
    net0: TwoLayerNet,
    data: &'a Dataset,
    eta: f64,
    schedule: Schedule,
    algorithm: Algorithm,
    xxt: Matrix,
    s: Vec<f64>,
    s_hat: Vec<f64>,
    s_hat_big: f64,
    y_norm: f64,
    t: usize,
    last: Option<StepRecord>,
    hidden: Option<HiddenState>,
}

/// Nonlinear runs keep `W(t) = W(0) − (η/√p) AᵀX` implicit: `A` is the sum of
/// the per-step coefficient matrices and `M = XXᵀA`, so `XW(t)ᵀ = Z(0) − (η/√p)M`.
/// `W` is written back to the network only when it is observed.
struct HiddenState {
    z0: Matrix,
    a: Matrix,
    m: Matrix,
    stale: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        net: &'a mut TwoLayerNet,
        data: &'a Dataset,
        eta: f64,
        schedule: Schedule,
        algorithm: Algorithm,
    ) -> Result<Self> {
        check_eta(eta)?;
        schedule.validate()?;
        if algorithm != Algorithm::FaReg && !schedule.is_zero() {
            return Err(Error::Config(format!(
                "algorithm {} does not take a regularization schedule",
                algorithm.name()
            )));
        }
        if data.d() != net.d() {
            return Err(Error::dims("Trainer::new", net.d(), data.d()));
        }
        let n = data.n();
        let hidden = if net.act().is_identity() {
            None
        } else {
            let p = net.p();
            Some(HiddenState {
                z0: net.preactivations(&data.x)?,
                a: Matrix::zeros(n, p),
                m: Matrix::zeros(n, p),
                stale: false,
            })
        };
        Ok(Trainer {
            net0: net.clone(),
            net,
            data,
            eta,
            schedule,
            algorithm,
            xxt: linalg::gram(&data.x),
            s: vec![0.0; n],
            s_hat: vec![0.0; n],
            s_hat_big: 0.0,
            y_norm: norm2(&data.y),
            t: 0,
            last: None,
            hidden,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn net(&mut self) -> Result<&TwoLayerNet> {
        self.sync()?;
        Ok(self.net)
    }

    /// Writes the implicit hidden weights back into the network.
    fn sync(&mut self) -> Result<()> {
        if let Some(h) = self.hidden.as_mut().filter(|h| h.stale) {
            let step = self.eta * self.net.scale();
            let mut w = self.net0.w().clone();
            linalg::gemm_into(-step, &h.a, Op::T, &self.data.x, Op::N, 1.0, &mut w)?;
            *self.net.params_mut().0 = w;
            h.stale = false;
        }
        Ok(())
    }

    fn hidden_drift(&self, h: &HiddenState) -> f64 {
        // ‖w_r(t) − w_r(0)‖² = (η²/p) a_rᵀ XXᵀ a_r
        let (n, p) = h.a.shape();
        let mut q = vec![0.0; p];
        for i in 0..n {
            for ((qr, &ar), &mr) in q.iter_mut().zip(h.a.row(i)).zip(h.m.row(i)) {
                *qr += ar * mr;
            }
        }
        let step = self.eta * self.net.scale();
        q.iter().fold(0.0f64, |mx, &v| mx.max(step * v.max(0.0).sqrt()))
    }

    /// The nonlinear update in the implicit representation; returns `e(t)`.
    fn hidden_step(&mut self, lambda: f64) -> Result<Vec<f64>> {
        let h = self.hidden.as_mut().expect("nonlinear state");
        let net = &mut *self.net;
        let scale = net.scale();
        let step = self.eta * scale;
        let act = net.act();
        let (n, p) = h.z0.shape();
        // phi = ψ(Z), dz = ψ′(Z)
        let mut dz = h.z0.clone();
        for (u, &m) in dz.as_mut_slice().iter_mut().zip(h.m.as_slice()) {
            *u -= step * m;
        }
        let mut phi = dz.clone();
        for (v, u) in phi.as_mut_slice().iter_mut().zip(dz.as_mut_slice().iter_mut()) {
            *v = act.eval(*u);
            *u = act.derivative_given(*u, *v);
        }
        let beta = net.beta();
        let e: Vec<f64> = (0..n).map(|i| scale * dot_unchecked(phi.row(i), beta) - self.data.y[i]).collect();
        let fb = match self.algorithm {
            Algorithm::Bp => beta,
            Algorithm::Fa | Algorithm::FaReg => net.b(),
        };
        let mut grad_beta = vec![0.0; p];
        for i in 0..n {
            linalg::axpy(e[i], phi.row(i), &mut grad_beta);
            let ei = e[i];
            for (c, &f) in dz.row_mut(i).iter_mut().zip(fb) {
                *c *= ei * f;
            }
        }
        let coeff = dz;
        linalg::axpy(1.0, coeff.as_slice(), h.a.as_mut_slice());
        linalg::gemm_into(1.0, &self.xxt, Op::N, &coeff, Op::N, 1.0, &mut h.m)?;
        let shrink = 1.0 - self.eta * lambda;
        let new_beta: Vec<f64> = beta
            .iter()
            .zip(&grad_beta)
            .map(|(&bt, &gb)| shrink * bt - step * gb)
            .collect();
        *net.params_mut().1 = new_beta;
        h.stale = true;
        Ok(e)
    }

    pub fn initial_net(&self) -> &TwoLayerNet {
        &self.net0
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn s_hat(&self) -> &[f64] {
        &self.s_hat
    }

    pub fn s_hat_big(&self) -> f64 {
        self.s_hat_big
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let t = self.t;
        let lambda = self.schedule.lambda_at(t);
        let cos_align = cos_alignment(self.net.b(), self.net.beta()).unwrap_or(f64::NAN);
        let beta_sq = dot_unchecked(self.net.beta(), self.net.beta());

        let (max_w_drift, max_beta_drift, e) = if let Some(h) = &self.hidden {
            let max_w = self.hidden_drift(h);
            let max_beta = self
                .net
                .beta()
                .iter()
                .zip(self.net0.beta())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if self.eta * lambda >= 1.0 {
                return Err(Error::Contract(format!(
                    "contraction factor 1 - eta*lambda = {} is not positive",
                    1.0 - self.eta * lambda
                )));
            }
            (max_w, max_beta, self.hidden_step(lambda)?)
        } else {
            let (max_w, max_beta) = weight_drift(self.net, &self.net0)?;
            let e = match self.algorithm {
                Algorithm::Bp => bp_step(self.net, self.data, self.eta)?,
                Algorithm::Fa => fa_step(self.net, self.data, self.eta)?,
                Algorithm::FaReg => fa_reg_step(self.net, self.data, self.eta, lambda)?,
            };
            (max_w, max_beta, e)
        };
        let err_norm = norm2(&e);
        if !err_norm.is_finite() || err_norm > DIVERGENCE_LIMIT {
            self.sync()?;
            return Err(Error::Diverged {
                step: t,
                err_norm,
                last_finite: self.last.clone().map(Box::new),
            });
        }

        let (a_t, xi_norm) = if self.y_norm > 0.0 {
            let (a, xi) = decompose_error(&e, &self.data.y)?;
            (a, norm2(&xi))
        } else {
            (0.0, err_norm)
        };

        // Ŝ(t) = (1 − ηλ(t)) Ŝ(t−1) + e(t)ᵀ X Xᵀ s(t−1)
        let decay = 1.0 - self.eta * lambda;
        let xxt_s = linalg::matvec(&self.xxt, &self.s)?;
        self.s_hat_big = decay * self.s_hat_big + dot_unchecked(&e, &xxt_s);
        for ((sh, si), &ei) in self.s_hat.iter_mut().zip(self.s.iter_mut()).zip(&e) {
            *sh = decay * *sh + ei;
            *si += ei;
        }

        let record = StepRecord {
            t,
            loss: 0.5 * err_norm * err_norm + 0.5 * lambda * beta_sq,
            err_norm,
            cos_align,
            a_t,
            xi_norm,
            max_w_drift,
            max_beta_drift,
            lambda_t: lambda,
            s_hat_norm: norm2(&self.s_hat),
            s_hat_big: self.s_hat_big,
        };
        self.last = Some(record.clone());
        self.t += 1;
        Ok(record)
    }

    /// Snapshot of the run so far; evaluates the current error once.
    pub fn trajectory(&mut self, records: Vec<StepRecord>) -> Result<Trajectory> {
        self.sync()?;
        let (final_max_w_drift, final_max_beta_drift) = weight_drift(self.net, &self.net0)?;
        Ok(Trajectory {
            final_cos: cos_alignment(self.net.b(), self.net.beta()).unwrap_or(f64::NAN),
            final_max_w_drift,
            final_max_beta_drift,
            records,
            s: self.s.clone(),
            s_hat: self.s_hat.clone(),
            s_hat_big: self.s_hat_big,
            final_err_norm: norm2(&self.net.error(self.data)?),
            y_norm: self.y_norm,
            eta: self.eta,
            linear: self.net.act().is_identity(),
        })
    }
}

/// Runs `steps` updates of `algorithm`, mutating `net` in place.
pub fn train(
    net: &mut TwoLayerNet,
    data: &Dataset,
    eta: f64,
    schedule: Schedule,
    steps: usize,
    algorithm: Algorithm,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Contract("steps must be at least 1".into()));
    }
    let mut trainer = Trainer::new(net, data, eta, schedule, algorithm)?;
    let mut records = Vec::with_capacity(steps);
    for _ in 0..steps {
        records.push(trainer.step()?);
    }
    trainer.trajectory(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use crate::rng::derive_stream;

    fn scalar_setup() -> (TwoLayerNet, Dataset) {
        let net = TwoLayerNet::new(
            Matrix::from_rows(&[[1.0]]).unwrap(),
            vec![1.0],
            vec![2.0],
            Activation::Identity,
        )
        .unwrap();
        let data = Dataset::new(Matrix::from_rows(&[[1.0]]).unwrap(), vec![0.0]).unwrap();
        (net, data)
    }

    fn random_setup(act: Activation, n: usize, d: usize, p: usize, seed: u64) -> (TwoLayerNet, Dataset) {
        let net = TwoLayerNet::init_gaussian(d, p, act, seed);
        let mut s = derive_stream(seed, "data");
        let x = Matrix::from_vec(n, d, s.gaussian(n * d, 1.0 / (d as f64).sqrt())).unwrap();
        let y = s.gaussian(n, 1.0);
        (net, Dataset::new(x, y).unwrap())
    }

    #[test]
    fn fa_hand_walkthrough() {
        let (mut net, data) = scalar_setup();
        let e0 = fa_step(&mut net, &data, 0.1).unwrap();
        assert_eq!(e0, vec![1.0]);
        assert!((net.beta()[0] - 0.9).abs() < 1e-15);
        assert!((net.w()[(0, 0)] - 0.8).abs() < 1e-15);
        assert!((net.error(&data).unwrap()[0] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn zero_error_leaves_net_unchanged() {
        for act in [Activation::Identity, Activation::Tanh] {
            let (net, data) = random_setup(act, 4, 3, 5, 2);
            let fitted = Dataset::new(data.x.clone(), net.forward(&data.x).unwrap()).unwrap();
            let mut bp = net.clone();
            bp_step(&mut bp, &fitted, 0.1).unwrap();
            assert_eq!(bp, net);
            let mut fa = net.clone();
            fa_step(&mut fa, &fitted, 0.1).unwrap();
            assert_eq!(fa, net);
        }
    }

    #[test]
    fn zero_feedback_freezes_hidden_layer() {
        for act in [Activation::Identity, Activation::Sigmoid] {
            let (net, data) = random_setup(act, 4, 3, 5, 3);
            let net = TwoLayerNet::new(net.w().clone(), net.beta().to_vec(), vec![0.0; 5], act).unwrap();
            let mut stepped = net.clone();
            fa_step(&mut stepped, &data, 0.1).unwrap();
            assert_eq!(stepped.w(), net.w());
            assert_ne!(stepped.beta(), net.beta());
        }
    }

    #[test]
    fn fa_with_b_equal_beta_is_bp() {
        for act in [Activation::Identity, Activation::Tanh, Activation::Relu] {
            let (net, data) = random_setup(act, 5, 4, 6, 4);
            let net = TwoLayerNet::new(net.w().clone(), net.beta().to_vec(), net.beta().to_vec(), act).unwrap();
            let mut bp = net.clone();
            let mut fa = net.clone();
            bp_step(&mut bp, &data, 0.05).unwrap();
            fa_step(&mut fa, &data, 0.05).unwrap();
            assert_eq!(bp.w(), fa.w());
            assert_eq!(bp.beta(), fa.beta());
        }
    }

    #[test]
    fn reg_step_reductions() {
        let (net, data) = random_setup(Activation::Tanh, 5, 4, 6, 5);
        let mut a = net.clone();
        let mut b = net.clone();
        fa_step(&mut a, &data, 0.05).unwrap();
        fa_reg_step(&mut b, &data, 0.05, 0.0).unwrap();
        assert_eq!(a, b);

        let fitted = Dataset::new(data.x.clone(), net.forward(&data.x).unwrap()).unwrap();
        let mut c = net.clone();
        fa_reg_step(&mut c, &fitted, 0.05, 2.0).unwrap();
        assert_eq!(c.w(), net.w());
        for (new, old) in c.beta().iter().zip(net.beta()) {
            assert!((new - 0.9 * old).abs() < 1e-15);
        }
    }

    #[test]
    fn reg_step_rejects_nonpositive_contraction() {
        let (mut net, data) = scalar_setup();
        assert!(matches!(fa_reg_step(&mut net, &data, 0.5, 2.0), Err(Error::Contract(_))));
        assert!(matches!(fa_reg_step(&mut net, &data, 0.5, 3.0), Err(Error::Contract(_))));
    }

    #[test]
    fn updates_are_simultaneous() {
        // Reference implementation that assigns β first and then W, both
        // from saved pre-step quantities.
        for act in [Activation::Identity, Activation::Tanh] {
            let (net, data) = random_setup(act, 4, 3, 5, 6);
            let eta = 0.07;
            let e = net.error(&data).unwrap();
            let s = net.scale();
            let mut beta = net.beta().to_vec();
            let mut w = net.w().clone();
            for r in 0..5 {
                let mut gb = 0.0;
                for i in 0..4 {
                    let u = linalg::dot(net.w().row(r), data.x.row(i)).unwrap();
                    gb += e[i] * act.eval(u);
                }
                beta[r] = net.beta()[r] - eta * s * gb;
            }
            for r in 0..5 {
                for j in 0..3 {
                    let mut g = 0.0;
                    for i in 0..4 {
                        let u = linalg::dot(net.w().row(r), data.x.row(i)).unwrap();
                        g += e[i] * net.b()[r] * act.derivative(u) * data.x[(i, j)];
                    }
                    w[(r, j)] -= eta * s * g;
                }
            }
            let mut stepped = net.clone();
            fa_step(&mut stepped, &data, eta).unwrap();
            assert!(stepped.w().max_abs_diff(&w) < 1e-13);
            for (a, b) in stepped.beta().iter().zip(&beta) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bp_step_is_gradient_step() {
        let (net, data) = random_setup(Activation::Sigmoid, 4, 3, 5, 7);
        let (gw, gb) = loss_gradients(&net, &data, 0.0).unwrap();
        let mut stepped = net.clone();
        bp_step(&mut stepped, &data, 0.1).unwrap();
        let expected_w = net.w().sub(&gw.scaled(0.1)).unwrap();
        assert!(stepped.w().max_abs_diff(&expected_w) < 1e-14);
        for r in 0..5 {
            assert!((stepped.beta()[r] - (net.beta()[r] - 0.1 * gb[r])).abs() < 1e-14);
        }
    }

    #[test]
    fn schedules() {
        let c = Schedule::Cutoff { lambda: 0.5, until: 3 };
        assert_eq!(c.lambda_at(3), 0.5);
        assert_eq!(c.lambda_at(4), 0.0);
        assert_eq!(c.total(), Some(2.0));
        let e = Schedule::ExpDecay { lambda0: 1.0, rate: 0.5 };
        assert_eq!(e.lambda_at(2), 0.25);
        assert_eq!(e.total(), Some(2.0));
        assert_eq!(Schedule::Constant { lambda: 1.0 }.total(), None);
        assert_eq!(Schedule::Zero.lambda_at(100), 0.0);
        assert!(Schedule::Constant { lambda: -1.0 }.validate().is_err());
        assert!(Schedule::ExpDecay { lambda0: 1.0, rate: 0.0 }.validate().is_err());
    }

    #[test]
    fn schedule_json_shape() {
        let s: Schedule = serde_json::from_str(r#"{"kind":"cutoff","lambda":0.3,"until":40}"#).unwrap();
        assert_eq!(s, Schedule::Cutoff { lambda: 0.3, until: 40 });
        assert!(serde_json::from_str::<Schedule>(r#"{"kind":"cutoff","lambda":0.3,"until":4,"extra":1}"#).is_err());
    }

    #[test]
    fn train_step_bounds() {
        let (mut net, data) = random_setup(Activation::Identity, 3, 4, 5, 8);
        assert!(train(&mut net, &data, 0.1, Schedule::Zero, 0, Algorithm::Fa).is_err());
        let traj = train(&mut net, &data, 0.1, Schedule::Zero, 1, Algorithm::Fa).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.records[0].t, 0);
    }

    #[test]
    fn unregularized_running_sums_coincide() {
        let (mut net, data) = random_setup(Activation::Identity, 4, 6, 10, 9);
        let traj = train(&mut net, &data, 0.05, Schedule::Zero, 30, Algorithm::Fa).unwrap();
        assert_eq!(traj.s, traj.s_hat);
    }

    #[test]
    fn record_decomposition_is_pythagorean() {
        let (mut net, data) = random_setup(Activation::Tanh, 6, 5, 12, 10);
        let traj = train(&mut net, &data, 0.05, Schedule::Zero, 20, Algorithm::Fa).unwrap();
        for (k, r) in traj.records.iter().enumerate() {
            assert_eq!(r.t, k);
            let lhs = r.a_t * r.a_t + r.xi_norm * r.xi_norm;
            assert!((lhs - r.err_norm.powi(2)).abs() <= 1e-9 * r.err_norm.powi(2));
        }
    }

    #[test]
    fn implicit_hidden_weights_match_direct_steps() {
        let cases = [
            (Activation::Tanh, Algorithm::Fa, Schedule::Zero),
            (Activation::Sigmoid, Algorithm::Bp, Schedule::Zero),
            (Activation::Relu, Algorithm::FaReg, Schedule::Cutoff { lambda: 0.5, until: 7 }),
        ];
        for (k, (act, alg, schedule)) in cases.into_iter().enumerate() {
            let (net0, data) = random_setup(act, 7, 9, 15, 20 + k as u64);
            let mut direct = net0.clone();
            let mut errs = Vec::new();
            for t in 0..25 {
                errs.push(match alg {
                    Algorithm::Bp => bp_step(&mut direct, &data, 0.05).unwrap(),
                    Algorithm::Fa => fa_step(&mut direct, &data, 0.05).unwrap(),
                    Algorithm::FaReg => fa_reg_step(&mut direct, &data, 0.05, schedule.lambda_at(t)).unwrap(),
                });
            }
            let mut net = net0.clone();
            let mut trainer = Trainer::new(&mut net, &data, 0.05, schedule, alg).unwrap();
            let mut records = Vec::new();
            for _ in 0..25 {
                records.push(trainer.step().unwrap());
            }
            let traj = trainer.trajectory(records).unwrap();
            for (r, e) in traj.records.iter().zip(&errs) {
                assert!((r.err_norm - norm2(e)).abs() < 1e-12, "{act:?}");
            }
            assert!(net.w().max_abs_diff(direct.w()) < 1e-12);
            assert!(norm2(&linalg::sub_vec(net.beta(), direct.beta())) < 1e-12);
            let (dw, db) = weight_drift(&direct, &net0).unwrap();
            assert!((traj.final_max_w_drift - dw).abs() < 1e-12 && (traj.final_max_beta_drift - db).abs() < 1e-15);
        }
    }

    #[test]
    fn recorded_drift_is_pre_update() {
        let (mut net, data) = random_setup(Activation::Tanh, 5, 4, 8, 30);
        let net0 = net.clone();
        let mut trainer = Trainer::new(&mut net, &data, 0.1, Schedule::Zero, Algorithm::Fa).unwrap();
        let r0 = trainer.step().unwrap();
        assert_eq!((r0.max_w_drift, r0.max_beta_drift), (0.0, 0.0));
        let r1 = trainer.step().unwrap();
        let mut one = net0.clone();
        fa_step(&mut one, &data, 0.1).unwrap();
        let (dw, _) = weight_drift(&one, &net0).unwrap();
        assert!((r1.max_w_drift - dw).abs() < 1e-14);
    }

    #[test]
    fn divergence_is_reported() {
        let (mut net, data) = random_setup(Activation::Identity, 5, 6, 20, 11);
        match train(&mut net, &data, 50.0, Schedule::Zero, 500, Algorithm::Fa) {
            Err(Error::Diverged { step, last_finite, .. }) => {
                assert!(step > 0);
                assert_eq!(last_finite.unwrap().t, step - 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn regularization_rejected_for_plain_rules() {
        let (mut net, data) = random_setup(Activation::Identity, 3, 4, 5, 12);
        let s = Schedule::Constant { lambda: 0.1 };
        assert!(matches!(train(&mut net, &data, 0.1, s, 5, Algorithm::Fa), Err(Error::Config(_))));
    }
}
