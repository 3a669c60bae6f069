//! Two-layer scalar-output network `f(x) = β·ψ(Wx)/√p` with fixed feedback
//! weights `b`.
//!
//! Errors follow the `e = f − y` convention (prediction minus label).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot_unchecked, Matrix};
use crate::rng::{derive_stream, labels};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Activation::Identity => u,
            Activation::Tanh => u.tanh(),
            Activation::Sigmoid => sigmoid(u),
            Activation::Relu => u.max(0.0),
        }
    }

    /// ψ′(u). The relu derivative at exactly zero is 0.
    #[inline]
    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(u);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// ψ′(u) when `value = ψ(u)` is already known.
    #[inline]
    pub fn derivative_given(self, u: f64, value: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - value * value,
            Activation::Sigmoid => value * (1.0 - value),
            _ => self.derivative(u),
        }
    }

    pub fn is_identity(self) -> bool {
        self == Activation::Identity
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u > 40.0 {
        1.0
    } else if u < -40.0 {
        u.exp()
    } else {
        1.0 / (1.0 + (-u).exp())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dims("Dataset::new", format!("{} labels", x.rows()), y.len()));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerNet {
    w: Matrix,
    beta: Vec<f64>,
    b: Vec<f64>,
    act: Activation,
}

impl TwoLayerNet {
    pub fn new(w: Matrix, beta: Vec<f64>, b: Vec<f64>, act: Activation) -> Result<Self> {
        let p = w.rows();
        if beta.len() != p || b.len() != p {
            return Err(Error::dims(
                "TwoLayerNet::new",
                format!("width {p}"),
                format!("beta {} / b {}", beta.len(), b.len()),
            ));
        }
        if p == 0 {
            return Err(Error::Contract("network width must be positive".into()));
        }
        if !w.is_finite() || beta.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Contract("network weights must be finite".into()));
        }
        Ok(TwoLayerNet { w, beta, b, act })
    }

    /// Standard Gaussian `W(0)`, `β(0)` and `b`, each from its own labelled stream.
    pub fn init_gaussian(d: usize, p: usize, act: Activation, seed: u64) -> Self {
        let w = derive_stream(seed, labels::W0).gaussian(p * d, 1.0);
        let beta = derive_stream(seed, labels::BETA0).gaussian(p, 1.0);
        let b = derive_stream(seed, labels::B).gaussian(p, 1.0);
        TwoLayerNet {
            w: Matrix::from_vec(p, d, w).expect("p*d entries"),
            beta,
            b,
            act,
        }
    }

    pub fn p(&self) -> usize {
        self.w.rows()
    }

    pub fn d(&self) -> usize {
        self.w.cols()
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn act(&self) -> Activation {
        self.act
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>) {
        (&mut self.w, &mut self.beta)
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.p() as f64).sqrt()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.d() {
            return Err(Error::dims("forward", format!("{} input columns", self.d()), x.cols()));
        }
        Ok(())
    }

    /// `Z = X Wᵀ` (n×p).
    pub fn preactivations(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        linalg::matmul_nt(x, &self.w)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let s = self.scale();
        if self.act.is_identity() {
            // f = X (Wᵀβ) / √p
            let u = linalg::matvec_t(&self.w, &self.beta)?;
            return Ok(linalg::matvec(x, &u)?.into_iter().map(|v| s * v).collect());
        }
        let mut z = self.preactivations(x)?;
        for v in z.as_mut_slice() {
            *v = self.act.eval(*v);
        }
        Ok((0..x.rows()).map(|i| s * dot_unchecked(z.row(i), &self.beta)).collect())
    }

    /// `e = f(X) − y`
    pub fn error(&self, data: &Dataset) -> Result<Vec<f64>> {
        let mut e = self.forward(&data.x)?;
        for (ei, yi) in e.iter_mut().zip(&data.y) {
            *ei -= yi;
        }
        Ok(e)
    }

    /// `½‖e‖² + ½λ‖β‖²`
    pub fn loss(&self, data: &Dataset, lambda: f64) -> Result<f64> {
        if lambda < 0.0 {
            return Err(Error::Contract(format!("negative regularization {lambda}")));
        }
        let e = self.error(data)?;
        Ok(0.5 * dot_unchecked(&e, &e) + 0.5 * lambda * dot_unchecked(&self.beta, &self.beta))
    }

    /// Diagonal of `D_i = diag(ψ′(W x_i))`.
    pub fn act_diag(&self, x_i: &[f64]) -> Result<Vec<f64>> {
        if x_i.len() != self.d() {
            return Err(Error::dims("act_diag", self.d(), x_i.len()));
        }
        Ok((0..self.p())
            .map(|r| self.act.derivative(dot_unchecked(self.w.row(r), x_i)))
            .collect())
    }
}
