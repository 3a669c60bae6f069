//! Teacher-network data, label projection, and the dataset CSV format.
//!
//! CSV layout: header `x0,…,x{d-1},y`, one sample per line, `.` decimals,
//! LF endings, no quoting.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, sym_eig, Matrix};
use crate::network::{Activation, Dataset, TwoLayerNet};
use crate::rng::{derive_stream, labels};

/// Labels beyond this magnitude trigger a warning (they are never rescaled).
pub const LABEL_WARN: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub d: usize,
    pub p_teacher: usize,
    pub act: Activation,
}

/// The teacher `f₀` with standard Gaussian weights drawn from the teacher streams.
pub fn teacher_net(teacher: &TeacherSpec, seed: u64) -> Result<TwoLayerNet> {
    if teacher.p_teacher == 0 {
        return Err(Error::Contract("teacher width must be at least 1".into()));
    }
    let (d, p) = (teacher.d, teacher.p_teacher);
    let w = Matrix::from_vec(p, d, derive_stream(seed, labels::TEACHER_W).gaussian(p * d, 1.0))?;
    let beta = derive_stream(seed, labels::TEACHER_BETA).gaussian(p, 1.0);
    // The teacher has no feedback weights; zeros keep the type honest.
    TwoLayerNet::new(w, beta, vec![0.0; p], teacher.act)
}

/// `X` with N(0, 1/d) entries from stream "X" and `y = f₀(X)`.
pub fn gen_synthetic(n: usize, d: usize, teacher: &TeacherSpec, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Contract("need n >= 1 and d >= 1".into()));
    }
    if teacher.d != d {
        return Err(Error::dims("gen_synthetic", format!("teacher input dim {d}"), teacher.d));
    }
    let x = Matrix::from_vec(n, d, derive_stream(seed, labels::X).gaussian(n * d, 1.0 / (d as f64).sqrt()))?;
    let f0 = teacher_net(teacher, seed)?;
    let y = f0.forward(&x)?;
    let max_y = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_y > LABEL_WARN {
        eprintln!("warning: teacher labels reach |y| = {max_y:.3e}");
    }
    Dataset::new(x, y)
}

/// Orthogonal projection of `y` onto the column space of `X` (n×d, n ≥ d).
pub fn project_y(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != x.rows() {
        return Err(Error::dims("project_y", x.rows(), y.len()));
    }
    let xtx = linalg::matmul_tn(x, x)?;
    let eig = sym_eig(&xtx)?;
    if !(eig.min() > 1e-10) {
        return Err(Error::Contract(format!(
            "X is rank deficient (smallest eigenvalue of XᵀX is {:e})",
            eig.min()
        )));
    }
    // ȳ = X V Λ⁻¹ Vᵀ Xᵀ y
    let xty = linalg::matvec_t(x, y)?;
    let mut coef = linalg::matvec_t(&eig.vectors, &xty)?;
    for (c, l) in coef.iter_mut().zip(&eig.values) {
        *c /= l;
    }
    let theta = linalg::matvec(&eig.vectors, &coef)?;
    linalg::matvec(x, &theta)
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let d = data.d();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "x{j},");
    }
    out.push_str("y\n");
    for i in 0..data.n() {
        for v in data.x.row(i) {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        out.push_str(&fmt_f64(data.y[i]));
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = cols.len().saturating_sub(1);
    let header_ok = cols.len() >= 2
        && cols.last() == Some(&"y")
        && cols[..d].iter().enumerate().all(|(j, c)| *c == format!("x{j}"));
    if !header_ok {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            line: 1,
            msg: "header must be x0,...,x{d-1},y".into(),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("cannot parse {f:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("non-finite value {f:?}"),
                });
            }
            if j < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    Dataset::new(Matrix::from_vec(ys.len(), d, xs)?, ys)
}
