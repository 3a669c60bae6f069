//! Run configuration, single runs, width/regularization sweeps, verification
//! suites and their file outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constants;
use crate::data::{self, fmt_f64, TeacherSpec};
use crate::diagnostics::gram_pair;
use crate::dynamics::{dyn_init, dyn_step};
use crate::error::{Error, Result};
use crate::linalg::{self, norm2, sym_eig, Matrix};
use crate::network::{Activation, Dataset, TwoLayerNet};
use crate::rng::{derive_stream, labels, RngStream};
use crate::trainers::{fa_reg_step, Algorithm, Schedule, StepRecord, Trainer, Trajectory};
use crate::verify::{self, CheckResult, ConcentrationParams};

pub const TRAJECTORY_HEADER: &str =
    "t,loss,err_norm,cos_align,a_t,xi_norm,max_w_drift,max_beta_drift,lambda_t,s_hat_norm,S_hat";
pub const SWEEP_HEADER: &str = "p,lambda,mean_cos,std_cos,mean_final_err,std_final_err";

/// Schedule as written in a config; `paper_cutoff` is resolved against the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    #[default]
    Zero,
    Constant { lambda: f64 },
    Cutoff { lambda: f64, until: usize },
    ExpDecay { lambda0: f64, rate: f64 },
    /// `λ = Lγ` until `T = ⌊S_λ/λ⌋` with `S_λ = c_S γ√(γp)/(η√n M)`.
    PaperCutoff,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub concentration: ConcentrationParams,
    pub isometry_n: usize,
    pub isometry_d: usize,
    pub isometry_epsilon: f64,
    pub isometry_trials: usize,
    pub isometry_delta: f64,
    pub gram_n: usize,
    pub gram_d: usize,
    pub gram_p: usize,
    pub gram_inits: usize,
    pub gram_activation: Activation,
    pub dynamics_instances: usize,
    pub dynamics_steps: usize,
    pub decomposition_n: usize,
    pub decomposition_d: usize,
    pub decomposition_c_tau: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            concentration: ConcentrationParams::default(),
            isometry_n: 50,
            isometry_d: 3000,
            isometry_epsilon: 0.5,
            isometry_trials: 500,
            isometry_delta: 0.1,
            gram_n: 50,
            gram_d: 200,
            gram_p: 4096,
            gram_inits: 2000,
            gram_activation: Activation::Tanh,
            dynamics_instances: 20,
            dynamics_steps: 200,
            decomposition_n: 10,
            decomposition_d: 2000,
            decomposition_c_tau: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub activation: Activation,
    pub algorithm: Algorithm,
    pub eta: f64,
    pub steps: usize,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    pub repeats: usize,
    pub sweep_p: Option<Vec<usize>>,
    pub sweep_lambda: Option<Vec<f64>>,
    #[serde(rename = "cutoff_cS")]
    pub cutoff_cs: f64,
    #[serde(rename = "cutoff_L")]
    pub cutoff_l: f64,
    pub teacher_p: usize,
    /// Teacher activation; the student's when absent.
    pub teacher_activation: Option<Activation>,
    pub data_path: Option<PathBuf>,
    /// Replace `y` by its projection onto the column space of `X`.
    pub project_labels: bool,
    pub alignment_threshold: f64,
    pub verify: VerifySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 50,
            d: 150,
            p: 3200,
            activation: Activation::Identity,
            algorithm: Algorithm::Fa,
            eta: 1e-4,
            steps: 1000,
            schedule: ScheduleSpec::Zero,
            seed: 0,
            repeats: 1,
            sweep_p: None,
            sweep_lambda: None,
            cutoff_cs: constants::CUTOFF_CS,
            cutoff_l: constants::CUTOFF_L,
            teacher_p: 200,
            teacher_activation: None,
            data_path: None,
            project_labels: false,
            alignment_threshold: constants::ALIGNMENT_THRESHOLD,
            verify: VerifySettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        if self.data_path.is_none() && (self.n == 0 || self.d == 0) {
            return bad("n and d must be positive");
        }
        if self.p == 0 || self.teacher_p == 0 {
            return bad("widths must be positive");
        }
        if !(self.cutoff_cs > 0.0) || !(self.cutoff_l > 0.0) {
            return bad("cutoff_cS and cutoff_L must be positive");
        }
        if let Some(ps) = &self.sweep_p {
            if ps.is_empty() || ps.contains(&0) {
                return bad("sweep_p must be a nonempty list of positive widths");
            }
        }
        if let Some(ls) = &self.sweep_lambda {
            if ls.is_empty() || ls.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return bad("sweep_lambda must be a nonempty list of nonnegative values");
            }
        }
        match self.schedule {
            ScheduleSpec::Zero => {}
            ScheduleSpec::PaperCutoff => {}
            ScheduleSpec::Constant { lambda } => Schedule::Constant { lambda }.validate()?,
            ScheduleSpec::Cutoff { lambda, until } => Schedule::Cutoff { lambda, until }.validate()?,
            ScheduleSpec::ExpDecay { lambda0, rate } => Schedule::ExpDecay { lambda0, rate }.validate()?,
        }
        let regularized = self.schedule != ScheduleSpec::Zero
            || self.sweep_lambda.as_ref().is_some_and(|l| l.iter().any(|v| *v > 0.0));
        if regularized && self.algorithm != Algorithm::FaReg {
            return bad("a regularization schedule needs algorithm \"fa_reg\"");
        }
        Ok(())
    }
}

/// Seed of repeat `k`; repeat 0 is what `train` runs.
pub fn run_seed(master: u64, k: usize) -> u64 {
    derive_stream(master, &labels::repeat(k)).next_u64()
}

/// The run's dataset: a CSV when `data_path` is set, otherwise teacher data.
pub fn build_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let mut data = match &cfg.data_path {
        Some(path) => data::load_csv(path)?,
        None => {
            let teacher = TeacherSpec {
                d: cfg.d,
                p_teacher: cfg.teacher_p,
                act: cfg.teacher_activation.unwrap_or(cfg.activation),
            };
            data::gen_synthetic(cfg.n, cfg.d, &teacher, seed)?
        }
    };
    if cfg.project_labels {
        data.y = data::project_y(&data.x, &data.y)?;
    }
    Ok(data)
}

/// `(λ_min, λ_max)` of `XXᵀ`.
pub fn xxt_spectrum(x: &Matrix) -> Result<(f64, f64)> {
    let eig = sym_eig(&linalg::gram(x))?;
    Ok((eig.min(), eig.max()))
}

/// The cutoff schedule `λ = Lγ`, `T = ⌊S_λ/λ⌋`.
pub fn paper_cutoff(gamma: f64, m: f64, n: usize, p: usize, eta: f64, c_s: f64, l: f64) -> Result<Schedule> {
    if !(gamma > 0.0) {
        return Err(Error::Config(format!(
            "paper_cutoff needs a positive definite XXᵀ (smallest eigenvalue {gamma:e})"
        )));
    }
    let s_lambda = c_s * gamma * (gamma * p as f64).sqrt() / (eta * (n as f64).sqrt() * m);
    let lambda = l * gamma;
    if eta * lambda >= 1.0 {
        return Err(Error::Config(format!(
            "paper_cutoff gives eta*lambda = {} >= 1; lower eta or cutoff_L",
            eta * lambda
        )));
    }
    Ok(Schedule::Cutoff {
        lambda,
        until: (s_lambda / lambda).floor() as usize,
    })
}

pub fn resolve_schedule(cfg: &ExperimentConfig, spec: ScheduleSpec, data: &Dataset, p: usize) -> Result<Schedule> {
    Ok(match spec {
        ScheduleSpec::Zero => Schedule::Zero,
        ScheduleSpec::Constant { lambda } => Schedule::Constant { lambda },
        ScheduleSpec::Cutoff { lambda, until } => Schedule::Cutoff { lambda, until },
        ScheduleSpec::ExpDecay { lambda0, rate } => Schedule::ExpDecay { lambda0, rate },
        ScheduleSpec::PaperCutoff => {
            let (gamma, m) = xxt_spectrum(&data.x)?;
            paper_cutoff(gamma, m, data.n(), p, cfg.eta, cfg.cutoff_cs, cfg.cutoff_l)?
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub p: usize,
    pub lambda: f64,
    pub seed: u64,
    pub final_err_norm: f64,
    pub final_cos_align: f64,
    pub final_max_w_drift: f64,
    pub final_max_beta_drift: f64,
    pub steps_to_half_error: Option<usize>,
    pub diverged: bool,
}

impl RunSummary {
    fn from_trajectory(traj: &Trajectory, p: usize, lambda: f64, seed: u64) -> Self {
        let norms = traj.err_norms();
        let half = norms.first().map(|e0| 0.5 * e0);
        RunSummary {
            p,
            lambda,
            seed,
            final_err_norm: traj.final_err_norm,
            final_cos_align: traj.final_cos,
            final_max_w_drift: traj.final_max_w_drift,
            final_max_beta_drift: traj.final_max_beta_drift,
            steps_to_half_error: half.and_then(|h| norms.iter().position(|&e| e <= h)),
            diverged: false,
        }
    }

    fn diverged(p: usize, lambda: f64, seed: u64) -> Self {
        RunSummary {
            p,
            lambda,
            seed,
            final_err_norm: f64::NAN,
            final_cos_align: f64::NAN,
            final_max_w_drift: f64::NAN,
            final_max_beta_drift: f64::NAN,
            steps_to_half_error: None,
            diverged: true,
        }
    }
}

pub fn trajectory_row(r: &StepRecord) -> String {
    let cells = [
        r.loss,
        r.err_norm,
        r.cos_align,
        r.a_t,
        r.xi_norm,
        r.max_w_drift,
        r.max_beta_drift,
        r.lambda_t,
        r.s_hat_norm,
        r.s_hat_big,
    ];
    let mut s = r.t.to_string();
    for v in cells {
        s.push(',');
        s.push_str(&fmt_f64(v));
    }
    s
}

/// Trains one network of width `p` on repeat `k`'s data and initialization.
/// Each record is handed to `sink` as soon as it exists.
pub fn run_with(
    cfg: &ExperimentConfig,
    p: usize,
    spec: ScheduleSpec,
    k: usize,
    mut sink: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<(Trajectory, Schedule)> {
    let seed = run_seed(cfg.seed, k);
    let data = build_dataset(cfg, seed)?;
    let schedule = resolve_schedule(cfg, spec, &data, p)?;
    let mut net = TwoLayerNet::init_gaussian(data.d(), p, cfg.activation, seed);
    let mut trainer = Trainer::new(&mut net, &data, cfg.eta, schedule, cfg.algorithm)?;
    let mut records = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let rec = trainer.step()?;
        sink(&rec)?;
        records.push(rec);
    }
    Ok((trainer.trajectory(records)?, schedule))
}

/// Runs repeat 0 of `cfg` and streams `trajectory.csv` into `out`. On
/// divergence the rows written so far stay on disk.
pub fn run_single(cfg: &ExperimentConfig, out: &Path) -> Result<(Trajectory, RunSummary)> {
    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join("trajectory.csv"))?);
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    let result = run_with(cfg, cfg.p, cfg.schedule, 0, |r| {
        writeln!(w, "{}", trajectory_row(r))?;
        Ok(())
    });
    w.flush()?;
    let (traj, schedule) = result?;
    let summary = RunSummary::from_trajectory(&traj, cfg.p, schedule.max_lambda(), run_seed(cfg.seed, 0));
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out.join("summary.json"), json + "\n")?;
    Ok((traj, summary))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub p: usize,
    pub lambda: f64,
    pub repeats: usize,
    pub diverged: usize,
    pub mean_cos: f64,
    pub std_cos: f64,
    pub mean_abs_cos: f64,
    pub mean_final_err: f64,
    pub std_final_err: f64,
    pub mean_beta_drift: f64,
    pub mean_w_drift: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    if v.len() == 1 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

impl CellSummary {
    /// Any diverged repeat turns the statistics into NaN.
    pub fn from_runs(p: usize, lambda: f64, runs: &[RunSummary]) -> Self {
        let diverged = runs.iter().filter(|r| r.diverged).count();
        let pick = |f: fn(&RunSummary) -> f64| -> Vec<f64> {
            if diverged > 0 {
                vec![f64::NAN]
            } else {
                runs.iter().map(f).collect()
            }
        };
        let (mean_cos, std_cos) = mean_std(&pick(|r| r.final_cos_align));
        let (mean_abs_cos, _) = mean_std(&pick(|r| r.final_cos_align.abs()));
        let (mean_final_err, std_final_err) = mean_std(&pick(|r| r.final_err_norm));
        let (mean_beta_drift, _) = mean_std(&pick(|r| r.final_max_beta_drift));
        let (mean_w_drift, _) = mean_std(&pick(|r| r.final_max_w_drift));
        CellSummary {
            p,
            lambda,
            repeats: runs.len(),
            diverged,
            mean_cos,
            std_cos,
            mean_abs_cos,
            mean_final_err,
            std_final_err,
            mean_beta_drift,
            mean_w_drift,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.p,
            fmt_f64(self.lambda),
            fmt_f64(self.mean_cos),
            fmt_f64(self.std_cos),
            fmt_f64(self.mean_final_err),
            fmt_f64(self.std_final_err)
        )
    }
}

/// The sweep grid as `(p, schedule)` cells in output order.
pub fn sweep_grid(cfg: &ExperimentConfig) -> Vec<(usize, ScheduleSpec)> {
    let ps = cfg.sweep_p.clone().unwrap_or_else(|| vec![cfg.p]);
    let specs: Vec<ScheduleSpec> = match &cfg.sweep_lambda {
        Some(ls) => ls
            .iter()
            .map(|&l| {
                if l == 0.0 {
                    ScheduleSpec::Zero
                } else {
                    ScheduleSpec::Constant { lambda: l }
                }
            })
            .collect(),
        None => vec![cfg.schedule],
    };
    ps.iter().flat_map(|&p| specs.iter().map(move |&s| (p, s))).collect()
}

/// Runs every cell × repeat on up to `threads` workers.
pub fn sweep_cells(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<CellSummary>> {
    cfg.validate()?;
    let grid = sweep_grid(cfg);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..cfg.repeats).map(move |k| (c, k))).collect();
    let results = verify::par_map(jobs.len(), threads, |j| -> Result<(usize, usize, RunSummary)> {
        let (c, k) = jobs[j];
        let (p, spec) = grid[c];
        let seed = run_seed(cfg.seed, k);
        match run_with(cfg, p, spec, k, |_| Ok(())) {
            Ok((traj, schedule)) => Ok((c, k, RunSummary::from_trajectory(&traj, p, schedule.max_lambda(), seed))),
            Err(Error::Diverged { .. }) => Ok((c, k, RunSummary::diverged(p, spec_lambda(spec), seed))),
            Err(e) => Err(e),
        }
    });
    // keyed by (cell, repeat) so completion order cannot matter
    let mut by_cell: BTreeMap<usize, BTreeMap<usize, RunSummary>> = BTreeMap::new();
    for r in results {
        let (c, k, s) = r?;
        by_cell.entry(c).or_default().insert(k, s);
    }
    Ok(by_cell
        .into_iter()
        .map(|(c, runs)| {
            let runs: Vec<RunSummary> = runs.into_values().collect();
            let lambda = runs.iter().map(|r| r.lambda).find(|l| l.is_finite()).unwrap_or(spec_lambda(grid[c].1));
            CellSummary::from_runs(grid[c].0, lambda, &runs)
        })
        .collect())
}

fn spec_lambda(spec: ScheduleSpec) -> f64 {
    match spec {
        ScheduleSpec::Zero => 0.0,
        ScheduleSpec::Constant { lambda } | ScheduleSpec::Cutoff { lambda, .. } => lambda,
        ScheduleSpec::ExpDecay { lambda0, .. } => lambda0,
        ScheduleSpec::PaperCutoff => f64::NAN,
    }
}

pub fn sweep_csv(cells: &[CellSummary]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for c in cells {
        s.push_str(&c.csv_row());
        s.push('\n');
    }
    s
}

/// Runs the sweep and writes `sweep.csv` into `out`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<CellSummary>> {
    let cells = sweep_cells(cfg, threads)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.csv"), sweep_csv(&cells))?;
    Ok(cells)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Concentration,
    Isometry,
    Gram,
    Dynamics,
    Contraction,
    Alignment,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "concentration" => Suite::Concentration,
            "isometry" => Suite::Isometry,
            "gram" => Suite::Gram,
            "dynamics" => Suite::Dynamics,
            "contraction" => Suite::Contraction,
            "alignment" => Suite::Alignment,
            "all" => Suite::All,
            other => return Err(Error::Config(format!("unknown suite {other:?}"))),
        })
    }
}

/// A random linear instance for oracle comparisons.
#[derive(Clone, Debug)]
pub struct LinearInstance {
    pub data: Dataset,
    pub net: TwoLayerNet,
    pub eta: f64,
    pub schedule: Schedule,
}

fn uniform_int(s: &mut RngStream, lo: usize, hi: usize) -> usize {
    lo + (s.uniform() * (hi - lo + 1) as f64) as usize
}

/// Instance `k`: n ≤ 20, d ≤ 60, p ≤ 500, η ≤ 0.05, schedules cycling
/// through zero, constant and cutoff.
pub fn random_linear_instance(seed: u64, k: usize) -> Result<LinearInstance> {
    let mut s = derive_stream(seed, &format!("instance{k}"));
    let n = uniform_int(&mut s, 3, 20);
    let d = uniform_int(&mut s, n + 1, 60);
    let p = uniform_int(&mut s, 20, 500);
    let eta = 0.01 + 0.04 * s.uniform();
    let lambda = 0.1 + 1.9 * s.uniform();
    let schedule = match k % 3 {
        0 => Schedule::Zero,
        1 => Schedule::Constant { lambda },
        _ => Schedule::Cutoff {
            lambda,
            until: uniform_int(&mut s, 10, 100),
        },
    };
    let x = Matrix::from_vec(n, d, s.gaussian(n * d, 1.0 / (d as f64).sqrt()))?;
    let y = s.gaussian(n, 1.0);
    let net = TwoLayerNet::init_gaussian(d, p, Activation::Identity, s.next_u64());
    Ok(LinearInstance {
        data: Dataset::new(x, y)?,
        net,
        eta,
        schedule,
    })
}

/// Oracle and trainer side by side for `steps` updates.
#[derive(Clone, Debug)]
pub struct OracleComparison {
    /// `max_t ‖e_oracle(t) − e_trainer(t)‖ / max(‖e_trainer(t)‖, 1e-12)`
    pub max_rel_dev: f64,
    /// Max entrywise gap of the closed forms after `closed_form_at` steps.
    pub w_gap: f64,
    pub beta_gap: f64,
    /// Gap between the component sum and the reported total.
    pub component_sum_gap: f64,
}

pub fn compare_with_oracle(inst: &LinearInstance, steps: usize, closed_form_at: usize) -> Result<OracleComparison> {
    let mut net = inst.net.clone();
    let data = &inst.data;
    let mut st = dyn_init(&data.x, &data.y, net.w(), net.beta(), net.b())?;
    let mut max_rel_dev: f64 = 0.0;
    let (mut w_gap, mut beta_gap, mut component_sum_gap) = (f64::NAN, f64::NAN, f64::NAN);
    for t in 0..=steps {
        if t == closed_form_at {
            w_gap = st.closed_form_w(inst.eta)?.max_abs_diff(net.w());
            let dec = st.closed_form_beta(inst.eta)?;
            beta_gap = dec.total.iter().zip(net.beta()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            component_sum_gap = (0..dec.total.len()).fold(0.0f64, |m, r| {
                m.max((dec.init[r] + dec.w0_span[r] + dec.b_span[r] - dec.total[r]).abs())
            });
        }
        let e = net.error(data)?;
        let dev = norm2(&linalg::sub_vec(st.e(), &e)) / norm2(&e).max(1e-12);
        max_rel_dev = max_rel_dev.max(dev);
        if t == steps {
            break;
        }
        let lam = inst.schedule.lambda_at(t);
        fa_reg_step(&mut net, data, inst.eta, lam)?;
        dyn_step(&mut st, inst.eta, lam)?;
    }
    Ok(OracleComparison {
        max_rel_dev,
        w_gap,
        beta_gap,
        component_sum_gap,
    })
}

fn dynamics_checks(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<CheckResult>> {
    let vs = &cfg.verify;
    let cmp = verify::par_map(vs.dynamics_instances, threads, |k| {
        compare_with_oracle(&random_linear_instance(cfg.seed, k)?, vs.dynamics_steps, 50.min(vs.dynamics_steps))
    });
    let cmp: Vec<OracleComparison> = cmp.into_iter().collect::<Result<_>>()?;
    let count = |f: &dyn Fn(&OracleComparison) -> bool| cmp.iter().filter(|c| !f(c)).count();
    let worst = |f: fn(&OracleComparison) -> f64| cmp.iter().map(f).fold(0.0f64, f64::max);
    let m = cmp.len();
    Ok(vec![
        CheckResult::new("oracle_equivalence", m, count(&|c| c.max_rel_dev <= 1e-8), 0.0)
            .with("max_rel_dev", worst(|c| c.max_rel_dev))
            .with("steps", vs.dynamics_steps as f64),
        CheckResult::new("closed_form_w", m, count(&|c| c.w_gap <= 1e-10), 0.0).with("max_gap", worst(|c| c.w_gap)),
        CheckResult::new(
            "closed_form_beta",
            m,
            count(&|c| c.beta_gap <= 1e-10 && c.component_sum_gap == 0.0),
            0.0,
        )
        .with("max_gap", worst(|c| c.beta_gap))
        .with("max_component_sum_gap", worst(|c| c.component_sum_gap)),
    ])
}

/// γ for the contraction bound: λ_min(XXᵀ) for linear nets, λ_min(G(0)) otherwise.
pub fn contraction_gamma(net0: &TwoLayerNet, x: &Matrix) -> Result<f64> {
    if net0.act().is_identity() {
        Ok(xxt_spectrum(x)?.0)
    } else {
        Ok(gram_pair(net0, x)?.lambda_min_g)
    }
}

fn contraction_check(cfg: &ExperimentConfig) -> Result<CheckResult> {
    let seed = run_seed(cfg.seed, 0);
    let data = build_dataset(cfg, seed)?;
    let schedule = resolve_schedule(cfg, cfg.schedule, &data, cfg.p)?;
    let net0 = TwoLayerNet::init_gaussian(data.d(), cfg.p, cfg.activation, seed);
    let gamma = contraction_gamma(&net0, &data.x)?;
    match run_with(cfg, cfg.p, cfg.schedule, 0, |_| Ok(())) {
        Ok((traj, _)) => Ok(verify::check_contraction(&traj, gamma, &schedule)),
        Err(Error::Diverged { step, err_norm, .. }) => Ok(CheckResult::new("contraction", step + 1, 1, 0.0)
            .with("gamma", gamma)
            .with("diverged_at", step as f64)
            .with("err_norm", err_norm)),
        Err(e) => Err(e),
    }
}

fn alignment_checks(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::FaReg;
    cfg.activation = Activation::Identity;
    cfg.schedule = ScheduleSpec::PaperCutoff;
    let data = build_dataset(&cfg, run_seed(cfg.seed, 0))?;
    let (gamma, _) = xxt_spectrum(&data.x)?;
    let (traj, schedule) = run_with(&cfg, cfg.p, cfg.schedule, 0, |_| Ok(()))?;
    let Schedule::Cutoff { lambda, until } = schedule else {
        unreachable!("paper_cutoff resolves to a cutoff schedule")
    };
    let mut out = vec![verify::check_alignment_condition(
        &traj,
        cfg.p,
        cfg.eta,
        gamma,
        until,
        cfg.alignment_threshold,
    )
    .with("lambda", lambda)];

    // a(t) bound on a nearly isometric design
    let vs = &cfg.verify;
    let mut dcfg = cfg.clone();
    dcfg.n = vs.decomposition_n;
    dcfg.d = vs.decomposition_d;
    dcfg.data_path = None;
    dcfg.project_labels = false;
    let ddata = build_dataset(&dcfg, run_seed(cfg.seed, 0))?;
    let (dgamma, _) = xxt_spectrum(&ddata.x)?;
    let (dtraj, dsched) = run_with(&dcfg, dcfg.p, dcfg.schedule, 0, |_| Ok(()))?;
    let Schedule::Cutoff { lambda: dl, until: dt } = dsched else {
        unreachable!("paper_cutoff resolves to a cutoff schedule")
    };
    let tau = (vs.decomposition_c_tau / (cfg.eta * dl)).ceil() as usize;
    out.push(
        verify::check_error_decomposition(&dtraj, dl, dgamma, tau, dt, 1e-9)
            .with("tau", tau as f64)
            .with("cutoff", dt as f64),
    );
    Ok(out)
}

/// Runs `suite` and returns every check in report order.
pub fn verify_checks(suite: Suite, cfg: &ExperimentConfig, threads: usize) -> Result<Vec<CheckResult>> {
    let vs = &cfg.verify;
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Concentration {
        out.extend(verify::check_init_concentration(&vs.concentration, cfg.seed, threads)?);
    }
    if all || suite == Suite::Isometry {
        out.push(verify::check_isometry(
            vs.isometry_n,
            vs.isometry_d,
            vs.isometry_epsilon,
            vs.isometry_trials,
            vs.isometry_delta,
            cfg.seed,
            threads,
        )?);
    }
    if all || suite == Suite::Gram {
        let x = Matrix::from_vec(
            vs.gram_n,
            vs.gram_d,
            derive_stream(cfg.seed, labels::X).gaussian(vs.gram_n * vs.gram_d, 1.0 / (vs.gram_d as f64).sqrt()),
        )?;
        out.extend(verify::check_gram_conditions(
            &x,
            vs.gram_activation,
            vs.gram_p,
            vs.gram_inits,
            cfg.seed,
            threads,
        )?);
    }
    if all || suite == Suite::Dynamics {
        out.extend(dynamics_checks(cfg, threads)?);
    }
    if all || suite == Suite::Contraction {
        out.push(contraction_check(cfg)?);
    }
    if all || suite == Suite::Alignment {
        out.extend(alignment_checks(cfg)?);
    }
    Ok(out)
}

pub fn report_line(c: &CheckResult) -> String {
    let mut s = format!(
        "{} {} violations {}/{} (freq {}, nominal {})",
        if c.pass { "PASS" } else { "FAIL" },
        c.name,
        c.violations,
        c.trials,
        fmt_f64(c.frequency()),
        fmt_f64(c.nominal_delta)
    );
    for (k, v) in &c.details {
        let _ = write!(s, " {k}={}", fmt_f64(*v));
    }
    s
}

/// Runs `suite`, writes `verify_report.txt` and `verify_records.jsonl`.
pub fn run_verify(suite: Suite, cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<CheckResult>> {
    let checks = verify_checks(suite, cfg, threads)?;
    fs::create_dir_all(out)?;
    let mut text = String::new();
    let mut jsonl = String::new();
    for c in &checks {
        text.push_str(&report_line(c));
        text.push('\n');
        jsonl.push_str(&serde_json::to_string(c).map_err(|e| Error::Config(e.to_string()))?);
        jsonl.push('\n');
    }
    fs::write(out.join("verify_report.txt"), text)?;
    fs::write(out.join("verify_records.jsonl"), jsonl)?;
    Ok(checks)
}

/// Writes repeat 0's dataset to `out/data.csv`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, Dataset)> {
    let data = build_dataset(cfg, run_seed(cfg.seed, 0))?;
    fs::create_dir_all(out)?;
    let path = out.join("data.csv");
    data::save_csv(&data, &path)?;
    Ok((path, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n: 6,
            d: 12,
            p: 40,
            eta: 0.05,
            steps: 20,
            ..Default::default()
        }
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_json(r#"{"n": 5, "bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"eta": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"steps": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schedule": {"kind": "constant", "lambda": 0.3}}"#).is_err());
        let cfg = ExperimentConfig::from_json(
            r#"{"algorithm": "fa_reg", "schedule": {"kind": "paper_cutoff"}, "cutoff_cS": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.schedule, ScheduleSpec::PaperCutoff);
        assert_eq!(cfg.cutoff_cs, 3.0);
    }

    #[test]
    fn paper_cutoff_arithmetic() {
        // S = 2·1·√400/(0.05·√4·1) = 400, λ = 12, T = ⌊400/12⌋
        let s = paper_cutoff(1.0, 1.0, 4, 400, 0.05, 2.0, 12.0).unwrap();
        assert_eq!(s, Schedule::Cutoff { lambda: 12.0, until: 33 });
        assert!(paper_cutoff(1.0, 1.0, 4, 400, 0.1, 2.0, 12.0).is_err());
    }

    #[test]
    fn single_run_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.steps = 1;
        run_single(&cfg, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], TRAJECTORY_HEADER);
    }

    #[test]
    fn one_cell_sweep_matches_single_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let (_, single) = run_single(&cfg, dir.path()).unwrap();
        let cells = sweep_cells(&cfg, 1).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].mean_cos, single.final_cos_align);
        assert_eq!(cells[0].mean_final_err, single.final_err_norm);
        assert_eq!(cells[0].std_cos, 0.0);
    }

    #[test]
    fn sweep_is_thread_count_independent() {
        let mut cfg = small();
        cfg.sweep_p = Some(vec![20, 40]);
        cfg.repeats = 3;
        assert_eq!(sweep_csv(&sweep_cells(&cfg, 1).unwrap()), sweep_csv(&sweep_cells(&cfg, 4).unwrap()));
    }

    #[test]
    fn diverged_cells_are_nan() {
        let mut cfg = small();
        cfg.eta = 80.0;
        cfg.sweep_p = Some(vec![20]);
        let cells = sweep_cells(&cfg, 1).unwrap();
        assert_eq!(cells[0].diverged, 1);
        assert!(cells[0].mean_cos.is_nan());
        assert!(sweep_csv(&cells).lines().nth(1).unwrap().contains("NaN"));
    }

    #[test]
    fn oracle_comparison_on_instances() {
        for k in 0..3 {
            let inst = random_linear_instance(9, k).unwrap();
            let c = compare_with_oracle(&inst, 60, 50).unwrap();
            assert!(c.max_rel_dev <= 1e-8, "{c:?}");
            assert!(c.w_gap <= 1e-10 && c.beta_gap <= 1e-10, "{c:?}");
        }
    }
}
