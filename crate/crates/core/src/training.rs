//! Hyperparameter estimation by maximizing the log marginal likelihood with
//! Adam over log-transformed / unconstrained parameters, with seeded
//! multi-restart and a finite-difference gradient check.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coregion::{CoregionalizationTerm, MultiTaskKernelSpec};
use crate::data::MultiTaskDataset;
use crate::error::{Error, Result};
use crate::gp::{gp_lml_with_grad, FitOptions, GpHyperparameters, GpModel};
use crate::kernel::{KernelKind, ScalarKernelSpec};
use crate::linalg::Jitter;
use crate::mtgp::{mtgp_lml_with_grad, standardize_dataset, MtgpHyperparameters, MtgpModel};
use crate::oracle::central_difference;
use crate::params::{
    gp_gradient_entry, mtgp_gradient_entry, ParamRole, ParameterSchema, ParameterVector, Parameterized,
};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Spread of the random loading initialization.
const LOADING_INIT_SD: f64 = 0.5;
/// Spread of the log-lengthscale perturbation applied on restarts after the first.
const RESTART_LOG_LENGTHSCALE_SD: f64 = 0.5;
const MAX_CONSECUTIVE_FAILURES: usize = 10;
/// Lengthscales are kept within `[0.1, 1000] ×` the median pairwise input
/// distance. Below the lower end the kernel is close to white noise and
/// cannot be told apart from the noise variance.
const MIN_LENGTHSCALE_FRACTION: f64 = 0.1;
const MAX_LENGTHSCALE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Relative objective change below which a run stops, measured over
    /// `convergence_window` iterations.
    pub convergence_tolerance: f64,
    pub convergence_window: usize,
    pub num_restarts: usize,
    pub seed: u64,
    /// Lower bound on every noise variance (standardized units).
    pub noise_floor: f64,
    pub jitter: Jitter,
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            max_iterations: 2000,
            convergence_tolerance: 1e-7,
            convergence_window: 20,
            num_restarts: 4,
            seed: 0,
            noise_floor: 1e-10,
            jitter: Jitter::default(),
            record_trace: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("convergence_tolerance", self.convergence_tolerance)?;
        positive("noise_floor", self.noise_floor)?;
        if self.num_restarts == 0 {
            return Err(Error::InvalidParameter("num_restarts must be at least 1".into()));
        }
        if self.convergence_window == 0 {
            return Err(Error::InvalidParameter("convergence_window must be at least 1".into()));
        }
        Ok(())
    }

    fn restart_seed(&self, restart: usize) -> u64 {
        self.seed
            .wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Adam with bias correction, applied as gradient ascent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            first: vec![0.0; n],
            second: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p += self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub restart: usize,
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

/// Result of one Adam run. `values` is the best iterate seen, so
/// `objective >= initial_objective` always holds.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub values: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failed_steps: usize,
    pub trace: Vec<TraceRecord>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Maximizes `objective` from `init` within per-coordinate `bounds`.
///
/// A step whose evaluation fails (factorization error or non-finite value)
/// is reverted and the learning rate halved.
pub fn maximize<F>(
    objective: F,
    init: Vec<f64>,
    bounds: &[(f64, f64)],
    config: &TrainConfig,
    restart: usize,
) -> Result<RunOutcome>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let finite = |f: f64, g: &[f64]| f.is_finite() && g.iter().all(|v| v.is_finite());
    let mut x = init;
    let (mut f, mut g) = objective(&x)?;
    if !finite(f, &g) {
        return Err(Error::InvalidParameter(format!(
            "objective is not finite at the initial point (value {f})"
        )));
    }
    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(TraceRecord {
            restart,
            iteration: 0,
            objective: f,
            grad_norm: norm(&g),
        });
    }
    let initial_objective = f;
    let mut best = (x.clone(), f);
    let mut history = vec![f];
    let mut adam = Adam::new(x.len(), config.learning_rate);
    let mut failures = 0;
    let mut failed_steps = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let prev = x.clone();
        adam.step(&mut x, &g);
        for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(*lo, *hi);
        }
        match objective(&x) {
            Ok((nf, ng)) if finite(nf, &ng) => {
                f = nf;
                g = ng;
                failures = 0;
                if f > best.1 {
                    best = (x.clone(), f);
                }
            }
            _ => {
                x = prev;
                adam.learning_rate *= 0.5;
                failures += 1;
                failed_steps += 1;
                if failures >= MAX_CONSECUTIVE_FAILURES {
                    break;
                }
                continue;
            }
        }
        if config.record_trace {
            trace.push(TraceRecord {
                restart,
                iteration: iterations,
                objective: f,
                grad_norm: norm(&g),
            });
        }
        history.push(f);
        let w = config.convergence_window;
        if history.len() > w {
            let old = history[history.len() - 1 - w];
            if (f - old).abs() <= config.convergence_tolerance * f.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    Ok(RunOutcome {
        values: best.0,
        objective: best.1,
        initial_objective,
        iterations,
        converged,
        failed_steps,
        trace,
    })
}

/// Worst relative disagreement between the analytic gradient and central
/// finite differences (step 1e−6), with denominator `max(|a|, |n|, 1e−8)`.
pub fn check_gradients<F>(objective: F, point: &ParameterVector) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = objective(&point.values)?;
    let numeric = central_difference(|p| objective(p).map(|r| r.0).unwrap_or(f64::NAN), &point.values, 1e-6);
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        worst = worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoregionFamily {
    /// Rank-one `B_q = w_q w_qᵀ`.
    Slfm,
    /// `B_q = W_q W_qᵀ + diag(γ_q)` with `W_q` of rank `rank`.
    Lmc,
    /// One indicator term per task; no cross-task coupling.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtgpTrainSpec {
    pub kernel_kind: KernelKind,
    pub family: CoregionFamily,
    /// Number of latent terms `Q`; defaults to the number of tasks.
    pub num_latent: Option<usize>,
    /// Loading rank per term for [`CoregionFamily::Lmc`].
    pub rank: usize,
    pub standardize: bool,
}

impl Default for MtgpTrainSpec {
    fn default() -> Self {
        MtgpTrainSpec {
            kernel_kind: KernelKind::SquaredExponential,
            family: CoregionFamily::Slfm,
            num_latent: None,
            rank: 1,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpTrainSpec {
    pub kernel_kind: KernelKind,
    pub learn_mean: bool,
    pub standardize: bool,
}

impl Default for GpTrainSpec {
    fn default() -> Self {
        GpTrainSpec {
            kernel_kind: KernelKind::SquaredExponential,
            learn_mean: false,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub initial_objective: Option<f64>,
    pub final_objective: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub schema: ParameterSchema,
    pub best_restart: usize,
    pub best_objective: f64,
    pub restarts: Vec<RestartSummary>,
    pub trace: Vec<TraceRecord>,
}

impl TrainReport {
    /// Best objective over the first `k` restarts, for `k = 1..=R`.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut acc = f64::NEG_INFINITY;
        self.restarts
            .iter()
            .map(|r| {
                if let Some(f) = r.final_objective {
                    acc = acc.max(f);
                }
                acc
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGp {
    pub model: GpModel,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct TrainedMtgp {
    pub model: MtgpModel,
    pub report: TrainReport,
}

/// Median of `|x_ip − x_jp|` over pairs, per input dimension; 1 when
/// undefined or zero.
pub fn median_pairwise_distances(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|p| {
            let col: Vec<f64> = x.column(p).iter().copied().collect();
            let mut d = Vec::with_capacity(col.len() * col.len().saturating_sub(1) / 2);
            for i in 0..col.len() {
                for j in 0..i {
                    d.push((col[i] - col[j]).abs());
                }
            }
            if d.is_empty() {
                return 1.0;
            }
            d.sort_by(|a, b| a.total_cmp(b));
            let m = d.len();
            let med = if m % 2 == 1 {
                d[m / 2]
            } else {
                0.5 * (d[m / 2 - 1] + d[m / 2])
            };
            if med > 0.0 && med.is_finite() {
                med
            } else {
                1.0
            }
        })
        .collect()
}

fn sample_variance(y: &[f64]) -> f64 {
    if y.len() < 2 {
        return 1.0;
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let v = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

fn role_bounds(role: &ParamRole, log_median: &[f64], config: &TrainConfig) -> (f64, f64) {
    let wide = 25.0;
    match *role {
        ParamRole::LogLengthscale { dim, .. } => {
            let c = log_median[dim];
            (c + MIN_LENGTHSCALE_FRACTION.ln(), c + MAX_LENGTHSCALE_FACTOR.ln())
        }
        ParamRole::LogNoiseVariance { .. } => (config.noise_floor.ln(), wide),
        ParamRole::LogSignalVariance { .. } | ParamRole::LogTaskVariance { .. } => (-wide, wide),
        ParamRole::Loading { .. } | ParamRole::Mean => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Runs every restart (in parallel), keeping the one with the highest final
/// objective; ties go to the lowest restart index.
fn run_restarts<H, F, I>(
    schema: &ParameterSchema,
    config: &TrainConfig,
    init: I,
    bounds: &[(f64, f64)],
    objective: F,
) -> Result<(H, TrainReport)>
where
    H: Parameterized + Clone + Send,
    I: Fn(usize, &mut ChaCha8Rng) -> H + Sync,
    F: Fn(&H, &[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    let outcomes: Vec<(H, Result<RunOutcome>)> = (0..config.num_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.restart_seed(r));
            let base = init(r, &mut rng);
            let outcome = ParameterVector::pack(schema, &base).and_then(|v| {
                let mut start = v.values;
                for (s, (lo, hi)) in start.iter_mut().zip(bounds) {
                    *s = s.clamp(*lo, *hi);
                }
                maximize(|p| objective(&base, p), start, bounds, config, r)
            });
            (base, outcome)
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    let mut summaries = Vec::with_capacity(outcomes.len());
    let mut trace = Vec::new();
    for (r, (_, out)) in outcomes.iter().enumerate() {
        match out {
            Ok(o) => {
                if best.is_none_or(|(_, f)| o.objective > f) {
                    best = Some((r, o.objective));
                }
                trace.extend_from_slice(&o.trace);
                summaries.push(RestartSummary {
                    restart: r,
                    initial_objective: Some(o.initial_objective),
                    final_objective: Some(o.objective),
                    iterations: o.iterations,
                    converged: o.converged,
                    error: None,
                });
            }
            Err(e) => summaries.push(RestartSummary {
                restart: r,
                initial_objective: None,
                final_objective: None,
                iterations: 0,
                converged: false,
                error: Some(e.to_string()),
            }),
        }
    }
    let Some((best_restart, best_objective)) = best else {
        return Err(Error::TrainingFailed {
            diagnostics: summaries
                .iter()
                .map(|s| format!("restart {}: {}", s.restart, s.error.as_deref().unwrap_or("unknown")))
                .collect(),
        });
    };
    let (base, out) = &outcomes[best_restart];
    let out = out.as_ref().expect("best restart succeeded");
    let hyper = ParameterVector {
        schema: schema.clone(),
        values: out.values.clone(),
    }
    .unpack(base)?;
    Ok((
        hyper,
        TrainReport {
            schema: schema.clone(),
            best_restart,
            best_objective,
            restarts: summaries,
            trace,
        },
    ))
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite positive sd")
}

/// Fits a single-task GP by marginal-likelihood maximization.
pub fn train_gp(spec: &GpTrainSpec, x: &DMatrix<f64>, y: &DVector<f64>, config: &TrainConfig) -> Result<TrainedGp> {
    config.validate()?;
    let dataset = MultiTaskDataset::single_task(x.clone(), y.clone())?;
    let options = FitOptions {
        standardize: spec.standardize,
        jitter: config.jitter,
    };
    let (_, scaled) = if spec.standardize {
        standardize_dataset(&dataset)
    } else {
        (Vec::new(), dataset.clone())
    };
    let ys = scaled.targets(0).clone();
    let var = sample_variance(ys.as_slice());
    let median = median_pairwise_distances(x);
    let log_median: Vec<f64> = median.iter().map(|m| m.ln()).collect();

    let template = GpHyperparameters {
        kernel: ScalarKernelSpec::new(spec.kernel_kind, &median, var)?,
        log_noise_variance: (0.01 * var).max(config.noise_floor).ln(),
        mean: 0.0,
    };
    let schema = ParameterSchema::from_model(&template, |r| spec.learn_mean || *r != ParamRole::Mean);
    let bounds: Vec<(f64, f64)> = schema
        .entries
        .iter()
        .map(|r| role_bounds(r, &log_median, config))
        .collect();
    let p = x.ncols();
    let init = |r: usize, rng: &mut ChaCha8Rng| {
        let mut h = template.clone();
        if r > 0 {
            let n = normal(RESTART_LOG_LENGTHSCALE_SD);
            for l in h.kernel.log_lengthscales.iter_mut() {
                *l += n.sample(rng);
            }
        }
        h
    };
    let objective = |base: &GpHyperparameters, v: &[f64]| {
        let h = ParameterVector {
            schema: schema.clone(),
            values: v.to_vec(),
        }
        .unpack(base)?;
        let (f, g) = gp_lml_with_grad(&h, x, &ys, &config.jitter, true)?;
        let grad = schema
            .entries
            .iter()
            .map(|r| gp_gradient_entry(&g, p, r).unwrap_or(0.0))
            .collect();
        Ok((f, grad))
    };
    let (hyper, report) = run_restarts(&schema, config, init, &bounds, objective)?;
    let model = GpModel::fit(hyper, x.clone(), y.clone(), &options)?;
    Ok(TrainedGp { model, report })
}

/// Builds the initial multi-task hyperparameters for a family, before any
/// random loading draw.
fn mtgp_template(
    spec: &MtgpTrainSpec,
    num_tasks: usize,
    median: &[f64],
    task_vars: &[f64],
    noise_floor: f64,
) -> Result<MtgpHyperparameters> {
    let mean_var = task_vars.iter().sum::<f64>() / task_vars.len() as f64;
    let q = match spec.family {
        CoregionFamily::Independent => num_tasks,
        _ => spec.num_latent.unwrap_or(num_tasks),
    };
    if q == 0 {
        return Err(Error::InvalidParameter("num_latent must be at least 1".into()));
    }
    let rank = match spec.family {
        CoregionFamily::Lmc => spec.rank.max(1),
        _ => 1,
    };
    let kernel = ScalarKernelSpec::new(spec.kernel_kind, median, mean_var)?;
    let terms = (0..q)
        .map(|_| {
            let gamma = vec![0.1 * mean_var; num_tasks];
            let g = matches!(spec.family, CoregionFamily::Lmc).then_some(gamma.as_slice());
            CoregionalizationTerm::new(DMatrix::zeros(num_tasks, rank), g, kernel.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let noise: Vec<f64> = task_vars.iter().map(|v| (0.01 * v).max(noise_floor)).collect();
    MtgpHyperparameters::new(MultiTaskKernelSpec::new(num_tasks, terms)?, &noise)
}

/// Which roles are optimized for a family. Term signal variances stay at
/// their initial value since the loadings already carry the output scale;
/// indicator loadings off the diagonal stay at zero.
fn mtgp_trainable(family: CoregionFamily) -> impl Fn(&ParamRole) -> bool {
    move |r: &ParamRole| match *r {
        ParamRole::LogSignalVariance { .. } => false,
        ParamRole::Loading { term, task, .. } if family == CoregionFamily::Independent => term == task,
        _ => true,
    }
}

/// Fits a multi-task GP by marginal-likelihood maximization.
pub fn train_mtgp(spec: &MtgpTrainSpec, dataset: &MultiTaskDataset, config: &TrainConfig) -> Result<TrainedMtgp> {
    config.validate()?;
    let options = FitOptions {
        standardize: spec.standardize,
        jitter: config.jitter,
    };
    let scaled = if spec.standardize {
        standardize_dataset(dataset).1
    } else {
        dataset.clone()
    };
    let d = dataset.num_tasks();
    let task_vars: Vec<f64> = (0..d).map(|t| sample_variance(scaled.targets(t).as_slice())).collect();
    let median = median_pairwise_distances(&dataset.stacked_inputs());
    let log_median: Vec<f64> = median.iter().map(|m| m.ln()).collect();
    let template = mtgp_template(spec, d, &median, &task_vars, config.noise_floor)?;
    let schema = ParameterSchema::from_model(&template, mtgp_trainable(spec.family));
    let bounds: Vec<(f64, f64)> = schema
        .entries
        .iter()
        .map(|r| role_bounds(r, &log_median, config))
        .collect();
    let family = spec.family;
    let init = |r: usize, rng: &mut ChaCha8Rng| {
        let mut h = template.clone();
        let w = normal(LOADING_INIT_SD);
        let ls = normal(RESTART_LOG_LENGTHSCALE_SD);
        for (q, term) in h.kernel.terms.iter_mut().enumerate() {
            if r > 0 {
                for l in term.kernel.log_lengthscales.iter_mut() {
                    *l += ls.sample(rng);
                }
            }
            match family {
                CoregionFamily::Independent => term.loadings[(q, 0)] = w.sample(rng),
                _ => term.loadings.iter_mut().for_each(|v| *v = w.sample(rng)),
            }
        }
        h
    };
    let objective = |base: &MtgpHyperparameters, v: &[f64]| {
        let h = ParameterVector {
            schema: schema.clone(),
            values: v.to_vec(),
        }
        .unpack(base)?;
        let (f, g) = mtgp_lml_with_grad(&h, &scaled, &config.jitter)?;
        let grad = schema
            .entries
            .iter()
            .map(|r| mtgp_gradient_entry(&g, r).unwrap_or(0.0))
            .collect();
        Ok((f, grad))
    };
    let (hyper, report) = run_restarts(&schema, config, init, &bounds, objective)?;
    let model = MtgpModel::fit(hyper, dataset.clone(), &options)?;
    Ok(TrainedMtgp { model, report })
}
