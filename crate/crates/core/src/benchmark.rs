//! Correlated two-task Forrester benchmark: single-task GP on the primary task
//! versus a multi-task GP that also sees an auxiliary task.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MultiTaskDataset;
use crate::error::{Error, Result};
use crate::gp::PosteriorPrediction;
use crate::kernel::KernelKind;
use crate::training::{train_gp, train_mtgp, CoregionFamily, GpTrainSpec, MtgpTrainSpec, TrainConfig};

/// Noise floor used for benchmark training; the observations are noiseless.
pub const BENCHMARK_NOISE_FLOOR: f64 = 1e-8;
pub const CALIBRATION_GRID_POINTS: usize = 1000;
pub const CALIBRATION_TOLERANCE: f64 = 0.03;
const A_RANGE: (f64, f64) = (0.0, 1.5);
const B_RANGE: (f64, f64) = (-15.0, 15.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForresterParams {
    pub a: f64,
    pub b: f64,
}

impl ForresterParams {
    pub const CANONICAL: ForresterParams = ForresterParams { a: 1.0, b: 0.0 };
}

/// `a (6x − 2)² sin(12x − 4) + b (x − 0.5)` on `[0, 1]`.
pub fn forrester(x: f64, params: ForresterParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain {
            value: x,
            domain: "[0, 1]",
        });
    }
    let u = 6.0 * x - 2.0;
    Ok(params.a * u * u * (12.0 * x - 4.0).sin() + params.b * (x - 0.5))
}

/// Sample Pearson correlation coefficient.
pub fn pearson_correlation(y1: &[f64], y2: &[f64]) -> Result<f64> {
    if y1.len() != y2.len() || y1.len() < 2 {
        return Err(Error::shape(format!(
            "correlation needs two equal-length series of at least 2 values, got {} and {}",
            y1.len(),
            y2.len()
        )));
    }
    let n = y1.len() as f64;
    let m1 = y1.iter().sum::<f64>() / n;
    let m2 = y2.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y1.iter().zip(y2) {
        let (da, db) = (a - m1, b - m2);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(Error::shape(format!(
            "rmse needs equal nonempty lengths, got {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    let ss: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((ss / predicted.len() as f64).sqrt())
}

/// `100 (gp − mtgp) / gp`; zero when `gp_rmse` is zero.
pub fn percent_improvement(gp_rmse: f64, mtgp_rmse: f64) -> f64 {
    if gp_rmse > 0.0 {
        100.0 * (gp_rmse - mtgp_rmse) / gp_rmse
    } else {
        0.0
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn eval_grid(grid: &[f64], params: ForresterParams) -> Vec<f64> {
    grid.iter()
        .map(|&x| forrester(x.clamp(0.0, 1.0), params).expect("clamped into domain"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target: f64,
    pub params: ForresterParams,
    pub achieved: f64,
}

/// Finds auxiliary `(a, b)` whose correlation with the canonical Forrester
/// function over `grid` is closest to `target_r`.
///
/// Deterministic coarse-to-fine search over `[0, 1.5] × [−15, 15]`. Among
/// equally close candidates the one nearest `(1, 0)` wins (first by `|a − 1|`,
/// then by `|b|`).
pub fn calibrate_auxiliary(target_r: f64, grid: &[f64]) -> Result<Calibration> {
    if !(target_r > 0.0 && target_r <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target correlation must lie in (0, 1], got {target_r}"
        )));
    }
    let primary = eval_grid(grid, ForresterParams::CANONICAL);
    let score = |a: f64, b: f64| -> Option<(f64, f64)> {
        let aux = eval_grid(grid, ForresterParams { a, b });
        pearson_correlation(&primary, &aux)
            .ok()
            .map(|r| ((r - target_r).abs(), r))
    };
    // (error, |a − 1|, |b|) with errors within 1e−12 treated as tied
    let better = |c: (f64, f64, f64), best: (f64, f64, f64)| {
        if (c.0 - best.0).abs() > 1e-12 {
            c.0 < best.0
        } else {
            (c.1, c.2) < (best.1, best.2)
        }
    };

    let steps = 30;
    let (mut a_lo, mut a_hi) = A_RANGE;
    let (mut b_lo, mut b_hi) = B_RANGE;
    // (tie-break key, a, b, achieved r)
    type Candidate = ((f64, f64, f64), f64, f64, f64);
    let mut best: Option<Candidate> = None;
    for _level in 0..8 {
        let da = (a_hi - a_lo) / steps as f64;
        let db = (b_hi - b_lo) / steps as f64;
        for a in linspace(a_lo, a_hi, steps + 1) {
            for b in linspace(b_lo, b_hi, steps + 1) {
                if let Some((err, r)) = score(a, b) {
                    let key = (err, (a - 1.0).abs(), b.abs());
                    if best.is_none_or(|(k, ..)| better(key, k)) {
                        best = Some((key, a, b, r));
                    }
                }
            }
        }
        let (_, a, b, _) = best.expect("search box contains non-degenerate candidates");
        a_lo = (a - da).max(A_RANGE.0);
        a_hi = (a + da).min(A_RANGE.1);
        b_lo = (b - db).max(B_RANGE.0);
        b_hi = (b + db).min(B_RANGE.1);
    }
    let ((err, ..), a, b, r) = best.expect("at least one level ran");
    if err > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration {
            target: target_r,
            best: r,
        });
    }
    Ok(Calibration {
        target: target_r,
        params: ForresterParams { a, b },
        achieved: r,
    })
}

/// Calibration on the standard 1000-point uniform grid over `[0, 1]`.
pub fn calibrate_default(target_r: f64) -> Result<Calibration> {
    calibrate_auxiliary(target_r, &linspace(0.0, 1.0, CALIBRATION_GRID_POINTS))
}

/// How the multi-task model couples the auxiliary task to the primary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Cross-task covariance learned from data.
    #[default]
    Learned,
    /// Cross-task covariance fixed at zero.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScenario {
    pub primary_params: ForresterParams,
    pub auxiliary_params: ForresterParams,
    pub n_primary: usize,
    pub n_auxiliary: usize,
    pub n_test: usize,
    /// Standard deviation of Gaussian noise added to training targets.
    pub observation_noise: f64,
    pub seed: u64,
    pub kernel: KernelKind,
    pub coupling: Coupling,
}

impl BenchmarkScenario {
    pub fn new(auxiliary_params: ForresterParams, n_primary: usize, n_auxiliary: usize, seed: u64) -> Self {
        BenchmarkScenario {
            primary_params: ForresterParams::CANONICAL,
            auxiliary_params,
            n_primary,
            n_auxiliary,
            n_test: 100,
            observation_noise: 0.0,
            seed,
            kernel: KernelKind::SquaredExponential,
            coupling: Coupling::Learned,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_primary == 0 || self.n_auxiliary == 0 || self.n_test == 0 {
            return Err(Error::InvalidParameter(
                "scenario sample counts must be at least 1".into(),
            ));
        }
        if !(self.observation_noise >= 0.0 && self.observation_noise.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "observation noise must be non-negative, got {}",
                self.observation_noise
            )));
        }
        let finite = |p: &ForresterParams| p.a.is_finite() && p.b.is_finite();
        if !finite(&self.primary_params) || !finite(&self.auxiliary_params) {
            return Err(Error::InvalidParameter("Forrester coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Held-out primary-task inputs: cell midpoints `(i + ½) / n_test`.
    pub fn test_inputs(&self) -> Vec<f64> {
        (0..self.n_test)
            .map(|i| (i as f64 + 0.5) / self.n_test as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub gp_rmse: f64,
    pub mtgp_rmse: f64,
    pub percent_improvement: f64,
    /// Correlation of the two task functions over the calibration grid.
    pub correlation: f64,
    pub n_primary: usize,
    pub n_auxiliary: usize,
    pub seed: u64,
}

/// Training data, test targets and both models' predictions for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub result: ComparisonResult,
    pub dataset: MultiTaskDataset,
    pub test_x: Vec<f64>,
    pub test_y: Vec<f64>,
    pub gp: PosteriorPrediction,
    pub mtgp: PosteriorPrediction,
}

fn sample_inputs(rng: &mut ChaCha8Rng, n: usize, avoid: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = rng.random();
        if !avoid.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Runs one GP-vs-MTGP comparison and keeps everything needed for plotting.
pub fn run_scenario_detailed(scenario: &BenchmarkScenario, train: &TrainConfig) -> Result<ScenarioOutcome> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let test_x = scenario.test_inputs();
    let xs = [
        sample_inputs(&mut rng, scenario.n_primary, &test_x),
        sample_inputs(&mut rng, scenario.n_auxiliary, &test_x),
    ];
    let params = [scenario.primary_params, scenario.auxiliary_params];
    let noise = Normal::new(0.0, scenario.observation_noise.max(f64::MIN_POSITIVE)).expect("valid sd");
    let mut inputs = Vec::with_capacity(2);
    let mut targets = Vec::with_capacity(2);
    for (x, p) in xs.iter().zip(params) {
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| {
                let f = forrester(xi, p)?;
                Ok(if scenario.observation_noise > 0.0 {
                    f + noise.sample(&mut rng)
                } else {
                    f
                })
            })
            .collect::<Result<_>>()?;
        inputs.push(column(x));
        targets.push(DVector::from_vec(y));
    }
    let dataset = MultiTaskDataset::new(inputs, targets)?;
    let test_y = eval_grid(&test_x, scenario.primary_params);
    let xstar = column(&test_x);

    let config = TrainConfig {
        seed: train
            .seed
            .wrapping_add(scenario.seed.wrapping_mul(0xD1B5_4A32_D192_ED03)),
        noise_floor: train.noise_floor.max(BENCHMARK_NOISE_FLOOR),
        ..train.clone()
    };
    let gp_spec = GpTrainSpec {
        kernel_kind: scenario.kernel,
        ..GpTrainSpec::default()
    };
    let gp = train_gp(&gp_spec, dataset.inputs(0), dataset.targets(0), &config)?
        .model
        .predict(&xstar, false)?;
    let mt_spec = MtgpTrainSpec {
        kernel_kind: scenario.kernel,
        family: match scenario.coupling {
            Coupling::Learned => CoregionFamily::Slfm,
            Coupling::Decoupled => CoregionFamily::Independent,
        },
        ..MtgpTrainSpec::default()
    };
    let mtgp = train_mtgp(&mt_spec, &dataset, &config)?
        .model
        .predict(0, &xstar, false)?;

    let gp_rmse = rmse(gp.mean.as_slice(), &test_y)?;
    let mtgp_rmse = rmse(mtgp.mean.as_slice(), &test_y)?;
    let grid = linspace(0.0, 1.0, CALIBRATION_GRID_POINTS);
    let correlation = pearson_correlation(
        &eval_grid(&grid, scenario.primary_params),
        &eval_grid(&grid, scenario.auxiliary_params),
    )
    .unwrap_or(f64::NAN);
    Ok(ScenarioOutcome {
        result: ComparisonResult {
            gp_rmse,
            mtgp_rmse,
            percent_improvement: percent_improvement(gp_rmse, mtgp_rmse),
            correlation,
            n_primary: scenario.n_primary,
            n_auxiliary: scenario.n_auxiliary,
            seed: scenario.seed,
        },
        dataset,
        test_x,
        test_y,
        gp,
        mtgp,
    })
}

pub fn run_scenario(scenario: &BenchmarkScenario, train: &TrainConfig) -> Result<ComparisonResult> {
    run_scenario_detailed(scenario, train).map(|o| o.result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub correlation_targets: Vec<f64>,
    pub size_grid: Vec<(usize, usize)>,
    pub replicates: usize,
    pub n_test: usize,
    pub observation_noise: f64,
    pub seed: u64,
    pub kernel: KernelKind,
    pub coupling: Coupling,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            correlation_targets: vec![0.89, 0.53, 0.33],
            size_grid: vec![(5, 5), (5, 10), (10, 5), (10, 10)],
            replicates: 5,
            n_test: 100,
            observation_noise: 0.0,
            seed: 0,
            kernel: KernelKind::SquaredExponential,
            coupling: Coupling::Learned,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be at least 1".into()));
        }
        if self.correlation_targets.is_empty() || self.size_grid.is_empty() {
            return Err(Error::InvalidParameter(
                "study needs at least one correlation and one size pair".into(),
            ));
        }
        if self.n_test == 0 {
            return Err(Error::InvalidParameter("n_test must be at least 1".into()));
        }
        if let Some(r) = self.correlation_targets.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "correlation target {r} outside (0, 1]"
            )));
        }
        if let Some((p, a)) = self.size_grid.iter().find(|(p, a)| *p == 0 || *a == 0) {
            return Err(Error::InvalidParameter(format!(
                "size pair ({p}, {a}) has a zero count"
            )));
        }
        Ok(())
    }

    /// Scenario for one (calibrated correlation, size pair, replicate) cell.
    pub fn scenario(&self, calibration: &Calibration, size_index: usize, replicate: usize) -> BenchmarkScenario {
        let (np, na) = self.size_grid[size_index];
        let mut s = BenchmarkScenario::new(calibration.params, np, na, self.replicate_seed(size_index, replicate));
        s.n_test = self.n_test;
        s.observation_noise = self.observation_noise;
        s.kernel = self.kernel;
        s.coupling = self.coupling;
        s
    }

    /// Seed of one replicate. It does not depend on the correlation level, so
    /// every level sees the same training designs.
    pub fn replicate_seed(&self, size_index: usize, replicate: usize) -> u64 {
        self.seed
            .wrapping_add((size_index as u64).wrapping_mul(1_000_003))
            .wrapping_add(replicate as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub target_correlation: f64,
    pub replicate: usize,
    pub result: ComparisonResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single replicate.
    pub std: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Summary {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub target_correlation: f64,
    pub achieved_correlation: f64,
    pub n_primary: usize,
    pub n_auxiliary: usize,
    pub replicates: usize,
    pub gp_rmse: Summary,
    pub mtgp_rmse: Summary,
    pub percent_improvement: Summary,
    /// Share of replicates where the multi-task RMSE is not worse.
    pub mtgp_not_worse_fraction: f64,
}

impl AggregateRow {
    /// "Low T1–High T2" style label; more than 5 samples counts as high.
    pub fn task_pair(&self) -> String {
        let level = |n: usize| if n <= 5 { "Low" } else { "High" };
        format!("{} T1–{} T2", level(self.n_primary), level(self.n_auxiliary))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub calibrations: Vec<Calibration>,
    pub replicates: Vec<ReplicateRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Every (correlation, size pair, replicate) comparison, run in parallel and
/// reported in grid order.
pub fn run_study(study: &StudyConfig, train: &TrainConfig) -> Result<StudyResult> {
    study.validate()?;
    let calibrations = study
        .correlation_targets
        .iter()
        .map(|&r| calibrate_default(r))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for (ci, cal) in calibrations.iter().enumerate() {
        for si in 0..study.size_grid.len() {
            for rep in 0..study.replicates {
                jobs.push((ci, rep, study.scenario(cal, si, rep)));
            }
        }
    }
    let results: Vec<ComparisonResult> = jobs
        .par_iter()
        .map(|(_, _, s)| run_scenario(s, train))
        .collect::<Result<_>>()?;

    let replicates: Vec<ReplicateRow> = jobs
        .iter()
        .zip(results)
        .map(|((ci, rep, _), result)| ReplicateRow {
            target_correlation: calibrations[*ci].target,
            replicate: *rep,
            result,
        })
        .collect();
    let aggregates = replicates
        .chunks(study.replicates)
        .zip(jobs.chunks(study.replicates))
        .map(|(rows, js)| {
            let ci = js[0].0;
            let pick = |f: fn(&ComparisonResult) -> f64| rows.iter().map(|r| f(&r.result)).collect::<Vec<_>>();
            let better = rows.iter().filter(|r| r.result.mtgp_rmse <= r.result.gp_rmse).count();
            AggregateRow {
                target_correlation: calibrations[ci].target,
                achieved_correlation: calibrations[ci].achieved,
                n_primary: js[0].2.n_primary,
                n_auxiliary: js[0].2.n_auxiliary,
                replicates: rows.len(),
                gp_rmse: Summary::of(&pick(|r| r.gp_rmse)),
                mtgp_rmse: Summary::of(&pick(|r| r.mtgp_rmse)),
                percent_improvement: Summary::of(&pick(|r| r.percent_improvement)),
                mtgp_not_worse_fraction: better as f64 / rows.len() as f64,
            }
        })
        .collect();
    Ok(StudyResult {
        calibrations,
        replicates,
        aggregates,
    })
}

/// Aligned text table with one line per aggregate row.
pub fn format_table(rows: &[AggregateRow]) -> String {
    let header = ["Correlation", "Task Pair", "MTGP \\ GP RMSE", "% Improvement"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                format!("{:.2} ({:.3})", r.target_correlation, r.achieved_correlation),
                format!("{} ({},{})", r.task_pair(), r.n_primary, r.n_auxiliary),
                format!("{:.4} \\ {:.4}", r.mtgp_rmse.mean, r.gp_rmse.mean),
                format!("{:.2} ± {:.2}", r.percent_improvement.mean, r.percent_improvement.std),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header.map(String::from));
    out.push('\n');
    out.push_str(&line(&widths.map(|w| "-".repeat(w))));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}
