//! Versioned, self-describing model artifact.
//!
//! Every float is stored as the hex of its IEEE-754 bits next to a decimal
//! copy for readers; only the bits are read back.

use std::path::Path;

use mtgp_core::coregion::{CoregionalizationTerm, MultiTaskKernelSpec};
use mtgp_core::gp::{FitOptions, GpHyperparameters, GpModel, PosteriorPrediction};
use mtgp_core::mtgp::{MtgpHyperparameters, MtgpModel};
use mtgp_core::params::{ParamRole, ParameterSchema, ParameterVector, Parameterized, Transform};
use mtgp_core::{Jitter, KernelKind, MultiTaskDataset, ScalarKernelSpec, Standardization};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelFamily;
use crate::error::{CliError, CliResult};

pub const FORMAT: &str = "mtgp-model";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Real {
    pub value: f64,
    pub bits: Bits,
}

/// `f64` as 16 lowercase hex digits of its bit pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bits(pub f64);

impl Serialize for Bits {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0.to_bits()))
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(serde::de::Error::custom(format!("`{s}` is not 16 hex digits")));
        }
        u64::from_str_radix(&s, 16)
            .map(|b| Bits(f64::from_bits(b)))
            .map_err(|_| serde::de::Error::custom(format!("`{s}` is not hex")))
    }
}

impl Real {
    pub fn new(v: f64) -> Self {
        Real {
            value: v,
            bits: Bits(v),
        }
    }

    pub fn get(&self) -> f64 {
        self.bits.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEntry {
    pub role: ParamRole,
    pub transform: Transform,
    pub trainable: bool,
    /// Transformed (log or identity) value.
    pub value: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizationRecord {
    pub offset: Real,
    pub scale: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub inputs: Vec<Vec<Bits>>,
    pub targets: Vec<Bits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub fingerprint: String,
    pub tasks: Vec<TaskRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub schema_version: u32,
    pub family: ModelFamily,
    pub kernel: KernelKind,
    pub num_tasks: usize,
    pub input_dim: usize,
    pub num_latent: usize,
    pub rank: usize,
    pub standardize: bool,
    pub jitter_relative: Real,
    pub jitter_max_relative: Real,
    pub log_marginal_likelihood: Real,
    pub parameters: Vec<ParameterEntry>,
    pub standardization: Vec<StandardizationRecord>,
    pub dataset: DatasetRecord,
}

/// A fitted model of either kind.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Gp(GpModel),
    Mtgp(MtgpModel),
}

impl FittedModel {
    pub fn num_tasks(&self) -> usize {
        match self {
            FittedModel::Gp(_) => 1,
            FittedModel::Mtgp(m) => m.hyper.num_tasks(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FittedModel::Gp(m) => m.hyper.kernel.input_dim(),
            FittedModel::Mtgp(m) => m.hyper.kernel.input_dim(),
        }
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        match self {
            FittedModel::Gp(m) => m.log_marginal_likelihood(),
            FittedModel::Mtgp(m) => m.log_marginal_likelihood(),
        }
    }

    pub fn predict(&self, task: usize, xstar: &DMatrix<f64>) -> CliResult<PosteriorPrediction> {
        Ok(match self {
            FittedModel::Gp(m) if task == 0 => m.predict(xstar, false)?,
            FittedModel::Gp(_) => return Err(CliError::Validation(format!("task {task} out of range for a GP model"))),
            FittedModel::Mtgp(m) => m.predict(task, xstar, false)?,
        })
    }

    /// Mean and standard deviation for each row, with rows grouped by task
    /// internally and returned in input order.
    pub fn predict_rows(&self, inputs: &DMatrix<f64>, tasks: &[usize]) -> CliResult<Vec<(f64, f64)>> {
        let mut out = vec![(0.0, 0.0); tasks.len()];
        for t in 0..self.num_tasks() {
            let rows: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i] == t).collect();
            if rows.is_empty() {
                continue;
            }
            let x = DMatrix::from_fn(rows.len(), inputs.ncols(), |i, j| inputs[(rows[i], j)]);
            let p = self.predict(t, &x)?;
            let sd = p.stddev();
            for (k, &i) in rows.iter().enumerate() {
                out[i] = (p.mean[k], sd[k]);
            }
        }
        Ok(out)
    }
}

/// SHA-256 over the bit patterns of every observation, task by task.
pub fn fingerprint(dataset: &MultiTaskDataset) -> String {
    let mut h = Sha256::new();
    h.update(b"mtgp-dataset-v1");
    h.update((dataset.num_tasks() as u64).to_le_bytes());
    h.update((dataset.input_dim() as u64).to_le_bytes());
    for t in 0..dataset.num_tasks() {
        let x = dataset.inputs(t);
        h.update((x.nrows() as u64).to_le_bytes());
        for i in 0..x.nrows() {
            for v in x.row(i).iter() {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(dataset.targets(t)[i].to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Hyperparameter skeleton with the right shape for a family; values are
/// placeholders to be overwritten by unpacking.
pub fn mtgp_skeleton(
    family: ModelFamily,
    kind: KernelKind,
    d: usize,
    p: usize,
    q: usize,
    rank: usize,
) -> CliResult<MtgpHyperparameters> {
    let kernel = ScalarKernelSpec::new(kind, &vec![1.0; p], 1.0)?;
    let gamma = vec![1.0; d];
    let (q, rank, with_gamma) = match family {
        ModelFamily::MtgpSlfm => (q, 1, false),
        ModelFamily::MtgpLmc => (q, rank, true),
        ModelFamily::MtgpIndependent => (d, 1, false),
        ModelFamily::Gp => return Err(CliError::Validation("`gp` has no multi-task structure".into())),
    };
    let terms = (0..q)
        .map(|_| {
            CoregionalizationTerm::new(
                DMatrix::zeros(d, rank),
                with_gamma.then_some(gamma.as_slice()),
                kernel.clone(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MtgpHyperparameters::new(
        MultiTaskKernelSpec::new(d, terms)?,
        &vec![1.0; d],
    )?)
}

fn entries<H: Parameterized>(hyper: &H, trainable: &ParameterSchema) -> CliResult<Vec<ParameterEntry>> {
    let all = ParameterSchema::from_model(hyper, |_| true);
    let values = ParameterVector::pack(&all, hyper)?;
    Ok(all
        .entries
        .iter()
        .zip(values.values)
        .map(|(role, v)| ParameterEntry {
            role: *role,
            transform: role.transform(),
            trainable: trainable.index_of(role).is_some(),
            value: Real::new(v),
        })
        .collect())
}

fn dataset_record(dataset: &MultiTaskDataset) -> DatasetRecord {
    DatasetRecord {
        fingerprint: fingerprint(dataset),
        tasks: (0..dataset.num_tasks())
            .map(|t| {
                let x = dataset.inputs(t);
                TaskRecord {
                    inputs: (0..x.nrows())
                        .map(|i| x.row(i).iter().map(|v| Bits(*v)).collect())
                        .collect(),
                    targets: dataset.targets(t).iter().map(|v| Bits(*v)).collect(),
                }
            })
            .collect(),
    }
}

impl ModelFile {
    pub fn from_model(
        model: &FittedModel,
        family: ModelFamily,
        standardize: bool,
        jitter: Jitter,
        trainable: &ParameterSchema,
    ) -> CliResult<Self> {
        let std_record = |s: &Standardization| StandardizationRecord {
            offset: Real::new(s.offset),
            scale: Real::new(s.scale),
        };
        let (kernel, num_latent, rank, parameters, standardization, dataset) = match model {
            FittedModel::Gp(m) => {
                let ds = MultiTaskDataset::single_task(m.training_inputs().clone(), m.training_targets().clone())?;
                (
                    m.hyper.kernel.kind,
                    1,
                    1,
                    entries(&m.hyper, trainable)?,
                    vec![std_record(&m.standardization)],
                    ds,
                )
            }
            FittedModel::Mtgp(m) => {
                let terms = &m.hyper.kernel.terms;
                let rank = terms.first().map_or(1, |t| t.rank());
                (
                    terms[0].kernel.kind,
                    terms.len(),
                    rank,
                    entries(&m.hyper, trainable)?,
                    m.standardization.iter().map(std_record).collect(),
                    m.dataset().clone(),
                )
            }
        };
        Ok(ModelFile {
            format: FORMAT.into(),
            schema_version: SCHEMA_VERSION,
            family,
            kernel,
            num_tasks: dataset.num_tasks(),
            input_dim: dataset.input_dim(),
            num_latent,
            rank,
            standardize,
            jitter_relative: Real::new(jitter.relative),
            jitter_max_relative: Real::new(jitter.max_relative),
            log_marginal_likelihood: Real::new(model.log_marginal_likelihood()),
            parameters,
            standardization,
            dataset: dataset_record(&dataset),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file is always serializable");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::write(path, e))
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        // Check the version before the full schema so old or foreign files get
        // a clear message.
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("model file is not JSON: {e}")))?;
        if probe.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(CliError::Validation(format!(
                "not a model file (expected format `{FORMAT}`)"
            )));
        }
        match probe.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::Validation(format!(
                    "unsupported model file version {v} (this build reads version {SCHEMA_VERSION})"
                )))
            }
            None => return Err(CliError::Validation("model file has no schema_version".into())),
        }
        serde_json::from_value(probe).map_err(|e| CliError::Validation(format!("model file: {e}")))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn dataset(&self) -> CliResult<MultiTaskDataset> {
        let p = self.input_dim;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (t, task) in self.dataset.tasks.iter().enumerate() {
            if task.inputs.iter().any(|r| r.len() != p) || task.inputs.len() != task.targets.len() {
                return Err(CliError::Validation(format!(
                    "model file: task {t} data has inconsistent shape"
                )));
            }
            inputs.push(DMatrix::from_fn(task.inputs.len(), p, |i, j| task.inputs[i][j].0));
            targets.push(DVector::from_iterator(
                task.targets.len(),
                task.targets.iter().map(|b| b.0),
            ));
        }
        let ds = MultiTaskDataset::new(inputs, targets)?;
        if fingerprint(&ds) != self.dataset.fingerprint {
            return Err(CliError::Validation("model file: dataset fingerprint mismatch".into()));
        }
        Ok(ds)
    }

    fn values_into<H: Parameterized + Clone>(&self, skeleton: &H) -> CliResult<H> {
        let schema = ParameterSchema {
            entries: self.parameters.iter().map(|p| p.role).collect(),
        };
        if schema != ParameterSchema::from_model(skeleton, |_| true) {
            return Err(CliError::Validation(
                "model file: parameter schema does not match the model family".into(),
            ));
        }
        Ok(ParameterVector {
            schema,
            values: self.parameters.iter().map(|p| p.value.get()).collect(),
        }
        .unpack(skeleton)?)
    }

    /// Rebuilds the fitted model from the stored parameters and data.
    pub fn load_model(&self) -> CliResult<FittedModel> {
        let dataset = self.dataset()?;
        if dataset.num_tasks() != self.num_tasks || self.standardization.len() != self.num_tasks {
            return Err(CliError::Validation("model file: task count is inconsistent".into()));
        }
        let options = FitOptions {
            standardize: self.standardize,
            jitter: Jitter {
                relative: self.jitter_relative.get(),
                max_relative: self.jitter_max_relative.get(),
            },
        };
        let model = match self.family {
            ModelFamily::Gp => {
                let skeleton = GpHyperparameters::new(
                    ScalarKernelSpec::new(self.kernel, &vec![1.0; self.input_dim], 1.0)?,
                    1.0,
                )?;
                let hyper = self.values_into(&skeleton)?;
                FittedModel::Gp(GpModel::fit(
                    hyper,
                    dataset.inputs(0).clone(),
                    dataset.targets(0).clone(),
                    &options,
                )?)
            }
            family => {
                let skeleton = mtgp_skeleton(
                    family,
                    self.kernel,
                    self.num_tasks,
                    self.input_dim,
                    self.num_latent,
                    self.rank,
                )?;
                let hyper = self.values_into(&skeleton)?;
                FittedModel::Mtgp(MtgpModel::fit(hyper, dataset, &options)?)
            }
        };
        let stored: Vec<Standardization> = self
            .standardization
            .iter()
            .map(|s| Standardization {
                offset: s.offset.get(),
                scale: s.scale.get(),
            })
            .collect();
        let refit = match &model {
            FittedModel::Gp(m) => vec![m.standardization],
            FittedModel::Mtgp(m) => m.standardization.clone(),
        };
        if stored != refit {
            return Err(CliError::Validation(
                "model file: standardization statistics do not match the data".into(),
            ));
        }
        Ok(model)
    }
}
