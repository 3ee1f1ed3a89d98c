//! JSON configuration documents for `train` and `benchmark`.

use std::path::{Path, PathBuf};

use mtgp_core::benchmark::{Coupling, StudyConfig, BENCHMARK_NOISE_FLOOR};
use mtgp_core::training::{CoregionFamily, TrainConfig};
use mtgp_core::KernelKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "gp")]
    Gp,
    #[serde(rename = "mtgp-slfm")]
    MtgpSlfm,
    #[serde(rename = "mtgp-lmc")]
    MtgpLmc,
    #[serde(rename = "mtgp-independent")]
    MtgpIndependent,
}

impl ModelFamily {
    pub fn coregion(self) -> Option<CoregionFamily> {
        match self {
            ModelFamily::Gp => None,
            ModelFamily::MtgpSlfm => Some(CoregionFamily::Slfm),
            ModelFamily::MtgpLmc => Some(CoregionFamily::Lmc),
            ModelFamily::MtgpIndependent => Some(CoregionFamily::Independent),
        }
    }
}

fn default_rank() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelFamily,
    #[serde(default)]
    pub kernel: KernelKind,
    /// Number of latent terms `Q`; defaults to the number of tasks.
    #[serde(default)]
    pub num_latent: Option<usize>,
    /// Loading rank `R_q` of each term (`mtgp-lmc` only).
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Learn a constant mean (`gp` only).
    #[serde(default)]
    pub learn_mean: bool,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub metrics_path: Option<PathBuf>,
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model: ModelFamily) -> Self {
        RunConfig {
            model,
            kernel: KernelKind::default(),
            num_latent: None,
            rank: 1,
            standardize: true,
            learn_mean: false,
            training: TrainConfig::default(),
            model_path: None,
            metrics_path: None,
            trace_path: None,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |key: &str, msg: String| Err(CliError::Validation(format!("config key `{key}`: {msg}")));
        if self.rank == 0 {
            return bad("rank", "must be at least 1".into());
        }
        if self.rank != 1 && self.model != ModelFamily::MtgpLmc {
            return bad("rank", "only applies to model `mtgp-lmc`".into());
        }
        if self.num_latent == Some(0) {
            return bad("num_latent", "must be at least 1".into());
        }
        if self.num_latent.is_some() && matches!(self.model, ModelFamily::Gp | ModelFamily::MtgpIndependent) {
            return bad("num_latent", "does not apply to this model family".into());
        }
        if self.learn_mean && self.model != ModelFamily::Gp {
            return bad("learn_mean", "only applies to model `gp`".into());
        }
        self.training
            .validate()
            .map_err(|e| CliError::Validation(format!("config key `training`: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_correlations() -> Vec<f64> {
    StudyConfig::default().correlation_targets
}

fn default_sizes() -> Vec<[usize; 2]> {
    StudyConfig::default()
        .size_grid
        .into_iter()
        .map(|(a, b)| [a, b])
        .collect()
}

fn default_replicates() -> usize {
    StudyConfig::default().replicates
}

fn default_n_test() -> usize {
    100
}

fn default_study_training() -> TrainConfig {
    TrainConfig {
        noise_floor: BENCHMARK_NOISE_FLOOR,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    #[serde(default = "default_correlations")]
    pub correlations: Vec<f64>,
    /// `[n_primary, n_auxiliary]` pairs.
    #[serde(default = "default_sizes")]
    pub sizes: Vec<[usize; 2]>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub observation_noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: KernelKind,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default = "default_study_training")]
    pub training: TrainConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for StudyFile {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl StudyFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn study(&self) -> CliResult<StudyConfig> {
        let s = StudyConfig {
            correlation_targets: self.correlations.clone(),
            size_grid: self.sizes.iter().map(|p| (p[0], p[1])).collect(),
            replicates: self.replicates,
            n_test: self.n_test,
            observation_noise: self.observation_noise,
            seed: self.seed,
            kernel: self.kernel,
            coupling: self.coupling,
        };
        s.validate()
            .map_err(|e| CliError::Validation(format!("study config: {e}")))?;
        self.training
            .validate()
            .map_err(|e| CliError::Validation(format!("study config key `training`: {e}")))?;
        Ok(s)
    }
}

/// Parses `0.89,0.53`.
pub fn parse_correlations(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Validation(format!("--correlations: `{t}` is not a number")))
        })
        .collect()
}

/// Parses one or more `n_primary,n_auxiliary` pairs separated by `;`.
pub fn parse_sizes(s: &str) -> CliResult<Vec<[usize; 2]>> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|pair| {
            let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [a, b] => match (a.parse(), b.parse()) {
                    (Ok(a), Ok(b)) => Ok([a, b]),
                    _ => Err(CliError::Validation(format!(
                        "--sizes: `{pair}` is not a pair of counts"
                    ))),
                },
                _ => Err(CliError::Validation(format!("--sizes: `{pair}` must look like 5,10"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_run_config() {
        let c: RunConfig = serde_json::from_str(r#"{"model": "mtgp-slfm"}"#).unwrap();
        assert_eq!(c, RunConfig::new(ModelFamily::MtgpSlfm));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let e = serde_json::from_str::<RunConfig>(r#"{"model": "gp", "lenghtscale": 1}"#).unwrap_err();
        assert!(e.to_string().contains("lenghtscale"));
        let e = serde_json::from_str::<RunConfig>(r#"{"model": "gp", "training": {"lr": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("lr"));
    }

    #[test]
    fn family_specific_keys() {
        let mut c = RunConfig::new(ModelFamily::MtgpSlfm);
        c.rank = 2;
        assert!(c.validate().is_err());
        c.model = ModelFamily::MtgpLmc;
        assert!(c.validate().is_ok());
        let mut g = RunConfig::new(ModelFamily::Gp);
        g.num_latent = Some(2);
        assert!(g.validate().is_err());
    }

    #[test]
    fn default_study_grid_has_twelve_cells() {
        let s = StudyFile::default().study().unwrap();
        assert_eq!(s.correlation_targets.len() * s.size_grid.len(), 12);
    }

    #[test]
    fn size_and_correlation_flags() {
        assert_eq!(parse_sizes("5,5").unwrap(), vec![[5, 5]]);
        assert_eq!(parse_sizes("5,5;10, 20").unwrap(), vec![[5, 5], [10, 20]]);
        assert!(parse_sizes("5").is_err());
        assert_eq!(parse_correlations("0.89, 0.33").unwrap(), vec![0.89, 0.33]);
        assert!(parse_correlations("high").is_err());
    }
}
