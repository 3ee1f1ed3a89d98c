//! Exact single-task and multi-task Gaussian process regression with
//! coregionalization kernels (LMC, ICM, SLFM), marginal-likelihood training,
//! and a correlated Forrester benchmark harness.

pub mod benchmark;
pub mod coregion;
pub mod data;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod mtgp;
pub mod oracle;
pub mod params;
pub mod training;
pub mod verify;

pub use benchmark::{
    calibrate_auxiliary, forrester, pearson_correlation, percent_improvement, rmse, run_scenario, run_study,
    BenchmarkScenario, ComparisonResult, ForresterParams, StudyConfig, StudyResult,
};
pub use coregion::{
    assemble_joint_covariance, build_b, cross_covariance_block, CoregionalizationTerm, MultiTaskKernelSpec,
};
pub use data::{MultiTaskDataset, Standardization};
pub use error::{Error, Result};
pub use gp::{
    gp_fit, gp_log_marginal_likelihood, gp_predict, FitOptions, GpHyperparameters, GpModel, PosteriorPrediction,
};
pub use kernel::{kernel_eval, kernel_matrix, kernel_matrix_grad, KernelKind, ScalarKernelSpec};
pub use linalg::Jitter;
pub use mtgp::{mtgp_fit, mtgp_log_marginal_likelihood, mtgp_predict, MtgpGradient, MtgpHyperparameters, MtgpModel};
pub use params::{ParamRole, ParameterSchema, ParameterVector, Parameterized, Transform};
pub use training::{
    check_gradients, train_gp, train_mtgp, CoregionFamily, GpTrainSpec, MtgpTrainSpec, TrainConfig, TrainReport,
    TrainedGp, TrainedMtgp,
};
