//! Nonnegative, Boolean and logistic matrix factorization with automatic
//! rank selection and uncertainty-aware link prediction.

pub mod boolean;
pub mod datagen;
mod error;
pub mod experiment;
mod linalg;
pub mod matrix;
pub mod metrics;
pub mod rank;
pub mod solvers;
pub mod uq;

pub use boolean::{
    apply_thresholds, binarize_factors, boolean_cluster, kmeans_threshold, otsu_threshold,
    search_thresholds, Binarizer, ThresholdPair, Thresholder,
};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentResult, Method};
pub use matrix::{
    boolean_matmul, column_errors, nnls_regress, perturb_boolean, perturb_uniform,
    relative_error, BoolMatrix, DenseMatrix, MaskMatrix, RandomSource,
};
pub use metrics::{pr_auc, rmse, roc_auc, EvalReport};
pub use rank::{
    custom_cluster, rank_scan, select_k, silhouette_scores, wilcoxon_ranksum, EnsembleSpec,
    RankRecord, RankScanResult,
};
pub use solvers::{
    bnmf, lmf, nmf_mu, predict, predict_with, rnmf, wnmf, FactorModel, Factors, ModelKind,
    ProductMode, SolverOptions,
};
