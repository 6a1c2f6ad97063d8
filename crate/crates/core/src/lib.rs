//! Domain-invariant support vector machines.
//!
//! A kernel SVM whose objective is augmented with a penalty on the dependence
//! between its decision values and the batch (experiment and subject) each
//! sample came from. The crate also ships the baselines it is compared with,
//! a cross-validation benchmark harness, a synthetic data generator and CSV
//! dataset I/O.

pub mod error;
pub mod kernel;
pub mod domain;
pub mod hsic;
pub mod qp;
pub mod model;
pub mod baselines;
pub mod bench;
pub mod datagen;
pub mod io;

pub use domain::{encode_domains, recode_labels, Dataset, DomainMatrix, Label, RecodedLabels, Role};
pub use error::{Error, Result};
pub use hsic::{hsic, simplified_hsic, DependenceValue};
pub use kernel::{centering_matrix, gram, GramMatrix, KernelSpec};
pub use qp::{kkt_residuals, solve_qp, KktResiduals, QpError, QpProblem, QpSolution};
pub use model::{fit, DisvmModel, DisvmParams, DisvmSystem};
pub use baselines::{fit_mida, fit_pca, fit_smida, fit_svm, ProjectionKind, ProjectionModel, SvmModel};
pub use datagen::{generate_synthetic, SynthConfig};
pub use io::{read_dataset, write_dataset};
pub use bench::{cross_validate, make_tasks, sensitivity_sweep, CvReport, Method, Protocol, TaskSpec, TransferTask};
