//! Certified bounds on the Bayesian information of quantum estimation
//! strategies.
//!
//! Given `N` queries to a parametrized channel and a prior over the
//! parameter, this crate computes two-sided certified bounds on the maximal
//! Bayesian information `J_max` attainable by four strategy classes —
//! parallel, sequential, causal superposition, and general indefinite causal
//! order — by assembling semidefinite programs from the prior-averaged Choi
//! operator, solving them with a deterministic interior-point method, and
//! post-processing the witnesses into exact rational certificates.
//!
//! Module map:
//! - [`linalg`]: dense complex/real kernels (Jacobi eigensolvers, Cholesky,
//!   QR, LU, expm, pseudoinverse);
//! - [`spaces`]: labeled tensor factors, partial traces, link products;
//! - [`channels`]: channel families and Choi operators;
//! - [`priors`]: priors, quadrature, and prior-averaged channel data;
//! - [`testers`]: strategy-class constraint maps and membership checks;
//! - [`sdp`]: conic problem model and the bound SDP assemblies;
//! - [`solver`]: deterministic NT interior-point backend;
//! - [`pipeline`]: fixed strategies, direct information, certified
//!   experiments (hierarchy, census, prior sweeps);
//! - [`exact`]: Gaussian-rational matrices and exact PSD decisions;
//! - [`certify`]: witness repair into exact rational certificates;
//! - [`error`]: crate-wide error type with CLI exit-code mapping.

#![forbid(unsafe_code)]

pub mod certify;
pub mod channels;
pub mod error;
pub mod exact;
pub mod linalg;
pub mod pipeline;
pub mod priors;
pub mod sdp;
pub mod solver;
pub mod spaces;
pub mod testers;

pub use certify::{CertifiedInterval, ExactInstance, LowerCertificate, UpperCertificate};
pub use channels::{ChannelKind, ChannelSpec, ChoiOperator};
pub use error::{Error, Result};
pub use exact::{exact_psd, rationalize, QMat, Rat, QC};
pub use linalg::{C64, CMat, RMat};
pub use pipeline::{
    bayes_bound, census, hierarchy, hierarchy_classes, info_gain_direct, jmax, jmax_from_data,
    jmax_solution, parallel_strategy, prior_sweep, sequential_no_control, sweep_to_csv,
    verify_ite, CensusRecord, CensusSummary, FixedStrategy, HierarchyReport, IteDiagnostics,
    JmaxReport, JmaxSolution, PipelineConfig, SweepPoint, SweepTable,
};
pub use priors::{AveragedData, Prior, PriorFamily, QPolicy};
pub use sdp::{ConicProblem, ConicSolution, ReportSide, SolverStatus};
pub use solver::{InteriorPoint, SdpBackend, SolverConfig};
pub use spaces::{LabeledOperator, SldResult, SpaceRegistry};
pub use testers::{is_valid_tester, tester_registry, StrategyClass, TesterDiagnostics, TesterMap};

/// Crate version string, embedded in all serialized outputs.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
