//! Longitudinal rank sum test for two-arm trials with several outcomes
//! measured over repeated visits, with power and sample-size tools.
//!
//! Typical flow: [`parse_trial_csv`] → [`validate_and_prune`] →
//! [`lrst_test`] or [`estimated_power`]. Design-stage work starts from a
//! [`GaussianScenario`] and [`oracle_cd`].

pub mod data;
pub mod error;
pub mod inference;
pub mod nested;
pub mod numeric;
pub mod oracle;
pub mod power;
pub mod ranks;
pub mod sim;
pub mod variance;

pub use data::{parse_trial_csv, validate_and_prune, write_trial_csv, ColumnMapping, PruneReport, TrialData};
pub use error::{LrstError, Result};
pub use inference::{lrst_test, LrstResult};
pub use oracle::{
    oracle_cd, oracle_theta, GaussianScenario, OracleConfig, OracleMethod, OracleOutput,
    ReferenceCorrelation,
};
pub use power::{
    estimated_power, required_sample_size, theoretical_power, PowerResult, PowerVarianceForm,
    SampleSizeResult,
};
pub use ranks::{midranks, rank_summary, theta_hat_pairwise, RankSummary};
pub use sim::{empirical_power, estimator_validation, generate_trial, SimConfig, SimReport};
pub use variance::{
    c_hat, d_hat, moment_estimates, placements, se_matrices, se_matrices_independent,
    variance_components, MomentEstimates, PlacementTables, VarianceComponents,
};
