//! Distributions with known conditional MI, used to score estimators.
//!
//! [`gaussian`] is the continuous family with a closed-form per-context
//! truth; [`tabular`] holds small discrete joints whose conditional MI is
//! computed exactly by summation. [`bench`] runs the RMSE comparison and
//! [`oracle`] scores estimators against the exact discrete values.

pub mod bench;
pub mod gaussian;
pub mod oracle;
pub mod tabular;

pub use bench::{rmse, rmse_benchmark, BenchConfig, BenchReport, BenchRow};
pub use gaussian::{average_theoretical_mi, sample_given_z, sample_synth, theoretical_cmi, SynthConfig, SynthNegatives};
pub use oracle::{run_oracle, OracleConfig, OracleJoint, OracleReport, OracleRow, ORACLE_HEADER};
pub use tabular::{tabular_cmi, TabularJoint, TabularNegatives};
