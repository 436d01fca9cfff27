//! Training-data pruning from per-sample output-layer weight dynamics.
//!
//! Each sample is probed with one gradient step on a frozen model's output
//! layer. The step is summarised by two scores, the change of the Frobenius
//! norm (`don`) and the norm of the change (`nod`), and samples are ranked by
//! TOPSIS over those two criteria.

pub mod cli;
pub mod dataset;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod probe;
pub mod seeding;
pub mod select;

pub use dataset::SampleRecord;
pub use linalg::Matrix;
pub use metrics::SampleMetrics;
pub use probe::{ProbeConfig, ProbeModel};
pub use select::{Method, RankedSelection};
