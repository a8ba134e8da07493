#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod complex;
pub mod conditions;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod sparse;
pub mod spectral;
pub mod weight;

pub use complex::{build_space, dual_norm, DiscreteSpace, FormRecord, FormVector, SparseHermitianOperator};
pub use conditions::{AsymptoticSamplingPlan, ConditionReport, Verdict};
pub use error::{Error, Result};
pub use linalg::{Block, LinearOperator, C64};
pub use sparse::CsrMatrix;
pub use spectral::{EigenOptions, EigenResult};
pub use weight::{LeviMatrix, PointC, PshReport, WeightSpec};
