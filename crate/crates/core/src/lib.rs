//! Topological signal processing on simplicial complexes and simplicial
//! attention networks.

pub mod attention;
pub mod autodiff;
pub mod complex;
pub mod datasets;
pub mod dense;
pub mod error;
pub mod filters;
pub mod metrics;
pub mod operators;
pub mod propcheck;
pub mod sparse;
pub mod tasks;
pub mod training;

pub use complex::{build_complex, SimplicialComplex};
pub use dense::Mat;
pub use error::{GsanError, Result};
pub use sparse::SparseOperator;
