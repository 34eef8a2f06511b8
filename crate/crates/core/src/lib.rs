//! Sparse Kronecker-product logistic classification of 2-D and 3-D images,
//! with a cyclically shifted second view to catch signals that straddle the
//! patch grid.

pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod shift;
pub mod sim;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use model::{Dataset, PenaltyConfig, Sample, SkpdModel};
pub use optimizer::{fit, FitReport, SolverConfig};
pub use shift::{default_shift, shift, unshift, ShiftSpec};
pub use tensor::{DenseTensor, Matrix, ShapeConfig};
