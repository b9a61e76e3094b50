//! Layer-wise post-training weight quantization.
//!
//! The crate quantizes the weights of a linear layer `W` (`N x N'`, one column
//! per output channel) given calibration inputs. Two inputs are distinguished:
//! `X`, the activations of the full-precision model, and `Xt`, the activations
//! the partially quantized model actually produces. Rounding methods minimize
//! `1/2 ||X w - Xt q||^2` greedily, one coordinate at a time:
//!
//! * RTN: plain round-to-nearest.
//! * OPTQ: rounds each coordinate and diffuses the error into the remaining
//!   weights through the Cholesky factor of `H^-1`.
//! * GPFQ: greedy path following with a running residual.
//! * Qronos: corrects the mismatch between `X` and `Xt` exactly at the first
//!   coordinate and diffuses like OPTQ afterwards. A reference form re-solves the
//!   full least-squares problem at every step.
//!
//! Only the second moments `H = Xt^T Xt` and `G = Xt^T X` are needed
//! ([`calib::CalibStats`]).

pub mod bench;
pub mod calib;
pub mod cli;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod netsim;
pub mod oracle;
pub mod qmx;
pub mod rounding;
pub mod verify;

pub use calib::{CalibStats, ColumnOrder};
pub use error::{Error, Result};
pub use grid::{GridConfig, QuantGrid};
pub use linalg::{CholeskyFactor, DampingMode, DampingPolicy};
pub use rounding::{quantize_layer, LayerQuantRequest, LayerResult, Method, RoundingTrace};
