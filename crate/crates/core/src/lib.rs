//! Continuous affect analysis from 3D morphable model expression coefficients.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! * [`face3dmm`]: a toy linear morphable model with weak-perspective projection
//!   and parameter recovery.
//! * [`features`]: standardization, PCA compression and quantile-range scaling of
//!   expression embeddings.
//! * [`temporal`]: a two-layer bidirectional GRU regressor with exact
//!   backpropagation through time, Adam and cosine annealing with warm restarts.
//! * [`metrics`]: CCC, ICC(3,1), PCC, MSE, RMSE and accuracy.
//! * [`analysis`]: AU to emotion correspondence regressions and kNN
//!   leave-one-out classification.
//! * [`dataio`]: CSV/JSON datasets, windowing and seeded synthetic generators.
//! * [`cli`]: the `affectlab` command line front end.
//!
//! Data-parallel inner loops (windows in a mini-batch, evaluation windows,
//! LOOCV folds) run on rayon when the `parallel` feature is enabled and fall
//! back to plain iteration otherwise. Results are identical either way.

pub mod analysis;
pub mod cli;
pub mod dataio;
mod error;
pub mod exec;
pub mod face3dmm;
pub mod features;
pub mod linalg;
pub mod metrics;
pub mod seed;
pub mod temporal;

pub use error::{Error, Result};
