//! Learning high-dimensional mixtures of elliptical distributions from
//! dictionaries too large for memory, and using them to compress the
//! dictionary cluster by cluster and match new signals against it.
//!
//! The pipeline is:
//!
//! 1. [`em::spectral_init`] on a subsample picks the intrinsic dimension of
//!    every cluster from its eigenvalue scree plot.
//! 2. [`em::fit_online`] refines the model with mini-batch online EM while
//!    streaming the dictionary from disk.
//! 3. [`io::compress`] projects every dictionary row onto the latent
//!    coordinates of its most probable cluster.
//! 4. [`matching::match_compressed`] assigns each query to a cluster and
//!    searches only that cluster's reduced rows.

pub mod block;
pub mod cli;
pub mod elliptical;
pub mod em;
pub mod error;
pub mod io;
pub mod matching;
pub mod mixture;
pub mod projection;

pub use block::{MemorySource, RowBlock, SignalSource};
pub use elliptical::{generator_eval, FamilyTag, GeneratorEval, HdEdComponent, MixingFamily, WeightPosterior};
pub use error::{Error, ErrorClass, Result};
pub use mixture::{HdMedModel, Responsibilities};
pub use projection::{reconstruction_rmse, ProjectionOperator};
