//! Bayesian multiple index models (BMIM) for environmental mixture regression.
//!
//! The model links an outcome to `M` linear exposure indices through a kernel
//! machine, `y = h(x_1ᵀθ_1, …, x_Mᵀθ_M) + zᵀγ + ε`, with spike-and-slab
//! selection on the index weights. Single index models (`M = 1`) and
//! ordinary kernel machine regression (`M = P`) are special cases, and a
//! quantile g-computation fit is provided as a linear comparator.

pub mod chain_io;
pub mod comparators;
pub mod data;
pub mod error;
pub mod kernels;
pub mod likelihood;
mod linalg;
pub mod posterior;
pub mod sampler;
pub mod simulation;
pub mod stats;

pub use comparators::{named_configuration, qgc_fit, qgc_weights, MethodKind, QgcFit};
pub use data::{quantile_score, standardize, validate_index_spec, Dataset, IndexSpec, StandardizationRecord};
pub use error::{Error, Result};
pub use kernels::{KernelConfig, QueryPoints, WeightSet};
pub use likelihood::Hyperparameters;
pub use posterior::{SurfaceEstimate, WeightSummary};
pub use sampler::{run_chain, Draw, ParamState, PosteriorChain, SamplerSettings};
