//! Quantum-inspired text embedding workbench.
//!
//! Text is segmented into sub-chunks and fixed windows; each window is mapped
//! to rotation angles, simulated through a parameterized circuit and read out
//! as Pauli expectation values. Window features are resampled to 16 slots and
//! concatenated into a unit-norm 1024-dimensional embedding. Around that
//! encoder sit BM25 and exact vector indexes, score fusion with guard-railed
//! re-ranking, distillation heads, a fidelity-kernel diagnostic and the
//! retrieval / similarity metric suite.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the pipeline and the CLI use.

pub mod angles;
pub mod corpus;
pub mod distill;
pub mod embed;
pub mod error;
pub mod evalkit;
pub mod fixtures;
pub mod fusion;
pub mod lexindex;
pub mod qkernel;
pub mod qsim;
pub mod retrieval;
pub mod scalar;
pub mod store;
pub mod vecindex;

pub use error::{Error, Result};
pub use scalar::Real;

pub type StateVector = qsim::StateVector<f64>;
pub type StateVector32 = qsim::StateVector<f32>;
pub type Embedding = embed::Embedding<f64>;
