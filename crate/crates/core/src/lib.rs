//! Majorization-minimization ADMM solvers for `min f(x) s.t. Σᵢ Aᵢxᵢ = b`.
//!
//! The core is generic over the floating-point type through [`Scalar`]; the `*64`
//! aliases at the crate root fix it to `f64`.

pub mod blockspace;
pub mod diagnostics;
pub mod error;
pub mod partition;
pub mod problems;
pub mod prox;
pub mod scalar;
pub mod solvers;
pub mod surrogates;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type BlockVector64 = blockspace::BlockVector<f64>;
pub type BlockOperator64 = blockspace::BlockOperator<f64>;
pub type BlockOperatorFamily64 = blockspace::BlockOperatorFamily<f64>;
pub type WeightMatrix64 = blockspace::WeightMatrix<f64>;
pub type ProxFunction64 = prox::ProxFunction<f64>;
pub type SurrogateSpec64 = surrogates::SurrogateSpec<f64>;
pub type ProblemSpec64 = problems::ProblemSpec<f64>;
pub type SolverConfig64 = solvers::SolverConfig<f64>;
pub type SolverState64 = solvers::SolverState<f64>;
pub type SolverResult64 = solvers::SolverResult<f64>;
pub type KKTCertificate64 = diagnostics::KKTCertificate<f64>;
