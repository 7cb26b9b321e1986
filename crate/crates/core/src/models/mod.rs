//! Benchmark energy models.

mod eigen;
mod ising;
mod log_quadratic;
mod perturbed;
mod rbm;
mod stochastic;

pub use eigen::{lambda_min_dense, lambda_min_lanczos, symmetric_lambda_min, DENSE_EIGEN_LIMIT};
pub use ising::{build_lattice_ising, IsingLatticeModel, LatticeSpec, SpinEncoding};
pub use log_quadratic::LogQuadraticModel;
pub use perturbed::Perturbed1DModel;
pub use rbm::{synthetic_prototype_data, CdConfig, RbmModel};
pub use stochastic::{AdditiveNoiseModel, MinibatchQuadraticModel};
