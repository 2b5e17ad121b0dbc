//! Most-likely flows over directed networks from aggregate marginals.
//!
//! * [`bridge`]: single-commodity Schrödinger bridge with Sinkhorn iteration.
//! * [`mcflow`]: several commodities observed only in aggregate, solved by
//!   Sinkhorn belief propagation over the path-plus-commodity junction tree.
//! * [`unbalanced`]: killing and creation through an auxiliary parking state.
//! * [`oracle`]: brute-force path tensors used to check the solvers.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision case.

pub mod bridge;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod mcflow;
pub mod oracle;
pub mod scalar;
pub mod unbalanced;

pub use bridge::{path_kl, posterior_kernel, solve_bridge, BridgeSolution, PotentialField, SolverOptions};
pub use error::{Error, Result};
pub use graph::{
    check_bridge_feasibility, propagate_marginal, validate_kernel, CommodityModel, Kernel,
    KernelClass, Marginal, Network, ValidationReport,
};
pub use matrix::Matrix;
pub use mcflow::{
    build_cost_factors, commodity_masses, rate_function, solve_multicommodity, CommodityPotentials, CostFactors,
    MultiCommoditySolution,
};
pub use oracle::PathMeasure;
pub use scalar::Scalar;
pub use unbalanced::{
    augment, augment_marginals, restricted_posterior, solve_unbalanced, AugmentedKernel, Creation,
    UnbalancedSolution,
};

pub type Matrix64 = Matrix<f64>;
pub type Kernel64 = Kernel<f64>;
pub type Marginal64 = Marginal<f64>;
pub type CommodityModel64 = CommodityModel<f64>;
pub type SolverOptions64 = SolverOptions<f64>;
pub type BridgeSolution64 = BridgeSolution<f64>;
pub type MultiCommoditySolution64 = MultiCommoditySolution<f64>;
pub type UnbalancedSolution64 = UnbalancedSolution<f64>;
pub type AugmentedKernel64 = AugmentedKernel<f64>;
pub type PathMeasure64 = PathMeasure<f64>;

pub type Kernel32 = Kernel<f32>;
pub type Marginal32 = Marginal<f32>;
pub type SolverOptions32 = SolverOptions<f32>;
