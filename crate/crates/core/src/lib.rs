//! Finite element solvers for parabolic and hyperbolic (relaxation flux)
//! monodomain and bidomain models of cardiac tissue.
//!
//! Lengths are in cm, times in ms. All numerics are generic over
//! [`Scalar`]; the aliases at the crate root fix the type to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytic;
pub mod bidomain;
pub mod fem;
pub mod ionic;
pub mod mesh;
pub mod monodomain;
pub mod run;
mod scalar;
pub mod stimulus;

pub use analytic::{mckean_speed, mckean_speed_dimensional, monodomain_tau, AnalyticError, FrontSolution, NondimMap};
pub use bidomain::{BidomainConfig, BidomainOperators, BidomainSolver, BidomainState};
pub use fem::{cg_solve, CgOptions, CgReport, FemError, Preconditioner, SparseOperator};
pub use ionic::{heaviside, IonicModelInstance, ModelError, ModelKind};
pub use mesh::{
    line_mesh, rect_tri_mesh, uniform_fiber_frame, Diagonal, DiffusionSpec, FiberField, FiberFrame, MeshError,
    SimplicialMesh,
};
pub use monodomain::{
    IntegratorOrder, MonodomainConfig, MonodomainSolver, Operators, SolverError, SolverState, SolverStats, TimeStepper,
};
pub use run::{run, run_with, ActivationMap, RunOptions, RunRecord, Snapshot};
pub use scalar::Scalar;
pub use stimulus::{Region, StimulusProtocol};

pub type Mesh = SimplicialMesh<f64>;
pub type Model = IonicModelInstance<f64>;
pub type Monodomain = MonodomainSolver<f64>;
pub type Bidomain = BidomainSolver<f64>;
pub type Matrix = SparseOperator<f64>;
pub type Diffusion = DiffusionSpec<f64>;
pub type Fibers = FiberField<f64>;
pub type Stimulus = StimulusProtocol<f64>;
pub type Front = FrontSolution<f64>;
