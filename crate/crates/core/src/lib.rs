//! Exact species elimination for generalized Lotka-Volterra systems.
//!
//! - [`model`]: the GLV model, its right-hand side and JSON format.
//! - [`integrate`]: fixed-step RK4 reference solutions with dense output.
//! - [`memory`]: memory-method reduction and its integro-differential solver.
//! - [`algebraic`]: algebraic-method residual operators (two species, Lorenz).
//! - [`reducibility`]: required zero sets, the fraction rho, ordering search.
//! - [`verify`]: comparison of reduced and detailed solutions.

pub mod algebraic;
pub mod integrate;
pub mod memory;
pub mod model;
pub mod reducibility;
pub mod verify;

pub use integrate::{integrate_fixed, logistic_exact, Trajectory};
pub use memory::{build_reduced_system, solve_reduced, ReducedSystem, ReducedTrajectory, SolverSettings};
pub use model::{load_model, save_model, GlvModel};
pub use reducibility::{check_reducible, EliminationPlan, SearchStrategy};
