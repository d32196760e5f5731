//! Metaheuristic solvers: particle swarm for trajectory decision vectors and
//! a genetic algorithm for multi-route cluster assignment.

mod ga;
mod pso;

pub use ga::{exhaustive_route_assign, ga_route_assign, GaOptions, GaResult};
pub use pso::{particle_swarm_maximize, PsoOptions, PsoResult};
