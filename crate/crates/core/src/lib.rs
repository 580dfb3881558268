//! Numerical laboratory for minimal-mass blow-up of the quintic focusing NLS
//! `i u_t − H_γ u + |u|⁴u = 0` on a metric star graph with a δ vertex
//! condition.
//!
//! The crate covers the ground-state algebra, linearized-operator inversion,
//! the recursive blow-up profile, modulation decomposition, the model
//! parameter ODE and lab/rescaled-frame evolution.

pub mod compact;
pub mod evolution;
pub mod experiments;
pub mod fit;
pub mod graph;
pub mod ground_state;
pub mod io;
pub mod linearized;
pub mod model_ode;
pub mod modulation;
pub mod profile;
pub mod quad;
pub mod series;
pub mod tridiag;

pub use graph::{GraphFunction, GraphGrid, VertexCondition, C64};
