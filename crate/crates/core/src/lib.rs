//! Risk-domain business cycle simulator.
//!
//! Economic agents carry numerical risk grades in `[0, 1]` per tracked risk,
//! which makes risk ratings coordinates on a unit cube. Published rating
//! transition matrices then induce velocities, so agents move, and the
//! additive variables they carry (assets, credits, supply, demand, ...) form
//! collective fields with flows. Because the domain is bounded, those flows
//! make the risk-weighted means of macro variables oscillate between the
//! secure and risky ends; this crate builds that whole chain:
//!
//! - [`domain`]: the unit-cube grid, scalar/vector fields, integrals,
//!   risk-weighted means and a conservative discrete divergence;
//! - [`transitions`]: transition-matrix ingestion and the velocities it
//!   defines;
//! - [`agents`]: the microscopic population layer and its aggregation to
//!   fields, flows and exact macro states;
//! - [`transactions`]: buy-sell records on the doubled seller x buyer
//!   domain with axis flows, marginals and mean risks;
//! - [`continuity`]: upwind finite-volume transport of variables and flows
//!   with zero boundary flux;
//! - [`cycle`]: the linearized supply-demand cycle solved three ways
//!   (closed form, moment ODE, spatial PDE).

pub mod agents;
pub mod continuity;
pub mod cycle;
pub mod domain;
pub mod error;
pub mod fmt;
pub mod parallel;
pub mod transactions;
pub mod transitions;

pub use error::{Error, Result};
