//! Cumulant-expansion equations of motion for networks of two-level
//! systems, with exact reference solvers and error measures.
//!
//! The pipeline: build a [`eom::SystemSpec`] (see [`models`]), derive a
//! closed [`eom::MomentODESystem`] at a chosen order, integrate it with
//! [`solvers::integrate_moments`], and compare against
//! [`solvers::solve_master_equation`] or [`solvers::solve_schrodinger`]
//! using [`metrics`].

pub mod cumulant;
pub mod eom;
pub mod metrics;
pub mod models;
pub mod opalg;
pub mod parallel;
pub mod solvers;

pub use cumulant::{expand_moment, joint_cumulant, Moment, MomentPolynomial, Partition};
pub use eom::{generate_closed_system, MomentODESystem, ProductState, Schedule, SystemSpec};
pub use opalg::{OperatorSum, SiteOperator, Transition, C64};
pub use solvers::{integrate_moments, IntegratorConfig, Observable, SiteMode, Status, TimeGrid, Trajectory};
