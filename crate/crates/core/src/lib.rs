//! Relax-then-truncate status-update planning for fleets of energy-harvesting
//! sensors under a per-slot transmission budget.
//!
//! The pipeline is: build a [`belief::BeliefAtlas`] per parameter class,
//! solve the per-sensor Lagrangian problem with [`solver::SolverGrid`],
//! search the multiplier and mixing factor with [`planner::Planner`], then
//! run the resulting policy slot by slot with [`sim::run_episode`].

pub mod belief;
pub mod cache;
pub mod chain;
pub mod config;
pub mod controller;
pub mod error;
pub mod exact;
pub mod exec;
pub mod model;
pub mod planner;
pub mod report;
pub mod sim;
pub mod solver;
pub mod table;

pub use error::{Error, Result};
