//! Combinatorial fault discovery and call-site hardening for microservice
//! request graphs.
//!
//! A request with several alternative execution paths fails only when every
//! path contains a failed API call. Encoding each path as a positive clause
//! turns "which sets of API failures break this request" into "which
//! assignments satisfy this monotone CNF", and the minimal such sets are the
//! minimal combinatorial faults.
//!
//! - [`cnf`]: monotone formulas, satisfaction, overlap statistics, text I/O.
//! - [`solver`]: bounded enumeration of all minimal satisfying assignments.
//! - [`sim`]: grouped-skeleton system generator and the execution oracle.
//! - [`campaign`]: feedback-driven k-fault injection against an oracle.
//! - [`hardening`]: budgeted selection of API call sites to harden.

pub mod campaign;
pub mod cnf;
pub mod hardening;
pub mod sim;
pub mod solver;

pub use cnf::{ApiVar, Clause, MonotoneCnf};
pub use solver::FaultSet;
