//! Active learning with statistical leverage scores.
//!
//! Queries are chosen by how much each unlabeled example influences the
//! low-rank structure of its class's kernel matrix, one at a time
//! ([`strategies::alevs_select`]) or in diverse batches through greedy
//! maximization of a submodular set function
//! ([`strategies::dbalevs_select`]).

pub mod classifier;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod setfunc;
pub mod stats;
pub mod strategies;

pub use error::{Error, Result};
