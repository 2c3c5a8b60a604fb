//! Synthesis of AC-undetectable load-and-data attacks on power grids, and
//! randomized generation-injection defenses that expose them.
//!
//! The crate is split along the life of an experiment:
//!
//! * [`grid`] holds the network model and power-flow mathematics;
//! * [`attack`] computes an initial attack and the falsified sensor streams
//!   that follow it;
//! * [`defense`] implements the pairs-driven correlation test, the
//!   error-aware current/voltage criteria, and the covariance test;
//! * [`sim`] runs time-stepped scenarios that tie the three together;
//! * [`io`] reads case files and scenario configurations and writes reports.

pub mod attack;
pub mod defense;
mod error;
pub mod grid;
pub mod io;
pub mod sim;

pub use error::{Error, Result};
