//! Oblivious query processing over a simulated trusted-module /
//! untrusted-memory machine.

pub mod cost;
pub mod error;
pub mod expansion;
pub mod groupagg;
pub mod harness;
pub mod join;
pub mod memsim;
pub mod planner;
pub mod primitives;
pub mod relmodel;
pub mod semijoin;
pub mod storage;

pub use error::{Error, Result};
