//! Certifying solver for CSPs over a fixed finite template with a special
//! weak near-unanimity polymorphism.

pub mod algebra;
pub mod fixtures;
pub mod gen;
pub mod consistency;
pub mod instance;
pub mod solver;
pub mod template;
pub mod types;
pub mod witness;

pub use types::{BinRel, Elem, ElemSet, Error, Limits, Result, MAX_L};
