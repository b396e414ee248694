//! Exact rational laboratory for recurrence properties of measure-preserving
//! transformations of the unit interval.
//!
//! Sets are finite unions of half-open rational intervals, transformations are
//! finite-stage piecewise translations, and every quantity is computed exactly.

pub mod builders;
pub mod column;
pub mod interval;
pub mod maps;
pub mod overrec;
pub mod rational;
pub mod recurrence;
pub mod towerplex;
pub mod towers;

#[cfg(doctest)]
mod doctest;

pub use interval::{IntervalSet, RationalInterval};
pub use maps::{normalized_transport, MapError, PiecewiseAffineMap, PiecewiseTranslation};
pub use rational::Q;
