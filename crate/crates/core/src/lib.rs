//! Simulation and transformation of real-time probabilistic and quantum
//! finite automata with postselection and restart.
//!
//! The crate is organized around five layers:
//!
//! * [`numerics`] — exact rational and complex matrix arithmetic,
//!   tensor products, and PSD square roots;
//! * [`machine`] — the machine data model, its JSON file format, and
//!   static well-formedness validation;
//! * [`semantics`] — evaluation of machines on input strings,
//!   postselection normalization, the restart closed form, and Monte
//!   Carlo restart simulation;
//! * [`transforms`] — machine-to-machine constructions (restart ↔
//!   postselection, complement, union/intersection, error amplification,
//!   Riga-to-standard conversion, prefix dispatch, state partitioning),
//!   in both materialized and virtual forms;
//! * [`lab`] — witness machines, language oracles, and the
//!   enumeration-based recognition classifier.

pub mod error;
pub mod lab;
pub mod machine;
pub mod numerics;
pub mod semantics;
pub mod transforms;

pub use error::{EvalError, ModelError, NumericsError, TransformError};
pub use numerics::{Mat, Rational, TolerancePolicy};
