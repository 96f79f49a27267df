//! Exact computations with gapped filtered A∞ algebras over the Novikov field
//! and with non-Archimedean torus charts glued by wall-crossing transitions.
//!
//! Everything is computed modulo an explicit energy cutoff with exact
//! rational arithmetic, so every identity is checked bit-exactly.

pub mod ring;
pub mod poly;
pub mod novikov;
pub mod graded;
pub mod linalg;
pub mod trees;
pub mod ainf;
pub mod isotopy;
pub mod mc;
pub mod mirror;
pub mod cli;
