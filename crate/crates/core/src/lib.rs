//! Decodable continuous vector representations of first-order formulas.
//!
//! The crate covers the whole pipeline: a parser for a TPTP-like syntax,
//! exact symbolic oracles for six logical properties, seeded dataset
//! generators, a small reverse-mode autodiff engine, four character-level
//! encoders, the tree autoencoder with its two training modes, and the
//! downstream evaluation harness.

pub mod checks;
pub mod dataset;
pub mod encoders;
pub mod eval;
pub mod fol;
pub mod oracles;
pub mod par;
pub mod parser;
pub mod tensor;
pub mod tree;
