//! Renormalisation combinatorics for the fractional Phi^3 SPDE.
//!
//! The crate implements the exact (integer/rational) layer of the BPHZ
//! machinery for `∂_t u − Δ^{ρ/2} u = u² + ξ` on the d-torus:
//!
//! * [`tree`] — decorated rooted trees, canonical forms, degrees,
//!   symmetry factors and enumeration of the negative-degree model space;
//! * [`antipode`] — the reduced twisted antipode on trees
//!   (extraction–contraction of divergent subtrees);
//! * [`diagram`] — Wick pairings, Feynman diagrams, kernel reduction,
//!   degree arithmetic and divergent-subdiagram detection;
//! * [`forest`] — forests of subdivergences, Zimmermann's forest formula
//!   and the diagram-level twisted antipode;
//! * [`hepp`] — Hepp trees, safe/unsafe forests, sector partitions and
//!   the exponent recursion producing per-diagram ε-bounds.
//!
//! All degree arithmetic is exact: ρ is a rational number and degrees are
//! `Ratio<i64>` values, so threshold comparisons (negative / marginal)
//! never depend on floating point. The crate is `no_std` + `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod antipode;
pub mod diagram;
pub mod forest;
pub mod hepp;
pub mod index;
pub mod params;
pub mod tree;

pub use index::MultiIndex;
pub use params::{ModelParams, ParamError, Rational};
pub use tree::DecoratedTree;
