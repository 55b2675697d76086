//! A desk-scale laboratory for the max-min degree arborescence problem:
//! path LP relaxation, sparsification, constructive LLL rounding, pruning,
//! local-to-global congestion reduction, multi-source local search, an
//! exhaustive oracle, baseline rounders, and hard-instance generators.

pub mod generators;
pub mod lll;
pub mod local_search;
pub mod model;
pub mod oracle;
pub mod path_lp;
pub mod pruning;
pub mod reductions;
pub mod simplex;
pub mod sparsifier;

/// Default scalar for the LP layer; the solver and LP builders are generic
/// over `num_traits::Float`.
pub type Scalar = f64;
