//! Prioritized architecture sampling with a Monte Carlo tree.
//!
//! The crate models a chain-structured search space as a tree whose depth-`l`
//! nodes choose the operation of layer `l` given all earlier choices. During a
//! (simulated) supernet training run, paths are sampled by a temperature
//! softmax over UCT scores and the tree accumulates loss-normalized rewards;
//! nodes selecting the same op at the same depth share a moving-average score.
//! The search stage then walks the tree hierarchically, spending validation
//! batches on under-visited subtrees before committing to a child.
//!
//! Network training is replaced by pluggable oracles ([`eval`]): a tabular
//! benchmark, a synthetic oracle with tunable inter-layer dependencies, and a
//! surrogate trainer producing decaying noisy losses.
//!
//! Modules:
//! - [`space`]: search spaces, architectures, cost model, canonical forms
//! - [`tree`]: the Monte Carlo tree, UCT scoring and softmax path sampling
//! - [`train`]: three-phase training simulation
//! - [`eval`]: evaluation oracles and the benchmark file format
//! - [`search`]: hierarchical node selection and search-cost accounting
//! - [`baselines`], [`metrics`]: random/evolutionary search and rank metrics
//! - [`cli`]: the command implementations behind the `mctnas` binary

pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod search;
pub mod seed;
pub mod space;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
pub use space::{Architecture, SearchSpace, SpaceConfig};
pub use tree::{MctTree, UctParams};
