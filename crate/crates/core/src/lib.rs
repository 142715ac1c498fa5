//! Decentralized gradient tracking driven by finite-time consensus sequences.
//!
//! A finite-time consensus (FTC) sequence is a short list of doubly
//! stochastic combination matrices `A_1, …, A_τ` whose product is the
//! averaging matrix `(1/K) 1 1ᵀ`. Applied cyclically inside Aug-DGM, one pass
//! through the sequence averages the network exactly. Approximate sequences
//! have a product that misses the average by `ε_τ` in spectral norm.
//!
//! Modules:
//!
//! - [`graphs`]: topologies, Metropolis weights, Laplacians.
//! - [`ftc`]: exact, truncated and perturbed sequences and their `ε_τ`.
//! - [`problems`]: distributed logistic regression, centralized solver and
//!   the constants used by the bounds.
//! - [`algorithm`]: the two equivalent recursions and the run loop.
//! - [`metrics`]: error measures, the performance bounds, traces.
//! - [`experiment`]: config-driven runs and sweeps.
//!
//! ```
//! use ftclab::prelude::*;
//!
//! let seq = hypercube_sequence(2).unwrap();
//! assert_eq!(seq.tau(), 2);
//! assert!(seq.eps_tau() < 1e-12);
//! ```

pub mod algorithm;
pub mod error;
pub mod experiment;
pub mod ftc;
pub mod graphs;
pub mod linalg;
pub mod metrics;
pub mod mtx;
pub mod problems;

pub use error::{Error, Result};

/// The common imports.
pub mod prelude {
    pub use crate::algorithm::{run, Init, Mode, NetworkState, RunConfig};
    pub use crate::error::{Error, Result};
    pub use crate::ftc::{
        epsilon_tau, hypercube_sequence, laplacian_factor_sequence, perturb_sequence,
        truncate_sequence, MatrixSeq,
    };
    pub use crate::graphs::{build_topology, Graph, Topology};
    pub use crate::linalg::Matrix;
    pub use crate::metrics::{stepsize_limits, thm1_bound, thm2_bound, Trace};
    pub use crate::problems::{
        estimate_constants, generate_logistic, solve_centralized, BoundParams, LogisticSpec,
        Problem, Vector,
    };
}

// Guide chapters, compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ftc-sequences.md")]
    mod ftc_sequences {}
    #[doc = include_str!("../../../book/src/approximate.md")]
    mod approximate {}
    #[doc = include_str!("../../../book/src/aug-dgm.md")]
    mod aug_dgm {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
