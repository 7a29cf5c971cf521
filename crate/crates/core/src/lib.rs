//! Cluster-based label differential privacy: central and peer-to-peer
//! mechanisms, their accountants, a debiased learner and a sweep harness.
//!
//! See the guide under `book/` for a walk-through.

// `!(x >= lo)` is deliberate throughout: it rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod central;
pub mod clustering;
pub mod data;
pub mod dist;
pub mod error;
pub mod harness;
pub mod lap;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod p2p;
pub mod receipt;
pub mod rng;
pub mod sampling;
pub mod synthetic;

// Keeps the guide's snippets compiling and passing.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/data-and-randomness.md")]
    mod data_and_randomness {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/central-mechanism.md")]
    mod central_mechanism {}
    #[doc = include_str!("../../../book/src/peer-to-peer.md")]
    mod peer_to_peer {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/lap.md")]
    mod lap {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
