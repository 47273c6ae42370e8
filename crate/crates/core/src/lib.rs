//! Co-design of network schedules and control inputs with model predictive
//! control whose terminal cost, terminal region and terminal controller vary
//! periodically in time.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod models;
pub mod mpc;
pub mod numerics;
pub mod polytope;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};

/// The guide in `book/`; its snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/token-bucket.md")]
    mod token_bucket {}
    #[doc = include_str!("../../../book/src/actuator.md")]
    mod actuator {}
    #[doc = include_str!("../../../book/src/polytopes.md")]
    mod polytopes {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/mpc.md")]
    mod mpc {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
}
