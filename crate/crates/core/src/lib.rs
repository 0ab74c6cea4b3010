//! Control as inference on small, fully known environments.

pub mod amortised;
pub mod bound;
pub mod dist;
pub mod env;
pub mod error;
pub mod harness;
pub mod hybrid;
pub mod numeric;
pub mod planners;
pub mod rng;
pub mod soft_dp;

pub use error::{CaiError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/soft-dp.md")]
    mod soft_dp {}
    #[doc = include_str!("../../../book/src/bound.md")]
    mod bound {}
    #[doc = include_str!("../../../book/src/amortised.md")]
    mod amortised {}
    #[doc = include_str!("../../../book/src/planners.md")]
    mod planners {}
    #[doc = include_str!("../../../book/src/hybrid.md")]
    mod hybrid {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
