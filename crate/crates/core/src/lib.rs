//! Synthetic multi-body physics videos, a visual interaction network with its
//! baselines, and long-horizon rollout evaluation.

pub mod dataset;
pub mod eval;
pub mod models;
pub mod numeric;
pub mod physics;
pub mod render;
pub mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/numeric.md")]
    mod numeric {}
    #[doc = include_str!("../../../book/src/physics.md")]
    mod physics {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
