//! Multi-view transformation networks: differentiable point-cloud rendering
//! from learnable camera view-points, trained jointly with a multi-view
//! classifier.

pub mod cloud;
pub mod dataio;
pub mod diffmath;
pub mod error;
pub mod geomcam;
pub mod mvrender;
pub mod netblocks;
pub mod regressor;
pub mod retrieval;
pub mod robustness;
pub mod seed;
pub mod selfcheck;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/cameras.md")]
    mod cameras {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/robustness.md")]
    mod robustness {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
