//! Portrait relighting from one-light-at-a-time captures and latent-space
//! appearance editing.
//!
//! The pipeline: environment maps are binned onto a discrete light basis
//! ([`envmap`]), OLAT stacks are combined with those weights ([`olat`]), and a
//! per-block residual MLP moves a source latent code towards the code of the
//! target lighting and viewpoint ([`latent_edit`]), trained with a latent plus
//! perceptual loss ([`training`]) and scored with Si-MSE and SSIM ([`metrics`]).

pub mod cli;
pub mod envmap;
pub mod error;
pub mod latent_edit;
pub mod metrics;
pub mod olat;
pub mod radiometry_io;
pub mod service;
pub mod training;

pub use error::{Error, Result};
