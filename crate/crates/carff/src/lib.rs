//! Probabilistic 3D scene forecasting on procedural toy scenes.
//!
//! The pipeline has three trained stages over datasets produced by [`scenegen`]:
//!
//! 1. [`pcvae`] — a pose-conditional VAE mapping ego-centric images to Gaussian
//!    scene latents (encoder is pose-agnostic, decoder is pose-conditioned).
//! 2. [`nerf`] — a latent-conditioned radiance field trained over the frozen
//!    encoder's posterior, rendering any belief from any camera.
//! 3. [`forecast`] — a mixture density network evolving beliefs through time,
//!    with density-probing localization for auto-regressive rollouts.
//!
//! [`planner`] builds a sampling controller on top, and [`evalkit`] holds the
//! metrics (PSNR tables, SVM latent separability, reconstruction grids).

pub mod ckpt;
pub mod error;
pub mod evalkit;
pub mod forecast;
pub mod geom;
pub mod img;
pub mod nerf;
pub mod nn;
pub mod pcvae;
pub mod planner;
pub mod scenegen;

pub use error::{Error, Result};
