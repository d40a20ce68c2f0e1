//! Unpaired raw-to-raw camera image translation.
//!
//! The crate implements the full pipeline end to end on the CPU:
//!
//! - [`tensor`] / [`tape`]: a small reverse-mode autodiff engine over dense
//!   float tensors, generic over `f32`/`f64`, with gradient checking.
//! - [`imgio`]: the `.rawimg` container, raw normalization, patch extraction
//!   and PNG export.
//! - [`synthcam`]: synthetic camera pairs with a closed-form inter-camera
//!   mapping, dataset generation and an analytic ISP proxy.
//! - [`nn`]: the network building blocks (condensed query attention,
//!   scale-perceptive feed-forward, composite samplers, style modulation,
//!   ViT bottleneck, linking layer).
//! - [`generator`] / [`discriminator`]: the translation generator (plus a
//!   baseline UNet) and the cache-backed discriminator (plus PatchGAN).
//! - [`losses`]: SSIM, pixel-wise composite, adversarial and cycle losses.
//! - [`train`]: masked-inpainting pretraining, adversarial fine-tuning,
//!   optimizers, LR schedule, checkpoints, batch translation.
//! - [`metrics`]: PSNR / MAE / CIEDE2000 and paired-set evaluation.
//! - [`config`]: the `key = value` run configuration schema shared by the CLI.

pub mod config;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod imgio;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod synthcam;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
