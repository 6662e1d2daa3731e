//! Core numerics for stitched-image quality scoring.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (an allocator is required). File formats, the CLI
//! and the rating service live in the `sifid` companion crate.
//!
//! The pipeline, end to end:
//!
//! 1. [`augment`] distorts training images with one of fourteen catalog noises.
//! 2. [`trainer`] fine-tunes the [`encoder`] on (image, noised image) pairs with a
//!    cosine loss and momentum SGD, keeping one snapshot per epoch.
//! 3. [`fid`] scores stitched images as the Fréchet distance between Gaussian fits
//!    of encoder features.
//! 4. [`correlation`] turns per-epoch scores into PCC/SROCC curves against
//!    [`subjective`] scores, classifies noises and selects the best checkpoint.
//!
//! [`baselines`] carries the classic comparison metrics and [`synthgen`] the
//! synthetic stitching-defect generator used as a test oracle.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod augment;
pub mod baselines;
pub mod correlation;
pub mod encoder;
pub mod fid;
pub mod image;
pub mod linalg;
pub mod math;
pub mod rng;
pub mod subjective;
pub mod synthgen;
pub mod trainer;

pub use augment::NoiseSpec;
pub use encoder::{Encoder, EncoderConfig, FeatureSet};
pub use fid::GaussianStats;
pub use image::Image;
pub use rng::Rng;
