//! Core library for a tuberculosis chest X-ray screening pipeline.
//!
//! The pipeline runs in three stages: salient-feature extraction from
//! grayscale radiographs (block-mean maps, local binary patterns, and
//! template-matched region-of-interest crops), feature-based data
//! augmentation that pools the extracted images with the originals, and
//! supervised training of small convolutional classifiers with
//! cross-entropy loss and Adam.
//!
//! Modules:
//! - [`imaging`]: grayscale images, PGM I/O, resizing, cropping.
//! - [`features`]: integral images, block means, LBP maps, NCC template
//!   matching and ROI detection.
//! - [`dataset`]: sample records, augmentation-case assembly, manifest
//!   persistence, deterministic splits, synthetic data generation.
//! - [`nn`]: tensors and differentiable layers with gradient checking.
//! - [`models`]: the two concrete classifier architectures.
//! - [`training`]: Adam, the epoch loop, evaluation, curve export.

pub mod dataset;
pub mod features;
pub mod imaging;
pub mod models;
pub mod nn;
pub mod training;
