//! Score-based pullback Riemannian geometry.
//!
//! Densities of the form `p(x) ∝ exp(-ψ(φ(x)))` with a strongly convex `ψ` and
//! a diffeomorphism `φ` induce a pullback metric with closed-form geodesics,
//! logarithmic and exponential maps, distances and barycentres. This crate
//! learns such densities with an anisotropic, isometry-regularised affine
//! coupling flow and exposes the resulting geometry together with a Riemannian
//! autoencoder, the synthetic data generators and the evaluation metrics.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. All transcendental functions go through [`libm`] so results are
//! bitwise identical with and without `std`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod convex;
pub mod datagen;
pub mod diff;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub(crate) mod math;
pub mod rae;
pub mod tensor;
pub mod training;

pub use convex::{ConvexPotential, DiagonalQuadratic};
pub use error::{Error, Result};
pub use flow::{Flow, FlowConfig};
pub use geometry::{Diffeomorphism, GroundTruthDiffeo, PullbackManifold};
pub use tensor::Tensor;
pub use training::{Model, TrainConfig, Variant};
