//! Privacy ledgers, generalization bounds, and empirical leakage audits for
//! SGLD training.
//!
//! The crate is organized around three pillars:
//!
//! * an analytic accounting path ([`accountant`], [`bounds`]) that tracks
//!   per-step Renyi divergence of noisy training and converts the composed
//!   total into generalization bounds via a stability route and a
//!   mutual-information route;
//! * an independent numerical oracle ([`oracle`]) that re-derives every
//!   divergence claim by quadrature over explicit Gaussian mixtures;
//! * an empirical pipeline ([`data`], [`nn`], [`optimizer`], [`attacks`])
//!   that trains small models with SGD/SGLD and audits membership leakage.

pub mod accountant;
pub mod attacks;
pub mod bounds;
pub mod data;
pub mod error;
pub mod nn;
pub mod numerics;
pub mod optimizer;
pub mod oracle;
pub mod runner;

pub use error::{Error, Result};
