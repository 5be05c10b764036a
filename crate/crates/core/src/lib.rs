//! Numerical laboratory for the stability of deep graph convolutional networks.
//!
//! The crate implements a single-output GCN `sigma(g X^(K) w)` with `K` hidden
//! layers `X^(k) = sigma(g X^(k-1) W^(k))`, exact hand-written backpropagation,
//! single-sample SGD and its coupled twin-run variant, and closed-form
//! evaluation of the uniform-stability and generalization bounds for this
//! model together with audits that check them on concrete runs.

pub mod error;
pub mod backprop;
pub mod bounds;
pub mod datasets;
pub mod experiments;
pub mod graph;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
