//! Deep Gaussian Markov random fields on regular lattices.
//!
//! A latent field `x` on an `H x W x C` grid gets the prior `g(x) ~ N(0, I)`,
//! where `g` stacks convolutional layers with closed-form log-determinants.
//! Observations add Gaussian noise on a subset of pixels. The crate provides:
//!
//! - [`grid`]: tensors, masks, datasets and frame padding;
//! - [`conv`]: same-size convolution, its adjoint and dense assembly;
//! - [`model`]: plus and seq layers, Matern models, log-determinants;
//! - [`grad`]: the ELBO and its gradient by a hand-written reverse pass;
//! - [`vi`]: variational parameters, Adam and the training loop;
//! - [`posterior`]: CG posterior mean, perturbation sampling and variances;
//! - [`metrics`]: MAE, RMSE, CRPS, interval score and coverage;
//! - [`data_io`]: grid files, toy data, CSV conversion and checkpoints;
//! - [`cli`]: the `dgmrf` command-line interface.
//!
//! ```
//! use dgmrf::grid::{Dataset, GridTensor, Mask};
//! use dgmrf::model::matern_layers;
//! use dgmrf::posterior::{summarize, InferConfig};
//! use dgmrf::vi::VariationalParams;
//!
//! let y = GridTensor::from_vec(3, 3, 1, vec![1.0; 9]).unwrap();
//! let mut mask = Mask::full(3, 3);
//! mask.set(1, 1, false);
//! let data = Dataset::new(y, mask).unwrap();
//! let model = matern_layers(0.5, 1.0, 1, 1, 0.1).unwrap();
//! let q = VariationalParams::from_data(&data);
//! let post = summarize(&model, &q, &data, &InferConfig::default()).unwrap();
//! assert!(post.mean.get(1, 1, 0) > 0.0);
//! ```

// `!(a > b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cg;
pub mod cli;
pub mod conv;
pub mod data_io;
pub mod error;
pub mod grad;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod posterior;
pub mod vi;

pub use error::{DgmrfError, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/layers.md")]
    mod layers {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/posterior.md")]
    mod posterior {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
