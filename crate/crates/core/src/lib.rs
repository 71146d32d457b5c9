//! Numeric core for dynamic-topology graph convolution on skeleton sequences.
//!
//! `no_std` with `alloc`: the tensor engine with reverse-mode autodiff, skeleton
//! graphs and their normalized adjacencies, topology learners, the Dynamic
//! GConv network, analytical FLOPs accounting, and the pure parts of the data
//! pipeline. File formats and the command line live in the `dyngcn` crate.
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod data;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod learners;
pub mod model;
pub mod nn;
mod kernels;
pub mod optim;
pub mod param;
pub mod real;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use param::{Ctx, ParamId, ParamStore, Parameter, StatsId};
pub use real::Real;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
