//! Schedule-conditioned discrete diffusion.
//!
//! Forward processes are continuous-time Markov chains on a finite vocabulary,
//! factorised over dimensions. Each chain is written as an event process: events
//! arrive at rate `r` and every event applies the jump kernel `K`. Training and
//! sampling condition on the number of events each dimension has seen.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod ctmc;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod poisson;
pub mod processes;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tolerances;
pub mod toy_data;
pub mod verify;

pub use ctmc::{EventProcess, GeneratorMatrix, KernelRepresentation, SparseRankOne, Trajectory};
pub use error::{Result, ScudError};
pub use schedule::{fit_schedule, RateSchedule};
