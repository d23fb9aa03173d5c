//! Auto-labeling of raw motion-capture point clouds.

pub mod autodiff;
pub mod body;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod io;
pub mod labeler;
pub mod metrics;
pub mod mocap;
pub mod net;
pub mod noise;
pub mod ot;
pub mod train;

pub use error::{Result, SomaError};
