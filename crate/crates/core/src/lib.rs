pub mod closedgeo;
pub mod error;
pub mod hypgeo;
pub mod rng;
pub mod stats;
pub mod surface;
pub mod suspension;
pub mod symdyn;
pub mod tracer;
pub mod ustat;

pub use error::{Error, Result};
