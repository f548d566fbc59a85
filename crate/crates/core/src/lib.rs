pub mod bench;
pub mod cli;
pub mod error;
pub mod eval;
pub mod feasibility;
pub mod formats;
pub mod gradcheck;
pub mod losses;
pub mod memory;
pub mod numeric;
pub mod pifr;
pub mod pipeline;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
