pub mod bench;
pub mod cli;
pub mod error;
pub mod groups;
pub mod io;
pub mod losses;
pub mod penalty;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
