pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod clipio;
pub mod error;
pub mod mopa;
pub mod numcore;
pub mod params;
pub mod physchema;
pub mod physmodule;
pub mod synthphys;
pub mod trainer;

pub use error::{Error, Result};
