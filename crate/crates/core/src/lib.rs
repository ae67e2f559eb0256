pub mod cli;
pub mod covering;
pub mod dynamics;
pub mod error;
pub mod hunt;
pub mod io;
pub mod operator;
pub mod puzzle;
pub mod series;
pub mod spectrum;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
