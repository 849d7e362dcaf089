pub mod closedform;
pub mod empirical;
pub mod error;
pub mod fit;
pub mod measures;
pub mod riccati;
pub mod simulate;

pub use error::{Error, Result};
