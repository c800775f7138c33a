pub mod bench;
pub mod error;
pub mod experts;
pub mod oracle;
pub mod ot;
pub mod planner;
pub mod rmp;
pub mod world;

pub use error::{Error, Result};
