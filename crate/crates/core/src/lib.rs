pub mod acre;
pub mod acronym;
pub mod agent;
pub mod bayes;
pub mod em;
pub mod engine;
pub mod error;
pub mod interaction;
pub mod runner;
pub mod signal;
pub mod space;

pub use error::{Error, Result};
