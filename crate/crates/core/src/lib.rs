pub mod cli;
pub mod error;
pub mod oracle;
pub mod qudit;
pub mod security;
pub mod statistics;

pub use error::{Error, Result};
