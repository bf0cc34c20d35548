pub mod agents;
pub mod bench;
pub mod encoding;
pub mod error;
pub mod numerics;
pub mod orchestrator;
pub mod router;
pub mod trainer;

pub use error::{Error, Result, TransportError};
