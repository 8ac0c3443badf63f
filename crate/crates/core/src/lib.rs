pub mod adversary;
pub mod error;
pub mod hard_instances;
pub mod harness;
pub mod linalg;
pub mod mdp;
pub mod model_class;
pub mod polo;
pub mod rng;
pub mod tables;

pub use error::{Error, Result};
