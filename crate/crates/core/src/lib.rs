pub mod bench;
pub mod cell;
pub mod complex;
pub mod dense;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod optim;
pub mod rng;
pub mod rotation;
pub mod tasks;
pub mod unitary;
pub mod verify;

pub use complex::{ComplexVec, PermutationPlan};
pub use error::{EunnError, Result};
pub use rng::Rng;
