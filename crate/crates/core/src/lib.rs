pub mod error;
pub mod field;
pub mod grid;
pub mod ops;

pub use error::{Error, Result};
pub use field::{ComplexField, ComplexVectorField, Field, RealField, SpinorField, VectorField};
pub use grid::{Grid, PhysicalParams};
pub use ops::Backend;
pub mod madelung;
pub mod states;
pub mod spin;
pub mod evolve;
pub mod trajectories;
pub mod io;
pub mod verify;
