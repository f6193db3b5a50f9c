pub mod error;
pub mod gme;
pub mod linalg;
pub mod measures;
pub mod optim;
pub mod optomech;
pub mod protocols;
pub mod solvers;
pub mod trajectories;

pub use error::{Error, Result};
