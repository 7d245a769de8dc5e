//! Panel estimation toolkit for regional Phillips curves: panel storage,
//! variable construction, fixed-effects 2SLS with panel-robust inference,
//! the structural slope mapping and a synthetic data generator.

pub mod dgp;
pub mod error;
pub mod fe;
pub mod forge;
pub mod inference;
pub mod linalg;
pub mod models;
pub mod panel;
pub mod structural;

pub use error::{Error, Result};
