pub mod autodiff;
pub mod checkpoint;
pub mod crosscell;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod training;
pub mod visualization;
