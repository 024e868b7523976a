pub mod adam;
pub mod analysis;
pub mod baseline;
pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod extract;
pub mod inr;
pub mod io;
pub mod mask;
pub mod network;
pub mod retrain;
pub mod rng;
pub mod task;
pub mod tensor;
