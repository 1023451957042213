pub mod cli;
pub mod cost;
pub mod error;
pub mod graph;
pub mod model;
pub mod sparsify;
pub mod tensor;
pub mod train;
