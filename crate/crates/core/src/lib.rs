pub mod cli;
pub mod data;
pub mod density;
pub mod model;
pub mod tensor;
pub mod train;
