pub mod diffcore;
pub mod field;
pub mod photomodel;
pub mod dataset;
pub mod simulator;
pub mod trainer;
pub mod extract;
pub mod cli;
