pub mod cli;
pub mod data;
pub mod dsp;
pub mod harness;
pub mod model;
pub mod nn;
pub mod tensor;
