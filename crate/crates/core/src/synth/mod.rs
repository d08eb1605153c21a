pub mod dataset;
pub mod generator;
pub mod tracking;
pub mod visibility;
