pub mod camera;
pub mod detection;
pub mod solver;
pub mod template;
