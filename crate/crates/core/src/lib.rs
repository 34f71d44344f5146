pub mod linalg;
pub mod model;
pub mod noise;
pub mod schemes;
pub mod problems;
pub mod stability;
pub mod experiments;
pub mod cli;
