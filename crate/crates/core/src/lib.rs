pub mod comparison;
pub mod data;
pub mod fit;
pub mod integration;
pub mod likelihood;
pub mod population;
pub mod sampler;
pub mod simulation;
pub mod special;
pub mod spline;
pub mod survival;
