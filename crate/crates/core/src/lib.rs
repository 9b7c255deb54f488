pub mod bench;
pub mod cli;
pub mod conduit;
pub mod config;
pub mod distribution;
pub mod engine;
pub mod ext_f64;
pub mod log_density;
pub mod problem;
pub mod rng;
pub mod solver;
pub mod variable;
