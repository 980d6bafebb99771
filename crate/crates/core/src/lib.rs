pub mod bridge;
pub mod engine;
pub mod error;
pub mod eval;
pub mod math;
pub mod modulation;
pub mod synthetic;
pub mod vocab;
