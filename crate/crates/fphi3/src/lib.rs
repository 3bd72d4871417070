pub mod asymptotics;
pub use fphi3_core;
