pub mod coordinates;
pub mod harness;
pub mod ids;
pub mod latency;
pub mod placement;
pub mod simnet;
pub mod stamp;
pub mod topology;
