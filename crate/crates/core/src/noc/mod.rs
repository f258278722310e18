pub mod clock;
pub mod crossbar;
pub mod fabric;
pub mod router;
pub mod topology;
