//! Flit-level simulator of chiplets on an active interposer whose network
//! interfaces validate and rewrite cache-coherence traffic.

pub mod apu;
pub mod codec;
pub mod coherence;
pub mod noc;
pub mod sni;
pub mod harness;
