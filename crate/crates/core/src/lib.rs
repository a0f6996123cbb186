//! Link-level OFDM simulation and error vector magnitude measurement.
//!
//! The crate covers the whole chain from management-frame construction
//! through an 802.11a-style PHY, a baseband impairment channel, and a
//! vector-signal-analyzer style receiver, to an EVM-driven vertical
//! handover trigger engine.

pub mod channel;
pub mod constellation;
pub mod error;
pub mod mac_frames;
pub mod numerics;
pub mod ofdm_phy;
pub mod vho_engine;
pub mod vsa;

pub use error::{Error, Result};
