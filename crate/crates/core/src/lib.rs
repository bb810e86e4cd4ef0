//! Simulation core for closed-loop sensing feedback in bistatic ISAC
//! systems: geometry, channel and OFDM models, the delay-Doppler detector,
//! feedback protocols, threshold optimization and the scenario harness.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod detector;
pub mod feedback;
pub mod harness;
pub mod metrics;
pub mod optimizer;
pub mod phy;
pub mod scene;
