//! Latency, bandwidth and congestion injection.
//!
//! [`wrap_connection`] shapes real sockets in wall-clock time;
//! [`oracle_simulate`] computes the same deliveries in virtual time, and
//! [`SimNetwork`] runs whole fetch sessions over simulated links.

mod oracle;
mod profile;
mod shaped;
mod shaper;
mod sim;

pub use oracle::{oracle_simulate, DeliveryEvent, ScheduledSend};
pub use profile::{NetProfile, ProfileError, BURST_BYTES, PRESET_BANDWIDTH};
pub use shaped::{wrap_connection, ShapedConnection, ShapedReader, ShapedWriter};
pub use shaper::LinkShaper;
pub use sim::{SimConfig, SimDelivery, SimNetwork, SimSession};
