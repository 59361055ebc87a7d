//! TV white space middle-mile toolkit.
//!
//! * [`spectrum`]: distances, path loss, link budgets and PHY throughput.
//! * [`towers`]: primary TV transmitter registry with a spatial index.
//! * [`availability`]: per-location channel availability under the
//!   co-channel protection rule, plus grid statistics.
//! * [`paws`]: geolocation database service (device lifecycle, schedules,
//!   use notifications) over a durable record log.
//! * [`coexist`]: conflict-graph channel allocation among secondary links.
//! * [`mesh`]: PoP-rooted backhaul planner and report emitters.

pub mod availability;
pub mod coexist;
pub mod digest;
pub mod mesh;
pub mod paws;
pub mod spectrum;
pub mod towers;
