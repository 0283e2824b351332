//! Tail-aware age-of-information control for wireless sensor networks with
//! short-packet links.

pub mod aoi_tracker;
pub mod cli_experiments;
pub mod evt_tail;
pub mod lyapunov_queues;
pub mod par;
pub mod phy_channel;
pub mod sim_engine;
pub mod transmission_optimizer;
