//! Edge-cloud partitioning of transformer inference: workload and cost
//! models, a stochastic network, queue-aware controllers, a learned
//! hierarchical policy and the slot-level simulator that ties them together.

pub mod cost;
pub mod learn;
pub mod lyapunov;
pub mod network;
pub mod partition;
pub mod policy;
pub mod sim;
pub mod workload;
