//! In-network HTTP caching steered by an SDN controller, with DASH/SVC-aware
//! prefetching, and a deterministic discrete-event simulator to evaluate it.

pub mod cache;
pub mod control;
pub mod dash;
pub mod dataplane;
pub mod net;
pub mod prefetch;
pub mod proxy;
pub mod registry;
pub mod service;
pub mod sim;
