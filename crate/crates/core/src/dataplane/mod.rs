//! Simulated SDN data plane.

mod flows;
mod topology;

pub use flows::{
    Action, Dataplane, FlowError, FlowMatch, FlowRule, FlowTables, Header, Hop, PathInstallation, RedirectScope, Station,
    Walk, WalkOutcome, PRIORITY_DEFAULT, PRIORITY_PROACTIVE, PRIORITY_SESSION,
};
pub use topology::{
    Attachment, Direction, Dpid, Host, HostKind, HostSpec, Link, LinkEnd, LinkIdx, LinkSpec, PortPeer, Topology,
    TopologyConfig, TopologyError,
};
