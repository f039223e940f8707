//! Reconfigurable Petri nets and a deterministic change-management simulator
//! for service orchestrations.
//!
//! Service-level handling changes are detected by polling simulated member
//! services, recorded in per-service change nets, mapped to business-level
//! adaptive changes and enacted by rewriting the running orchestration net.

pub mod analysis;
pub mod change;
pub mod detection;
pub mod fuzz;
pub mod hierarchy;
pub mod net;
pub mod reaction;
pub mod reconfig;
pub mod scenario;
pub mod simenv;

pub use net::{
    build_net, enabled, fire, fire_sequence, incidence_matrix, state_equation, IncidenceMatrix,
    Marking, Net, NetBuilder, NetError, PlaceId, StructuralError, TokenLabel, TransitionId,
};
