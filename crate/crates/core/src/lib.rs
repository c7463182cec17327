#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! UAV-assisted communication simulator: service placement and power
//! allocation learned by a dueling double Q-network, collision avoidance by
//! depth-limited Monte Carlo tree search, and auditable decision traces.

pub mod channel;
pub mod d3qn;
pub mod error;
pub mod harness;
pub mod mcts;
pub mod rng;
pub mod trace;
pub mod world;

pub use error::{Error, Result};
pub use rng::SimRng;
pub use world::{
    AvoidAction, IntruderState, KinematicLimits, MapBounds, OwnshipState, ServiceMove, TerminalKind, UavPose,
    UserState,
};
