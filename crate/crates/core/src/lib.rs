//! Risk-sensitive downlink slicing of URLLC traffic onto ongoing eMBB transmissions.
//!
//! eMBB users receive RBs by a proportional-fair rule at each slot boundary;
//! arriving URLLC traffic punctures those RBs according to per-user weights
//! chosen to trade the log utility of eMBB rates against a CVaR penalty,
//! subject to a Markov-relaxed URLLC reliability constraint. The two
//! subproblems are alternated until convergence and evaluated by a Monte Carlo
//! slot simulator against two baselines.

pub mod alternating;
pub mod cli;
pub mod embb_scheduler;
pub mod model;
pub mod risk;
pub mod simulator;
pub mod urllc_placement;

pub use alternating::{AlternationOptions, AlternationResult, AlternationTrace};
pub use model::{ChannelRealization, PunctureWeights, SchedulingMatrix, SlotOutcome, SystemConfig, UrllcLoad};
pub use simulator::{PolicyId, RunMetrics, SweepParam};
pub use urllc_placement::{PlacementError, PlacementSolution};
