//! Lifelong multi-agent path finding in warehouses with cache grids.
//!
//! Agents fetch items from shelves and deliver them to ports. Cache grids next
//! to each port hold recently used item kinds behind non-blocking
//! readers-writer locks, so repeated requests can skip the trip to the shelf.
//!
//! The main entry points are [`sim::run`] for a single simulation and the
//! [`bench`] module for sweeps and the command line.

pub mod artifacts;
pub mod assigner;
pub mod bench;
pub mod cache;
pub mod cli;
pub mod grid;
pub mod ids;
pub mod planner;
pub mod sim;
pub mod taskgen;

pub use assigner::{AgentState, AgentStatus, TaskAssigner};
pub use cache::{CacheGroup, CacheSlot, EvictionPolicy, LockKind};
pub use grid::{Coord, GridMap};
pub use ids::{AgentId, CacheId, ItemKind, PortId};
pub use planner::{PlannerKind, StepPlanner};
pub use sim::{run, validate_trace, GroupConfig, SimConfig, SimMetrics};
pub use taskgen::{DistributionKind, DistributionSpec, Task, TaskStream};
