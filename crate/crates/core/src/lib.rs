//! Pull-architecture grid brokering core.
//!
//! Tasks (jobs and file transfers) and resources (computing elements and
//! file transfer daemons) both describe themselves with small
//! attribute/expression descriptors. Resources pull work: they present
//! their descriptor to a broker, which walks the priority-ordered list of
//! waiting tasks and hands over the first one that matches symmetrically.
//! Everything central is split per task kind into a manager (the task
//! store), a broker, and an optimizer that rewrites waiting tasks so more
//! resources can run them.
//!
//! The `sim` module drives the whole stack inside a deterministic
//! discrete-event simulation; `audit` replays the resulting trace and
//! checks the scheduling invariants the design promises.

pub mod audit;
pub mod broker;
pub mod catalogue;
pub mod descriptor;
pub mod jobs;
pub mod optimizer;
pub mod registry;
pub mod sim;
pub mod store;
pub mod trace;
pub mod transfers;

/// Simulated (and service-relative) time, integer milliseconds.
pub type Millis = u64;
