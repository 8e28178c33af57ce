//! Deterministic protocol runs driven by scenario files, their traces, and
//! the checks applied to them.

mod agents;
pub mod monitors;
pub mod oracle;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use scenario::Scenario;
pub use sim::{run, Outcome, RequestInfo, Run};
pub use trace::{Event, Trace};
