//! Single-process simulation of the masked aggregation protocol.
//!
//! A [`scenario`] wires a coordination server, a compensator and `K`
//! clients together over an in-memory or loopback HTTP network and
//! records every message. [`oracle`] recomputes what the server should
//! have learned and [`privacy`] checks who saw what.

pub mod batch;
pub mod oracle;
pub mod privacy;
pub mod scenario;
pub mod trace;

pub use batch::run_batch;
pub use privacy::{assert_privacy, Clause, PrivacyContext, Violation};
pub use scenario::{run_simulation, simulate, Faults, RawLocal, SimConfig, SimError, SimulationReport, TransportMode};
pub use trace::{EventKind, Recorder, TraceEvent, TracedTransport};
