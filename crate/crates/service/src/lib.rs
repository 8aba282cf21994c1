//! Networked parties of the masked aggregation protocol: the coordination
//! server, the noise compensator and the participant client.
//!
//! Party logic is synchronous and transport-agnostic. Each service exposes a
//! [`transport::Handler`]; [`http`] puts one behind a socket, and the
//! simulator wires handlers together in memory.

pub mod api;
pub mod client;
pub mod clock;
pub mod compensator;
pub mod http;
pub mod server;
pub mod transport;

pub use api::{ErrorBody, NoiseEnvelope};
pub use clock::{Clock, ManualClock, SystemClock};
pub use transport::{Handler, HttpTransport, LocalNetwork, Method, Request, Response, Transport, TransportError};
