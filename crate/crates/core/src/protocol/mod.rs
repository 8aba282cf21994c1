//! Data model shared by every party, the canonical parameter codec, and the
//! step/round synchronization check.

mod codec;
mod config;
mod sync;
mod value;

pub use codec::{decode_parameter, encode_parameter, to_canonical_bytes, EncodingError};
pub use config::{ConfigError, ProjectConfig, MIN_PARTICIPANTS};
pub use sync::{check_sync, ProjectStep, SyncCheck, SyncState};
pub use value::{CompensatorFlagMap, DataType, ParameterMap, ParameterValue};
