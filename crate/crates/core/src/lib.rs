//! Functional simulator of an FPGA-equipped computational storage device
//! (CSD) and a small programming library on top of it.
//!
//! The device model ([`device`]) provides a flash namespace, device DRAM,
//! two data paths (peer-to-peer and host-mediated) and a deterministic
//! simulated clock driven by a calibrated timing model. The library surface
//! ([`api`]) wraps it with buffer management, flash I/O, profiled kernel
//! launches and I/O interception hooks. Three data-protection services are
//! built on that surface:
//!
//! * [`fault`]: rule-driven fault injection at the device I/O boundary.
//! * [`erasure`]: Reed-Solomon and locally repairable codes over GF(2^8).
//! * [`ransom`]: write-pattern monitoring plus intra-device pre-image
//!   retention and recovery.
//!
//! [`bench`] reproduces the matrix-multiplication benchmark protocol and
//! owns the trace and CSV formats used by the command line tool.

pub mod api;
pub mod bench;
pub mod device;
pub mod erasure;
pub mod error;
pub mod fault;
pub mod kernels;
pub mod ransom;
pub mod time;

pub use api::{CompletionEvent, Csd, DeviceBuffer, HostBuffer};
pub use error::{Error, Result};
pub use time::SimTime;
