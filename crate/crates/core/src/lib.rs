//! Trace-driven simulator of a hybrid DRAM + NVM main memory whose NVM
//! controller can destroy invalidated cache data by overwriting it in place.
//!
//! The crate is layered bottom-up:
//!
//! - [`cell`]: multi-level cell levels, their bit encoding, and generation
//!   of upward-only random or fixed overwrite data.
//! - [`device`]: the NVM array, cache table, program/erase/GC and latency
//!   charging.
//! - [`controller`]: the NVM controller that runs a deletion policy on each
//!   invalidation request, plus the secure-mode timed scrub.
//! - [`host`]: the CPU/DRAM front end and trace grammar.
//! - [`metrics`]: latency ledger, remanence statistics and reports.
//! - [`config`], [`run`], [`synthetic`]: configuration, the per-policy run
//!   driver and a synthetic workload generator used by the `ddnsim` binary.

pub mod cell;
pub mod config;
pub mod controller;
pub mod device;
pub mod host;
pub mod metrics;
pub mod run;
pub mod synthetic;

pub use cell::{BitsPerCell, CellLevel, DataWord, FillKind};
pub use config::{OutputFormat, RunConfig};
pub use controller::{BasePolicy, DeletionOutcome, DeletionPolicy, InvalidationRequest, NvmController};
pub use device::{CacheId, DeviceKind, Geometry, LatencyParams, NvmDevice, PhysAddr, Tick};
pub use host::{parse_trace, Host, TraceEvent, TraceLine};
pub use metrics::{Charges, ComparisonTable, LatencyLedger};
pub use run::{run, RunError, RunReport, Simulation};
