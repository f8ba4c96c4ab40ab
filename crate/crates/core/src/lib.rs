//! Trace-driven simulator for a hybrid DRAM/NVM memory system that keeps NVM
//! mapped with 2 MB superpages and uses DRAM as a cache of hot 4 KB pages.
//!
//! The pieces map onto the hardware/OS components being modelled:
//!
//! * [`types`]: address arithmetic and trace records
//! * [`config`]: system configuration and cycle conversion
//! * [`tlb`]: split 4 KB / 2 MB TLBs with page-walk and shootdown costs
//! * [`monitor`]: two-stage hot page identification
//! * [`migmap`]: migration bitmaps and the bitmap cache
//! * [`dramcache`]: DRAM frame lists and the migration cost model
//! * [`engine`]: the per-reference pipeline and metric accumulation
//! * [`policy`]: the compared management policies
//! * [`workload`]: synthetic trace generators and the binary trace format
//! * [`experiment`]: the multi-cell runner used by the `rainbow` binary

pub mod config;
pub mod dramcache;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod migmap;
pub mod monitor;
pub mod policy;
pub mod tlb;
pub mod types;
pub mod workload;

pub use config::{ns_to_cycles, Rational, SimConfig, Timing};
pub use engine::{Engine, SimReport};
pub use error::{Error, Result};
pub use policy::{PolicyKind, PolicySpec};
pub use types::{
    split_address, AddressParts, Device, Op, PageSize, PhysicalLocation, TraceRecord,
    VirtualAddress,
};
