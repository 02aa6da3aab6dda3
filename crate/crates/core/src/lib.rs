//! Simulator of twin-load asynchronous access over synchronous DDRx memory.
//!
//! The crate models the DDRx command protocol, the memory extending chip
//! (MEC) tree with its bank state table and load value cache, a processor
//! cache with MSHRs, the twin-load software sequences and a cost model.
//!
//! ```
//! use twinload::engine::{SimConfig, Simulator};
//! use twinload::frontend::{load_tl_ooo, Source};
//!
//! let mut sim = Simulator::new(SimConfig::default()).unwrap();
//! let p = sim.config().layout.extended.start;
//! let out = load_tl_ooo(&mut sim, p).unwrap();
//! assert_eq!(out.source, Source::SecondLoad);
//! ```

pub mod addrmap;
pub mod cache;
pub mod cli;
pub mod cost;
pub mod engine;
pub mod frontend;
pub mod line;
pub mod mec;
pub mod metrics;
pub mod timing;

use thiserror::Error;

/// Any error the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Sim(#[from] engine::SimError),
    #[error(transparent)]
    Config(#[from] engine::ConfigError),
    #[error(transparent)]
    Trace(#[from] engine::TraceError),
    #[error(transparent)]
    Cost(#[from] cost::CostError),
    #[error(transparent)]
    Address(#[from] addrmap::AddrError),
    #[error(transparent)]
    Timing(#[from] timing::TimingError),
}
