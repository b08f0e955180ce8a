//! Simulator of a secure NVM memory controller: counter-mode encryption,
//! an SGX-style integrity tree with several root-update schemes (including
//! the shortcut scheme that bumps only the root on the write path), a
//! tagged ADR write queue, crash injection, tampering and counter-summing
//! recovery.
//!
//! ```
//! use scue::{Address, Config, Controller, DataBlock, UpdateScheme};
//!
//! let mut ctl = Controller::new(Config::default().with_scheme(UpdateScheme::Scue)).unwrap();
//! ctl.write(Address::new(0x1000), &DataBlock([7; 64])).unwrap();
//! let (data, _cycles) = ctl.read(Address::new(0x1000)).unwrap();
//! assert_eq!(data, DataBlock([7; 64]));
//! ```

pub mod cache;
pub mod config;
pub mod controller;
pub mod crypto;
pub mod error;
pub mod failure;
pub mod ledger;
pub mod metadata;
pub mod nvm;
pub mod report;
pub mod tree;
pub mod workloads;

pub use config::{Config, UpdateScheme};
pub use controller::Controller;
pub use error::{Error, Result};
pub use ledger::{CycleLedger, OpKind};
pub use metadata::{Address, CounterBlock, DataBlock, NodeId, RootRegister, TreeGeometry};
pub use nvm::NvmImage;
pub use workloads::{gen_trace, parse_trace, Trace, TraceOp, WorkloadKind};
