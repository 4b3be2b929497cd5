//! In-process isolation domains with rewind-on-fault.
//!
//! A function runs inside a domain: its own stack, its own heap and its own
//! protection key. If it corrupts memory outside what the domain may touch,
//! the domain is thrown away and the caller gets an error instead of a
//! crashed process.
//!
//! ```no_run
//! use domain_cell::sandbox;
//!
//! #[global_allocator]
//! static ALLOC: domain_cell::DomainAllocator = domain_cell::DomainAllocator;
//!
//! #[sandbox]
//! fn checksum(data: &[u8]) -> u64 {
//!     data.iter().map(|&b| b as u64).sum()
//! }
//!
//! assert_eq!(checksum(&[1, 2, 3]), 6);
//! ```

extern crate self as domain_cell;

pub mod backend;
pub mod bench;
pub mod channel;
pub mod facade;
pub mod fixtures;
pub mod heap;
pub mod manager;
mod subprocess;
pub mod sys;
pub mod trap;

pub use domain_cell_core::{domain, layout, portable, region, rights, rle, tlsf, transfer};
pub use domain_cell_macros::{sandbox, Encodable};

pub use backend::{BackendKind, ProtectionBackend};
pub use domain_cell_core::domain::{DomainConfig, FaultInfo, FaultKind, Sdi, Udi};
pub use facade::{Executor, Mut, SandboxSpec, Serializer, WrappedFunction};
pub use heap::DomainAllocator;
pub use manager::{DomainError, DomainManager, RunError};

#[cfg(test)]
#[global_allocator]
static TEST_ALLOC: DomainAllocator = DomainAllocator;
