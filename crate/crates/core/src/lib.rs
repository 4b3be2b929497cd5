//! Platform-independent pieces of the domain-cell isolation runtime.
//!
//! Everything here is `no_std` (with `alloc`) and free of system calls: the
//! rights-word encoding and key bookkeeping, the two-level segregated-fit
//! allocator that manages a domain heap, the memory-layout serializer used to
//! move arguments across the domain boundary, the reference element-wise
//! encoder it is benchmarked against, and the transfer-slot layout.
//!
//! The `domain-cell` crate builds the actual runtime (signal handling, stack
//! switching, protection backends, the sandbox facade) on top of this crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod domain;
pub mod layout;
pub mod portable;
pub mod region;
pub mod rights;
pub mod rle;
pub mod tlsf;
pub mod transfer;
