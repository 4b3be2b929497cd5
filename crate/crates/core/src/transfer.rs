//! Transfer metadata and the reserved slot it is published in.
//!
//! The top [`SLOT_SIZE`] bytes of every domain stack hold the description of
//! the vector currently carrying frames across the boundary:
//!
//! ```text
//! slot + 0    base      (native-endian usize, 8 bytes)
//! slot + 8    length
//! slot + 16   capacity
//! ```
//!
//! Domain execution starts below the slot so nothing the callee pushes can
//! overwrite it.

use core::fmt;

use crate::region::MemoryRegion;

/// Bytes reserved at the top of every domain stack.
pub const SLOT_SIZE: usize = 128;

/// Bytes of the slot actually used by metadata.
pub const SLOT_USED: usize = 24;

/// Where a frame vector lives.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TransferMetadata {
    pub base: usize,
    pub length: usize,
    pub capacity: usize,
}

impl fmt::Debug for TransferMetadata {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TransferMetadata {{ base: {:#x}, length: {}, capacity: {} }}", self.base, self.length, self.capacity)
    }
}

impl TransferMetadata {
    pub fn to_slot_bytes(&self) -> [u8; SLOT_USED] {
        let mut out = [0u8; SLOT_USED];
        out[0..8].copy_from_slice(&(self.base as u64).to_ne_bytes());
        out[8..16].copy_from_slice(&(self.length as u64).to_ne_bytes());
        out[16..24].copy_from_slice(&(self.capacity as u64).to_ne_bytes());
        out
    }

    pub fn from_slot_bytes(bytes: &[u8; SLOT_USED]) -> Self {
        let field = |i: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[i..i + 8]);
            u64::from_ne_bytes(b) as usize
        };
        Self { base: field(0), length: field(8), capacity: field(16) }
    }

    /// Checks the triple describes storage inside `heap`.
    pub fn validate(&self, heap: &MemoryRegion) -> Result<(), TransferError> {
        if self.length > self.capacity {
            return Err(TransferError::Malformed("length exceeds capacity"));
        }
        if !heap.contains_range(self.base, self.capacity) {
            return Err(TransferError::Malformed("vector lies outside the domain heap"));
        }
        Ok(())
    }
}

/// The slot inside a stack region.
pub fn slot_region(stack: &MemoryRegion) -> MemoryRegion {
    MemoryRegion::new(stack.end() - SLOT_SIZE, SLOT_SIZE).expect("slot inside stack")
}

/// Stack base a fresh domain starts with: just below the slot.
pub fn initial_stack_base(stack: &MemoryRegion) -> usize {
    stack.end() - SLOT_SIZE
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferError {
    Malformed(&'static str),
    OutOfMemory {
        requested: usize,
    },
    /// No domain is running on this thread.
    NotInDomain,
}

impl fmt::Display for TransferError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Malformed(what) => write!(f, "malformed transfer metadata: {what}"),
            Self::OutOfMemory { requested } => write!(f, "domain heap cannot hold {requested} bytes"),
            Self::NotInDomain => f.write_str("not executing inside a domain"),
        }
    }
}

impl core::error::Error for TransferError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_layout_is_bit_exact() {
        let m = TransferMetadata { base: 0x1122_3344, length: 5, capacity: 9 };
        let b = m.to_slot_bytes();
        assert_eq!(&b[0..8], &0x1122_3344u64.to_ne_bytes());
        assert_eq!(&b[8..16], &5u64.to_ne_bytes());
        assert_eq!(&b[16..24], &9u64.to_ne_bytes());
        assert_eq!(TransferMetadata::from_slot_bytes(&b), m);
    }

    #[test]
    fn validation() {
        let heap = MemoryRegion::new(0x10000, 0x1000).unwrap();
        let ok = TransferMetadata { base: 0x10100, length: 10, capacity: 16 };
        assert!(ok.validate(&heap).is_ok());
        assert!(TransferMetadata { length: 17, ..ok }.validate(&heap).is_err());
        assert!(TransferMetadata { base: 0x10ff8, ..ok }.validate(&heap).is_err());
        assert!(TransferMetadata { base: 0x10000, length: 0, capacity: 0 }.validate(&heap).is_ok());
    }

    #[test]
    fn slot_sits_at_stack_top() {
        let stack = MemoryRegion::new(0x40000, 0x10000).unwrap();
        assert_eq!(slot_region(&stack).end(), stack.end());
        assert_eq!(initial_stack_base(&stack), 0x50000 - 128);
    }
}
