//! Address ranges handed to protection backends and allocators.

use core::fmt;

/// A contiguous range `[base, base + len)`. Addresses are plain integers here;
/// the std crate converts to pointers when it touches memory.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryRegion {
    base: usize,
    len: usize,
}

impl MemoryRegion {
    /// Fails if the range wraps the address space.
    pub const fn new(base: usize, len: usize) -> Result<Self, RegionError> {
        if base.checked_add(len).is_none() {
            return Err(RegionError::Wraps);
        }
        Ok(Self { base, len })
    }

    /// Like [`new`](Self::new) but also requires page alignment of both ends.
    pub const fn page_aligned(base: usize, len: usize, page: usize) -> Result<Self, RegionError> {
        if !base.is_multiple_of(page) || !len.is_multiple_of(page) || len == 0 {
            return Err(RegionError::Unaligned);
        }
        Self::new(base, len)
    }

    pub const fn base(&self) -> usize {
        self.base
    }

    pub const fn len(&self) -> usize {
        self.len
    }

    pub const fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub const fn end(&self) -> usize {
        self.base + self.len
    }

    pub const fn contains(&self, addr: usize) -> bool {
        addr >= self.base && addr < self.end()
    }

    /// Whether `[addr, addr + len)` lies entirely inside. Empty ranges count
    /// as contained when they start inside or exactly at the end.
    pub const fn contains_range(&self, addr: usize, len: usize) -> bool {
        match addr.checked_add(len) {
            Some(end) => addr >= self.base && end <= self.end(),
            None => false,
        }
    }

    pub const fn overlaps(&self, other: &MemoryRegion) -> bool {
        self.base < other.end() && other.base < self.end()
    }
}

impl fmt::Debug for MemoryRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:#x}, {:#x})", self.base, self.end())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionError {
    Unaligned,
    Wraps,
}

impl fmt::Display for RegionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Unaligned => f.write_str("region is not page aligned"),
            Self::Wraps => f.write_str("region wraps the address space"),
        }
    }
}

impl core::error::Error for RegionError {}
