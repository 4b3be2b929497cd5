//! Moving frames across the domain boundary.
//!
//! The parent stages argument frames into an [`ArgVector`] living in the
//! domain heap and publishes its [`TransferMetadata`] in the reserved slot at
//! the top of the domain stack. Inside the domain, [`adopt`] rebuilds a view
//! of that vector from the slot. Results travel back the same way: the
//! domain stages them with [`stage_results`], which overwrites the slot, and
//! the parent reads them with [`collect`] or [`with_collected`] after exit.
//!
//! Two handles exist for the same storage, one per side of the boundary. The
//! owning side is whoever staged it; the [`AdoptedView`] never frees.

use std::ops::Deref;
use std::ptr::NonNull;

use domain_cell_core::domain::{DomainState, Udi};
use domain_cell_core::layout::{ByteSink, SerialFrame};
use domain_cell_core::region::MemoryRegion;
use domain_cell_core::tlsf::Tlsf;
use domain_cell_core::transfer::{TransferError, TransferMetadata};

use crate::manager::{self, DomainDescriptor, DomainError, DomainManager};

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{0}")]
    Transfer(#[from] TransferError),
}

/// Growable byte vector whose storage comes from one domain's heap.
pub struct ArgVector {
    heap: Tlsf,
    region: MemoryRegion,
    ptr: Option<NonNull<u8>>,
    len: usize,
    cap: usize,
}

impl std::fmt::Debug for ArgVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ArgVector").field("meta", &self.metadata()).finish()
    }
}

impl ArgVector {
    /// # Safety
    /// `region` must hold a live heap the caller may write, and the vector
    /// must be dropped or leaked before that heap goes away.
    unsafe fn in_heap(region: MemoryRegion, capacity: usize) -> Result<Self, TransferError> {
        let mut v = Self { heap: Tlsf::from_raw(region.base() as *mut u8), region, ptr: None, len: 0, cap: 0 };
        v.grow_to(capacity)?;
        Ok(v)
    }

    /// A vector in `udi`'s heap, for use by the parent.
    pub fn new(mgr: &DomainManager, udi: Udi, capacity: usize) -> Result<Self, ChannelError> {
        let d = mgr.descriptor(udi)?;
        mgr.open_for_parent(&d)?;
        Ok(unsafe { Self::in_heap(d.heap, capacity)? })
    }

    fn grow_to(&mut self, want: usize) -> Result<(), TransferError> {
        if self.ptr.is_some() && want <= self.cap {
            return Ok(());
        }
        let oom = TransferError::OutOfMemory { requested: want };
        let p = match self.ptr {
            None => self.heap.allocate(want).ok_or(oom)?,
            Some(p) => unsafe { self.heap.reallocate(p, want).ok_or(oom)? },
        };
        self.ptr = Some(p);
        self.cap = want;
        debug_assert!(self.region.contains_range(p.as_ptr() as usize, want));
        Ok(())
    }

    pub fn extend_from_slice(&mut self, bytes: &[u8]) -> Result<(), TransferError> {
        let need = self.len + bytes.len();
        if need > self.cap {
            self.grow_to(need.max(self.cap * 2))?;
        }
        let p = self.ptr.expect("allocated in constructor");
        unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr(), p.as_ptr().add(self.len), bytes.len()) };
        self.len = need;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn as_slice(&self) -> &[u8] {
        match self.ptr {
            Some(p) => unsafe { std::slice::from_raw_parts(p.as_ptr(), self.len) },
            None => &[],
        }
    }

    pub fn metadata(&self) -> TransferMetadata {
        TransferMetadata {
            base: self.ptr.map_or(self.region.base(), |p| p.as_ptr() as usize),
            length: self.len,
            capacity: self.cap,
        }
    }

    /// Gives up ownership; the storage now belongs to whoever frees the
    /// returned metadata with [`release`].
    pub fn into_metadata(self) -> TransferMetadata {
        let meta = self.metadata();
        std::mem::forget(self);
        meta
    }
}

impl Drop for ArgVector {
    fn drop(&mut self) {
        if let Some(p) = self.ptr.take() {
            unsafe { self.heap.free(p) };
        }
    }
}

impl ByteSink for ArgVector {
    fn put(&mut self, bytes: &[u8]) {
        self.extend_from_slice(bytes).expect("argument vector sized by measure");
    }

    fn reserve(&mut self, additional: usize) {
        let _ = self.grow_to(self.len + additional);
    }
}

/// Non-owning view of a vector published by the other side. Dropping it
/// frees nothing.
#[derive(Debug)]
pub struct AdoptedView {
    meta: TransferMetadata,
}

impl AdoptedView {
    pub fn metadata(&self) -> TransferMetadata {
        self.meta
    }
}

impl Deref for AdoptedView {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        unsafe { std::slice::from_raw_parts(self.meta.base as *const u8, self.meta.length) }
    }
}

/// Stages the concatenation of `frames` in `udi`'s heap.
pub fn stage(mgr: &DomainManager, udi: Udi, frames: &[SerialFrame]) -> Result<TransferMetadata, ChannelError> {
    let total = frames.iter().map(SerialFrame::len).sum();
    stage_with(mgr, udi, total, |v| {
        for f in frames {
            v.put(f.as_bytes());
        }
    })
}

/// Stages `len` bytes written by `fill` straight into the domain heap.
pub fn stage_with(
    mgr: &DomainManager,
    udi: Udi,
    len: usize,
    fill: impl FnOnce(&mut ArgVector),
) -> Result<TransferMetadata, ChannelError> {
    let d = mgr.descriptor(udi)?;
    stage_in(mgr, &d, len, fill)
}

// The `*_in` variants work from a descriptor snapshot the caller keeps
// current, saving a table lookup per step.
pub(crate) fn stage_in(
    mgr: &DomainManager,
    d: &DomainDescriptor,
    len: usize,
    fill: impl FnOnce(&mut ArgVector),
) -> Result<TransferMetadata, ChannelError> {
    if d.state != DomainState::Initialized {
        return Err(DomainError::BadState { udi: d.udi, found: Some(d.state), wanted: "Initialized" }.into());
    }
    mgr.open_for_parent(d)?;
    let mut v = unsafe { ArgVector::in_heap(d.heap, len)? };
    fill(&mut v);
    Ok(v.into_metadata())
}

/// Writes `meta` into the domain's reserved slot and keeps the stack base
/// below it.
pub fn publish(mgr: &DomainManager, udi: Udi, meta: &TransferMetadata) -> Result<(), ChannelError> {
    let mut d = mgr.descriptor(udi)?;
    publish_in(mgr, &mut d, meta)
}

pub(crate) fn publish_in(
    mgr: &DomainManager,
    d: &mut DomainDescriptor,
    meta: &TransferMetadata,
) -> Result<(), ChannelError> {
    let udi = d.udi;
    meta.validate(&d.heap).map_err(|_| DomainError::BadState {
        udi,
        found: Some(d.state),
        wanted: "metadata inside the domain heap",
    })?;
    mgr.open_for_parent(d)?;
    let bytes = meta.to_slot_bytes();
    unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr(), d.slot().base() as *mut u8, bytes.len()) };
    if d.stack_base > d.slot().base() {
        mgr.set_stack_base(udi, d.slot().base())?;
        d.stack_base = d.slot().base();
    }
    Ok(())
}

/// Reads the slot of the domain running on this thread.
pub fn adopt() -> Result<AdoptedView, TransferError> {
    let cur = manager::current().ok_or(TransferError::NotInDomain)?;
    let meta = unsafe { manager::read_slot_at(cur.slot) };
    meta.validate(&cur.heap)?;
    Ok(AdoptedView { meta })
}

/// Inside a domain: stages result bytes in the domain's own heap and
/// publishes them in the slot.
pub fn stage_results(len: usize, fill: impl FnOnce(&mut ArgVector)) -> Result<TransferMetadata, TransferError> {
    let cur = manager::current().ok_or(TransferError::NotInDomain)?;
    let mut v = unsafe { ArgVector::in_heap(cur.heap, len)? };
    fill(&mut v);
    let meta = v.into_metadata();
    let bytes = meta.to_slot_bytes();
    unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr(), cur.slot as *mut u8, bytes.len()) };
    Ok(meta)
}

/// After exit: hands the published result bytes to `f` without copying them
/// first, then frees them. `f` must copy out what it keeps.
pub fn with_collected<T>(mgr: &DomainManager, udi: Udi, f: impl FnOnce(&[u8]) -> T) -> Result<T, ChannelError> {
    let d = mgr.descriptor(udi)?;
    if d.state == DomainState::Active {
        return Err(DomainError::BadState { udi, found: Some(d.state), wanted: "an exited domain" }.into());
    }
    collect_in(mgr, &d, f)
}

// `d` must describe an exited domain that is still mapped.
pub(crate) fn collect_in<T>(
    mgr: &DomainManager,
    d: &DomainDescriptor,
    f: impl FnOnce(&[u8]) -> T,
) -> Result<T, ChannelError> {
    mgr.open_for_parent(d)?;
    let meta = unsafe { manager::read_slot_at(d.slot().base()) };
    meta.validate(&d.heap)?;
    let view = AdoptedView { meta };
    let out = f(&view);
    unsafe { release_in(d, &meta) };
    Ok(out)
}

/// Copies the published result bytes into parent memory.
pub fn collect(mgr: &DomainManager, udi: Udi) -> Result<Vec<u8>, ChannelError> {
    with_collected(mgr, udi, <[u8]>::to_vec)
}

/// Frees a staged vector.
///
/// # Safety
/// `meta` must describe a vector staged in `udi` and not released yet.
pub unsafe fn release(mgr: &DomainManager, udi: Udi, meta: &TransferMetadata) -> Result<(), ChannelError> {
    if let Some(p) = NonNull::new(meta.base as *mut u8) {
        mgr.dfree(udi, p)?;
    }
    Ok(())
}

/// # Safety
/// As for [`release`], with `d` describing the mapped domain.
pub(crate) unsafe fn release_in(d: &DomainDescriptor, meta: &TransferMetadata) {
    if let Some(p) = NonNull::new(meta.base as *mut u8) {
        Tlsf::from_raw(d.heap.base() as *mut u8).free(p);
    }
}
