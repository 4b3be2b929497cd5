//! Routing of the host program's dynamic allocations into domain heaps.
//!
//! Install [`DomainAllocator`] as the `#[global_allocator]`. While a domain
//! runs on a thread, every allocation made by that thread comes from the
//! domain's heap. Frees and reallocations are routed by address: a table of
//! registered heap ranges decides whether a pointer belongs to a domain heap
//! or to the system allocator, regardless of which domain (if any) is active.
//!
//! Heaps of discarded domains stay in the table as tombstones; frees that
//! land in them are dropped instead of reaching the system allocator.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use domain_cell_core::region::MemoryRegion;
use domain_cell_core::tlsf::Tlsf;

thread_local! {
    // Base of the heap serving this thread's allocations, 0 for the system
    // allocator. Accessed from the allocator: const-initialized, no drop.
    static ACTIVE: Cell<usize> = const { Cell::new(0) };
}

static INSTALLED: AtomicBool = AtomicBool::new(false);

const ROUTES: usize = 128;
const DEAD: usize = 1;

struct Route {
    base: AtomicUsize,
    // end | DEAD for tombstones; 0 for an empty slot.
    end: AtomicUsize,
}

#[allow(clippy::declare_interior_mutable_const)]
const EMPTY_ROUTE: Route = Route { base: AtomicUsize::new(0), end: AtomicUsize::new(0) };

static TABLE: [Route; ROUTES] = [EMPTY_ROUTE; ROUTES];
static HIGH_WATER: AtomicUsize = AtomicUsize::new(0);
static HULL_LO: AtomicUsize = AtomicUsize::new(usize::MAX);
static HULL_HI: AtomicUsize = AtomicUsize::new(0);
// Serializes writers; readers go lock-free.
static TABLE_LOCK: Mutex<u64> = Mutex::new(0);

/// Registers a live heap. Returns the slot to pass to [`retire`].
pub(crate) fn register(heap: MemoryRegion) -> Option<usize> {
    let mut clock = TABLE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    *clock += 1;
    let mut slot = None;
    for (i, r) in TABLE.iter().enumerate() {
        let end = r.end.load(Ordering::Relaxed);
        let base = r.base.load(Ordering::Relaxed);
        // A new heap supersedes tombstones it overlaps.
        if end & DEAD != 0 && base < heap.end() && heap.base() < end & !DEAD {
            r.end.store(0, Ordering::Release);
        }
        if r.end.load(Ordering::Relaxed) == 0 && slot.is_none() {
            slot = Some(i);
        }
    }
    let slot = match slot {
        Some(s) => s,
        // Full: evict a tombstone.
        None => TABLE.iter().position(|r| r.end.load(Ordering::Relaxed) & DEAD != 0)?,
    };
    TABLE[slot].end.store(0, Ordering::Release);
    TABLE[slot].base.store(heap.base(), Ordering::Release);
    TABLE[slot].end.store(heap.end(), Ordering::Release);
    HIGH_WATER.fetch_max(slot + 1, Ordering::AcqRel);
    HULL_LO.fetch_min(heap.base(), Ordering::AcqRel);
    HULL_HI.fetch_max(heap.end(), Ordering::AcqRel);
    Some(slot)
}

/// Turns a registered heap into a tombstone.
pub(crate) fn retire(slot: usize) {
    let _g = TABLE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let end = TABLE[slot].end.load(Ordering::Relaxed);
    if end != 0 {
        TABLE[slot].end.store(end | DEAD, Ordering::Release);
    }
}

enum Owner {
    System,
    Heap(usize),
    Dead,
}

#[inline]
fn owner_of(addr: usize) -> Owner {
    if addr < HULL_LO.load(Ordering::Relaxed) || addr >= HULL_HI.load(Ordering::Relaxed) {
        return Owner::System;
    }
    let n = HIGH_WATER.load(Ordering::Acquire);
    for r in &TABLE[..n] {
        let end = r.end.load(Ordering::Acquire);
        if end == 0 {
            continue;
        }
        let base = r.base.load(Ordering::Acquire);
        if addr >= base && addr < end & !DEAD {
            return if end & DEAD != 0 { Owner::Dead } else { Owner::Heap(base) };
        }
    }
    Owner::System
}

/// Points this thread's allocations at the heap based at `heap_base`, or
/// back at the system allocator for 0. Returns the previous setting.
pub(crate) fn set_active(heap_base: usize) -> usize {
    ACTIVE.with(|a| a.replace(heap_base))
}

/// Whether [`DomainAllocator`] is the global allocator of this program. Only
/// known once it has served an allocation.
pub fn interposer_installed() -> bool {
    INSTALLED.load(Ordering::Relaxed)
}

/// Global allocator that honours the active domain of the calling thread.
///
/// ```no_run
/// #[global_allocator]
/// static ALLOC: domain_cell::DomainAllocator = domain_cell::DomainAllocator;
/// ```
#[derive(Debug, Default, Clone, Copy)]
pub struct DomainAllocator;

#[inline]
unsafe fn heap_at(base: usize) -> Tlsf {
    Tlsf::from_raw(base as *mut u8)
}

unsafe impl GlobalAlloc for DomainAllocator {
    #[inline]
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if !INSTALLED.load(Ordering::Relaxed) {
            INSTALLED.store(true, Ordering::Relaxed);
        }
        let h = ACTIVE.with(Cell::get);
        if h == 0 {
            return System.alloc(layout);
        }
        heap_at(h).allocate_aligned(layout.size(), layout.align()).map_or(ptr::null_mut(), NonNull::as_ptr)
    }

    #[inline]
    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        if ACTIVE.with(Cell::get) == 0 {
            return System.alloc_zeroed(layout);
        }
        let p = self.alloc(layout);
        if !p.is_null() {
            ptr::write_bytes(p, 0, layout.size());
        }
        p
    }

    #[inline]
    unsafe fn dealloc(&self, p: *mut u8, layout: Layout) {
        match owner_of(p as usize) {
            Owner::System => System.dealloc(p, layout),
            Owner::Heap(base) => heap_at(base).free(NonNull::new_unchecked(p)),
            Owner::Dead => {}
        }
    }

    unsafe fn realloc(&self, p: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        match owner_of(p as usize) {
            Owner::Heap(base) => heap_at(base)
                .reallocate_aligned(NonNull::new_unchecked(p), new_size, layout.align())
                .map_or(ptr::null_mut(), NonNull::as_ptr),
            Owner::System if ACTIVE.with(Cell::get) == 0 => System.realloc(p, layout, new_size),
            owner => {
                // Moving between allocators: copy into wherever new
                // allocations go now.
                let new_layout = Layout::from_size_align_unchecked(new_size, layout.align());
                let q = self.alloc(new_layout);
                if !q.is_null() {
                    ptr::copy_nonoverlapping(p, q, layout.size().min(new_size));
                    if let Owner::System = owner {
                        System.dealloc(p, layout);
                    }
                }
                q
            }
        }
    }
}
