//! Domain lifecycle: init, enter, exit, discard, and rewind on fault.
//!
//! Each domain owns one reservation laid out as
//!
//! ```text
//! guard | stack | guard | heap | guard
//! ```
//!
//! The guards stay `PROT_NONE` under every backend, so running off either end
//! of the stack or the heap faults even without key enforcement. Stack and
//! heap are tagged with the domain's key.
//!
//! Every transition passes through the monitor: enter writes the monitor word
//! and then the domain word, exit writes the monitor word and then restores
//! the parent's word. On protection-key hardware that is four register
//! writes per call.

use rustc_hash::FxHashMap as HashMap;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};

use domain_cell_core::domain::{ConfigError, DomainConfig, DomainState, FaultInfo, Sdi, Udi};
use domain_cell_core::region::MemoryRegion;
use domain_cell_core::rights::{compose_rights, AccessRightsWord, Grant, Permission, ProtectionKeyId};
use domain_cell_core::tlsf::{Census, HeapStats, IntegrityError, Tlsf};
use domain_cell_core::transfer::{self, TransferMetadata, SLOT_USED};

use crate::backend::{self, BackendError, BackendKind, ProtectionBackend};
use crate::{heap, sys, trap};

/// Size of each guard area, in pages.
const GUARD_PAGES: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("no free protection key")]
    Exhausted,
    #[error("{udi} is {found:?}, expected {wanted}")]
    BadState { udi: Udi, found: Option<DomainState>, wanted: &'static str },
    #[error("stack base {base:#x} is outside {udi}'s usable stack {usable:?}")]
    OutOfRange { udi: Udi, base: usize, usable: MemoryRegion },
    #[error("{udi}'s heap cannot satisfy {requested} bytes")]
    OutOfMemory { udi: Udi, requested: usize },
    #[error("invalid domain configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(BackendError),
    #[error("{0}")]
    SystemFailure(#[from] std::io::Error),
}

impl From<BackendError> for DomainError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Exhausted => Self::Exhausted,
            e => Self::Backend(e),
        }
    }
}

/// Why a [`DomainManager::run`] did not return a value.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    /// The job faulted, aborted or panicked. The domain has been discarded.
    #[error(transparent)]
    Fault(FaultInfo),
}

/// Snapshot of a domain's control record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainDescriptor {
    pub udi: Udi,
    pub sdi: Sdi,
    pub key: ProtectionKeyId,
    pub stack: MemoryRegion,
    pub heap: MemoryRegion,
    pub stack_base: usize,
    pub state: DomainState,
    pub persistent: bool,
    pub parent_accessible: bool,
    pub parent_retains_access: bool,
}

impl DomainDescriptor {
    /// The reserved metadata slot at the top of the stack.
    pub fn slot(&self) -> MemoryRegion {
        transfer::slot_region(&self.stack)
    }
}

#[derive(Debug)]
struct Domain {
    desc: DomainDescriptor,
    map: sys::Mapping,
    route: usize,
    // Rights word of the thread that entered, restored on exit.
    parent_word: Option<AccessRightsWord>,
}

#[derive(Debug, Default)]
struct Table {
    next_udi: u32,
    domains: HashMap<u32, Domain>,
    by_sdi: HashMap<u64, u32>,
}

/// Counters exported to the benchmark harness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ManagerStats {
    pub initialized: u64,
    pub discarded: u64,
    pub runs: u64,
    pub faults: u64,
}

#[derive(Debug, Default)]
struct Counters {
    initialized: AtomicU64,
    discarded: AtomicU64,
    runs: AtomicU64,
    faults: AtomicU64,
}

/// Thread of execution currently inside a domain, as seen from that domain.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Current {
    pub udi: Udi,
    pub slot: usize,
    pub heap: MemoryRegion,
}

thread_local! {
    static CURRENT: std::cell::Cell<Option<Current>> = const { std::cell::Cell::new(None) };
}

pub(crate) fn current() -> Option<Current> {
    CURRENT.with(std::cell::Cell::get)
}

/// The domain running on the calling thread, if any.
pub fn current_domain() -> Option<Udi> {
    current().map(|c| c.udi)
}

/// The heap of the domain running on the calling thread, if any.
pub fn current_heap() -> Option<MemoryRegion> {
    current().map(|c| c.heap)
}

pub struct DomainManager {
    backend: Arc<dyn ProtectionBackend>,
    table: Mutex<Table>,
    counters: Counters,
}

impl std::fmt::Debug for DomainManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DomainManager").field("backend", &self.backend.kind()).finish_non_exhaustive()
    }
}

fn bad(udi: Udi, found: Option<DomainState>, wanted: &'static str) -> DomainError {
    DomainError::BadState { udi, found, wanted }
}

// Lazily initialized std state that would otherwise be allocated inside the
// first domain to touch it, and then outlive that domain.
fn warm_up() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        let _ = std::io::stdout();
        let _ = std::io::stderr();
        // The panic hook updates process-wide state (captured output, for
        // one); run it on the system allocator even when the panic comes
        // from inside a domain.
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(move |info| {
            let saved = heap::set_active(0);
            prev(info);
            heap::set_active(saved);
        }));
    });
    let _ = std::thread::current();
}

impl DomainManager {
    pub fn new(backend: Arc<dyn ProtectionBackend>) -> Self {
        trap::install_handlers();
        Self { backend, table: Mutex::new(Table { next_udi: 1, ..Table::default() }), counters: Counters::default() }
    }

    pub fn with_kind(kind: BackendKind) -> Result<Self, BackendError> {
        Ok(Self::new(backend::create(kind)?))
    }

    /// Process-wide manager on the probed backend.
    pub fn global() -> &'static DomainManager {
        static GLOBAL: OnceLock<DomainManager> = OnceLock::new();
        GLOBAL.get_or_init(|| {
            let kind = backend::probe();
            let b = backend::create(kind)
                .or_else(|_| backend::create(BackendKind::PagePermission))
                .expect("page permission backend is always available");
            DomainManager::new(b)
        })
    }

    pub fn backend(&self) -> &Arc<dyn ProtectionBackend> {
        &self.backend
    }

    pub fn stats(&self) -> ManagerStats {
        let c = &self.counters;
        ManagerStats {
            initialized: c.initialized.load(Ordering::Relaxed),
            discarded: c.discarded.load(Ordering::Relaxed),
            runs: c.runs.load(Ordering::Relaxed),
            faults: c.faults.load(Ordering::Relaxed),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Table> {
        self.table.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn with_domain<T>(
        &self,
        udi: Udi,
        f: impl FnOnce(&mut Domain) -> Result<T, DomainError>,
    ) -> Result<T, DomainError> {
        let mut t = self.lock();
        match t.domains.get_mut(&udi.0) {
            Some(d) => f(d),
            None => Err(bad(udi, None, "a live domain")),
        }
    }

    /// Creates the domain for `sdi`, or returns the existing one when `sdi`
    /// names a persistent domain that is not currently running.
    pub fn init_domain(&self, sdi: Sdi, config: DomainConfig) -> Result<Udi, DomainError> {
        self.acquire(sdi, config).map(|d| d.udi)
    }

    /// [`init_domain`](Self::init_domain), returning the descriptor.
    pub(crate) fn acquire(&self, sdi: Sdi, config: DomainConfig) -> Result<DomainDescriptor, DomainError> {
        let page = sys::page_size();
        config.validate(page)?;
        let mut t = self.lock();
        if let Some(&u) = t.by_sdi.get(&sdi.0) {
            let d = &t.domains[&u];
            return if d.desc.persistent && d.desc.state == DomainState::Initialized {
                Ok(d.desc)
            } else {
                Err(bad(Udi(u), Some(d.desc.state), "a persistent idle domain for a reused SDI"))
            };
        }
        let guard = GUARD_PAGES * page;
        let total = 3 * guard + config.stack_size + config.heap_size;
        let map = sys::Mapping::reserve(total)?;
        let base = map.base() as usize;
        let stack = MemoryRegion::new(base + guard, config.stack_size).expect("stack inside mapping");
        let heap_region = MemoryRegion::new(stack.end() + guard, config.heap_size).expect("heap inside mapping");

        let key = self.backend.allocate_key()?;
        let undo = |be: &dyn ProtectionBackend, tagged: &[MemoryRegion]| {
            for r in tagged {
                let _ = be.untag_region(*r);
            }
            let _ = be.release_key(key);
        };
        let mut tagged = Vec::with_capacity(2);
        for r in [stack, heap_region] {
            if let Err(e) = self.backend.tag_region(r, key) {
                undo(&*self.backend, &tagged);
                return Err(e.into());
            }
            tagged.push(r);
        }
        // The creating thread needs the key open to lay out the heap. Under
        // the hardware backend a fresh key already is, so this normally
        // writes nothing.
        let word = self.backend.read_thread_rights();
        let open = word.with_permission(key, Permission::ReadWrite);
        if word != open {
            if let Err(e) = self.backend.set_thread_rights(open) {
                undo(&*self.backend, &tagged);
                return Err(e.into());
            }
        }
        if let Err(e) = unsafe { Tlsf::create(heap_region.base() as *mut u8, heap_region.len()) } {
            undo(&*self.backend, &tagged);
            panic!("heap region rejected after validation: {e}");
        }
        if !config.parent_accessible {
            let _ = self.backend.set_thread_rights(open.with_permission(key, Permission::NoAccess));
        }
        let Some(route) = heap::register(heap_region) else {
            undo(&*self.backend, &tagged);
            return Err(DomainError::SystemFailure(std::io::Error::other("allocation route table full")));
        };

        let udi = Udi(t.next_udi);
        t.next_udi += 1;
        let desc = DomainDescriptor {
            udi,
            sdi,
            key,
            stack,
            heap: heap_region,
            stack_base: transfer::initial_stack_base(&stack),
            state: DomainState::Initialized,
            persistent: config.persistent,
            parent_accessible: config.parent_accessible,
            parent_retains_access: config.parent_retains_access_during_run,
        };
        t.domains.insert(udi.0, Domain { desc, map, route, parent_word: None });
        t.by_sdi.insert(sdi.0, udi.0);
        self.counters.initialized.fetch_add(1, Ordering::Relaxed);
        Ok(desc)
    }

    pub fn descriptor(&self, udi: Udi) -> Result<DomainDescriptor, DomainError> {
        self.with_domain(udi, |d| Ok(d.desc))
    }

    /// The live domain bound to `sdi`, if any.
    pub fn lookup(&self, sdi: Sdi) -> Option<Udi> {
        self.lock().by_sdi.get(&sdi.0).map(|&u| Udi(u))
    }

    /// Whether the domain still holds its memory mapping.
    pub fn is_mapped(&self, udi: Udi) -> bool {
        self.lock().domains.contains_key(&udi.0)
    }

    pub fn live_domains(&self) -> usize {
        self.lock().domains.len()
    }

    /// Switches the calling thread's rights into the domain. [`run`] does this
    /// together with the stack switch; calling it directly is useful for
    /// inspecting rights.
    ///
    /// [`run`]: DomainManager::run
    pub fn enter_domain(&self, udi: Udi) -> Result<(), DomainError> {
        self.enter(udi).map(drop)
    }

    fn enter(&self, udi: Udi) -> Result<DomainDescriptor, DomainError> {
        self.with_domain(udi, |d| {
            let next = d.desc.state.enter().map_err(|e| bad(udi, Some(e.found), e.wanted))?;
            let parent = self.backend.read_thread_rights();
            self.backend.set_thread_rights(AccessRightsWord::ALL_ENABLED)?;
            d.parent_word = Some(parent);
            d.desc.state = next;
            let inside = compose_rights(&[Grant::read_write(d.desc.key)]).expect("single grant");
            self.backend.set_thread_rights(inside)?;
            Ok(d.desc)
        })
    }

    /// Leaves the domain and restores the rights the parent had before
    /// entering. A transient domain becomes Deinitialized; its memory stays
    /// mapped until [`discard_domain`](DomainManager::discard_domain) so
    /// results can still be collected.
    pub fn exit_domain(&self, udi: Udi) -> Result<(), DomainError> {
        self.with_domain(udi, |d| {
            let next = d.desc.state.exit(d.desc.persistent).map_err(|e| bad(udi, Some(e.found), e.wanted))?;
            self.backend.set_thread_rights(AccessRightsWord::ALL_ENABLED)?;
            d.desc.state = next;
            let mut parent = d.parent_word.take().unwrap_or_else(|| self.backend.read_thread_rights());
            if !d.desc.parent_retains_access {
                parent = parent.with_permission(d.desc.key, Permission::NoAccess);
            }
            self.backend.set_thread_rights(parent)?;
            Ok(())
        })
    }

    pub fn get_stack_base(&self, udi: Udi) -> Result<usize, DomainError> {
        self.with_domain(udi, |d| match d.desc.state {
            DomainState::Deinitialized => Err(bad(udi, Some(d.desc.state), "Initialized or Active")),
            _ => Ok(d.desc.stack_base),
        })
    }

    /// Moves the point where the next run starts. It must stay below the
    /// metadata slot and leave at least a page of stack.
    pub fn set_stack_base(&self, udi: Udi, base: usize) -> Result<(), DomainError> {
        self.with_domain(udi, |d| {
            if d.desc.state == DomainState::Deinitialized {
                return Err(bad(udi, Some(d.desc.state), "Initialized or Active"));
            }
            let floor = d.desc.stack.base() + sys::page_size();
            let ceiling = d.desc.slot().base();
            let usable = MemoryRegion::new(floor, ceiling - floor).expect("stack larger than a page");
            if base < floor || base > ceiling {
                return Err(DomainError::OutOfRange { udi, base, usable });
            }
            d.desc.stack_base = base;
            Ok(())
        })
    }

    /// Releases the domain's memory and key. Also drops the SDI binding, so
    /// the next init of that SDI starts from an empty heap.
    pub fn discard_domain(&self, udi: Udi) -> Result<(), DomainError> {
        let mut t = self.lock();
        let state = match t.domains.get(&udi.0) {
            None => return Err(bad(udi, None, "a live domain")),
            Some(d) => d.desc.state,
        };
        state.check_discardable().map_err(|e| bad(udi, Some(e.found), e.wanted))?;
        let d = t.domains.remove(&udi.0).expect("checked above");
        if t.by_sdi.get(&d.desc.sdi.0) == Some(&udi.0) {
            t.by_sdi.remove(&d.desc.sdi.0);
        }
        drop(t);
        self.release(d);
        Ok(())
    }

    fn release(&self, d: Domain) {
        heap::retire(d.route);
        let _ = self.backend.untag_region(d.desc.stack);
        let _ = self.backend.untag_region(d.desc.heap);
        let _ = self.backend.release_key(d.desc.key);
        drop(d.map);
        self.counters.discarded.fetch_add(1, Ordering::Relaxed);
    }

    /// Grants the calling thread access to the domain's memory if its rights
    /// word does not already allow it. Needed on threads other than the one
    /// that created the domain, and after runs of domains configured not to
    /// retain parent access.
    pub fn ensure_parent_access(&self, udi: Udi) -> Result<(), DomainError> {
        let desc = self.descriptor(udi)?;
        self.open_for_parent(&desc)
    }

    pub(crate) fn open_for_parent(&self, desc: &DomainDescriptor) -> Result<(), DomainError> {
        if !desc.parent_accessible {
            return Err(bad(desc.udi, None, "a parent-accessible domain"));
        }
        let w = self.backend.read_thread_rights();
        if w.permission(desc.key) != Permission::ReadWrite {
            self.backend.set_thread_rights(w.with_permission(desc.key, Permission::ReadWrite))?;
        }
        Ok(())
    }

    /// Routes the calling thread's allocations to `udi`'s heap, or back to
    /// the system allocator for `None`. Only effective when
    /// [`DomainAllocator`](crate::DomainAllocator) is the global allocator.
    pub fn interpose_active(&self, udi: Option<Udi>) -> Result<(), DomainError> {
        let base = match udi {
            Some(u) => self.with_domain(u, |d| Ok(d.desc.heap.base()))?,
            None => 0,
        };
        heap::set_active(base);
        Ok(())
    }

    /// Runs `f` inside the domain: enter, switch to the domain stack with
    /// allocations routed to the domain heap, call `f`, exit.
    ///
    /// If `f` faults, aborts or panics, execution rewinds here, the domain is
    /// discarded (persistent or not) and the fault is returned. Values owned
    /// by `f`'s frames at that moment are leaked.
    ///
    /// Values returned by `f` may own memory in the domain heap. They must be
    /// dropped before the domain is discarded; after that their memory is
    /// gone and freeing them is a no-op. Growing one (`realloc`) after the
    /// discard is not supported: it would copy from unmapped memory.
    pub fn run<R>(&self, udi: Udi, f: impl FnOnce() -> R) -> Result<R, RunError> {
        if trap::in_domain() {
            return Err(bad(udi, None, "no domain already running on this thread").into());
        }
        warm_up();
        let desc = self.enter(udi)?;
        self.counters.runs.fetch_add(1, Ordering::Relaxed);
        CURRENT.with(|c| c.set(Some(Current { udi, slot: desc.slot().base(), heap: desc.heap })));
        let prev = heap::set_active(desc.heap.base());
        let landing = unsafe { trap::run_on_stack(desc.stack_base & !15, f) };
        heap::set_active(prev);
        CURRENT.with(|c| c.set(None));
        let fault = match landing {
            trap::Landing::Returned(r) => {
                self.exit_domain(udi)?;
                return Ok(r);
            }
            trap::Landing::Faulted(raw) => {
                if raw.signal == libc::SIGABRT {
                    if raw.stack_smash {
                        FaultInfo::stack_smash(udi)
                    } else {
                        FaultInfo::abort(udi)
                    }
                } else {
                    FaultInfo::violation(udi, raw.addr)
                }
            }
            trap::Landing::Panicked => FaultInfo::abort(udi),
        };
        self.rewind(udi);
        Err(RunError::Fault(fault))
    }

    // Restores the parent's rights and throws the domain away. Nothing in
    // the domain's memory is trusted or even read.
    fn rewind(&self, udi: Udi) {
        self.counters.faults.fetch_add(1, Ordering::Relaxed);
        let mut t = self.lock();
        let Some(mut d) = t.domains.remove(&udi.0) else { return };
        if t.by_sdi.get(&d.desc.sdi.0) == Some(&udi.0) {
            t.by_sdi.remove(&d.desc.sdi.0);
        }
        drop(t);
        // The key is released below and the memory unmapped, so the parent's
        // word can be restored exactly.
        if let Some(parent) = d.parent_word.take() {
            let _ = self.backend.set_thread_rights(parent);
        }
        d.desc.state = DomainState::Deinitialized;
        self.release(d);
    }

    // Heap operations on behalf of the parent. The domain must not be running
    // on another thread.

    fn heap_of(&self, udi: Udi) -> Result<Tlsf, DomainError> {
        self.with_domain(udi, |d| Ok(unsafe { Tlsf::from_raw(d.desc.heap.base() as *mut u8) }))
    }

    pub fn dalloc(&self, udi: Udi, size: usize) -> Result<NonNull<u8>, DomainError> {
        let mut h = self.heap_of(udi)?;
        h.allocate(size).ok_or(DomainError::OutOfMemory { udi, requested: size })
    }

    /// # Safety
    /// `ptr` must come from [`dalloc`](Self::dalloc) or
    /// [`drealloc`](Self::drealloc) on the same domain and not be freed yet.
    pub unsafe fn dfree(&self, udi: Udi, ptr: NonNull<u8>) -> Result<(), DomainError> {
        let mut h = self.heap_of(udi)?;
        h.free(ptr);
        Ok(())
    }

    /// # Safety
    /// As for [`dfree`](Self::dfree).
    pub unsafe fn drealloc(&self, udi: Udi, ptr: NonNull<u8>, new_size: usize) -> Result<NonNull<u8>, DomainError> {
        let mut h = self.heap_of(udi)?;
        h.reallocate(ptr, new_size).ok_or(DomainError::OutOfMemory { udi, requested: new_size })
    }

    pub fn heap_stats(&self, udi: Udi) -> Result<HeapStats, DomainError> {
        Ok(self.heap_of(udi)?.stats())
    }

    pub fn heap_census(&self, udi: Udi) -> Result<Result<Census, IntegrityError>, DomainError> {
        Ok(self.heap_of(udi)?.census())
    }

    /// Writes transfer metadata into the domain's reserved slot.
    #[cfg(test)]
    pub(crate) fn write_slot(&self, udi: Udi, meta: &TransferMetadata) -> Result<(), DomainError> {
        self.with_domain(udi, |d| {
            let bytes = meta.to_slot_bytes();
            unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr(), d.desc.slot().base() as *mut u8, SLOT_USED) };
            Ok(())
        })
    }
}

/// # Safety
/// `slot` must point at a readable metadata slot.
pub(crate) unsafe fn read_slot_at(slot: usize) -> TransferMetadata {
    let mut bytes = [0u8; SLOT_USED];
    std::ptr::copy_nonoverlapping(slot as *const u8, bytes.as_mut_ptr(), SLOT_USED);
    TransferMetadata::from_slot_bytes(&bytes)
}
