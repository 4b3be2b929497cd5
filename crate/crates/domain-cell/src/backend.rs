//! Enforcement of protection domains.
//!
//! Three interchangeable backends sit behind [`ProtectionBackend`]:
//!
//! * [`BackendKind::HardwareKeys`]: x86 protection keys. Tagging is
//!   `pkey_mprotect`, the rights word is the PKRU register.
//! * [`BackendKind::PagePermission`]: emulation with plain `mprotect`. A
//!   denied key turns its pages `PROT_NONE`, a write-disabled key turns them
//!   read-only. Page permissions are process-wide, so the last rights word
//!   written by any thread decides.
//! * [`BackendKind::Null`]: keeps all the bookkeeping, enforces nothing.
//!
//! `DOMAIN_CELL_BACKEND` (`auto`, `hw`, `pageperm`, `null`) overrides
//! [`probe`].

use std::cell::{Cell, RefCell};
use std::fmt;
use std::io;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};

use domain_cell_core::region::MemoryRegion;
use domain_cell_core::rights::{AccessRightsWord, KeyPool, Permission, ProtectionKeyId, RightsError};

use crate::sys;

pub const ENV_OVERRIDE: &str = "DOMAIN_CELL_BACKEND";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackendKind {
    HardwareKeys,
    PagePermission,
    Null,
}

impl BackendKind {
    pub const fn name(self) -> &'static str {
        match self {
            Self::HardwareKeys => "hw",
            Self::PagePermission => "pageperm",
            Self::Null => "null",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hw" => Ok(Self::HardwareKeys),
            "pageperm" => Ok(Self::PagePermission),
            "null" => Ok(Self::Null),
            other => Err(format!("unknown backend {other:?} (expected hw, pageperm or null)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("no free protection key")]
    Exhausted,
    #[error("{0} is not allocated")]
    NotAllocated(ProtectionKeyId),
    #[error("region {0:?} is not page aligned")]
    Unaligned(MemoryRegion),
    #[error("region {region:?} overlaps {other:?}")]
    Overlap { region: MemoryRegion, other: MemoryRegion },
    #[error("region {0:?} is not tagged")]
    NotTagged(MemoryRegion),
    #[error("rights word {0:?} denies the default key")]
    DefaultKeyDenied(AccessRightsWord),
    #[error("{0} backend is not available on this machine")]
    Unavailable(BackendKind),
    #[error("{op} failed: {source}")]
    SystemFailure { op: &'static str, source: io::Error },
}

impl From<RightsError> for BackendError {
    fn from(e: RightsError) -> Self {
        match e {
            RightsError::Exhausted => Self::Exhausted,
            RightsError::NotAllocated(k) | RightsError::DuplicateKey(k) => Self::NotAllocated(k),
            RightsError::DefaultKeyDenied => Self::DefaultKeyDenied(AccessRightsWord::DEFAULT_ONLY),
        }
    }
}

fn sys_err(op: &'static str) -> impl FnOnce(io::Error) -> BackendError {
    move |source| BackendError::SystemFailure { op, source }
}

pub trait ProtectionBackend: Send + Sync + fmt::Debug {
    fn kind(&self) -> BackendKind;

    /// Lowest free user key.
    fn allocate_key(&self) -> Result<ProtectionKeyId, BackendError>;

    fn release_key(&self, key: ProtectionKeyId) -> Result<(), BackendError>;

    /// Makes `region` readable and writable and ties its further access
    /// rights to `key`.
    fn tag_region(&self, region: MemoryRegion, key: ProtectionKeyId) -> Result<(), BackendError>;

    /// Returns `region` to the default key (still readable and writable).
    fn untag_region(&self, region: MemoryRegion) -> Result<(), BackendError>;

    fn set_thread_rights(&self, word: AccessRightsWord) -> Result<(), BackendError>;

    fn read_thread_rights(&self) -> AccessRightsWord;

    /// Whether denied accesses actually fault.
    fn enforces(&self) -> bool {
        true
    }

    /// Whether a rights change on one thread affects every thread.
    fn process_wide(&self) -> bool {
        false
    }
}

thread_local! {
    static RIGHTS_WRITES: Cell<u64> = const { Cell::new(0) };
    // Emulated words, keyed by backend instance.
    static EMU_WORDS: RefCell<Vec<(u64, AccessRightsWord)>> = const { RefCell::new(Vec::new()) };
}

/// Rights-register writes performed by the calling thread so far. Only the
/// hardware backend counts; emulated writes are not register writes.
pub fn thread_rights_writes() -> u64 {
    RIGHTS_WRITES.with(Cell::get)
}

/// Whether this machine and kernel support protection keys.
pub fn hardware_available() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| {
        if !sys::pku::cpu_enabled() {
            return false;
        }
        match sys::pku::alloc() {
            Ok(k) => {
                let _ = sys::pku::free(k);
                true
            }
            Err(_) => false,
        }
    })
}

/// Backend to use when nobody asked for a specific one. Honours
/// [`ENV_OVERRIDE`]; an override that names unavailable hardware falls back
/// like `auto` does. The answer never changes within a process.
pub fn probe() -> BackendKind {
    static KIND: OnceLock<BackendKind> = OnceLock::new();
    *KIND.get_or_init(|| {
        let fallback = if hardware_available() { BackendKind::HardwareKeys } else { BackendKind::PagePermission };
        match std::env::var(ENV_OVERRIDE).ok().as_deref().map(str::parse::<BackendKind>) {
            Some(Ok(BackendKind::HardwareKeys)) | Some(Err(_)) | None => fallback,
            Some(Ok(kind)) => kind,
        }
    })
}

/// Instantiates a backend. Emulated backends are independent per instance;
/// the hardware backend is shared because keys belong to the process.
pub fn create(kind: BackendKind) -> Result<Arc<dyn ProtectionBackend>, BackendError> {
    match kind {
        BackendKind::HardwareKeys => {
            static HW: OnceLock<Arc<HardwareKeys>> = OnceLock::new();
            if !hardware_available() {
                return Err(BackendError::Unavailable(kind));
            }
            Ok(HW.get_or_init(|| Arc::new(HardwareKeys::default())).clone())
        }
        BackendKind::PagePermission => Ok(Arc::new(Emulated::new(true))),
        BackendKind::Null => Ok(Arc::new(Emulated::new(false))),
    }
}

#[derive(Debug, Default)]
struct Tags {
    regions: Vec<Tagged>,
}

#[derive(Debug, Clone, Copy)]
struct Tagged {
    region: MemoryRegion,
    key: ProtectionKeyId,
    applied: Permission,
}

impl Tags {
    fn check_new(&self, region: MemoryRegion) -> Result<(), BackendError> {
        let page = sys::page_size();
        if !region.base().is_multiple_of(page) || !region.len().is_multiple_of(page) || region.is_empty() {
            return Err(BackendError::Unaligned(region));
        }
        match self.regions.iter().find(|t| t.region.overlaps(&region)) {
            Some(t) => Err(BackendError::Overlap { region, other: t.region }),
            None => Ok(()),
        }
    }

    fn remove(&mut self, region: MemoryRegion) -> Result<Tagged, BackendError> {
        let i = self.regions.iter().position(|t| t.region == region).ok_or(BackendError::NotTagged(region))?;
        Ok(self.regions.swap_remove(i))
    }
}

fn prot_for(p: Permission) -> libc::c_int {
    match p {
        Permission::ReadWrite => libc::PROT_READ | libc::PROT_WRITE,
        Permission::ReadOnly => libc::PROT_READ,
        Permission::NoAccess => libc::PROT_NONE,
    }
}

/// x86 protection keys.
#[derive(Debug, Default)]
pub struct HardwareKeys {
    state: Mutex<(KeyPool, Tags)>,
}

impl HardwareKeys {
    fn lock(&self) -> MutexGuard<'_, (KeyPool, Tags)> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl ProtectionBackend for HardwareKeys {
    fn kind(&self) -> BackendKind {
        BackendKind::HardwareKeys
    }

    fn allocate_key(&self) -> Result<ProtectionKeyId, BackendError> {
        let mut st = self.lock();
        let raw = match sys::pku::alloc() {
            Ok(k) => k,
            Err(e) if e.raw_os_error() == Some(libc::ENOSPC) => return Err(BackendError::Exhausted),
            Err(e) => return Err(sys_err("pkey_alloc")(e)),
        };
        let key = ProtectionKeyId::new(raw as u8).expect("kernel key in range");
        st.0.claim(key)?;
        Ok(key)
    }

    fn release_key(&self, key: ProtectionKeyId) -> Result<(), BackendError> {
        let mut st = self.lock();
        st.0.release(key)?;
        sys::pku::free(key.get() as u32).map_err(sys_err("pkey_free"))
    }

    fn tag_region(&self, region: MemoryRegion, key: ProtectionKeyId) -> Result<(), BackendError> {
        let mut st = self.lock();
        if !st.0.is_live(key) {
            return Err(BackendError::NotAllocated(key));
        }
        st.1.check_new(region)?;
        sys::pku::mprotect(region.base(), region.len(), libc::PROT_READ | libc::PROT_WRITE, key.get() as u32)
            .map_err(sys_err("pkey_mprotect"))?;
        st.1.regions.push(Tagged { region, key, applied: Permission::ReadWrite });
        Ok(())
    }

    fn untag_region(&self, region: MemoryRegion) -> Result<(), BackendError> {
        let mut st = self.lock();
        st.1.remove(region)?;
        sys::pku::mprotect(region.base(), region.len(), libc::PROT_READ | libc::PROT_WRITE, 0)
            .map_err(sys_err("pkey_mprotect"))
    }

    #[inline]
    fn set_thread_rights(&self, word: AccessRightsWord) -> Result<(), BackendError> {
        if !word.keeps_default_key() {
            return Err(BackendError::DefaultKeyDenied(word));
        }
        unsafe { sys::pku::wrpkru(word.bits()) };
        RIGHTS_WRITES.with(|c| c.set(c.get() + 1));
        Ok(())
    }

    #[inline]
    fn read_thread_rights(&self) -> AccessRightsWord {
        AccessRightsWord::from_bits(unsafe { sys::pku::rdpkru() })
    }
}

#[derive(Debug, Default)]
struct EmuState {
    pool: KeyPool,
    tags: Tags,
}

static NEXT_EMU_ID: AtomicU64 = AtomicU64::new(1);

/// Page-permission emulation (`enforce = true`) or pure bookkeeping.
#[derive(Debug)]
pub struct Emulated {
    id: u64,
    enforce: bool,
    state: Mutex<EmuState>,
}

impl Emulated {
    pub fn new(enforce: bool) -> Self {
        Self { id: NEXT_EMU_ID.fetch_add(1, Ordering::Relaxed), enforce, state: Mutex::new(EmuState::default()) }
    }

    fn word(&self) -> AccessRightsWord {
        EMU_WORDS.with_borrow(|w| w.iter().find(|e| e.0 == self.id).map(|e| e.1)).unwrap_or_default()
    }

    fn store_word(&self, word: AccessRightsWord) {
        EMU_WORDS.with_borrow_mut(|w| match w.iter_mut().find(|e| e.0 == self.id) {
            Some(e) => e.1 = word,
            None => w.push((self.id, word)),
        })
    }

    fn lock(&self) -> MutexGuard<'_, EmuState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn apply(&self, t: &mut Tagged, want: Permission) -> Result<(), BackendError> {
        if self.enforce && t.applied != want {
            sys::protect(t.region.base(), t.region.len(), prot_for(want)).map_err(sys_err("mprotect"))?;
        }
        t.applied = want;
        Ok(())
    }
}

impl ProtectionBackend for Emulated {
    fn kind(&self) -> BackendKind {
        if self.enforce {
            BackendKind::PagePermission
        } else {
            BackendKind::Null
        }
    }

    fn allocate_key(&self) -> Result<ProtectionKeyId, BackendError> {
        Ok(self.lock().pool.allocate()?)
    }

    fn release_key(&self, key: ProtectionKeyId) -> Result<(), BackendError> {
        Ok(self.lock().pool.release(key)?)
    }

    fn tag_region(&self, region: MemoryRegion, key: ProtectionKeyId) -> Result<(), BackendError> {
        let mut st = self.lock();
        if !st.pool.is_live(key) {
            return Err(BackendError::NotAllocated(key));
        }
        st.tags.check_new(region)?;
        let want = self.word().permission(key);
        // The region may be PROT_NONE from reservation; start from a known
        // state before applying the current word.
        let mut t = Tagged { region, key, applied: Permission::NoAccess };
        let prot = if self.enforce { prot_for(want) } else { prot_for(Permission::ReadWrite) };
        sys::protect(region.base(), region.len(), prot).map_err(sys_err("mprotect"))?;
        t.applied = want;
        st.tags.regions.push(t);
        Ok(())
    }

    fn untag_region(&self, region: MemoryRegion) -> Result<(), BackendError> {
        let mut st = self.lock();
        let mut t = st.tags.remove(region)?;
        self.apply(&mut t, Permission::ReadWrite)
    }

    fn set_thread_rights(&self, word: AccessRightsWord) -> Result<(), BackendError> {
        if !word.keeps_default_key() {
            return Err(BackendError::DefaultKeyDenied(word));
        }
        self.store_word(word);
        if !self.enforce {
            return Ok(());
        }
        let mut st = self.lock();
        for t in &mut st.tags.regions {
            let want = word.permission(t.key);
            self.apply(t, want)?;
        }
        Ok(())
    }

    fn read_thread_rights(&self) -> AccessRightsWord {
        self.word()
    }

    fn enforces(&self) -> bool {
        self.enforce
    }

    fn process_wide(&self) -> bool {
        self.enforce
    }
}
