//! Identifiers, configuration, lifecycle states and fault reports shared by
//! the runtime and its callers.

use core::fmt;

use crate::layout::{ByteSink, DecodeError, Encodable, Reader, TypeDesc};
use crate::portable::PortableCodec;

/// Caller-chosen secure domain identifier. Calls that name the same SDI share
/// a persistent domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sdi(pub u64);

/// Internal unique domain index, assigned monotonically from 1 and never
/// reused within a process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Udi(pub u32);

impl fmt::Display for Sdi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sdi {}", self.0)
    }
}

impl fmt::Display for Udi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "udi {}", self.0)
    }
}

pub const DEFAULT_STACK_SIZE: usize = 1 << 20;
pub const DEFAULT_HEAP_SIZE: usize = 16 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DomainConfig {
    pub stack_size: usize,
    pub heap_size: usize,
    /// Keep the domain (and its heap contents) alive between calls that use
    /// the same SDI.
    pub persistent: bool,
    /// The parent may read and write the domain's memory, which is how
    /// arguments get staged.
    pub parent_accessible: bool,
    /// Whether the parent's own rights word keeps the domain key enabled.
    /// When false the parent loses access to the domain once the call is
    /// over and regains it only while staging the next one.
    pub parent_retains_access_during_run: bool,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            stack_size: DEFAULT_STACK_SIZE,
            heap_size: DEFAULT_HEAP_SIZE,
            persistent: true,
            parent_accessible: true,
            parent_retains_access_during_run: true,
        }
    }
}

impl DomainConfig {
    pub fn transient() -> Self {
        Self { persistent: false, ..Self::default() }
    }

    pub fn with_heap_size(self, heap_size: usize) -> Self {
        Self { heap_size, ..self }
    }

    pub fn with_stack_size(self, stack_size: usize) -> Self {
        Self { stack_size, ..self }
    }

    pub fn validate(&self, page: usize) -> Result<(), ConfigError> {
        for (what, size) in [("stack", self.stack_size), ("heap", self.heap_size)] {
            if size == 0 || size % page != 0 {
                return Err(ConfigError::SizeNotPageMultiple { what, size, page });
            }
        }
        if self.heap_size >= crate::tlsf::MAX_REGION {
            return Err(ConfigError::HeapTooLarge(self.heap_size));
        }
        if self.heap_size < crate::tlsf::MIN_REGION {
            return Err(ConfigError::HeapTooSmall(self.heap_size));
        }
        if self.stack_size < 4 * crate::transfer::SLOT_SIZE {
            return Err(ConfigError::StackTooSmall(self.stack_size));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigError {
    SizeNotPageMultiple { what: &'static str, size: usize, page: usize },
    HeapTooLarge(usize),
    HeapTooSmall(usize),
    StackTooSmall(usize),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SizeNotPageMultiple { what, size, page } => {
                write!(f, "{what} size {size} is not a positive multiple of the page size {page}")
            }
            Self::HeapTooLarge(n) => write!(f, "heap size {n} must be below 4 GiB"),
            Self::HeapTooSmall(n) => write!(f, "heap size {n} is below the allocator minimum"),
            Self::StackTooSmall(n) => write!(f, "stack size {n} leaves no room below the transfer slot"),
        }
    }
}

impl core::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DomainState {
    Initialized,
    Active,
    Deinitialized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateError {
    pub found: DomainState,
    pub wanted: &'static str,
}

impl fmt::Display for StateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "domain is {:?}, operation needs {}", self.found, self.wanted)
    }
}

impl core::error::Error for StateError {}

impl DomainState {
    pub fn enter(self) -> Result<DomainState, StateError> {
        match self {
            Self::Initialized => Ok(Self::Active),
            found => Err(StateError { found, wanted: "Initialized" }),
        }
    }

    /// Persistent domains return to `Initialized` so the next call with the
    /// same SDI can enter again; transient ones become `Deinitialized`.
    pub fn exit(self, persistent: bool) -> Result<DomainState, StateError> {
        match self {
            Self::Active if persistent => Ok(Self::Initialized),
            Self::Active => Ok(Self::Deinitialized),
            found => Err(StateError { found, wanted: "Active" }),
        }
    }

    pub fn check_discardable(self) -> Result<(), StateError> {
        match self {
            Self::Active => Err(StateError { found: self, wanted: "not Active" }),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaultKind {
    /// Access outside the memory the domain may touch.
    DomainViolation,
    /// A stack-protector check failed inside the domain.
    StackSmash,
    /// The domain aborted: abort signal, panic, or failed staging.
    ExplicitAbort,
}

/// What went wrong inside a domain. Carries an address exactly when the
/// fault was a memory access.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaultInfo {
    kind: FaultKind,
    address: Option<usize>,
    udi: Udi,
}

impl FaultInfo {
    pub const fn violation(udi: Udi, address: usize) -> Self {
        Self { kind: FaultKind::DomainViolation, address: Some(address), udi }
    }

    pub const fn stack_smash(udi: Udi) -> Self {
        Self { kind: FaultKind::StackSmash, address: None, udi }
    }

    pub const fn abort(udi: Udi) -> Self {
        Self { kind: FaultKind::ExplicitAbort, address: None, udi }
    }

    pub const fn kind(&self) -> FaultKind {
        self.kind
    }

    pub const fn address(&self) -> Option<usize> {
        self.address
    }

    pub const fn udi(&self) -> Udi {
        self.udi
    }

    #[must_use]
    pub const fn with_udi(self, udi: Udi) -> Self {
        Self { udi, ..self }
    }
}

impl fmt::Debug for FaultInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("FaultInfo");
        d.field("kind", &self.kind);
        if let Some(a) = self.address {
            d.field("address", &format_args!("{a:#x}"));
        }
        d.field("udi", &self.udi.0).finish()
    }
}

impl fmt::Display for FaultInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.address) {
            (FaultKind::DomainViolation, Some(a)) => write!(f, "domain violation at {a:#x} in {}", self.udi),
            (FaultKind::StackSmash, _) => write!(f, "stack smashing detected in {}", self.udi),
            _ => write!(f, "abort in {}", self.udi),
        }
    }
}

impl core::error::Error for FaultInfo {}

// Faults travel back through result-like returns, so they need both
// encodings. Layout: kind byte, address as Option<usize>, udi.

impl FaultKind {
    const fn tag(self) -> u8 {
        match self {
            Self::DomainViolation => 0,
            Self::StackSmash => 1,
            Self::ExplicitAbort => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self, DecodeError> {
        match t {
            0 => Ok(Self::DomainViolation),
            1 => Ok(Self::StackSmash),
            2 => Ok(Self::ExplicitAbort),
            _ => Err(DecodeError::Malformed("fault kind")),
        }
    }
}

fn fault_from_parts(kind: FaultKind, address: Option<usize>, udi: u32) -> Result<FaultInfo, DecodeError> {
    if (kind == FaultKind::DomainViolation) != address.is_some() {
        return Err(DecodeError::Malformed("fault address present iff domain violation"));
    }
    Ok(FaultInfo { kind, address, udi: Udi(udi) })
}

impl Encodable for FaultInfo {
    const MIN_ENCODED: usize = 1 + 1 + 4;

    fn describe() -> TypeDesc {
        TypeDesc::Record {
            name: "FaultInfo",
            fields: alloc::vec![
                ("kind", TypeDesc::Int { signed: false, bytes: 1 }),
                ("address", TypeDesc::Option(alloc::boxed::Box::new(usize::describe()))),
                ("udi", u32::describe()),
            ],
        }
    }

    fn measure(&self) -> usize {
        1 + self.address.measure() + 4
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        self.kind.tag().entomb(out);
        self.address.entomb(out);
        self.udi.0.entomb(out);
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = FaultKind::from_tag(u8::exhume_from(r)?)?;
        let address = Option::<usize>::exhume_from(r)?;
        fault_from_parts(kind, address, u32::exhume_from(r)?)
    }
}

impl PortableCodec for FaultInfo {
    fn portable_size(&self) -> usize {
        1 + self.address.portable_size() + 4
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        self.kind.tag().encode_portable(out);
        self.address.encode_portable(out);
        self.udi.0.encode_portable(out);
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = FaultKind::from_tag(u8::decode_portable(r)?)?;
        let address = Option::<usize>::decode_portable(r)?;
        fault_from_parts(kind, address, u32::decode_portable(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_machine() {
        let s = DomainState::Initialized;
        let active = s.enter().unwrap();
        assert_eq!(active, DomainState::Active);
        assert!(active.enter().is_err());
        assert_eq!(active.exit(true), Ok(DomainState::Initialized));
        assert_eq!(active.exit(false), Ok(DomainState::Deinitialized));
        assert!(DomainState::Initialized.exit(true).is_err());
        assert!(DomainState::Deinitialized.enter().is_err());
        assert!(active.check_discardable().is_err());
        assert!(DomainState::Deinitialized.check_discardable().is_ok());
    }

    #[test]
    fn fault_address_only_for_violations() {
        assert_eq!(FaultInfo::violation(Udi(1), 0x10).address(), Some(0x10));
        assert_eq!(FaultInfo::stack_smash(Udi(1)).address(), None);
        assert_eq!(FaultInfo::abort(Udi(1)).address(), None);
    }

    #[test]
    fn fault_round_trips_both_encodings() {
        for f in [FaultInfo::violation(Udi(3), 0xdead_0000), FaultInfo::stack_smash(Udi(4)), FaultInfo::abort(Udi(5))] {
            let (back, rest) = crate::layout::exhume::<FaultInfo>(&crate::layout::SerialFrame::of(&f).into_bytes())
                .map(|(v, r)| (v, r.len()))
                .unwrap();
            assert_eq!((back, rest), (f, 0));
            let (back, _) = crate::portable::from_portable::<FaultInfo>(&crate::portable::to_portable(&f)).unwrap();
            assert_eq!(back, f);
        }
        // An abort that claims an address is rejected.
        let mut bad = alloc::vec::Vec::new();
        crate::layout::entomb(&2u8, &mut bad);
        crate::layout::entomb(&Some(1usize), &mut bad);
        crate::layout::entomb(&1u32, &mut bad);
        assert!(crate::layout::exhume::<FaultInfo>(&bad).is_err());
    }

    #[test]
    fn config_validation() {
        let page = 4096;
        assert!(DomainConfig::default().validate(page).is_ok());
        assert!(DomainConfig::default().with_heap_size(1000).validate(page).is_err());
        assert!(DomainConfig::default().with_heap_size(1 << 32).validate(page).is_err());
        assert!(DomainConfig::default().with_stack_size(0).validate(page).is_err());
        assert!(DomainConfig::default().with_heap_size(page).validate(page).is_ok());
    }
}
