//! Protection keys and the 32-bit per-thread rights word.
//!
//! Key `k` owns bits `2k` (access-disable) and `2k + 1` (write-disable). Key 0
//! tags all memory not explicitly assigned to a domain, so every word produced
//! here keeps it fully enabled.

use core::fmt;

/// Number of hardware key slots, including the default key.
pub const KEY_SLOTS: u8 = 16;

/// Number of keys that can be handed to domains at the same time.
pub const MAX_USER_KEYS: usize = KEY_SLOTS as usize - 1;

/// A 4-bit protection key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProtectionKeyId(u8);

impl ProtectionKeyId {
    /// The key every untagged page carries.
    pub const DEFAULT: Self = Self(0);

    /// Returns `None` when `id` is not in `0..16`.
    pub const fn new(id: u8) -> Option<Self> {
        if id < KEY_SLOTS {
            Some(Self(id))
        } else {
            None
        }
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    pub const fn is_default(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ProtectionKeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pkey{}", self.0)
    }
}

/// What a rights word allows for one key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Permission {
    ReadWrite,
    ReadOnly,
    NoAccess,
}

impl Permission {
    pub const ALL: [Permission; 3] = [Self::ReadWrite, Self::ReadOnly, Self::NoAccess];

    const fn bits(self) -> u32 {
        match self {
            Self::ReadWrite => 0b00,
            Self::ReadOnly => 0b10,
            Self::NoAccess => 0b11,
        }
    }

    pub const fn allows_read(self) -> bool {
        !matches!(self, Self::NoAccess)
    }

    pub const fn allows_write(self) -> bool {
        matches!(self, Self::ReadWrite)
    }
}

/// Image of the per-thread rights register.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AccessRightsWord(u32);

impl AccessRightsWord {
    /// Every key readable and writable.
    pub const ALL_ENABLED: Self = Self(0);

    /// Only key 0 enabled.
    pub const DEFAULT_ONLY: Self = Self(0xFFFF_FFFC);

    pub const fn from_bits(bits: u32) -> Self {
        Self(bits)
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub const fn access_disabled(self, key: ProtectionKeyId) -> bool {
        self.0 & (1 << (2 * key.0 as u32)) != 0
    }

    pub const fn write_disabled(self, key: ProtectionKeyId) -> bool {
        self.0 & (1 << (2 * key.0 as u32 + 1)) != 0
    }

    /// Effective permission for pages tagged with `key`. Access-disable wins
    /// over the write bit.
    pub const fn permission(self, key: ProtectionKeyId) -> Permission {
        if self.access_disabled(key) {
            Permission::NoAccess
        } else if self.write_disabled(key) {
            Permission::ReadOnly
        } else {
            Permission::ReadWrite
        }
    }

    #[must_use]
    pub const fn with_permission(self, key: ProtectionKeyId, perm: Permission) -> Self {
        let shift = 2 * key.0 as u32;
        Self((self.0 & !(0b11 << shift)) | (perm.bits() << shift))
    }

    /// Whether key 0 is fully enabled, the one requirement every word handed
    /// to a backend must meet.
    pub const fn keeps_default_key(self) -> bool {
        self.0 & 0b11 == 0
    }
}

impl fmt::Debug for AccessRightsWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccessRightsWord({:#010x})", self.0)
    }
}

impl fmt::LowerHex for AccessRightsWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

/// One entry of a [`compose_rights`] request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grant {
    pub key: ProtectionKeyId,
    pub access: bool,
    pub write: bool,
}

impl Grant {
    pub const fn read_write(key: ProtectionKeyId) -> Self {
        Self { key, access: true, write: true }
    }

    pub const fn read_only(key: ProtectionKeyId) -> Self {
        Self { key, access: true, write: false }
    }
}

/// Errors from rights composition and key bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RightsError {
    DuplicateKey(ProtectionKeyId),
    /// The word would cut off key 0.
    DefaultKeyDenied,
    /// All user keys are live.
    Exhausted,
    NotAllocated(ProtectionKeyId),
}

impl fmt::Display for RightsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateKey(k) => write!(f, "{k} granted more than once"),
            Self::DefaultKeyDenied => f.write_str("rights word denies the default key"),
            Self::Exhausted => write!(f, "all {MAX_USER_KEYS} protection keys are in use"),
            Self::NotAllocated(k) => write!(f, "{k} is not allocated"),
        }
    }
}

impl core::error::Error for RightsError {}

/// Builds a word from explicit grants: listed keys get the requested rights,
/// every other user key is fully disabled and key 0 stays enabled.
///
/// A grant for key 0 is accepted only if it asks for full access.
pub fn compose_rights(grants: &[Grant]) -> Result<AccessRightsWord, RightsError> {
    let mut seen = 0u16;
    let mut word = AccessRightsWord::DEFAULT_ONLY;
    for g in grants {
        let bit = 1u16 << g.key.0;
        if seen & bit != 0 {
            return Err(RightsError::DuplicateKey(g.key));
        }
        seen |= bit;
        let perm = match (g.access, g.write) {
            (true, true) => Permission::ReadWrite,
            (true, false) => Permission::ReadOnly,
            (false, _) => Permission::NoAccess,
        };
        if g.key.is_default() && perm != Permission::ReadWrite {
            return Err(RightsError::DefaultKeyDenied);
        }
        word = word.with_permission(g.key, perm);
    }
    Ok(word)
}

/// Lowest-free allocation table for user keys 1..=15.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KeyPool {
    live: u16,
    /// Keys that may never be handed out (e.g. claimed by someone else).
    reserved: u16,
}

impl KeyPool {
    pub const fn new() -> Self {
        Self { live: 0, reserved: 0 }
    }

    /// Marks `key` as unavailable without counting it as live.
    pub fn reserve(&mut self, key: ProtectionKeyId) {
        self.reserved |= 1 << key.0;
    }

    pub fn allocate(&mut self) -> Result<ProtectionKeyId, RightsError> {
        let free = !(self.live | self.reserved) & 0xFFFE;
        if free == 0 {
            return Err(RightsError::Exhausted);
        }
        let id = free.trailing_zeros() as u8;
        self.live |= 1 << id;
        Ok(ProtectionKeyId(id))
    }

    /// Records a key obtained from elsewhere (the kernel) as live.
    pub fn claim(&mut self, key: ProtectionKeyId) -> Result<(), RightsError> {
        let bit = 1u16 << key.0;
        if key.is_default() || self.live & bit != 0 {
            return Err(RightsError::DuplicateKey(key));
        }
        self.live |= bit;
        Ok(())
    }

    pub fn release(&mut self, key: ProtectionKeyId) -> Result<(), RightsError> {
        let bit = 1u16 << key.0;
        if key.is_default() || self.live & bit == 0 {
            return Err(RightsError::NotAllocated(key));
        }
        self.live &= !bit;
        Ok(())
    }

    pub const fn is_live(&self, key: ProtectionKeyId) -> bool {
        self.live & (1 << key.0) != 0
    }

    pub const fn live_count(&self) -> usize {
        self.live.count_ones() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec::Vec;

    fn key(id: u8) -> ProtectionKeyId {
        ProtectionKeyId::new(id).unwrap()
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose_rights(&[]).unwrap().bits(), 0xFFFF_FFFC);
        assert_eq!(compose_rights(&[Grant::read_write(key(1))]).unwrap().bits(), 0xFFFF_FFF0);
        assert_eq!(compose_rights(&[Grant::read_only(key(2))]).unwrap().bits(), 0xFFFF_FFEC);
    }

    #[test]
    fn compose_matches_bit_oracle_for_every_single_grant() {
        // Oracle: start from "every bit set", clear key 0, then clear
        // individual bits one at a time from the grant flags.
        for id in 1..16u8 {
            for (access, write) in [(true, true), (true, false), (false, true), (false, false)] {
                let mut expect = u32::MAX;
                expect &= !0b11;
                if access {
                    expect &= !(1 << (2 * id));
                    if write {
                        expect &= !(1 << (2 * id + 1));
                    }
                }
                let got = compose_rights(&[Grant { key: key(id), access, write }]).unwrap();
                assert_eq!(got.bits(), expect, "key {id} access {access} write {write}");
            }
        }
    }

    #[test]
    fn duplicate_grant_is_rejected() {
        let g = Grant::read_write(key(4));
        assert_eq!(compose_rights(&[g, Grant::read_only(key(4))]), Err(RightsError::DuplicateKey(key(4))));
    }

    #[test]
    fn default_key_must_stay_enabled() {
        assert_eq!(compose_rights(&[Grant::read_only(key(0))]), Err(RightsError::DefaultKeyDenied));
        assert_eq!(compose_rights(&[Grant::read_write(key(0))]).unwrap(), AccessRightsWord::DEFAULT_ONLY);
    }

    #[test]
    fn permission_decoding() {
        let w = AccessRightsWord::from_bits(0b10_11_00 << 2);
        assert_eq!(w.permission(key(0)), Permission::ReadWrite);
        assert_eq!(w.permission(key(1)), Permission::ReadWrite);
        assert_eq!(w.permission(key(2)), Permission::NoAccess);
        assert_eq!(w.permission(key(3)), Permission::ReadOnly);
        // access-disable alone still blocks writes
        let only_ad = AccessRightsWord::from_bits(1 << 2);
        assert_eq!(only_ad.permission(key(1)), Permission::NoAccess);
        assert!(!only_ad.permission(key(1)).allows_write());
    }

    #[test]
    fn with_permission_roundtrip() {
        let mut w = AccessRightsWord::ALL_ENABLED;
        for id in 0..16 {
            for p in Permission::ALL {
                w = w.with_permission(key(id), p);
                assert_eq!(w.permission(key(id)), p);
            }
        }
    }

    #[test]
    fn key_range() {
        assert!(ProtectionKeyId::new(15).is_some());
        assert!(ProtectionKeyId::new(16).is_none());
    }

    #[test]
    fn pool_is_lowest_free_and_exhausts_at_fifteen() {
        let mut pool = KeyPool::new();
        assert_eq!(pool.allocate().unwrap(), key(1));
        let mut got: Vec<u8> = (0..14).map(|_| pool.allocate().unwrap().get()).collect();
        got.sort_unstable();
        assert_eq!(got, (2..16).collect::<Vec<_>>());
        assert_eq!(pool.allocate(), Err(RightsError::Exhausted));
        pool.release(key(7)).unwrap();
        assert_eq!(pool.allocate().unwrap(), key(7));
    }

    #[test]
    fn pool_release_checks_liveness() {
        let mut pool = KeyPool::new();
        assert_eq!(pool.release(key(3)), Err(RightsError::NotAllocated(key(3))));
        assert_eq!(pool.release(key(0)), Err(RightsError::NotAllocated(key(0))));
        let k = pool.allocate().unwrap();
        pool.release(k).unwrap();
        assert_eq!(pool.allocate().unwrap(), k);
    }

    #[test]
    fn pool_skips_reserved_keys() {
        let mut pool = KeyPool::new();
        pool.reserve(key(1));
        pool.reserve(key(2));
        assert_eq!(pool.allocate().unwrap(), key(3));
        assert_eq!(pool.live_count(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn allocation_never_returns_live_key(ops in proptest::collection::vec(any::<(bool, u8)>(), 0..200)) {
                let mut pool = KeyPool::new();
                let mut live = std::collections::BTreeSet::new();
                for (alloc, pick) in ops {
                    if alloc {
                        match pool.allocate() {
                            Ok(k) => {
                                prop_assert!(live.insert(k.get()));
                                // lowest free
                                prop_assert!((1..k.get()).all(|i| live.contains(&i)));
                            }
                            Err(e) => {
                                prop_assert_eq!(e, RightsError::Exhausted);
                                prop_assert_eq!(live.len(), MAX_USER_KEYS);
                            }
                        }
                    } else if let Some(&k) = live.iter().nth(pick as usize % (live.len().max(1))) {
                        pool.release(key(k)).unwrap();
                        live.remove(&k);
                    }
                    prop_assert_eq!(pool.live_count(), live.len());
                }
            }
        }
    }
}
