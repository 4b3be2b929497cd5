use std::ptr::NonNull;

use domain_cell_core::domain::{DomainState, FaultInfo, FaultKind, Udi};
use domain_cell_core::layout::{entomb, exhume, SerialFrame};
use domain_cell_core::region::MemoryRegion;
use domain_cell_core::rights::{compose_rights, AccessRightsWord, Grant, Permission, ProtectionKeyId};
use domain_cell_core::rle;
use domain_cell_core::tlsf::{self, Tlsf};
use domain_cell_core::transfer::{TransferError, TransferMetadata};
use proptest::prelude::*;

fn key(k: u8) -> ProtectionKeyId {
    ProtectionKeyId::new(k).unwrap()
}

// Two bits per key: access-disable at 2k, write-disable at 2k + 1.
fn bits_for(k: u8, p: Permission) -> u32 {
    let (ad, wd) = match p {
        Permission::ReadWrite => (0, 0),
        Permission::ReadOnly => (0, 1),
        Permission::NoAccess => (1, 1),
    };
    (ad | wd << 1) << (2 * k)
}

#[test]
fn composed_word_matches_bit_oracle() {
    let w = compose_rights(&[Grant::read_write(key(2)), Grant::read_only(key(9))]).unwrap();
    let mut expect = 0;
    for k in 1..16 {
        let p = match k {
            2 => Permission::ReadWrite,
            9 => Permission::ReadOnly,
            _ => Permission::NoAccess,
        };
        expect |= bits_for(k, p);
    }
    assert_eq!(w.bits(), expect);
    assert!(w.keeps_default_key());
}

proptest! {
    #[test]
    fn with_permission_touches_one_key(bits in any::<u32>(), k in 0u8..16, p in 0usize..3) {
        let p = Permission::ALL[p];
        let w = AccessRightsWord::from_bits(bits).with_permission(key(k), p);
        prop_assert_eq!(w.permission(key(k)), p);
        let mask = 0b11u32 << (2 * k);
        prop_assert_eq!(w.bits() & !mask, bits & !mask);
    }

    #[test]
    fn rle_round_trips(x in proptest::collection::vec(prop_oneof![Just(9u8), any::<u8>()], 0..1500)) {
        let c = rle::compress(&x);
        prop_assert!(c.len() <= rle::max_compressed_len(x.len()));
        prop_assert_eq!(rle::uncompress(&c), Some(x));
    }

    #[test]
    fn slot_bytes_round_trip(base in any::<usize>(), length in any::<usize>(), capacity in any::<usize>()) {
        let m = TransferMetadata { base, length, capacity };
        prop_assert_eq!(TransferMetadata::from_slot_bytes(&m.to_slot_bytes()), m);
    }
}

#[test]
fn rle_examples() {
    assert_eq!(rle::compress(&[]), Vec::<u8>::new());
    assert_eq!(rle::compress(&[7, 7, 7]), [3, 7]);
    assert_eq!(rle::uncompress(&[3, 7]), Some(vec![7, 7, 7]));
    assert_eq!(rle::uncompress(&[3, 7, 1]), None);
}

#[test]
fn frames_peel_off_in_order() {
    let mut buf = Vec::new();
    entomb(&42u32, &mut buf);
    entomb(&String::from("frame"), &mut buf);
    entomb(&Some(vec![1u8, 2, 3]), &mut buf);
    let (a, rest) = exhume::<u32>(&buf).unwrap();
    let (b, rest) = exhume::<String>(rest).unwrap();
    let (c, rest) = exhume::<Option<Vec<u8>>>(rest).unwrap();
    assert_eq!((a, b.as_str(), c), (42, "frame", Some(vec![1, 2, 3])));
    assert!(rest.is_empty());
    assert_eq!(SerialFrame::of(&(7u8, -1i16)).decode::<(u8, i16)>(), Ok((7, -1)));
}

#[test]
fn metadata_must_sit_inside_the_heap() {
    let heap = MemoryRegion::new(0x10000, 0x1000).unwrap();
    let ok = TransferMetadata { base: 0x10100, length: 8, capacity: 16 };
    assert_eq!(ok.validate(&heap), Ok(()));
    let outside = TransferMetadata { base: 0x10ff8, length: 8, capacity: 16 };
    assert!(matches!(outside.validate(&heap), Err(TransferError::Malformed(_))));
    let inverted = TransferMetadata { length: 32, ..ok };
    assert!(matches!(inverted.validate(&heap), Err(TransferError::Malformed(_))));
}

#[test]
fn lifecycle_and_fault_shapes() {
    let s = DomainState::Initialized.enter().unwrap();
    assert_eq!(s, DomainState::Active);
    assert!(s.check_discardable().is_err());
    assert_eq!(s.exit(true), Ok(DomainState::Initialized));
    assert_eq!(s.exit(false), Ok(DomainState::Deinitialized));
    assert!(DomainState::Deinitialized.enter().is_err());

    let f = FaultInfo::violation(Udi(3), 0xdead);
    assert_eq!((f.kind(), f.address(), f.udi()), (FaultKind::DomainViolation, Some(0xdead), Udi(3)));
    assert_eq!(FaultInfo::abort(Udi(1)).address(), None);
}

#[test]
fn emptied_heap_is_one_free_block_again() {
    let mut arena = vec![0u64; 1 << 14];
    let mut heap = unsafe { Tlsf::create(arena.as_mut_ptr().cast(), arena.len() * 8) }.unwrap();
    let fresh = heap.census().unwrap();
    let mut ptrs: Vec<NonNull<u8>> = (0..64).filter_map(|i| heap.allocate(i * 37)).collect();
    assert_eq!(ptrs.len(), 64);
    // Free in an interleaved order so coalescing runs in both directions.
    let odd: Vec<_> = ptrs.iter().copied().skip(1).step_by(2).collect();
    ptrs = ptrs.into_iter().step_by(2).collect();
    for p in odd.into_iter().chain(ptrs) {
        unsafe { heap.free(p) };
    }
    assert_eq!(heap.census().unwrap(), fresh);
    assert_eq!(fresh.free_blocks, 1);
    assert_eq!(fresh.free_bytes + fresh.header_bytes, heap.usable_size());
    assert_eq!(fresh.header_bytes, 2 * tlsf::HEADER);
}
