// Own binary: hardware keys are per process, and other tests would hold some.

use domain_cell::backend::{self, BackendKind};
use domain_cell::{DomainConfig, DomainError, DomainManager, Sdi};

fn small() -> DomainConfig {
    DomainConfig::default().with_heap_size(1 << 16).with_stack_size(1 << 16)
}

// Fills the key space, checks the next init is refused, then checks a
// discarded domain's key can be taken again.
fn exhaust(kind: BackendKind) -> usize {
    let m = DomainManager::with_kind(kind).unwrap();
    let mut live = Vec::new();
    let err = loop {
        match m.init_domain(Sdi(live.len() as u64 + 1), small()) {
            Ok(u) => live.push(u),
            Err(e) => break e,
        }
        assert!(live.len() <= 15, "more than 15 user domains");
    };
    assert!(matches!(err, DomainError::Exhausted), "{err:?}");
    let n = live.len();
    m.discard_domain(live.pop().unwrap()).unwrap();
    assert!(m.init_domain(Sdi(1000), small()).is_ok());
    n
}

#[test]
fn sixteenth_init_is_refused_under_emulation() {
    assert_eq!(exhaust(BackendKind::Null), 15);
    assert_eq!(exhaust(BackendKind::PagePermission), 15);
}

#[test]
fn hardware_keys_run_out_at_or_before_fifteen() {
    if !backend::hardware_available() {
        return;
    }
    // The kernel may hold keys back for itself, so the count can be lower.
    assert!(exhaust(BackendKind::HardwareKeys) >= 1);
}
