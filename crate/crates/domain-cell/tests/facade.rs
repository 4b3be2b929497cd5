use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicU32, Ordering};

use domain_cell::facade::{Mut, Val};
use domain_cell::manager::current_heap;
use domain_cell::{sandbox, DomainAllocator, Encodable, Executor, FaultInfo, FaultKind, Serializer};

#[global_allocator]
static ALLOC: DomainAllocator = DomainAllocator;

#[derive(Clone, Debug, PartialEq, Encodable)]
struct Counter {
    label: String,
    hits: u32,
}

#[derive(Clone, Debug, PartialEq, Encodable)]
enum Shape {
    Circle { r: f64 },
    Rect(f64, f64),
    Empty,
}

#[derive(Clone, Debug, PartialEq, Encodable)]
enum CallError {
    Negative(i64),
    Faulted(FaultInfo),
}

impl From<FaultInfo> for CallError {
    fn from(f: FaultInfo) -> Self {
        Self::Faulted(f)
    }
}

#[sandbox]
fn sum(xs: &[u64]) -> u64 {
    xs.iter().sum()
}

#[sandbox]
fn greet(name: &str, punct: &char) -> String {
    format!("hello, {name}{punct}")
}

#[sandbox]
fn scale(xs: &mut [i32], k: i32) {
    for x in xs {
        *x *= k;
    }
}

#[sandbox]
fn bump(c: &mut Counter, by: u32) -> u32 {
    c.hits += by;
    c.label.push('+');
    c.hits
}

#[sandbox]
fn consume(v: Vec<u8>) -> usize {
    let mut v = v;
    v.retain(|b| *b != 0);
    v.len()
}

#[sandbox]
fn area(s: Shape) -> f64 {
    match s {
        Shape::Circle { r } => 3.0 * r * r,
        Shape::Rect(w, h) => w * h,
        Shape::Empty => 0.0,
    }
}

// Writes just past the end of the domain heap, into the guard region.
fn poke_past_heap() {
    let heap = current_heap().expect("running inside a domain");
    unsafe { std::ptr::write_volatile(heap.end() as *mut u8, 1) };
}

#[sandbox]
fn overrun(n: u32) -> u32 {
    if n > 3 {
        poke_past_heap();
    }
    n * 2
}

#[sandbox]
fn checked_sqrt(x: i64) -> Result<u32, CallError> {
    if x < 0 {
        return Err(CallError::Negative(x));
    }
    if x == 999 {
        poke_past_heap();
    }
    Ok((x as f64).sqrt() as u32)
}

#[sandbox(persistent = false)]
fn transient(x: u8) -> u8 {
    x.wrapping_add(1)
}

#[sandbox]
fn explode(x: u8) -> u8 {
    if x == 0 {
        panic!("zero");
    }
    x
}

static HELPER_CALLS: AtomicU32 = AtomicU32::new(0);

#[sandbox(executor = Subprocess)]
fn count_calls() -> u32 {
    HELPER_CALLS.fetch_add(1, Ordering::SeqCst) + 1
}

#[sandbox(executor = Subprocess)]
fn null_write(n: u64) -> u64 {
    if n == 0 {
        unsafe { std::ptr::write_volatile(16 as *mut u64, 7) };
    }
    n + 1
}

fn fault_of(f: impl FnOnce()) -> FaultInfo {
    let payload = panic::catch_unwind(AssertUnwindSafe(f)).expect_err("call should have faulted");
    *payload.downcast::<FaultInfo>().expect("payload is a FaultInfo")
}

#[test]
fn wrappers_behave_like_the_plain_function() {
    assert_eq!(sum(&[1, 2, 3, 4]), 10);
    assert_eq!(greet("cell", &'!'), "hello, cell!");
    let mut xs = vec![1, -2, 3];
    scale(&mut xs, 3);
    assert_eq!(xs, [3, -6, 9]);
    let mut c = Counter { label: "c".into(), hits: 1 };
    assert_eq!(bump(&mut c, 4), 5);
    assert_eq!(c, Counter { label: "c+".into(), hits: 5 });
    assert_eq!(consume(vec![0, 1, 0, 2]), 2);
    assert_eq!(area(Shape::Rect(2.0, 3.5)), 7.0);
    assert_eq!(area(Shape::Circle { r: 2.0 }), 12.0);
    assert_eq!(area(Shape::Empty), 0.0);
}

#[sandbox]
fn heap_inside() -> bool {
    let v = Box::new([1u8; 64]);
    let heap = current_heap().unwrap();
    heap.contains(v.as_ptr() as usize)
}

#[test]
fn allocations_inside_land_in_the_domain_heap() {
    assert!(domain_cell::heap::interposer_installed());
    assert!(heap_inside());
}

#[test]
fn every_executor_and_serializer_agrees() {
    for exec in Executor::ALL {
        for ser in Serializer::ALL {
            let mut a = (vec![5u64, 6, 7],);
            assert_eq!(SUM_SANDBOX.invoke_with(exec, ser, &mut a), Ok(18), "{exec:?} {ser:?}");
            let mut a = (Mut(vec![1, 2]), Val::new(-1));
            SCALE_SANDBOX.invoke_with(exec, ser, &mut a).unwrap();
            assert_eq!(a.0 .0, [-1, -2], "{exec:?} {ser:?}");
            let mut a = (Mut(Counter { label: String::new(), hits: 0 }), Val::new(2));
            assert_eq!(BUMP_SANDBOX.invoke_with(exec, ser, &mut a), Ok(2));
            assert_eq!(a.0 .0.label, "+");
        }
    }
}

#[test]
fn violation_unwinds_and_the_next_call_works() {
    let f = fault_of(|| {
        overrun(4);
    });
    assert_eq!(f.kind(), FaultKind::DomainViolation);
    assert!(f.address().is_some());
    // The faulting domain was rewound and discarded; a fresh one serves the next call.
    assert_eq!(OVERRUN_SANDBOX.domain(), None);
    assert_eq!(overrun(3), 6);
    assert!(OVERRUN_SANDBOX.domain().is_some());
}

#[test]
fn result_functions_get_faults_as_err() {
    assert_eq!(checked_sqrt(81), Ok(9));
    assert_eq!(checked_sqrt(-2), Err(CallError::Negative(-2)));
    match checked_sqrt(999) {
        Err(CallError::Faulted(f)) => assert_eq!(f.kind(), FaultKind::DomainViolation),
        other => panic!("expected a fault, got {other:?}"),
    }
    assert_eq!(checked_sqrt(16), Ok(4));
}

#[test]
fn panics_inside_become_aborts() {
    let f = fault_of(|| {
        explode(0);
    });
    assert_eq!(f.kind(), FaultKind::ExplicitAbort);
    assert_eq!(f.address(), None);
    assert_eq!(explode(7), 7);
}

#[test]
fn persistent_domains_are_reused_and_transient_ones_are_not() {
    assert_eq!(sum(&[1]), 1);
    let first = SUM_SANDBOX.domain().expect("persistent domain stays bound");
    assert_eq!(sum(&[2]), 2);
    assert_eq!(SUM_SANDBOX.domain(), Some(first));

    assert_eq!(transient(1), 2);
    assert_eq!(TRANSIENT_SANDBOX.domain(), None);
}

#[test]
fn subprocess_state_lives_in_the_helper() {
    assert_eq!(count_calls(), 1);
    assert_eq!(count_calls(), 2);
    assert_eq!(HELPER_CALLS.load(Ordering::SeqCst), 0);
    let pid = COUNT_CALLS_SANDBOX.subprocess_pid().expect("helper running");
    COUNT_CALLS_SANDBOX.discard();
    assert_eq!(COUNT_CALLS_SANDBOX.subprocess_pid(), None);
    assert_eq!(count_calls(), 1);
    assert_ne!(COUNT_CALLS_SANDBOX.subprocess_pid(), Some(pid));
}

#[test]
fn subprocess_crash_is_a_violation_and_respawns() {
    assert_eq!(null_write(1), 2);
    let pid = NULL_WRITE_SANDBOX.subprocess_pid().unwrap();
    let f = fault_of(|| {
        null_write(0);
    });
    assert_eq!(f.kind(), FaultKind::DomainViolation);
    assert_eq!(f.address(), Some(16));
    assert_eq!(NULL_WRITE_SANDBOX.subprocess_pid(), None);
    assert_eq!(null_write(5), 6);
    assert_ne!(NULL_WRITE_SANDBOX.subprocess_pid(), Some(pid));
}

#[test]
fn derived_codecs_round_trip() {
    let shapes = vec![Shape::Circle { r: 1.5 }, Shape::Rect(1.0, -2.0), Shape::Empty];
    for ser in Serializer::ALL {
        let bytes = domain_cell::facade::encode_to_vec(ser, &shapes);
        let back: Vec<Shape> = ser.decode(&mut ser.reader(&bytes)).unwrap();
        assert_eq!(back, shapes);
    }
    let bad = domain_cell::facade::encode_to_vec(Serializer::Layout, &7u32);
    assert!(Serializer::Layout.decode::<Shape>(&mut Serializer::Layout.reader(&bad)).is_err());
}

#[sandbox(executor = Subprocess)]
fn nap(ms: u64) -> u64 {
    std::thread::sleep(std::time::Duration::from_millis(ms));
    ms
}

#[test]
fn killing_the_helper_mid_call_is_an_abort() {
    assert_eq!(nap(0), 0);
    let pid = NAP_SANDBOX.subprocess_pid().unwrap();
    let killer = std::thread::spawn(move || {
        std::thread::sleep(std::time::Duration::from_millis(100));
        unsafe { libc::kill(pid, libc::SIGKILL) };
    });
    let f = fault_of(|| {
        nap(10_000);
    });
    killer.join().unwrap();
    assert_eq!(f.kind(), FaultKind::ExplicitAbort);
    assert_eq!(nap(1), 1);
}

#[sandbox]
fn empty() {}

#[test]
fn empty_function_has_no_result_frames() {
    for exec in Executor::ALL {
        assert_eq!(EMPTY_SANDBOX.invoke_with(exec, Serializer::Layout, &mut ()), Ok(()));
    }
}
