//! Stack switching into a domain and signal-driven rewind out of it.
//!
//! [`run_on_stack`] saves the caller's callee-preserved registers on the
//! current stack, records the stack pointer and a resume address in an
//! [`ExecutionSnapshot`], switches to the domain stack and calls the job.
//! If a fault signal arrives while the snapshot is armed, the handler edits
//! the interrupted context so that `sigreturn` lands on the resume address
//! with the saved stack pointer. From there the switch routine restores the
//! registers and returns to its caller with a "rewound" status, exactly as if
//! the job had returned.
//!
//! Faults with no armed snapshot on the faulting thread are passed to the
//! previously installed handler, or re-raised with the default disposition.

use std::cell::Cell;
use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::panic::{self, AssertUnwindSafe};
use std::ptr;
use std::sync::Once;

use crate::sys;

/// Register state to return to when a domain faults.
#[repr(C)]
#[derive(Debug)]
pub struct ExecutionSnapshot {
    /// Stack pointer after the callee-preserved registers were pushed.
    saved_sp: usize,
    /// Continuation inside the switch routine.
    resume_ip: usize,
    /// Set once the handler has redirected execution here; a snapshot is
    /// never restored twice.
    consumed: bool,
}

/// What the signal handler observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawFault {
    pub signal: i32,
    pub code: i32,
    pub addr: usize,
    /// The domain announced a stack-protector failure before aborting.
    pub stack_smash: bool,
}

#[repr(C)]
struct ArmedFrame {
    // The switch routine writes through the first two words.
    snapshot: ExecutionSnapshot,
    fault: Option<RawFault>,
    smash_pending: bool,
    prev: *mut ArmedFrame,
}

thread_local! {
    // Read from signal context: must stay const-initialized and drop-free.
    static ARMED: Cell<*mut ArmedFrame> = const { Cell::new(ptr::null_mut()) };
}

/// Whether the calling thread is executing a domain job right now.
pub fn in_domain() -> bool {
    !ARMED.with(Cell::get).is_null()
}

/// Outcome of [`run_on_stack`].
#[derive(Debug)]
pub enum Landing<R> {
    Returned(R),
    Faulted(RawFault),
    /// The job panicked; the payload was dropped on the domain side.
    Panicked,
}

// Saves callee-preserved state, switches to `stack_top`, calls
// `entry(ctx)`. Returns 0 when `entry` returns and 1 when the fault handler
// redirected execution to the resume label.
#[cfg(target_arch = "x86_64")]
#[unsafe(naked)]
unsafe extern "C" fn switch_and_call(
    snapshot: *mut ExecutionSnapshot,
    stack_top: usize,
    entry: unsafe extern "C" fn(*mut u8),
    ctx: *mut u8,
) -> u32 {
    core::arch::naked_asm!(
        "push rbp",
        "push rbx",
        "push r12",
        "push r13",
        "push r14",
        "push r15",
        "sub rsp, 8",
        "stmxcsr [rsp]",
        "fnstcw [rsp + 4]",
        "mov [rdi], rsp",
        "lea rax, [rip + 2f]",
        "mov [rdi + 8], rax",
        "mov rsp, rsi",
        // Keep the snapshot pointer on the new stack; two pushes keep the
        // call site 16-byte aligned.
        "push rdi",
        "push rdi",
        "mov rdi, rcx",
        "call rdx",
        "pop rdi",
        "pop rdi",
        "mov rsp, [rdi]",
        "xor eax, eax",
        "jmp 3f",
        "2:",
        "mov eax, 1",
        "3:",
        "ldmxcsr [rsp]",
        "fldcw [rsp + 4]",
        "add rsp, 8",
        "pop r15",
        "pop r14",
        "pop r13",
        "pop r12",
        "pop rbx",
        "pop rbp",
        "ret",
    )
}

struct Job<F, R> {
    f: Option<F>,
    out: Option<R>,
    panicked: bool,
}

unsafe extern "C" fn trampoline<F: FnOnce() -> R, R>(ctx: *mut u8) {
    let job = &mut *ctx.cast::<Job<F, R>>();
    let Some(f) = job.f.take() else { return };
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => job.out = Some(r),
        Err(payload) => {
            // Drop here: the payload was allocated on the domain side.
            drop(payload);
            job.panicked = true;
        }
    }
}

/// Runs `f` on the stack ending at `stack_top` and catches memory faults,
/// aborts and panics raised while it runs.
///
/// # Safety
/// `stack_top` must be the 16-byte aligned top of a writable stack that is
/// large enough for `f` and not in use. After a fault, values owned by `f`'s
/// frames are leaked, never dropped.
pub unsafe fn run_on_stack<R>(stack_top: usize, f: impl FnOnce() -> R) -> Landing<R> {
    install_handlers();
    ensure_altstack();
    debug_assert_eq!(stack_top % 16, 0);
    let mut frame = ArmedFrame {
        snapshot: ExecutionSnapshot { saved_sp: 0, resume_ip: 0, consumed: false },
        fault: None,
        smash_pending: false,
        prev: ARMED.with(Cell::get),
    };
    let mut job = Job { f: Some(f), out: None, panicked: false };
    let frame_ptr: *mut ArmedFrame = &mut frame;
    ARMED.with(|a| a.set(frame_ptr));
    let status = switch_and_call(
        ptr::addr_of_mut!((*frame_ptr).snapshot),
        stack_top,
        trampoline_for(&job),
        ptr::addr_of_mut!(job).cast(),
    );
    ARMED.with(|a| a.set((*frame_ptr).prev));
    if status != 0 {
        let fault = (*frame_ptr).fault.take().expect("rewound without a recorded fault");
        return Landing::Faulted(fault);
    }
    if job.panicked {
        return Landing::Panicked;
    }
    match job.out.take() {
        Some(r) => Landing::Returned(r),
        None => Landing::Panicked,
    }
}

fn trampoline_for<F: FnOnce() -> R, R>(_job: &Job<F, R>) -> unsafe extern "C" fn(*mut u8) {
    trampoline::<F, R>
}

/// Reports a stack-protector failure: inside a domain this rewinds with a
/// stack-smash fault, elsewhere it aborts the process.
pub fn report_stack_smash() -> ! {
    let f = ARMED.with(Cell::get);
    if !f.is_null() {
        unsafe { (*f).smash_pending = true };
    }
    unsafe { libc::raise(libc::SIGABRT) };
    std::process::abort()
}

const SIGNALS: [libc::c_int; 3] = [libc::SIGSEGV, libc::SIGBUS, libc::SIGABRT];

struct PrevActions(UnsafeCell<[MaybeUninit<libc::sigaction>; 3]>);

// Written once under `INSTALL` before the handler can run, read-only after.
unsafe impl Sync for PrevActions {}

static PREV: PrevActions = PrevActions(UnsafeCell::new([MaybeUninit::uninit(); 3]));
static INSTALL: Once = Once::new();

/// Installs the fault handler for SIGSEGV, SIGBUS and SIGABRT. Idempotent.
pub fn install_handlers() {
    INSTALL.call_once(|| unsafe {
        let prev = &mut *PREV.0.get();
        for (i, &sig) in SIGNALS.iter().enumerate() {
            let mut act: libc::sigaction = std::mem::zeroed();
            act.sa_sigaction = on_signal as *const () as usize;
            act.sa_flags = libc::SA_SIGINFO | libc::SA_ONSTACK;
            libc::sigemptyset(&mut act.sa_mask);
            if libc::sigaction(sig, &act, prev[i].as_mut_ptr()) != 0 {
                panic!("installing handler for signal {sig}: {}", std::io::Error::last_os_error());
            }
        }
    });
}

unsafe fn prev_action(sig: libc::c_int) -> *const libc::sigaction {
    let i = SIGNALS.iter().position(|&s| s == sig).unwrap_or(0);
    (*PREV.0.get())[i].as_ptr()
}

unsafe extern "C" fn on_signal(sig: libc::c_int, info: *mut libc::siginfo_t, ctx: *mut libc::c_void) {
    let frame = ARMED.with(Cell::get);
    if frame.is_null() || (*frame).snapshot.consumed {
        chain(sig, info, ctx);
        return;
    }
    let frame = &mut *frame;
    frame.snapshot.consumed = true;
    frame.fault = Some(RawFault {
        signal: sig,
        code: (*info).si_code,
        addr: (*info).si_addr() as usize,
        stack_smash: sig == libc::SIGABRT && frame.smash_pending,
    });
    let uc = &mut *ctx.cast::<libc::ucontext_t>();
    uc.uc_mcontext.gregs[libc::REG_RSP as usize] = frame.snapshot.saved_sp as i64;
    uc.uc_mcontext.gregs[libc::REG_RIP as usize] = frame.snapshot.resume_ip as i64;
    // The ABI expects the direction flag clear at function boundaries.
    uc.uc_mcontext.gregs[libc::REG_EFL as usize] &= !(1 << 10);
}

unsafe fn chain(sig: libc::c_int, info: *mut libc::siginfo_t, ctx: *mut libc::c_void) {
    let prev = &*prev_action(sig);
    let handler = prev.sa_sigaction;
    if handler == libc::SIG_DFL || handler == libc::SIG_IGN {
        let mut dfl: libc::sigaction = std::mem::zeroed();
        dfl.sa_sigaction = libc::SIG_DFL;
        libc::sigaction(sig, &dfl, ptr::null_mut());
        // Hardware faults re-trigger when the instruction restarts; signals
        // sent by software have to be sent again.
        if (*info).si_code <= 0 {
            libc::raise(sig);
        }
        return;
    }
    if prev.sa_flags & libc::SA_SIGINFO != 0 {
        let f: extern "C" fn(libc::c_int, *mut libc::siginfo_t, *mut libc::c_void) = std::mem::transmute(handler);
        f(sig, info, ctx);
    } else {
        let f: extern "C" fn(libc::c_int) = std::mem::transmute(handler);
        f(sig);
    }
}

struct AltStack {
    _map: sys::Mapping,
}

impl Drop for AltStack {
    fn drop(&mut self) {
        let ss = libc::stack_t { ss_sp: ptr::null_mut(), ss_flags: libc::SS_DISABLE, ss_size: 0 };
        unsafe { libc::sigaltstack(&ss, ptr::null_mut()) };
    }
}

thread_local! {
    static OWN_ALTSTACK: UnsafeCell<Option<AltStack>> = const { UnsafeCell::new(None) };
    static ALTSTACK_CHECKED: Cell<bool> = const { Cell::new(false) };
}

const ALTSTACK_SIZE: usize = 64 * 1024;

/// Makes sure the calling thread can take signals on an alternate stack, so
/// a domain that exhausts its own stack still gets rewound.
pub fn ensure_altstack() {
    if ALTSTACK_CHECKED.with(Cell::get) {
        return;
    }
    unsafe {
        let mut cur: libc::stack_t = std::mem::zeroed();
        libc::sigaltstack(ptr::null(), &mut cur);
        if cur.ss_flags & libc::SS_DISABLE != 0 {
            let map = sys::Mapping::reserve(ALTSTACK_SIZE).expect("reserving signal stack");
            map.protect(0, ALTSTACK_SIZE, libc::PROT_READ | libc::PROT_WRITE).expect("signal stack");
            let ss = libc::stack_t { ss_sp: map.base().cast(), ss_flags: 0, ss_size: ALTSTACK_SIZE };
            if libc::sigaltstack(&ss, ptr::null_mut()) == 0 {
                OWN_ALTSTACK.with(|s| *s.get() = Some(AltStack { _map: map }));
            }
        }
    }
    ALTSTACK_CHECKED.with(|c| c.set(true));
}
