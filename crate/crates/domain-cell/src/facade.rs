//! Sandboxed function calls.
//!
//! A [`WrappedFunction`] pairs the real body of a function with the glue
//! that runs it somewhere else: inside a domain ([`Executor::InProcess`]), in
//! a helper process ([`Executor::Subprocess`]) or directly
//! ([`Executor::Baseline`]). Arguments cross the boundary as frames; the
//! parameters marked [`Mut`] come back and overwrite the caller's copies.
//!
//! Usually the `#[sandbox]` attribute builds all of this from an ordinary
//! function definition. Every parameter type must be encodable, so this is
//! rejected when the wrapper is built:
//!
//! ```compile_fail,E0277
//! use domain_cell::sandbox;
//!
//! struct Opaque;
//!
//! #[sandbox]
//! fn peek(x: Opaque) -> u8 {
//!     0
//! }
//! ```

use rustc_hash::FxHashMap as HashMap;
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;
use std::sync::{Mutex, MutexGuard, OnceLock};

use domain_cell_core::domain::{DomainConfig, FaultInfo, Sdi, Udi};
use domain_cell_core::layout::{self, ByteSink, DecodeError, Elementwise, Encodable, Reader};
use domain_cell_core::portable::PortableCodec;

use crate::backend::BackendKind;
use crate::channel;
use crate::manager::{DomainManager, RunError};
use crate::subprocess::Child;

/// A type both serializers can carry.
pub trait Wire: Encodable + PortableCodec {}

impl<T: Encodable + PortableCodec> Wire for T {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Serializer {
    /// Memory-layout encoding with bulk copies for byte sequences.
    #[default]
    Layout,
    /// Memory-layout encoding, one element at a time.
    LayoutElementwise,
    /// Little-endian, length-prefixed, element-wise portable format.
    ReferenceBinary,
}

impl Serializer {
    pub const ALL: [Serializer; 3] = [Self::Layout, Self::LayoutElementwise, Self::ReferenceBinary];

    pub const fn name(self) -> &'static str {
        match self {
            Self::Layout => "layout",
            Self::LayoutElementwise => "layout-fastpath-off",
            Self::ReferenceBinary => "reference-binary",
        }
    }

    pub(crate) const fn tag(self) -> u8 {
        match self {
            Self::Layout => 0,
            Self::LayoutElementwise => 1,
            Self::ReferenceBinary => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.tag() == t)
    }

    pub fn measure<T: Wire>(self, v: &T) -> usize {
        match self {
            Self::Layout | Self::LayoutElementwise => v.measure(),
            Self::ReferenceBinary => v.portable_size(),
        }
    }

    pub fn encode<T: Wire, S: ByteSink + ?Sized>(self, v: &T, out: &mut S) {
        match self {
            Self::Layout => v.entomb(out),
            Self::LayoutElementwise => v.entomb(&mut Elementwise(out)),
            Self::ReferenceBinary => v.encode_portable(out),
        }
    }

    pub fn reader(self, buf: &[u8]) -> Reader<'_> {
        match self {
            Self::LayoutElementwise => Reader::elementwise(buf),
            _ => Reader::new(buf),
        }
    }

    pub fn decode<T: Wire>(self, r: &mut Reader<'_>) -> Result<T, DecodeError> {
        match self {
            Self::Layout | Self::LayoutElementwise => T::exhume_from(r),
            Self::ReferenceBinary => T::decode_portable(r),
        }
    }
}

impl fmt::Display for Serializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Serializer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown serializer {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Executor {
    /// Plain call, no isolation.
    Baseline,
    #[default]
    InProcess,
    /// A long-lived helper process per wrapped function.
    Subprocess,
}

impl Executor {
    pub const ALL: [Executor; 3] = [Self::Baseline, Self::InProcess, Self::Subprocess];

    pub const fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::InProcess => "inprocess",
            Self::Subprocess => "subprocess",
        }
    }
}

impl fmt::Display for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Executor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown executor {s:?}"))
    }
}

/// How faults reach the caller of the wrapped function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReturnKind {
    /// A catchable unwind carrying the [`FaultInfo`].
    Plain,
    /// The `Err` variant, built with `From<FaultInfo>`.
    ResultLike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SandboxSpec {
    pub sdi: Sdi,
    pub executor: Executor,
    pub serializer: Serializer,
    pub config: DomainConfig,
    /// `None` uses the probed backend.
    pub backend: Option<BackendKind>,
    pub returns: ReturnKind,
}

impl SandboxSpec {
    pub const fn new(sdi: u64) -> Self {
        Self {
            sdi: Sdi(sdi),
            executor: Executor::InProcess,
            serializer: Serializer::Layout,
            config: DomainConfig {
                stack_size: domain_cell_core::domain::DEFAULT_STACK_SIZE,
                heap_size: domain_cell_core::domain::DEFAULT_HEAP_SIZE,
                persistent: true,
                parent_accessible: true,
                parent_retains_access_during_run: true,
            },
            backend: None,
            returns: ReturnKind::Plain,
        }
    }

    pub const fn executor(self, executor: Executor) -> Self {
        Self { executor, ..self }
    }

    pub const fn serializer(self, serializer: Serializer) -> Self {
        Self { serializer, ..self }
    }

    pub const fn backend(self, backend: BackendKind) -> Self {
        Self { backend: Some(backend), ..self }
    }

    pub const fn config(self, config: DomainConfig) -> Self {
        Self { config, ..self }
    }

    pub const fn persistent(mut self, persistent: bool) -> Self {
        self.config.persistent = persistent;
        self
    }

    pub const fn heap_size(mut self, heap_size: usize) -> Self {
        self.config.heap_size = heap_size;
        self
    }

    pub const fn stack_size(mut self, stack_size: usize) -> Self {
        self.config.stack_size = stack_size;
        self
    }

    pub const fn returns(self, returns: ReturnKind) -> Self {
        Self { returns, ..self }
    }
}

/// Derives a stable SDI from a qualified function name.
pub const fn sdi_from_name(name: &str) -> u64 {
    // FNV-1a, with the top bit set to stay clear of small hand-picked SDIs.
    let b = name.as_bytes();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut i = 0;
    while i < b.len() {
        h ^= b[i] as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        i += 1;
    }
    h | 1 << 63
}

/// A parameter whose new value is copied back to the caller.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Mut<T>(pub T);

/// A parameter moved into the callee.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Val<T>(Option<T>);

impl<T> Val<T> {
    pub fn new(v: T) -> Self {
        Self(Some(v))
    }

    /// Moves the value out. Only the callee glue does this, once.
    pub fn take(&mut self) -> T {
        self.0.take().expect("by-value parameter taken twice")
    }
}

impl<T> Deref for Mut<T> {
    type Target = T;

    fn deref(&self) -> &T {
        &self.0
    }
}

impl<T> DerefMut for Mut<T> {
    fn deref_mut(&mut self) -> &mut T {
        &mut self.0
    }
}

/// One element of an argument pack: a plain `T` (the callee borrows it), a
/// [`Val`] (the callee owns it) or a [`Mut`] (copied back).
pub trait Param: Sized {
    const MUTABLE: bool;
    fn measure(&self, ser: Serializer) -> usize;
    fn encode<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S);
    fn decode(ser: Serializer, r: &mut Reader<'_>) -> Result<Self, DecodeError>;
    fn measure_back(&self, _ser: Serializer) -> usize {
        0
    }
    fn encode_back<S: ByteSink + ?Sized>(&self, _ser: Serializer, _out: &mut S) {}
    fn decode_back(&mut self, _ser: Serializer, _r: &mut Reader<'_>) -> Result<(), DecodeError> {
        Ok(())
    }
}

impl<T: Wire> Param for T {
    const MUTABLE: bool = false;

    fn measure(&self, ser: Serializer) -> usize {
        ser.measure(self)
    }

    fn encode<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S) {
        ser.encode(self, out)
    }

    fn decode(ser: Serializer, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        ser.decode(r)
    }
}

impl<T: Wire> Param for Val<T> {
    const MUTABLE: bool = false;

    fn measure(&self, ser: Serializer) -> usize {
        ser.measure(self.0.as_ref().expect("by-value parameter present"))
    }

    fn encode<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S) {
        ser.encode(self.0.as_ref().expect("by-value parameter present"), out)
    }

    fn decode(ser: Serializer, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self(Some(ser.decode(r)?)))
    }
}

impl<T: Wire> Param for Mut<T> {
    const MUTABLE: bool = true;

    fn measure(&self, ser: Serializer) -> usize {
        ser.measure(&self.0)
    }

    fn encode<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S) {
        ser.encode(&self.0, out)
    }

    fn decode(ser: Serializer, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self(ser.decode(r)?))
    }

    fn measure_back(&self, ser: Serializer) -> usize {
        ser.measure(&self.0)
    }

    fn encode_back<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S) {
        ser.encode(&self.0, out)
    }

    fn decode_back(&mut self, ser: Serializer, r: &mut Reader<'_>) -> Result<(), DecodeError> {
        self.0 = ser.decode(r)?;
        Ok(())
    }
}

/// A tuple of [`Param`]s.
pub trait ArgPack: Sized {
    /// Number of parameters copied back after the call.
    const MUTABLE_COUNT: usize;
    fn measure(&self, ser: Serializer) -> usize;
    fn encode<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S);
    fn decode(ser: Serializer, r: &mut Reader<'_>) -> Result<Self, DecodeError>;
    fn measure_back(&self, ser: Serializer) -> usize;
    fn encode_back<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S);
    fn decode_back(&mut self, ser: Serializer, r: &mut Reader<'_>) -> Result<(), DecodeError>;
}

impl ArgPack for () {
    const MUTABLE_COUNT: usize = 0;

    fn measure(&self, _ser: Serializer) -> usize {
        0
    }

    fn encode<S: ByteSink + ?Sized>(&self, _ser: Serializer, _out: &mut S) {}

    fn decode(_ser: Serializer, _r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(())
    }

    fn measure_back(&self, _ser: Serializer) -> usize {
        0
    }

    fn encode_back<S: ByteSink + ?Sized>(&self, _ser: Serializer, _out: &mut S) {}

    fn decode_back(&mut self, _ser: Serializer, _r: &mut Reader<'_>) -> Result<(), DecodeError> {
        Ok(())
    }
}

macro_rules! arg_pack {
    ($($name:ident $idx:tt),+) => {
        impl<$($name: Param),+> ArgPack for ($($name,)+) {
            const MUTABLE_COUNT: usize = 0 $(+ $name::MUTABLE as usize)+;

            fn measure(&self, ser: Serializer) -> usize {
                0 $(+ self.$idx.measure(ser))+
            }

            fn encode<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S) {
                $(self.$idx.encode(ser, out);)+
            }

            fn decode(ser: Serializer, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok(($($name::decode(ser, r)?,)+))
            }

            fn measure_back(&self, ser: Serializer) -> usize {
                0 $(+ self.$idx.measure_back(ser))+
            }

            fn encode_back<S: ByteSink + ?Sized>(&self, ser: Serializer, out: &mut S) {
                $(self.$idx.encode_back(ser, out);)+
            }

            fn decode_back(&mut self, ser: Serializer, r: &mut Reader<'_>) -> Result<(), DecodeError> {
                $(self.$idx.decode_back(ser, r)?;)+
                Ok(())
            }
        }
    };
}

arg_pack!(A 0);
arg_pack!(A 0, B 1);
arg_pack!(A 0, B 1, C 2);
arg_pack!(A 0, B 1, C 2, D 3);
arg_pack!(A 0, B 1, C 2, D 3, E 4);
arg_pack!(A 0, B 1, C 2, D 3, E 4, F 5);
arg_pack!(A 0, B 1, C 2, D 3, E 4, F 5, G 6);
arg_pack!(A 0, B 1, C 2, D 3, E 4, F 5, G 6, H 7);

/// Encodes what the callee sends back: the mutable parameters, then the
/// return value.
pub(crate) fn encode_results<A: ArgPack, R: Wire, S: ByteSink + ?Sized>(ser: Serializer, a: &A, ret: &R, out: &mut S) {
    a.encode_back(ser, out);
    ser.encode(ret, out);
}

pub(crate) fn results_len<A: ArgPack, R: Wire>(ser: Serializer, a: &A, ret: &R) -> usize {
    a.measure_back(ser) + ser.measure(ret)
}

/// Applies what the callee sent back to the caller's arguments.
pub(crate) fn decode_results<A: ArgPack, R: Wire>(
    ser: Serializer,
    args: &mut A,
    bytes: &[u8],
) -> Result<R, DecodeError> {
    let mut r = ser.reader(bytes);
    args.decode_back(ser, &mut r)?;
    let ret = ser.decode(&mut r)?;
    if !r.remaining().is_empty() {
        return Err(DecodeError::Malformed("trailing bytes after results"));
    }
    Ok(ret)
}

/// The real body of a function plus everything needed to run it sandboxed.
pub struct WrappedFunction<A, R> {
    spec: SandboxSpec,
    real: fn(&mut A) -> R,
    child: Mutex<Option<Child>>,
    guard: OnceLock<&'static Mutex<()>>,
}

impl<A, R> fmt::Debug for WrappedFunction<A, R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WrappedFunction").field("spec", &self.spec).finish_non_exhaustive()
    }
}

/// Payload of the unwind raised by [`WrappedFunction::call`] is this
/// [`FaultInfo`]; catch it with `std::panic::catch_unwind` and downcast.
pub fn deliver_fault<R>(outcome: Result<R, FaultInfo>) -> R {
    match outcome {
        Ok(v) => v,
        Err(f) => std::panic::resume_unwind(Box::new(f)),
    }
}

/// Result-like delivery: the fault becomes the error variant.
pub fn deliver_fault_as_err<T, E: From<FaultInfo>>(outcome: Result<Result<T, E>, FaultInfo>) -> Result<T, E> {
    outcome.unwrap_or_else(|f| Err(E::from(f)))
}

/// The manager used for a backend choice. One per backend kind, shared by
/// every wrapped function in the process.
pub fn manager_for(kind: Option<BackendKind>) -> &'static DomainManager {
    static MANAGERS: [OnceLock<DomainManager>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let Some(kind) = kind else { return DomainManager::global() };
    if kind == crate::backend::probe() {
        return DomainManager::global();
    }
    let i = match kind {
        BackendKind::HardwareKeys => 0,
        BackendKind::PagePermission => 1,
        BackendKind::Null => 2,
    };
    MANAGERS[i].get_or_init(|| {
        DomainManager::with_kind(kind)
            .or_else(|_| DomainManager::with_kind(BackendKind::PagePermission))
            .expect("page permission backend is always available")
    })
}

// Calls sharing an SDI run one at a time. Under a backend whose rights are
// process-wide, all calls do.
struct CallGuard {
    _sdi: MutexGuard<'static, ()>,
    _global: Option<MutexGuard<'static, ()>>,
}

// One small mutex per (manager, SDI) ever used, kept for the process
// lifetime.
fn sdi_guard(mgr: &'static DomainManager, sdi: Sdi) -> &'static Mutex<()> {
    type GuardMap = HashMap<(usize, u64), &'static Mutex<()>>;
    static GUARDS: OnceLock<Mutex<GuardMap>> = OnceLock::new();
    let mut map = GUARDS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    map.entry((mgr as *const DomainManager as usize, sdi.0)).or_insert_with(|| Box::leak(Box::default()))
}

fn lock_call(mgr: &'static DomainManager, sdi: &'static Mutex<()>) -> CallGuard {
    static PROCESS_WIDE: Mutex<()> = Mutex::new(());
    let global = mgr.backend().process_wide().then(|| PROCESS_WIDE.lock().unwrap_or_else(|e| e.into_inner()));
    CallGuard { _sdi: sdi.lock().unwrap_or_else(|e| e.into_inner()), _global: global }
}

impl<A: ArgPack, R: Wire> WrappedFunction<A, R> {
    pub const fn new(spec: SandboxSpec, real: fn(&mut A) -> R) -> Self {
        Self { spec, real, child: Mutex::new(None), guard: OnceLock::new() }
    }

    fn sdi_guard(&self, mgr: &'static DomainManager) -> &'static Mutex<()> {
        self.guard.get_or_init(|| sdi_guard(mgr, self.spec.sdi))
    }

    pub fn spec(&self) -> &SandboxSpec {
        &self.spec
    }

    /// Runs with the spec's executor and serializer.
    pub fn invoke(&self, args: &mut A) -> Result<R, FaultInfo> {
        self.invoke_with(self.spec.executor, self.spec.serializer, args)
    }

    pub fn invoke_with(&self, executor: Executor, ser: Serializer, args: &mut A) -> Result<R, FaultInfo> {
        match executor {
            Executor::Baseline => Ok((self.real)(args)),
            Executor::InProcess => self.in_process(ser, args),
            Executor::Subprocess => self.in_subprocess(ser, args),
        }
    }

    /// Plain delivery: a fault unwinds out of this call.
    pub fn call(&self, args: &mut A) -> R {
        deliver_fault(self.invoke(args))
    }

    /// The manager this function's domain lives in.
    pub fn manager(&self) -> &'static DomainManager {
        manager_for(self.spec.backend)
    }

    /// The live domain currently bound to this function's SDI.
    pub fn domain(&self) -> Option<Udi> {
        self.manager().lookup(self.spec.sdi)
    }

    /// Drops the persistent domain and stops the helper process, if any.
    pub fn discard(&self) {
        let mgr = self.manager();
        let _g = lock_call(mgr, self.sdi_guard(mgr));
        if let Some(u) = mgr.lookup(self.spec.sdi) {
            let _ = mgr.discard_domain(u);
        }
        if let Some(c) = self.child.lock().unwrap_or_else(|e| e.into_inner()).take() {
            c.kill();
        }
    }

    /// Process id of the helper process, once it has been started.
    pub fn subprocess_pid(&self) -> Option<i32> {
        self.child.lock().unwrap_or_else(|e| e.into_inner()).as_ref().map(Child::pid)
    }

    fn in_process(&self, ser: Serializer, args: &mut A) -> Result<R, FaultInfo> {
        let mgr = self.manager();
        let sdi = self.spec.sdi;
        let _g = lock_call(mgr, self.sdi_guard(mgr));
        let mut desc = mgr.acquire(sdi, self.spec.config).map_err(|_| FaultInfo::abort(Udi(0)))?;
        let (udi, persistent) = (desc.udi, desc.persistent);
        let cleanup = |mgr: &DomainManager| {
            if !persistent {
                let _ = mgr.discard_domain(udi);
            }
        };

        let len = args.measure(ser);
        let staged = channel::stage_in(mgr, &desc, len, |v| args.encode(ser, v))
            .and_then(|meta| channel::publish_in(mgr, &mut desc, &meta).map(|()| meta));
        let meta = match staged {
            Ok(m) => m,
            Err(_) => {
                cleanup(mgr);
                return Err(FaultInfo::abort(udi));
            }
        };

        let real = self.real;
        let ran = mgr.run(udi, move || callee::<A, R>(ser, real));
        match ran {
            Ok(Ok(())) => {}
            Ok(Err(_)) | Err(RunError::Domain(_)) => {
                unsafe { channel::release_in(&desc, &meta) };
                cleanup(mgr);
                return Err(FaultInfo::abort(udi));
            }
            Err(RunError::Fault(f)) => return Err(f),
        }
        let out = channel::collect_in(mgr, &desc, |bytes| decode_results::<A, R>(ser, args, bytes));
        unsafe { channel::release_in(&desc, &meta) };
        cleanup(mgr);
        match out {
            Ok(Ok(r)) => Ok(r),
            _ => Err(FaultInfo::abort(udi)),
        }
    }

    fn in_subprocess(&self, ser: Serializer, args: &mut A) -> Result<R, FaultInfo> {
        let mut req = Vec::with_capacity(args.measure(ser));
        args.encode(ser, &mut req);
        let mut child = self.child.lock().unwrap_or_else(|e| e.into_inner());
        if child.is_none() {
            *child = Some(Child::spawn(serve::<A, R>, self.real as *const ()).map_err(|_| FaultInfo::abort(Udi(0)))?);
        }
        let c = child.as_mut().expect("spawned above");
        match c.call(ser, &req) {
            Ok(resp) => decode_results::<A, R>(ser, args, &resp).map_err(|_| FaultInfo::abort(Udi(0))),
            Err(f) => {
                if let Some(c) = child.take() {
                    c.kill();
                }
                Err(f)
            }
        }
    }
}

impl<A: ArgPack, T: Wire, E: Wire + From<FaultInfo>> WrappedFunction<A, Result<T, E>> {
    /// Result-like delivery: a fault arrives as `Err(E::from(fault))`.
    pub fn call_result(&self, args: &mut A) -> Result<T, E> {
        deliver_fault_as_err(self.invoke(args))
    }
}

// Runs inside the domain: adopt, decode, call, stage results.
fn callee<A: ArgPack, R: Wire>(ser: Serializer, real: fn(&mut A) -> R) -> Result<(), &'static str> {
    let view = channel::adopt().map_err(|_| "argument slot")?;
    let mut r = ser.reader(&view);
    let mut a = A::decode(ser, &mut r).map_err(|_| "argument frames")?;
    let ret = real(&mut a);
    let n = results_len(ser, &a, &ret);
    channel::stage_results(n, |v| encode_results(ser, &a, &ret, v)).map_err(|_| "result frames")?;
    Ok(())
}

// Runs in the helper process.
fn serve<A: ArgPack, R: Wire>(real: *const (), ser: Serializer, req: &[u8]) -> Option<Vec<u8>> {
    let real: fn(&mut A) -> R = unsafe { std::mem::transmute::<*const (), fn(&mut A) -> R>(real) };
    let mut r = ser.reader(req);
    let mut a = A::decode(ser, &mut r).ok()?;
    let ret = real(&mut a);
    let mut out = Vec::with_capacity(results_len(ser, &a, &ret));
    encode_results(ser, &a, &ret, &mut out);
    Some(out)
}

/// Encodes a value with `ser` into a fresh vector.
pub fn encode_to_vec<T: Wire>(ser: Serializer, v: &T) -> Vec<u8> {
    let mut out = Vec::with_capacity(ser.measure(v));
    ser.encode(v, &mut out);
    out
}

pub use layout::{Bridge, BridgeMut};
