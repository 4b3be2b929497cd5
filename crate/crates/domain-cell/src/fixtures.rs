//! Foreign-boundary fixtures: a run-length codec behind a C-style ABI and
//! deliberately faulty functions for fault-containment tests.
//!
//! Every function here has the foreign calling shape (input base, input
//! length, output base, in/out capacity). With the `c-fixture` feature the
//! codec and injectors come from a C static library; otherwise the built-in
//! Rust implementations below, with the same ABI, are used.

use std::ffi::c_int;
use std::ptr;

use domain_cell_core::rle;
use domain_cell_core::tlsf::{self, Tlsf};

use crate::manager::current_heap;
use crate::trap;

/// Where the codec came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecImpl {
    Foreign,
    Builtin,
}

impl CodecImpl {
    pub const fn name(self) -> &'static str {
        match self {
            Self::Foreign => "foreign",
            Self::Builtin => "builtin",
        }
    }
}

/// Deliberate misbehaviour for [`inject_fault`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultMode {
    /// Writes one byte at `scratch end + offset`.
    OobWrite(usize),
    /// Repeats `scratch` into a buffer whose size was computed with a
    /// wrapping 32-bit multiplication.
    RepeatOverflow,
    /// Raises the abort signal.
    CleanAbort,
}

impl FaultMode {
    fn code(self) -> (c_int, usize) {
        match self {
            Self::OobWrite(off) => (0, off),
            Self::RepeatOverflow => (1, 0),
            Self::CleanAbort => (2, 0),
        }
    }
}

/// The built-in implementations, exported with the foreign ABI.
pub mod builtin {
    use super::*;

    /// Writes the compressed stream to `out` and stores its length in
    /// `*cap`; stores 0 when the stream does not fit.
    ///
    /// # Safety
    /// `input..input+len` readable, `out..out+*cap` writable.
    pub unsafe extern "C" fn dc_rle_compress(input: *const u8, len: usize, out: *mut u8, cap: *mut usize) {
        let src = slice_or_empty(input, len);
        let dst = slice_or_empty_mut(out, *cap);
        *cap = rle::compress_into(src, dst);
    }

    /// Returns 1 and stores the decoded length in `*cap` on success, 0 on
    /// malformed input or insufficient capacity.
    ///
    /// # Safety
    /// As for [`dc_rle_compress`].
    pub unsafe extern "C" fn dc_rle_uncompress(input: *const u8, len: usize, out: *mut u8, cap: *mut usize) -> c_int {
        let src = slice_or_empty(input, len);
        let dst = slice_or_empty_mut(out, *cap);
        match rle::uncompress_into(src, dst) {
            Ok(n) => {
                *cap = n;
                1
            }
            Err(_) => 0,
        }
    }

    /// Decoded size of a stream, or `usize::MAX` if malformed.
    ///
    /// # Safety
    /// `input..input+len` readable.
    pub unsafe extern "C" fn dc_rle_uncompressed_len(input: *const u8, len: usize) -> usize {
        rle::uncompressed_len(slice_or_empty(input, len)).unwrap_or(usize::MAX)
    }

    /// # Safety
    /// Misbehaves on purpose: only call inside a sandboxed invocation.
    pub unsafe extern "C" fn dc_inject_fault(mode: c_int, offset: usize, scratch: *mut u8, len: usize) {
        match mode {
            0 => ptr::write_volatile(scratch.add(len).add(offset), 0xA5),
            1 => repeat_overflow(scratch, len),
            _ => {
                libc::raise(libc::SIGABRT);
            }
        }
    }

    unsafe fn slice_or_empty<'a>(p: *const u8, len: usize) -> &'a [u8] {
        if len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(p, len)
        }
    }

    unsafe fn slice_or_empty_mut<'a>(p: *mut u8, len: usize) -> &'a mut [u8] {
        if len == 0 {
            &mut []
        } else {
            std::slice::from_raw_parts_mut(p, len)
        }
    }

    // The bug class: the total is computed in 32 bits, the copy loop runs on
    // the untruncated count.
    unsafe fn repeat_overflow(pattern: *const u8, len: usize) {
        if !(2..=u32::MAX as usize).contains(&len) {
            return;
        }
        let count = super::wrapping_count(len as u32);
        let total = (len as u32).wrapping_mul(count) as usize;
        let dst = super::scratch_alloc(total.max(1));
        if dst.is_null() {
            return;
        }
        for i in 0..count as usize {
            for j in 0..len {
                ptr::write_volatile(dst.add(i * len + j), *pattern.add(j));
            }
        }
    }
}

#[cfg(feature = "c-fixture")]
mod foreign {
    use std::ffi::c_int;

    extern "C" {
        pub fn dcf_rle_compress(input: *const u8, len: usize, out: *mut u8, cap: *mut usize);
        pub fn dcf_rle_uncompress(input: *const u8, len: usize, out: *mut u8, cap: *mut usize) -> c_int;
        pub fn dcf_rle_uncompressed_len(input: *const u8, len: usize) -> usize;
        pub fn dcf_inject_fault(mode: c_int, offset: usize, scratch: *mut u8, len: usize);
    }
}

#[cfg(feature = "c-fixture")]
use foreign::{
    dcf_inject_fault as abi_inject_fault, dcf_rle_compress as abi_compress, dcf_rle_uncompress as abi_uncompress,
    dcf_rle_uncompressed_len as abi_uncompressed_len,
};

#[cfg(not(feature = "c-fixture"))]
use builtin::{
    dc_inject_fault as abi_inject_fault, dc_rle_compress as abi_compress, dc_rle_uncompress as abi_uncompress,
    dc_rle_uncompressed_len as abi_uncompressed_len,
};

/// Which codec the ABI wrappers below call.
pub const fn codec() -> CodecImpl {
    if cfg!(feature = "c-fixture") {
        CodecImpl::Foreign
    } else {
        CodecImpl::Builtin
    }
}

/// Smallest `n` such that `len * n` overflows `u32` (so the wrapped product
/// is less than `len`). `len` must be at least 2.
pub const fn wrapping_count(len: u32) -> u32 {
    u32::MAX / len + 1
}

// Inside a domain the oversized copy must run in the domain heap whether or
// not the interposer is installed.
fn scratch_alloc(size: usize) -> *mut u8 {
    match current_heap() {
        Some(h) => unsafe {
            Tlsf::from_raw(h.base() as *mut u8).allocate(size).map_or(ptr::null_mut(), |p| p.as_ptr())
        },
        None => unsafe { std::alloc::alloc(std::alloc::Layout::from_size_align_unchecked(size, 8)) },
    }
}

/// Allocation hook for the C fixture library.
#[cfg(feature = "c-fixture")]
#[no_mangle]
pub extern "C" fn dc_fixture_alloc(size: usize) -> *mut u8 {
    scratch_alloc(size)
}

/// Compresses through the foreign ABI.
pub fn rle_compress(input: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; rle::max_compressed_len(input.len())];
    let mut cap = out.len();
    unsafe { abi_compress(input.as_ptr(), input.len(), out.as_mut_ptr(), &mut cap) };
    out.truncate(cap);
    out
}

/// Uncompresses through the foreign ABI; `None` for malformed input.
pub fn rle_uncompress(input: &[u8]) -> Option<Vec<u8>> {
    let need = unsafe { abi_uncompressed_len(input.as_ptr(), input.len()) };
    if need == usize::MAX {
        return None;
    }
    let mut out = vec![0u8; need];
    let mut cap = need;
    let ok = unsafe { abi_uncompress(input.as_ptr(), input.len(), out.as_mut_ptr(), &mut cap) };
    (ok == 1).then(|| {
        out.truncate(cap);
        out
    })
}

/// Misbehaves as `mode` says. Returns only if the misbehaviour went
/// unnoticed, e.g. an out-of-bounds byte that happened to be writable.
///
/// # Safety
/// Corrupts memory by design: call only inside a sandboxed invocation, and
/// `scratch` must be a live buffer.
pub unsafe fn inject_fault(mode: FaultMode, scratch: &mut [u8]) {
    let (code, off) = mode.code();
    abi_inject_fault(code, off, scratch.as_mut_ptr(), scratch.len());
}

/// Overflows a stack buffer into its guard word and reports the corruption
/// the way a stack protector would.
pub fn smash_own_canary(fill: usize) -> u64 {
    #[repr(C)]
    struct Frame {
        buf: [u8; 16],
        canary: u64,
    }
    const CANARY: u64 = 0x00DE_C0DE_5AFE_D00D;
    let mut f = Frame { buf: [0; 16], canary: CANARY };
    let base = ptr::addr_of_mut!(f.buf).cast::<u8>();
    for i in 0..fill {
        unsafe { ptr::write_volatile(base.add(i), 0x41) };
    }
    if unsafe { ptr::read_volatile(&f.canary) } != CANARY {
        trap::report_stack_smash();
    }
    f.buf.iter().map(|&b| b as u64).sum()
}

/// A scratch buffer of `len` bytes ending exactly at the end of the running
/// domain's heap, so any write past it leaves the domain. `None` outside a
/// domain or when the heap has no room at the top.
///
/// The last 8 bytes overlap the heap's end marker; the heap must not be
/// used after writing them, which is fine because the fixture is meant to
/// fault and the faulting domain is discarded.
///
/// # Safety
/// The returned buffer lives until the domain is discarded. Only call it
/// from inside a sandboxed invocation.
pub unsafe fn top_of_heap(len: usize) -> Option<&'static mut [u8]> {
    let region = current_heap()?;
    if len < tlsf::HEADER {
        return None;
    }
    let mut heap = Tlsf::from_raw(region.base() as *mut u8);
    // The block in front of the end marker must end up holding the buffer.
    // Good-fit search rounds requests up, so carve the last block down with
    // spacers that fit and keep whatever other blocks get handed out until
    // the top one comes back.
    let payload = (len - tlsf::HEADER).max(tlsf::MIN_BLOCK).next_multiple_of(tlsf::ALIGN);
    let mut held = [None; 64];
    let mut found = None;
    for slot in held.iter_mut() {
        let mut last = None;
        heap.for_each_block(|b| last = Some(b));
        let last = last?;
        if !last.free || last.size < payload {
            break;
        }
        let mut want = if last.size < payload + tlsf::HEADER + tlsf::MIN_BLOCK {
            last.size
        } else {
            last.size - payload - tlsf::HEADER
        };
        let p = loop {
            if let Some(p) = heap.allocate(want) {
                break Some(p);
            }
            if want <= tlsf::MIN_BLOCK {
                break None;
            }
            want /= 2;
        };
        let Some(p) = p else { break };
        if p.as_ptr() as usize == last.addr && heap.usable_len(p) == last.size {
            found = Some(p);
            break;
        }
        *slot = Some(p);
    }
    for p in held.into_iter().flatten() {
        heap.free(p);
    }
    let block = found?;
    let end = block.as_ptr() as usize + heap.usable_len(block);
    if end + tlsf::HEADER != region.end() {
        heap.free(block);
        return None;
    }
    Some(std::slice::from_raw_parts_mut((region.end() - len) as *mut u8, len))
}
