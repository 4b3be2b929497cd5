//! Thin wrappers over the Linux calls the runtime needs.

use std::io;
use std::ptr::NonNull;
use std::sync::OnceLock;

pub fn page_size() -> usize {
    static PAGE: OnceLock<usize> = OnceLock::new();
    *PAGE.get_or_init(|| unsafe { libc::sysconf(libc::_SC_PAGESIZE) as usize })
}

pub fn round_up_to_page(n: usize) -> usize {
    let p = page_size();
    n.div_ceil(p) * p
}

fn check(ret: libc::c_int, op: &'static str) -> io::Result<()> {
    if ret == 0 {
        Ok(())
    } else {
        let e = io::Error::last_os_error();
        Err(io::Error::new(e.kind(), format!("{op}: {e}")))
    }
}

/// An anonymous private mapping, unmapped on drop.
#[derive(Debug)]
pub struct Mapping {
    base: NonNull<u8>,
    len: usize,
}

unsafe impl Send for Mapping {}
unsafe impl Sync for Mapping {}

impl Mapping {
    /// Reserves `len` bytes of address space with no access rights.
    pub fn reserve(len: usize) -> io::Result<Mapping> {
        let p = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                len,
                libc::PROT_NONE,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE,
                -1,
                0,
            )
        };
        if p == libc::MAP_FAILED {
            return Err(io::Error::last_os_error());
        }
        Ok(Mapping { base: NonNull::new(p.cast()).expect("mmap returned null"), len })
    }

    pub fn base(&self) -> *mut u8 {
        self.base.as_ptr()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn protect(&self, offset: usize, len: usize, prot: libc::c_int) -> io::Result<()> {
        assert!(offset + len <= self.len);
        protect(self.base.as_ptr() as usize + offset, len, prot)
    }
}

impl Drop for Mapping {
    fn drop(&mut self) {
        unsafe { libc::munmap(self.base.as_ptr().cast(), self.len) };
    }
}

pub fn protect(addr: usize, len: usize, prot: libc::c_int) -> io::Result<()> {
    check(unsafe { libc::mprotect(addr as *mut libc::c_void, len, prot) }, "mprotect")
}

/// Protection-key system calls and register access.
pub mod pku {
    use super::*;

    /// CPU advertises PKU and the OS has enabled it.
    pub fn cpu_enabled() -> bool {
        #[cfg(target_arch = "x86_64")]
        {
            let max = std::arch::x86_64::__cpuid(0).eax;
            if max < 7 {
                return false;
            }
            let ecx = std::arch::x86_64::__cpuid_count(7, 0).ecx;
            // bit 3: PKU, bit 4: OSPKE
            ecx & (1 << 3) != 0 && ecx & (1 << 4) != 0
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            false
        }
    }

    pub fn alloc() -> io::Result<u32> {
        let r = unsafe { libc::syscall(libc::SYS_pkey_alloc, 0u64, 0u64) };
        if r < 0 {
            Err(io::Error::last_os_error())
        } else {
            Ok(r as u32)
        }
    }

    pub fn free(key: u32) -> io::Result<()> {
        let r = unsafe { libc::syscall(libc::SYS_pkey_free, key as u64) };
        check(r as libc::c_int, "pkey_free")
    }

    pub fn mprotect(addr: usize, len: usize, prot: libc::c_int, key: u32) -> io::Result<()> {
        let r = unsafe { libc::syscall(libc::SYS_pkey_mprotect, addr, len, prot as u64, key as u64) };
        check(r as libc::c_int, "pkey_mprotect")
    }

    /// # Safety
    /// The CPU must support the instruction ([`cpu_enabled`]).
    #[cfg(target_arch = "x86_64")]
    #[inline(always)]
    pub unsafe fn rdpkru() -> u32 {
        let eax: u32;
        std::arch::asm!("rdpkru", in("ecx") 0u32, out("eax") eax, out("edx") _, options(nomem, nostack, preserves_flags));
        eax
    }

    /// # Safety
    /// The CPU must support the instruction, and the new word must leave the
    /// current stack and code reachable.
    #[cfg(target_arch = "x86_64")]
    #[inline(always)]
    pub unsafe fn wrpkru(v: u32) {
        std::arch::asm!("wrpkru", in("eax") v, in("ecx") 0u32, in("edx") 0u32, options(nostack, preserves_flags));
    }

    #[cfg(not(target_arch = "x86_64"))]
    pub unsafe fn rdpkru() -> u32 {
        unreachable!("protection keys need x86_64")
    }

    #[cfg(not(target_arch = "x86_64"))]
    pub unsafe fn wrpkru(_v: u32) {
        unreachable!("protection keys need x86_64")
    }
}
