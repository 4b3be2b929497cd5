//! Process isolation for comparison: a forked helper that runs one wrapped
//! function per request.
//!
//! Protocol over a stream socket pair, native-endian:
//!
//! ```text
//! request   serializer tag u8 | length u64 | argument frames
//! response  0 u8 | length u64 | result frames        callee returned
//!           1 u8 | 0 u64                             callee panicked or input undecodable
//!           2 u8 | signal u64 | fault address u64    callee crashed
//! ```
//!
//! End of stream without a response means the helper was killed.

use std::io::{self, Read};
use std::os::fd::AsRawFd;
use std::os::unix::net::UnixStream;
use std::sync::atomic::{AtomicI32, Ordering};

use domain_cell_core::domain::{FaultInfo, Udi};

use crate::facade::Serializer;
use crate::trap;

pub(crate) type Serve = fn(*const (), Serializer, &[u8]) -> Option<Vec<u8>>;

// Where the helper's crash handler reports to.
static CRASH_FD: AtomicI32 = AtomicI32::new(-1);

/// The socket every helper talks on.
const HELPER_FD: i32 = 3;

#[derive(Debug)]
pub(crate) struct Child {
    pid: libc::pid_t,
    sock: UnixStream,
}

fn send_all(fd: i32, mut buf: &[u8]) -> io::Result<()> {
    while !buf.is_empty() {
        let n = unsafe { libc::send(fd, buf.as_ptr().cast(), buf.len(), libc::MSG_NOSIGNAL) };
        if n < 0 {
            let e = io::Error::last_os_error();
            if e.kind() == io::ErrorKind::Interrupted {
                continue;
            }
            return Err(e);
        }
        buf = &buf[n as usize..];
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_ne_bytes(b))
}

impl Child {
    pub(crate) fn spawn(serve: Serve, real: *const ()) -> io::Result<Child> {
        let (parent, child) = UnixStream::pair()?;
        // The helper inherits this thread's signal stack setting.
        trap::ensure_altstack();
        match unsafe { libc::fork() } {
            -1 => Err(io::Error::last_os_error()),
            0 => helper_main(child.as_raw_fd(), serve, real),
            pid => {
                drop(child);
                Ok(Child { pid, sock: parent })
            }
        }
    }

    pub(crate) fn pid(&self) -> i32 {
        self.pid
    }

    /// One request and its response. Any error leaves the helper unusable.
    pub(crate) fn call(&mut self, ser: Serializer, req: &[u8]) -> Result<Vec<u8>, FaultInfo> {
        let abort = FaultInfo::abort(Udi(0));
        let fd = self.sock.as_raw_fd();
        let mut head = [0u8; 9];
        head[0] = ser.tag();
        head[1..].copy_from_slice(&(req.len() as u64).to_ne_bytes());
        send_all(fd, &head).and_then(|()| send_all(fd, req)).map_err(|_| abort)?;
        let mut status = [0u8; 1];
        self.sock.read_exact(&mut status).map_err(|_| abort)?;
        match status[0] {
            0 => {
                let len = read_u64(&mut self.sock).map_err(|_| abort)? as usize;
                let mut out = vec![0u8; len];
                self.sock.read_exact(&mut out).map_err(|_| abort)?;
                Ok(out)
            }
            2 => {
                let sig = read_u64(&mut self.sock).map_err(|_| abort)? as i32;
                let addr = read_u64(&mut self.sock).map_err(|_| abort)? as usize;
                Err(match sig {
                    libc::SIGSEGV | libc::SIGBUS => FaultInfo::violation(Udi(0), addr),
                    _ => abort,
                })
            }
            _ => Err(abort),
        }
    }

    pub(crate) fn kill(self) {
        drop(self);
    }
}

impl Drop for Child {
    fn drop(&mut self) {
        unsafe {
            libc::kill(self.pid, libc::SIGKILL);
            libc::waitpid(self.pid, std::ptr::null_mut(), 0);
        }
    }
}

extern "C" fn on_crash(sig: libc::c_int, info: *mut libc::siginfo_t, _ctx: *mut libc::c_void) {
    let addr = if sig == libc::SIGABRT { 0 } else { unsafe { (*info).si_addr() as u64 } };
    let mut rec = [0u8; 17];
    rec[0] = 2;
    rec[1..9].copy_from_slice(&(sig as u64).to_ne_bytes());
    rec[9..].copy_from_slice(&addr.to_ne_bytes());
    unsafe {
        libc::send(CRASH_FD.load(Ordering::Relaxed), rec.as_ptr().cast(), rec.len(), libc::MSG_NOSIGNAL);
        libc::_exit(128 + sig);
    }
}

fn helper_main(fd: i32, serve: Serve, real: *const ()) -> ! {
    unsafe {
        if fd != HELPER_FD {
            libc::dup2(fd, HELPER_FD);
        }
        // Drop every other descriptor, in particular other helpers' sockets,
        // so their end-of-stream still works.
        libc::syscall(libc::SYS_close_range, (HELPER_FD + 1) as libc::c_uint, libc::c_uint::MAX, 0 as libc::c_uint);
        CRASH_FD.store(HELPER_FD, Ordering::Relaxed);
        for sig in [libc::SIGSEGV, libc::SIGBUS, libc::SIGABRT, libc::SIGILL, libc::SIGFPE] {
            let mut act: libc::sigaction = std::mem::zeroed();
            act.sa_sigaction = on_crash as *const () as usize;
            act.sa_flags = libc::SA_SIGINFO | libc::SA_ONSTACK;
            libc::sigemptyset(&mut act.sa_mask);
            libc::sigaction(sig, &act, std::ptr::null_mut());
        }
    }
    // Panics are reported through the protocol; printing them could block on
    // a stderr lock some other parent thread held at fork time.
    std::panic::set_hook(Box::new(|_| {}));
    let code = match serve_loop(serve, real) {
        Ok(()) => 0,
        Err(_) => 1,
    };
    unsafe { libc::_exit(code) }
}

fn serve_loop(serve: Serve, real: *const ()) -> io::Result<()> {
    use std::os::fd::FromRawFd;
    let mut sock = unsafe { UnixStream::from_raw_fd(HELPER_FD) };
    loop {
        let mut tag = [0u8; 1];
        match sock.read_exact(&mut tag) {
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            r => r?,
        }
        let len = read_u64(&mut sock)? as usize;
        let mut req = vec![0u8; len];
        sock.read_exact(&mut req)?;
        let out = Serializer::from_tag(tag[0])
            .and_then(|ser| std::panic::catch_unwind(|| serve(real, ser, &req)).ok().flatten());
        match out {
            Some(v) => {
                let mut head = [0u8; 9];
                head[1..].copy_from_slice(&(v.len() as u64).to_ne_bytes());
                send_all(HELPER_FD, &head)?;
                send_all(HELPER_FD, &v)?;
            }
            None => send_all(HELPER_FD, &[1, 0, 0, 0, 0, 0, 0, 0, 0])?,
        }
    }
}
