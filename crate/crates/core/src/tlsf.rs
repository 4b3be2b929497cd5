//! Two-level segregated-fit allocator living inside the region it manages.
//!
//! The control block sits at the start of the region, followed by a chain of
//! physically adjacent blocks and a zero-sized sentinel at the end. Blocks
//! refer to each other by 32-bit offsets from the region base, which is why a
//! heap must be smaller than 4 GiB.
//!
//! Block layout at offset `o`:
//!
//! ```text
//! o + 0   prev_phys   offset of the physically preceding block (0 for the first)
//! o + 4   size|flags  payload bytes, low bits FREE and PREV_FREE
//! o + 8   payload     (free blocks: next_free at +8, prev_free at +12)
//! ```

use core::fmt;
use core::ptr::{self, NonNull};

/// Alignment of every payload address.
pub const ALIGN: usize = 8;
/// Smallest payload a block can carry.
pub const MIN_BLOCK: usize = 32;
/// log2 of the number of second-level subdivisions per power-of-two class.
pub const SL_LOG2: u32 = 4;
/// Bytes of bookkeeping in front of every payload.
pub const HEADER: usize = 8;
/// Smallest region accepted by [`Tlsf::create`].
pub const MIN_REGION: usize = 4096;
/// Regions must be strictly smaller than this.
pub const MAX_REGION: usize = 1 << 32;

const SL_COUNT: usize = 1 << SL_LOG2;
const FL_COUNT: usize = 32;

const FREE: u32 = 1;
const PREV_FREE: u32 = 2;
const FLAG_MASK: u32 = 7;

const PREV_PHYS: usize = 0;
const SIZE: usize = 4;
const NEXT_FREE: usize = 8;
const PREV_FREE_LINK: usize = 12;

/// Allocation counters kept in the control block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[repr(C)]
pub struct HeapStats {
    /// Payload bytes of all used blocks (block sizes, not request sizes).
    pub live_bytes: u64,
    pub live_blocks: u64,
    pub peak_bytes: u64,
    pub alloc_count: u64,
    pub free_count: u64,
}

#[repr(C)]
struct Control {
    len: u32,
    first: u32,
    fl_bitmap: u32,
    sl_bitmap: [u16; FL_COUNT],
    heads: [[u32; SL_COUNT]; FL_COUNT],
    stats: HeapStats,
}

const CONTROL_SIZE: usize = (core::mem::size_of::<Control>() + ALIGN - 1) & !(ALIGN - 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeapError {
    TooSmall,
    TooLarge,
    Unaligned,
}

impl fmt::Display for HeapError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooSmall => write!(f, "heap region smaller than {MIN_REGION} bytes"),
            Self::TooLarge => f.write_str("heap region must be smaller than 4 GiB"),
            Self::Unaligned => write!(f, "heap region base not {ALIGN}-byte aligned"),
        }
    }
}

impl core::error::Error for HeapError {}

/// Integrity violation found by [`Tlsf::census`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IntegrityError {
    pub offset: usize,
    pub what: &'static str,
}

impl fmt::Display for IntegrityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "heap corrupt at offset {:#x}: {}", self.offset, self.what)
    }
}

impl core::error::Error for IntegrityError {}

/// Totals from a full walk of the block chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Census {
    pub used_blocks: usize,
    pub used_bytes: usize,
    pub free_blocks: usize,
    pub free_bytes: usize,
    /// Headers of all blocks including the sentinel.
    pub header_bytes: usize,
    pub largest_free: usize,
}

/// One block as seen by [`Tlsf::for_each_block`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockInfo {
    /// Payload address.
    pub addr: usize,
    pub size: usize,
    pub free: bool,
}

/// Maps a block size to its free-list class. Sizes below [`MIN_BLOCK`] are
/// treated as [`MIN_BLOCK`].
pub const fn mapping_insert(size: usize) -> (u32, u32) {
    let size = if size < MIN_BLOCK { MIN_BLOCK } else { size };
    let fl = usize::BITS - 1 - size.leading_zeros();
    let sl = (size >> (fl - SL_LOG2)) as u32 - SL_COUNT as u32;
    (fl, sl)
}

/// Class to start searching from so that any block found is large enough.
const fn mapping_search(size: usize) -> Option<(u32, u32)> {
    let (fl, _) = mapping_insert(size);
    let round = (1usize << (fl - SL_LOG2)) - 1;
    let Some(size) = size.checked_add(round) else {
        return None;
    };
    let (fl, sl) = mapping_insert(size);
    if fl as usize >= FL_COUNT {
        None
    } else {
        Some((fl, sl))
    }
}

const fn adjust(size: usize) -> Option<usize> {
    if size > MAX_REGION {
        return None;
    }
    let size = (size + ALIGN - 1) & !(ALIGN - 1);
    Some(if size < MIN_BLOCK { MIN_BLOCK } else { size })
}

/// Handle to a heap whose control block lives at the start of its region.
///
/// The handle is a bare pointer; all bookkeeping lives in the region, so two
/// handles built from the same base observe the same heap.
#[derive(Debug)]
pub struct Tlsf {
    base: NonNull<u8>,
}

// The handle only carries an address; exclusivity is the caller's concern
// (see `from_raw`).
unsafe impl Send for Tlsf {}

impl Tlsf {
    /// Formats `[base, base + len)` as an empty heap.
    ///
    /// # Safety
    /// The range must be writable, unused by anything else, and stay valid
    /// for as long as the heap is used.
    pub unsafe fn create(base: *mut u8, len: usize) -> Result<Tlsf, HeapError> {
        if len < MIN_REGION {
            return Err(HeapError::TooSmall);
        }
        if len >= MAX_REGION {
            return Err(HeapError::TooLarge);
        }
        if !(base as usize).is_multiple_of(ALIGN) {
            return Err(HeapError::Unaligned);
        }
        let base = NonNull::new(base).ok_or(HeapError::Unaligned)?;
        let len = len & !(ALIGN - 1);
        let ctl = base.as_ptr().cast::<Control>();
        ptr::write_bytes(ctl.cast::<u8>(), 0, CONTROL_SIZE);
        (*ctl).len = len as u32;
        (*ctl).first = CONTROL_SIZE as u32;
        let mut heap = Tlsf { base };
        let first = CONTROL_SIZE as u32;
        let first_size = len - CONTROL_SIZE - 2 * HEADER;
        let sentinel = (len - HEADER) as u32;
        heap.set_word(first, PREV_PHYS, 0);
        heap.set_word(first, SIZE, first_size as u32 | FREE);
        heap.set_word(sentinel, PREV_PHYS, first);
        heap.set_word(sentinel, SIZE, PREV_FREE);
        heap.insert_free(first);
        Ok(heap)
    }

    /// Rebuilds a handle for a heap previously set up with [`create`](Self::create).
    ///
    /// # Safety
    /// `base` must be the base of a live heap, and the caller must not use
    /// two handles to the same heap concurrently.
    pub unsafe fn from_raw(base: *mut u8) -> Tlsf {
        Tlsf { base: NonNull::new_unchecked(base) }
    }

    pub fn base(&self) -> *mut u8 {
        self.base.as_ptr()
    }

    /// Region length actually under management (rounded down to [`ALIGN`]).
    pub fn len(&self) -> usize {
        unsafe { (*self.ctl()).len as usize }
    }

    pub fn is_empty(&self) -> bool {
        self.stats().live_blocks == 0
    }

    /// Bytes available for blocks and their headers once the control block
    /// is accounted for.
    pub fn usable_size(&self) -> usize {
        self.len() - CONTROL_SIZE
    }

    /// Size of the control block at the start of the region.
    pub const fn control_size() -> usize {
        CONTROL_SIZE
    }

    /// Whether `addr` falls inside the block area of this heap.
    pub fn contains(&self, addr: usize) -> bool {
        let base = self.base.as_ptr() as usize;
        addr >= base + CONTROL_SIZE && addr < base + self.len()
    }

    pub fn stats(&self) -> HeapStats {
        unsafe { (*self.ctl()).stats }
    }

    /// Allocates `size` bytes aligned to [`ALIGN`]. `None` when no free block
    /// is large enough.
    pub fn allocate(&mut self, size: usize) -> Option<NonNull<u8>> {
        let adj = adjust(size)?;
        let off = self.take_block(adj)?;
        self.split_tail(off, adj);
        self.mark_used(off);
        let stats = self.stats_mut();
        stats.alloc_count += 1;
        stats.live_blocks += 1;
        self.account_grow(0, self.block_size(off));
        Some(self.payload(off))
    }

    /// Allocates with an alignment that may exceed [`ALIGN`]. `align` must be
    /// a power of two.
    pub fn allocate_aligned(&mut self, size: usize, align: usize) -> Option<NonNull<u8>> {
        debug_assert!(align.is_power_of_two());
        if align <= ALIGN {
            return self.allocate(size);
        }
        let off = self.take_aligned(adjust(size)?, align)?;
        let stats = self.stats_mut();
        stats.alloc_count += 1;
        stats.live_blocks += 1;
        self.account_grow(0, self.block_size(off));
        Some(self.payload(off))
    }

    /// Returns a block to the heap and merges it with free neighbours.
    ///
    /// # Safety
    /// `ptr` must come from this heap and not have been freed already.
    pub unsafe fn free(&mut self, ptr: NonNull<u8>) {
        let off = self.offset_of(ptr);
        debug_assert!(self.word(off, SIZE) & FREE == 0, "double free");
        let size = self.block_size(off);
        let stats = self.stats_mut();
        stats.free_count += 1;
        stats.live_blocks -= 1;
        stats.live_bytes -= size as u64;
        self.release(off);
    }

    /// Resizes a block. Shrinking and growing into a free successor keep the
    /// address; otherwise the contents move. On failure the original block is
    /// left untouched.
    ///
    /// # Safety
    /// As for [`free`](Self::free).
    pub unsafe fn reallocate(&mut self, ptr: NonNull<u8>, new_size: usize) -> Option<NonNull<u8>> {
        self.reallocate_aligned(ptr, new_size, ALIGN)
    }

    /// [`reallocate`](Self::reallocate) for blocks that were obtained with
    /// [`allocate_aligned`](Self::allocate_aligned).
    ///
    /// # Safety
    /// As for [`free`](Self::free); `align` must match the original request.
    pub unsafe fn reallocate_aligned(
        &mut self,
        ptr: NonNull<u8>,
        new_size: usize,
        align: usize,
    ) -> Option<NonNull<u8>> {
        let adj = adjust(new_size)?;
        let off = self.offset_of(ptr);
        let cur = self.block_size(off);
        if adj <= cur {
            self.shrink_used(off, adj);
            self.account_shrink(cur, self.block_size(off));
            return Some(ptr);
        }
        let next = self.next_phys(off);
        let next_word = self.word(next, SIZE);
        if next_word & FREE != 0 && cur + HEADER + (next_word & !FLAG_MASK) as usize >= adj {
            self.remove_free(next);
            self.absorb_next(off);
            self.shrink_used(off, adj);
            self.account_grow(cur, self.block_size(off));
            return Some(ptr);
        }
        let new_off = if align <= ALIGN {
            let o = self.take_block(adj)?;
            self.split_tail(o, adj);
            self.mark_used(o);
            o
        } else {
            self.take_aligned(adj, align)?
        };
        let dst = self.payload(new_off);
        ptr::copy_nonoverlapping(ptr.as_ptr(), dst.as_ptr(), cur);
        let new = self.block_size(new_off);
        self.release(off);
        self.account_grow(cur, new);
        Some(dst)
    }

    /// Usable bytes behind `ptr`, at least the size that was requested.
    ///
    /// # Safety
    /// `ptr` must be a live allocation of this heap.
    pub unsafe fn usable_len(&self, ptr: NonNull<u8>) -> usize {
        self.block_size(self.offset_of(ptr))
    }

    /// Calls `f` for every block in address order, sentinel excluded.
    pub fn for_each_block(&self, mut f: impl FnMut(BlockInfo)) {
        let end = (self.len() - HEADER) as u32;
        let mut off = unsafe { (*self.ctl()).first };
        while off < end {
            let w = self.word(off, SIZE);
            let size = (w & !FLAG_MASK) as usize;
            f(BlockInfo { addr: self.payload(off).as_ptr() as usize, size, free: w & FREE != 0 });
            off += (HEADER + size) as u32;
        }
    }

    /// Walks the block chain and every free list, checking that headers,
    /// flags, links and bitmaps agree and that blocks tile the usable area.
    pub fn census(&self) -> Result<Census, IntegrityError> {
        let err = |offset: u32, what| Err(IntegrityError { offset: offset as usize, what });
        let len = self.len() as u32;
        let end = len - HEADER as u32;
        let ctl = self.ctl();
        let mut c = Census::default();
        let mut off = unsafe { (*ctl).first };
        let mut prev = 0u32;
        let mut prev_free = false;
        while off < end {
            let w = self.word(off, SIZE);
            let size = w & !FLAG_MASK;
            let free = w & FREE != 0;
            if self.word(off, PREV_PHYS) != prev {
                return err(off, "prev_phys link mismatch");
            }
            if (w & PREV_FREE != 0) != prev_free {
                return err(off, "PREV_FREE flag disagrees with predecessor");
            }
            if (size as usize) < MIN_BLOCK || !(size as usize).is_multiple_of(ALIGN) {
                return err(off, "block size below minimum or misaligned");
            }
            if free && prev_free {
                return err(off, "adjacent free blocks");
            }
            if off.checked_add(HEADER as u32 + size).is_none_or(|n| n > end) {
                return err(off, "block runs past the sentinel");
            }
            c.header_bytes += HEADER;
            if free {
                c.free_blocks += 1;
                c.free_bytes += size as usize;
                c.largest_free = c.largest_free.max(size as usize);
            } else {
                c.used_blocks += 1;
                c.used_bytes += size as usize;
            }
            prev = off;
            prev_free = free;
            off += HEADER as u32 + size;
        }
        if off != end {
            return err(off, "chain does not end at the sentinel");
        }
        let sw = self.word(end, SIZE);
        if sw & !FLAG_MASK != 0 || sw & FREE != 0 || (sw & PREV_FREE != 0) != prev_free {
            return err(end, "sentinel header damaged");
        }
        if self.word(end, PREV_PHYS) != prev {
            return err(end, "sentinel prev_phys mismatch");
        }
        c.header_bytes += HEADER;
        if c.used_bytes + c.free_bytes + c.header_bytes != self.usable_size() {
            return err(0, "conservation identity violated");
        }

        let mut listed = 0usize;
        let (fl_bitmap, sl_bitmap, heads) = unsafe { ((*ctl).fl_bitmap, (*ctl).sl_bitmap, &(*ctl).heads) };
        for fl in 0..FL_COUNT {
            if (fl_bitmap >> fl & 1 != 0) != (sl_bitmap[fl] != 0) {
                return err(0, "first-level bitmap disagrees with second level");
            }
            for (sl, &head) in heads[fl].iter().enumerate() {
                if (sl_bitmap[fl] >> sl & 1 != 0) != (head != 0) {
                    return err(head, "second-level bitmap disagrees with list head");
                }
                let mut cur = head;
                let mut back = 0u32;
                while cur != 0 {
                    if cur < unsafe { (*ctl).first } || cur >= end {
                        return err(cur, "free-list link outside heap");
                    }
                    let w = self.word(cur, SIZE);
                    if w & FREE == 0 {
                        return err(cur, "used block on a free list");
                    }
                    if mapping_insert((w & !FLAG_MASK) as usize) != (fl as u32, sl as u32) {
                        return err(cur, "free block filed under the wrong class");
                    }
                    if self.word(cur, PREV_FREE_LINK) != back {
                        return err(cur, "free-list back link mismatch");
                    }
                    listed += 1;
                    if listed > c.free_blocks {
                        return err(cur, "free lists hold more blocks than the chain");
                    }
                    back = cur;
                    cur = self.word(cur, NEXT_FREE);
                }
            }
        }
        if listed != c.free_blocks {
            return err(0, "free block missing from the free lists");
        }
        Ok(c)
    }

    // ---- internals -------------------------------------------------------

    fn ctl(&self) -> *mut Control {
        self.base.as_ptr().cast()
    }

    fn stats_mut(&mut self) -> &mut HeapStats {
        unsafe { &mut (*self.ctl()).stats }
    }

    fn account_grow(&mut self, old: usize, new: usize) {
        let stats = self.stats_mut();
        stats.live_bytes = stats.live_bytes - old as u64 + new as u64;
        stats.peak_bytes = stats.peak_bytes.max(stats.live_bytes);
    }

    fn account_shrink(&mut self, old: usize, new: usize) {
        self.stats_mut().live_bytes -= (old - new) as u64;
    }

    #[inline]
    fn word(&self, off: u32, field: usize) -> u32 {
        unsafe { self.base.as_ptr().add(off as usize + field).cast::<u32>().read() }
    }

    #[inline]
    fn set_word(&mut self, off: u32, field: usize, v: u32) {
        unsafe { self.base.as_ptr().add(off as usize + field).cast::<u32>().write(v) }
    }

    #[inline]
    fn block_size(&self, off: u32) -> usize {
        (self.word(off, SIZE) & !FLAG_MASK) as usize
    }

    #[inline]
    fn set_size_keep_flags(&mut self, off: u32, size: usize) {
        let flags = self.word(off, SIZE) & FLAG_MASK;
        self.set_word(off, SIZE, size as u32 | flags);
    }

    #[inline]
    fn next_phys(&self, off: u32) -> u32 {
        off + (HEADER + self.block_size(off)) as u32
    }

    #[inline]
    fn payload(&self, off: u32) -> NonNull<u8> {
        unsafe { NonNull::new_unchecked(self.base.as_ptr().add(off as usize + HEADER)) }
    }

    #[inline]
    fn offset_of(&self, ptr: NonNull<u8>) -> u32 {
        debug_assert!(self.contains(ptr.as_ptr() as usize));
        (ptr.as_ptr() as usize - self.base.as_ptr() as usize - HEADER) as u32
    }

    fn insert_free(&mut self, off: u32) {
        let (fl, sl) = mapping_insert(self.block_size(off));
        let ctl = self.ctl();
        let head = unsafe { (*ctl).heads[fl as usize][sl as usize] };
        self.set_word(off, NEXT_FREE, head);
        self.set_word(off, PREV_FREE_LINK, 0);
        if head != 0 {
            self.set_word(head, PREV_FREE_LINK, off);
        }
        unsafe {
            (*ctl).heads[fl as usize][sl as usize] = off;
            (*ctl).fl_bitmap |= 1 << fl;
            (*ctl).sl_bitmap[fl as usize] |= 1 << sl;
        }
    }

    fn remove_free(&mut self, off: u32) {
        let (fl, sl) = mapping_insert(self.block_size(off));
        let next = self.word(off, NEXT_FREE);
        let prev = self.word(off, PREV_FREE_LINK);
        if next != 0 {
            self.set_word(next, PREV_FREE_LINK, prev);
        }
        if prev != 0 {
            self.set_word(prev, NEXT_FREE, next);
        } else {
            let ctl = self.ctl();
            unsafe {
                (*ctl).heads[fl as usize][sl as usize] = next;
                if next == 0 {
                    (*ctl).sl_bitmap[fl as usize] &= !(1 << sl);
                    if (*ctl).sl_bitmap[fl as usize] == 0 {
                        (*ctl).fl_bitmap &= !(1 << fl);
                    }
                }
            }
        }
    }

    fn find_suitable(&self, fl: u32, sl: u32) -> Option<u32> {
        let ctl = self.ctl();
        unsafe {
            let mut fl = fl;
            let mut sl_map = (*ctl).sl_bitmap[fl as usize] as u32 & (u32::MAX << sl);
            if sl_map == 0 {
                let fl_map = (*ctl).fl_bitmap & u32::MAX.checked_shl(fl + 1).unwrap_or(0);
                if fl_map == 0 {
                    return None;
                }
                fl = fl_map.trailing_zeros();
                sl_map = (*ctl).sl_bitmap[fl as usize] as u32;
            }
            Some((*ctl).heads[fl as usize][sl_map.trailing_zeros() as usize])
        }
    }

    /// Detaches a free block of at least `adj` bytes from its list.
    fn take_block(&mut self, adj: usize) -> Option<u32> {
        let (fl, sl) = mapping_search(adj)?;
        let off = self.find_suitable(fl, sl)?;
        self.remove_free(off);
        Some(off)
    }

    /// Detaches a block whose payload can be aligned to `align`, splits off
    /// any leading gap as a free block, trims the tail and marks it used.
    fn take_aligned(&mut self, adj: usize, align: usize) -> Option<u32> {
        let gap_min = HEADER + MIN_BLOCK;
        let req = adj.checked_add(align)?.checked_add(gap_min)?;
        let mut off = self.take_block(req)?;
        let payload = self.payload(off).as_ptr() as usize;
        let mut aligned = (payload + align - 1) & !(align - 1);
        if aligned != payload && aligned - payload < gap_min {
            aligned = (payload + gap_min + align - 1) & !(align - 1);
        }
        let gap = aligned - payload;
        if gap != 0 {
            let total = self.block_size(off);
            let new_off = off + gap as u32;
            let next = self.next_phys(off);
            self.set_word(off, SIZE, (gap - HEADER) as u32 | FREE);
            self.set_word(new_off, PREV_PHYS, off);
            self.set_word(new_off, SIZE, (total - gap) as u32 | PREV_FREE);
            self.set_word(next, PREV_PHYS, new_off);
            self.insert_free(off);
            off = new_off;
        }
        self.split_tail(off, adj);
        self.mark_used(off);
        Some(off)
    }

    /// Splits the detached block at `off` so it holds `adj` bytes, filing the
    /// remainder as a free block. The successor of `off` must be used.
    fn split_tail(&mut self, off: u32, adj: usize) {
        let size = self.block_size(off);
        if size >= adj + HEADER + MIN_BLOCK {
            let rest = off + (HEADER + adj) as u32;
            let rest_size = size - adj - HEADER;
            self.set_size_keep_flags(off, adj);
            self.set_word(rest, PREV_PHYS, off);
            self.set_word(rest, SIZE, rest_size as u32 | FREE);
            let next = self.next_phys(rest);
            self.set_word(next, PREV_PHYS, rest);
            let nw = self.word(next, SIZE);
            self.set_word(next, SIZE, nw | PREV_FREE);
            self.insert_free(rest);
        }
    }

    /// Trims a used block down to `adj`, merging the cut-off tail with a free
    /// successor if there is one.
    fn shrink_used(&mut self, off: u32, adj: usize) {
        let size = self.block_size(off);
        if size < adj + HEADER + MIN_BLOCK {
            return;
        }
        let rest = off + (HEADER + adj) as u32;
        self.set_size_keep_flags(off, adj);
        self.set_word(rest, PREV_PHYS, off);
        self.set_word(rest, SIZE, (size - adj - HEADER) as u32);
        let next = self.next_phys(rest);
        if self.word(next, SIZE) & FREE != 0 {
            self.remove_free(next);
            self.absorb_next(rest);
        }
        self.mark_free(rest);
        self.insert_free(rest);
    }

    /// Merges the physical successor (already off its free list) into `off`.
    fn absorb_next(&mut self, off: u32) {
        let next = self.next_phys(off);
        let merged = self.block_size(off) + HEADER + self.block_size(next);
        self.set_size_keep_flags(off, merged);
        let after = self.next_phys(off);
        self.set_word(after, PREV_PHYS, off);
        let aw = self.word(after, SIZE) & !PREV_FREE;
        let free = self.word(off, SIZE) & FREE;
        self.set_word(after, SIZE, aw | if free != 0 { PREV_FREE } else { 0 });
    }

    fn mark_used(&mut self, off: u32) {
        let w = self.word(off, SIZE);
        self.set_word(off, SIZE, w & !FREE);
        let next = self.next_phys(off);
        let nw = self.word(next, SIZE);
        self.set_word(next, SIZE, nw & !PREV_FREE);
    }

    fn mark_free(&mut self, off: u32) {
        let w = self.word(off, SIZE);
        self.set_word(off, SIZE, w | FREE);
        let next = self.next_phys(off);
        let nw = self.word(next, SIZE);
        self.set_word(next, SIZE, nw | PREV_FREE);
        self.set_word(next, PREV_PHYS, off);
    }

    /// Frees the used block at `off` with immediate coalescing. Stats are the
    /// caller's business.
    fn release(&mut self, mut off: u32) {
        if self.word(off, SIZE) & PREV_FREE != 0 {
            let prev = self.word(off, PREV_PHYS);
            self.remove_free(prev);
            self.absorb_next(prev);
            off = prev;
        }
        let next = self.next_phys(off);
        if self.word(next, SIZE) & FREE != 0 {
            self.remove_free(next);
            self.absorb_next(off);
        }
        self.mark_free(off);
        self.insert_free(off);
    }
}
