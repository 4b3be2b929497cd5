//! Run-length codec with a caller-provided output buffer.
//!
//! The stream is a sequence of `(count, byte)` pairs with `1 <= count <= 255`.

/// Worst-case compressed size for `n` input bytes.
pub const fn max_compressed_len(n: usize) -> usize {
    2 * n
}

/// Compresses into `out`, returning the number of bytes written, or 0 if
/// `out` is too small.
pub fn compress_into(input: &[u8], out: &mut [u8]) -> usize {
    let mut w = 0;
    let mut i = 0;
    while i < input.len() {
        let b = input[i];
        let mut run = 1;
        while run < 255 && i + run < input.len() && input[i + run] == b {
            run += 1;
        }
        if w + 2 > out.len() {
            return 0;
        }
        out[w] = run as u8;
        out[w + 1] = b;
        w += 2;
        i += run;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UncompressError {
    /// Odd length or a zero count.
    Malformed,
    /// `out` too small; carries the size that would have been needed.
    Capacity(usize),
}

/// Decoded size of a well-formed stream.
pub fn uncompressed_len(input: &[u8]) -> Result<usize, UncompressError> {
    if !input.len().is_multiple_of(2) {
        return Err(UncompressError::Malformed);
    }
    let mut n = 0usize;
    for pair in input.chunks_exact(2) {
        if pair[0] == 0 {
            return Err(UncompressError::Malformed);
        }
        n += pair[0] as usize;
    }
    Ok(n)
}

pub fn uncompress_into(input: &[u8], out: &mut [u8]) -> Result<usize, UncompressError> {
    let need = uncompressed_len(input)?;
    if need > out.len() {
        return Err(UncompressError::Capacity(need));
    }
    let mut w = 0;
    for pair in input.chunks_exact(2) {
        let n = pair[0] as usize;
        out[w..w + n].fill(pair[1]);
        w += n;
    }
    Ok(w)
}

pub fn compress(input: &[u8]) -> alloc::vec::Vec<u8> {
    let mut out = alloc::vec![0u8; max_compressed_len(input.len())];
    let n = compress_into(input, &mut out);
    out.truncate(n);
    out
}

pub fn uncompress(input: &[u8]) -> Option<alloc::vec::Vec<u8>> {
    let mut out = alloc::vec![0u8; uncompressed_len(input).ok()?];
    uncompress_into(input, &mut out).ok()?;
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(compress(&[]), Vec::<u8>::new());
        assert_eq!(compress(&[7, 7, 7]), vec![3, 7]);
        assert_eq!(uncompress(&[3, 7]), Some(vec![7, 7, 7]));
        assert_eq!(uncompress(&[3]), None);
        assert_eq!(uncompress(&[0, 1]), None);
        assert_eq!(compress(&[1; 300]), vec![255, 1, 45, 1]);
    }

    #[test]
    fn capacity_exceeded_reports_zero() {
        let mut out = [0u8; 3];
        assert_eq!(compress_into(&[1, 2], &mut out), 0);
        assert_eq!(uncompress_into(&[4, 1], &mut out), Err(UncompressError::Capacity(4)));
    }

    proptest! {
        #[test]
        fn round_trip(x in proptest::collection::vec(prop_oneof![Just(0u8), any::<u8>()], 0..2000)) {
            let c = compress(&x);
            prop_assert!(c.len() <= max_compressed_len(x.len()));
            prop_assert_eq!(uncompress(&c), Some(x));
        }

        #[test]
        fn uncompress_is_total(x in any::<Vec<u8>>()) {
            let _ = uncompress(&x);
        }
    }
}
