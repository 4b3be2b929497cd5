//! Reference portable binary encoding, the comparison point for the layout
//! serializer.
//!
//! It follows the conventions of common serde binary formats: little-endian
//! fixed-width integers, a `u64` length prefix for sequences and text, tag
//! bytes for options and results. Sequences are always written and read one
//! element at a time; text is copied in bulk, as those formats do for `str`.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::layout::{ByteSink, DecodeError, Reader};

pub trait PortableCodec: Sized {
    fn portable_size(&self) -> usize;

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S);

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError>;
}

/// Encodes `value` into a fresh buffer.
pub fn to_portable<T: PortableCodec>(value: &T) -> Vec<u8> {
    let mut out = Vec::with_capacity(value.portable_size());
    value.encode_portable(&mut out);
    out
}

/// Decodes one value from the front of `buf`, returning it with the rest.
pub fn from_portable<T: PortableCodec>(buf: &[u8]) -> Result<(T, &[u8]), DecodeError> {
    let mut r = Reader::new(buf);
    let v = T::decode_portable(&mut r)?;
    Ok((v, r.remaining()))
}

fn read_len(r: &mut Reader<'_>) -> Result<usize, DecodeError> {
    let len = u64::from_le_bytes(r.take_array()?);
    usize::try_from(len).map_err(|_| DecodeError::Malformed("length overflows usize"))
}

macro_rules! fixed {
    ($($t:ty),*) => {$(
        impl PortableCodec for $t {
            #[inline]
            fn portable_size(&self) -> usize {
                core::mem::size_of::<$t>()
            }

            #[inline]
            fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
                out.put(&self.to_le_bytes());
            }

            #[inline]
            fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok(<$t>::from_le_bytes(r.take_array()?))
            }
        }
    )*};
}

fixed!(u8, u16, u32, u64, u128, i8, i16, i32, i64, i128, f32, f64);

impl PortableCodec for usize {
    fn portable_size(&self) -> usize {
        8
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        (*self as u64).encode_portable(out);
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        usize::try_from(u64::decode_portable(r)?).map_err(|_| DecodeError::Malformed("usize out of range"))
    }
}

impl PortableCodec for isize {
    fn portable_size(&self) -> usize {
        8
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        (*self as i64).encode_portable(out);
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        isize::try_from(i64::decode_portable(r)?).map_err(|_| DecodeError::Malformed("isize out of range"))
    }
}

impl PortableCodec for bool {
    fn portable_size(&self) -> usize {
        1
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        out.put(&[*self as u8]);
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.take_byte()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Malformed("bool byte not 0 or 1")),
        }
    }
}

impl PortableCodec for char {
    fn portable_size(&self) -> usize {
        4
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        (*self as u32).encode_portable(out);
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        char::from_u32(u32::decode_portable(r)?).ok_or(DecodeError::Malformed("invalid char"))
    }
}

impl PortableCodec for () {
    fn portable_size(&self) -> usize {
        0
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, _out: &mut S) {}

    fn decode_portable(_r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(())
    }
}

impl<T: PortableCodec> PortableCodec for Option<T> {
    fn portable_size(&self) -> usize {
        1 + self.as_ref().map_or(0, T::portable_size)
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        match self {
            None => out.put(&[0]),
            Some(v) => {
                out.put(&[1]);
                v.encode_portable(out);
            }
        }
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.take_byte()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_portable(r)?)),
            _ => Err(DecodeError::Malformed("option tag not 0 or 1")),
        }
    }
}

impl<T: PortableCodec, E: PortableCodec> PortableCodec for Result<T, E> {
    fn portable_size(&self) -> usize {
        4 + match self {
            Ok(v) => v.portable_size(),
            Err(e) => e.portable_size(),
        }
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        match self {
            Ok(v) => {
                0u32.encode_portable(out);
                v.encode_portable(out);
            }
            Err(e) => {
                1u32.encode_portable(out);
                e.encode_portable(out);
            }
        }
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match u32::decode_portable(r)? {
            0 => Ok(Ok(T::decode_portable(r)?)),
            1 => Ok(Err(E::decode_portable(r)?)),
            _ => Err(DecodeError::Malformed("result variant index")),
        }
    }
}

impl<T: PortableCodec> PortableCodec for Vec<T> {
    fn portable_size(&self) -> usize {
        8 + self.iter().map(T::portable_size).sum::<usize>()
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        (self.len() as u64).encode_portable(out);
        for item in self {
            item.encode_portable(out);
        }
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let len = read_len(r)?;
        // Cap the up-front reservation; a hostile length must not turn into
        // a huge allocation before the input runs out.
        let mut out = Vec::with_capacity(len.min(r.remaining().len()).min(1 << 16));
        for _ in 0..len {
            out.push(T::decode_portable(r)?);
        }
        Ok(out)
    }
}

impl PortableCodec for String {
    fn portable_size(&self) -> usize {
        8 + self.len()
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        (self.len() as u64).encode_portable(out);
        out.put(self.as_bytes());
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let len = read_len(r)?;
        let bytes = r.take(len)?;
        core::str::from_utf8(bytes).map(String::from).map_err(|_| DecodeError::Malformed("text is not UTF-8"))
    }
}

impl<T: PortableCodec> PortableCodec for Box<T> {
    fn portable_size(&self) -> usize {
        (**self).portable_size()
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        (**self).encode_portable(out);
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        T::decode_portable(r).map(Box::new)
    }
}

impl<T: PortableCodec, const N: usize> PortableCodec for [T; N] {
    fn portable_size(&self) -> usize {
        self.iter().map(T::portable_size).sum()
    }

    fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
        for item in self {
            item.encode_portable(out);
        }
    }

    fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut items = Vec::with_capacity(N);
        for _ in 0..N {
            items.push(T::decode_portable(r)?);
        }
        items.try_into().map_err(|_| DecodeError::Malformed("array length"))
    }
}

macro_rules! tuple {
    ($($name:ident $idx:tt),+) => {
        impl<$($name: PortableCodec),+> PortableCodec for ($($name,)+) {
            fn portable_size(&self) -> usize {
                0 $(+ self.$idx.portable_size())+
            }

            fn encode_portable<S: ByteSink + ?Sized>(&self, out: &mut S) {
                $(self.$idx.encode_portable(out);)+
            }

            fn decode_portable(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok(($($name::decode_portable(r)?,)+))
            }
        }
    };
}

tuple!(A 0);
tuple!(A 0, B 1);
tuple!(A 0, B 1, C 2);
tuple!(A 0, B 1, C 2, D 3);
tuple!(A 0, B 1, C 2, D 3, E 4);
tuple!(A 0, B 1, C 2, D 3, E 4, F 5);
tuple!(A 0, B 1, C 2, D 3, E 4, F 5, G 6);
tuple!(A 0, B 1, C 2, D 3, E 4, F 5, G 6, H 7);

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(to_portable(&0x0102u16), [2, 1]);
        assert_eq!(to_portable(&vec![7u8, 8]), [2, 0, 0, 0, 0, 0, 0, 0, 7, 8]);
        assert_eq!(to_portable(&Some(true)), [1, 1]);
        assert_eq!(to_portable(&String::from("hi")), [2, 0, 0, 0, 0, 0, 0, 0, b'h', b'i']);
        assert_eq!(to_portable(&Ok::<u8, u8>(5)), [0, 0, 0, 0, 5]);
    }

    #[test]
    fn hostile_length_is_truncated_not_allocated() {
        let buf = u64::MAX.to_le_bytes();
        assert!(from_portable::<Vec<u8>>(&buf).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(v in any::<(Vec<u8>, Option<String>, (u64, i16, bool), Vec<Vec<u32>>)>()) {
            let bytes = to_portable(&v);
            prop_assert_eq!(bytes.len(), v.portable_size());
            let (back, rest) = from_portable::<(Vec<u8>, Option<String>, (u64, i16, bool), Vec<Vec<u32>>)>(&bytes).unwrap();
            prop_assert!(rest.is_empty());
            prop_assert_eq!(back, v);
        }
    }
}
