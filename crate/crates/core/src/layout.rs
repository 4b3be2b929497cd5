//! Memory-layout serialization.
//!
//! Values are written roughly as they sit in memory: scalars as their native
//! byte representation, records as the concatenation of their fields, and
//! heap-owning containers as a fixed header followed by their payload:
//!
//! ```text
//! scalar        native-endian bytes (bool: 1 byte, char: 4 bytes)
//! Option<T>     tag byte (0 = None, 1 = Some) + T
//! Result<T, E>  tag byte (0 = Ok, 1 = Err) + T or E
//! Vec<T>        len: u64 | cap: u64 (= len) | elements
//! String        as Vec<u8>, payload must be UTF-8
//! [T; N]        N elements, no header
//! tuple/record  fields in declaration order
//! ```
//!
//! Decoding works on a borrowed buffer and hands back whatever was not
//! consumed, so several frames can be packed into one buffer and peeled off
//! in order. The encoding is only meaningful on the machine that produced it.
//!
//! Byte vectors are copied in one piece. A sink or reader can switch that off
//! (see [`Elementwise`] and [`Reader::elementwise`]), which yields identical
//! bytes through the generic per-element path.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Destination for encoded bytes.
pub trait ByteSink {
    fn put(&mut self, bytes: &[u8]);

    /// Whether byte sequences may be written with a single `put`.
    fn bulk(&self) -> bool {
        true
    }

    /// Hint that `additional` more bytes are coming.
    fn reserve(&mut self, _additional: usize) {}
}

impl ByteSink for Vec<u8> {
    #[inline]
    fn put(&mut self, bytes: &[u8]) {
        self.extend_from_slice(bytes);
    }

    fn reserve(&mut self, additional: usize) {
        Vec::reserve(self, additional);
    }
}

/// Sink adapter that disables the byte-sequence fast path.
pub struct Elementwise<'a, S: ?Sized>(pub &'a mut S);

impl<S: ByteSink + ?Sized> ByteSink for Elementwise<'_, S> {
    #[inline]
    fn put(&mut self, bytes: &[u8]) {
        self.0.put(bytes);
    }

    fn bulk(&self) -> bool {
        false
    }

    fn reserve(&mut self, additional: usize) {
        self.0.reserve(additional);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeError {
    /// The buffer ended before the value did.
    Truncated { needed: usize, available: usize },
    /// The bytes cannot be a value of the requested type.
    Malformed(&'static str),
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Truncated { needed, available } => {
                write!(f, "truncated input: needed {needed} bytes, {available} left")
            }
            Self::Malformed(what) => write!(f, "malformed input: {what}"),
        }
    }
}

impl core::error::Error for DecodeError {}

/// Cursor over an encoded buffer.
#[derive(Clone, Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    bulk: bool,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, bulk: true }
    }

    /// Reader that decodes byte sequences one element at a time.
    pub fn elementwise(buf: &'a [u8]) -> Self {
        Self { buf, bulk: false }
    }

    pub fn is_bulk(&self) -> bool {
        self.bulk
    }

    /// Unconsumed input.
    pub fn remaining(&self) -> &'a [u8] {
        self.buf
    }

    #[inline]
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if n > self.buf.len() {
            return Err(DecodeError::Truncated { needed: n, available: self.buf.len() });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    #[inline]
    pub fn take_array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let bytes = self.take(N)?;
        let mut out = [0u8; N];
        out.copy_from_slice(bytes);
        Ok(out)
    }

    #[inline]
    pub fn take_byte(&mut self) -> Result<u8, DecodeError> {
        match self.buf.split_first() {
            Some((&b, tail)) => {
                self.buf = tail;
                Ok(b)
            }
            None => Err(DecodeError::Truncated { needed: 1, available: 0 }),
        }
    }
}

/// Shape of an encodable type, used to check a function signature against
/// the types its arguments will be decoded as.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TypeDesc {
    Unit,
    Bool,
    Char,
    Int {
        signed: bool,
        bytes: u8,
    },
    Float {
        bytes: u8,
    },
    /// `Vec<u8>`, the sequence with the bulk-copy path.
    Bytes,
    Text,
    Seq(Box<TypeDesc>),
    Array(Box<TypeDesc>, usize),
    Option(Box<TypeDesc>),
    Result(Box<TypeDesc>, Box<TypeDesc>),
    Tuple(Vec<TypeDesc>),
    Record {
        name: &'static str,
        fields: Vec<(&'static str, TypeDesc)>,
    },
    /// Variants are encoded as a `u32` index followed by their fields.
    Enum {
        name: &'static str,
        variants: Vec<(&'static str, Vec<TypeDesc>)>,
    },
}

impl TypeDesc {
    pub fn is_result(&self) -> bool {
        matches!(self, Self::Result(..))
    }
}

/// A type with a memory-layout encoding.
///
/// Implementations exist for scalars, `bool`, `char`, `()`, `Option`,
/// `Result`, `Vec`, `String`, `Box`, arrays and tuples; records get one from
/// `#[derive(Encodable)]`.
pub trait Encodable: Sized {
    /// Lower bound on the encoded size of any value of this type.
    const MIN_ENCODED: usize;

    fn describe() -> TypeDesc;

    /// Exact number of bytes [`entomb`](Self::entomb) will write.
    fn measure(&self) -> usize;

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S);

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    #[doc(hidden)]
    fn measure_slice(items: &[Self]) -> usize {
        items.iter().map(Self::measure).sum()
    }

    #[doc(hidden)]
    fn entomb_slice<S: ByteSink + ?Sized>(items: &[Self], out: &mut S) {
        for item in items {
            item.entomb(out);
        }
    }

    #[doc(hidden)]
    fn exhume_seq(r: &mut Reader<'_>, len: usize) -> Result<Vec<Self>, DecodeError> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(Self::exhume_from(r)?);
        }
        Ok(out)
    }

    #[doc(hidden)]
    fn describe_seq() -> TypeDesc {
        TypeDesc::Seq(Box::new(Self::describe()))
    }
}

/// Encoded length of `value`.
pub fn measure<T: Encodable>(value: &T) -> usize {
    value.measure()
}

/// Appends the encoding of `value` to `out`.
pub fn entomb<T: Encodable, S: ByteSink + ?Sized>(value: &T, out: &mut S) {
    out.reserve(value.measure());
    value.entomb(out);
}

/// Decodes one `T` from the front of `buf`, returning it with the rest.
pub fn exhume<T: Encodable>(buf: &[u8]) -> Result<(T, &[u8]), DecodeError> {
    let mut r = Reader::new(buf);
    let v = T::exhume_from(&mut r)?;
    Ok((v, r.remaining()))
}

/// Owned encoding of exactly one value.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct SerialFrame(Vec<u8>);

impl SerialFrame {
    pub fn of<T: Encodable>(value: &T) -> Self {
        let mut buf = Vec::with_capacity(value.measure());
        value.entomb(&mut buf);
        Self(buf)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn decode<T: Encodable>(&self) -> Result<T, DecodeError> {
        let (v, rest) = exhume(&self.0)?;
        if !rest.is_empty() {
            return Err(DecodeError::Malformed("trailing bytes after frame"));
        }
        Ok(v)
    }
}

impl fmt::Debug for SerialFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SerialFrame({} bytes)", self.0.len())
    }
}

impl AsRef<[u8]> for SerialFrame {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

const SEQ_HEADER: usize = 16;

fn entomb_seq_header<S: ByteSink + ?Sized>(len: usize, out: &mut S) {
    let len = len as u64;
    out.put(&len.to_ne_bytes());
    out.put(&len.to_ne_bytes());
}

fn exhume_seq_len<T: Encodable>(r: &mut Reader<'_>) -> Result<usize, DecodeError> {
    let len = u64::from_ne_bytes(r.take_array()?);
    let cap = u64::from_ne_bytes(r.take_array()?);
    if cap < len {
        return Err(DecodeError::Malformed("sequence length exceeds capacity"));
    }
    let len = usize::try_from(len).map_err(|_| DecodeError::Malformed("sequence length overflows usize"))?;
    // Refuse lengths the remaining input cannot possibly hold before
    // allocating anything for them.
    let available = r.remaining().len();
    match available.checked_div(T::MIN_ENCODED) {
        Some(most) if len > most => {
            return Err(DecodeError::Truncated { needed: len.saturating_mul(T::MIN_ENCODED), available });
        }
        None if len > u32::MAX as usize => {
            return Err(DecodeError::Malformed("implausible length for zero-sized elements"));
        }
        _ => {}
    }
    Ok(len)
}

macro_rules! scalar {
    ($($t:ty => $desc:expr;)*) => {$(
        impl Encodable for $t {
            const MIN_ENCODED: usize = core::mem::size_of::<$t>();

            fn describe() -> TypeDesc {
                $desc
            }

            #[inline]
            fn measure(&self) -> usize {
                core::mem::size_of::<$t>()
            }

            #[inline]
            fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
                out.put(&self.to_ne_bytes());
            }

            #[inline]
            fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok(<$t>::from_ne_bytes(r.take_array()?))
            }

            fn measure_slice(items: &[Self]) -> usize {
                items.len() * core::mem::size_of::<$t>()
            }
        }
    )*};
}

scalar! {
    u16 => TypeDesc::Int { signed: false, bytes: 2 };
    u32 => TypeDesc::Int { signed: false, bytes: 4 };
    u64 => TypeDesc::Int { signed: false, bytes: 8 };
    u128 => TypeDesc::Int { signed: false, bytes: 16 };
    usize => TypeDesc::Int { signed: false, bytes: core::mem::size_of::<usize>() as u8 };
    i8 => TypeDesc::Int { signed: true, bytes: 1 };
    i16 => TypeDesc::Int { signed: true, bytes: 2 };
    i32 => TypeDesc::Int { signed: true, bytes: 4 };
    i64 => TypeDesc::Int { signed: true, bytes: 8 };
    i128 => TypeDesc::Int { signed: true, bytes: 16 };
    isize => TypeDesc::Int { signed: true, bytes: core::mem::size_of::<isize>() as u8 };
    f32 => TypeDesc::Float { bytes: 4 };
    f64 => TypeDesc::Float { bytes: 8 };
}

impl Encodable for u8 {
    const MIN_ENCODED: usize = 1;

    fn describe() -> TypeDesc {
        TypeDesc::Int { signed: false, bytes: 1 }
    }

    #[inline]
    fn measure(&self) -> usize {
        1
    }

    #[inline]
    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        out.put(core::slice::from_ref(self));
    }

    #[inline]
    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.take_byte()
    }

    fn measure_slice(items: &[Self]) -> usize {
        items.len()
    }

    fn entomb_slice<S: ByteSink + ?Sized>(items: &[Self], out: &mut S) {
        if out.bulk() {
            out.put(items);
        } else {
            for b in items {
                b.entomb(out);
            }
        }
    }

    fn exhume_seq(r: &mut Reader<'_>, len: usize) -> Result<Vec<Self>, DecodeError> {
        if r.is_bulk() {
            return Ok(r.take(len)?.to_vec());
        }
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(r.take_byte()?);
        }
        Ok(out)
    }

    fn describe_seq() -> TypeDesc {
        TypeDesc::Bytes
    }
}

impl Encodable for bool {
    const MIN_ENCODED: usize = 1;

    fn describe() -> TypeDesc {
        TypeDesc::Bool
    }

    fn measure(&self) -> usize {
        1
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        out.put(&[*self as u8]);
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.take_byte()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Malformed("bool byte not 0 or 1")),
        }
    }
}

impl Encodable for char {
    const MIN_ENCODED: usize = 4;

    fn describe() -> TypeDesc {
        TypeDesc::Char
    }

    fn measure(&self) -> usize {
        4
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        out.put(&(*self as u32).to_ne_bytes());
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        char::from_u32(u32::from_ne_bytes(r.take_array()?)).ok_or(DecodeError::Malformed("invalid char"))
    }
}

impl Encodable for () {
    const MIN_ENCODED: usize = 0;

    fn describe() -> TypeDesc {
        TypeDesc::Unit
    }

    fn measure(&self) -> usize {
        0
    }

    fn entomb<S: ByteSink + ?Sized>(&self, _out: &mut S) {}

    fn exhume_from(_r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(())
    }
}

impl<T: Encodable> Encodable for Option<T> {
    const MIN_ENCODED: usize = 1;

    fn describe() -> TypeDesc {
        TypeDesc::Option(Box::new(T::describe()))
    }

    fn measure(&self) -> usize {
        1 + self.as_ref().map_or(0, T::measure)
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        match self {
            None => out.put(&[0]),
            Some(v) => {
                out.put(&[1]);
                v.entomb(out);
            }
        }
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.take_byte()? {
            0 => Ok(None),
            1 => Ok(Some(T::exhume_from(r)?)),
            _ => Err(DecodeError::Malformed("option tag not 0 or 1")),
        }
    }
}

impl<T: Encodable, E: Encodable> Encodable for Result<T, E> {
    const MIN_ENCODED: usize = 1;

    fn describe() -> TypeDesc {
        TypeDesc::Result(Box::new(T::describe()), Box::new(E::describe()))
    }

    fn measure(&self) -> usize {
        1 + match self {
            Ok(v) => v.measure(),
            Err(e) => e.measure(),
        }
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        match self {
            Ok(v) => {
                out.put(&[0]);
                v.entomb(out);
            }
            Err(e) => {
                out.put(&[1]);
                e.entomb(out);
            }
        }
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.take_byte()? {
            0 => Ok(Ok(T::exhume_from(r)?)),
            1 => Ok(Err(E::exhume_from(r)?)),
            _ => Err(DecodeError::Malformed("result tag not 0 or 1")),
        }
    }
}

impl<T: Encodable> Encodable for Vec<T> {
    const MIN_ENCODED: usize = SEQ_HEADER;

    fn describe() -> TypeDesc {
        T::describe_seq()
    }

    fn measure(&self) -> usize {
        SEQ_HEADER + T::measure_slice(self)
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        entomb_seq_header(self.len(), out);
        T::entomb_slice(self, out);
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let len = exhume_seq_len::<T>(r)?;
        T::exhume_seq(r, len)
    }
}

impl Encodable for String {
    const MIN_ENCODED: usize = SEQ_HEADER;

    fn describe() -> TypeDesc {
        TypeDesc::Text
    }

    fn measure(&self) -> usize {
        SEQ_HEADER + self.len()
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        entomb_seq_header(self.len(), out);
        u8::entomb_slice(self.as_bytes(), out);
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let len = exhume_seq_len::<u8>(r)?;
        let bytes = u8::exhume_seq(r, len)?;
        String::from_utf8(bytes).map_err(|_| DecodeError::Malformed("text is not UTF-8"))
    }
}

impl<T: Encodable> Encodable for Box<T> {
    const MIN_ENCODED: usize = T::MIN_ENCODED;

    fn describe() -> TypeDesc {
        T::describe()
    }

    fn measure(&self) -> usize {
        (**self).measure()
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        (**self).entomb(out);
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        T::exhume_from(r).map(Box::new)
    }
}

impl<T: Encodable, const N: usize> Encodable for [T; N] {
    const MIN_ENCODED: usize = T::MIN_ENCODED * N;

    fn describe() -> TypeDesc {
        TypeDesc::Array(Box::new(T::describe()), N)
    }

    fn measure(&self) -> usize {
        T::measure_slice(self)
    }

    fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
        T::entomb_slice(self, out);
    }

    fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let items = T::exhume_seq(r, N)?;
        items.try_into().map_err(|_| DecodeError::Malformed("array length"))
    }
}

macro_rules! tuple {
    ($($name:ident $idx:tt),+) => {
        impl<$($name: Encodable),+> Encodable for ($($name,)+) {
            const MIN_ENCODED: usize = 0 $(+ $name::MIN_ENCODED)+;

            fn describe() -> TypeDesc {
                TypeDesc::Tuple(alloc::vec![$($name::describe()),+])
            }

            fn measure(&self) -> usize {
                0 $(+ self.$idx.measure())+
            }

            fn entomb<S: ByteSink + ?Sized>(&self, out: &mut S) {
                $(self.$idx.entomb(out);)+
            }

            fn exhume_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok(($($name::exhume_from(r)?,)+))
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

/// Borrowed views that cross the boundary as an owned copy.
///
/// A `&[T]` parameter is sent as `Vec<T>`, a `&str` as `String`; on the
/// other side the callee gets a view of the decoded copy again.
pub trait Bridge {
    type Owned: Encodable;

    fn bridge(&self) -> Self::Owned;

    fn unbridge(owned: &Self::Owned) -> &Self;
}

/// Mutable views additionally copy the callee's changes back.
pub trait BridgeMut: Bridge {
    fn unbridge_mut(owned: &mut Self::Owned) -> &mut Self;

    /// Overwrites the viewed range with `owned`.
    fn write_back(&mut self, owned: Self::Owned) -> Result<(), LengthMismatch>;
}

/// A write-back whose source length differs from the view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthMismatch {
    pub view: usize,
    pub returned: usize,
}

impl fmt::Display for LengthMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "view holds {} elements but {} came back", self.view, self.returned)
    }
}

impl core::error::Error for LengthMismatch {}

impl<T: Encodable + Clone> Bridge for [T] {
    type Owned = Vec<T>;

    fn bridge(&self) -> Vec<T> {
        self.to_vec()
    }

    fn unbridge(owned: &Vec<T>) -> &[T] {
        owned
    }
}

impl<T: Encodable + Clone> BridgeMut for [T] {
    fn unbridge_mut(owned: &mut Vec<T>) -> &mut [T] {
        owned
    }

    fn write_back(&mut self, owned: Vec<T>) -> Result<(), LengthMismatch> {
        if owned.len() != self.len() {
            return Err(LengthMismatch { view: self.len(), returned: owned.len() });
        }
        for (dst, src) in self.iter_mut().zip(owned) {
            *dst = src;
        }
        Ok(())
    }
}

impl Bridge for str {
    type Owned = String;

    fn bridge(&self) -> String {
        String::from(self)
    }

    fn unbridge(owned: &String) -> &str {
        owned
    }
}
