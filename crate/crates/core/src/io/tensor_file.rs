use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{IntTensor, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"LTNS";
pub const TENSOR_VERSION: u8 = 1;
pub const DTYPE_REAL32: u8 = 0;
pub const DTYPE_INT32: u8 = 1;

/// A tensor file holds either element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    Real32(Tensor<f32>),
    Int32(IntTensor),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::Real32(t) => t.shape(),
            AnyTensor::Int32(t) => t.shape(),
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            AnyTensor::Real32(_) => "real32",
            AnyTensor::Int32(_) => "int32",
        }
    }

    pub fn into_real32(self) -> Result<Tensor<f32>> {
        match self {
            AnyTensor::Real32(t) => Ok(t),
            other => Err(Error::InvalidArgument(format!(
                "expected a real32 tensor, found {}",
                other.dtype_name()
            ))),
        }
    }

    pub fn into_int32(self) -> Result<IntTensor> {
        match self {
            AnyTensor::Int32(t) => Ok(t),
            other => Err(Error::InvalidArgument(format!(
                "expected an int32 tensor, found {}",
                other.dtype_name()
            ))),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::Real32(t)
    }
}

impl From<IntTensor> for AnyTensor {
    fn from(t: IntTensor) -> Self {
        AnyTensor::Int32(t)
    }
}

/// Appends the encoded tensor to `out`.
pub fn encode_tensor_into(t: &AnyTensor, out: &mut Vec<u8>) -> Result<()> {
    let shape = t.shape();
    let rank = u8::try_from(shape.len()).map_err(|_| {
        Error::InvalidArgument(format!(
            "rank {} does not fit in a tensor file",
            shape.len()
        ))
    })?;
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(match t {
        AnyTensor::Real32(_) => DTYPE_REAL32,
        AnyTensor::Int32(_) => DTYPE_INT32,
    });
    out.push(rank);
    out.push(0);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t {
        AnyTensor::Real32(t) => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        AnyTensor::Int32(t) => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(())
}

pub fn encode_tensor(t: &AnyTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_tensor_into(t, &mut out)?;
    Ok(out)
}

/// Little-endian reader that reports absolute byte offsets in errors.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn fail(&self, at: usize, field: &'static str, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: at as u64,
            field,
            msg: msg.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(self.fail(
                self.pos,
                field,
                format!("need {n} bytes, only {remaining} left"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, field)?.try_into().expect("2 bytes"),
        ))
    }

    pub(crate) fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, field)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, field)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(
                self.pos,
                "end of file",
                format!("{} unexpected trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }

    pub(crate) fn tensor(&mut self) -> Result<AnyTensor> {
        let start = self.pos;
        let magic = self.take(4, "magic")?;
        if magic != TENSOR_MAGIC {
            return Err(self.fail(
                start,
                "magic",
                format!("expected \"LTNS\", found {magic:?}"),
            ));
        }
        let at = self.pos;
        let version = self.u8("version")?;
        if version != TENSOR_VERSION {
            return Err(self.fail(at, "version", format!("unsupported version {version}")));
        }
        let at = self.pos;
        let dtype = self.u8("dtype")?;
        if dtype != DTYPE_REAL32 && dtype != DTYPE_INT32 {
            return Err(self.fail(at, "dtype", format!("unknown dtype code {dtype}")));
        }
        let at = self.pos;
        let rank = self.u8("rank")? as usize;
        if rank == 0 {
            return Err(self.fail(at, "rank", "rank must be at least 1"));
        }
        let at = self.pos;
        let reserved = self.u8("reserved")?;
        if reserved != 0 {
            return Err(self.fail(at, "reserved", format!("expected 0, found {reserved}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u64("dims")?;
            let d = usize::try_from(d)
                .ok()
                .filter(|&d| d > 0)
                .ok_or_else(|| self.fail(at, "dims", format!("invalid dimension {d}")))?;
            count = count
                .checked_mul(d)
                .filter(|&c| c <= (isize::MAX as usize) / 4)
                .ok_or_else(|| self.fail(at, "dims", "element count overflows"))?;
            shape.push(d);
        }
        let payload = self.take(count * 4, "payload")?;
        let words = payload
            .chunks_exact(4)
            .map(|c| <[u8; 4]>::try_from(c).expect("4 bytes"));
        Ok(if dtype == DTYPE_REAL32 {
            AnyTensor::Real32(Tensor::from_vec(
                shape,
                words.map(f32::from_le_bytes).collect(),
            )?)
        } else {
            AnyTensor::Int32(Tensor::from_vec(
                shape,
                words.map(i32::from_le_bytes).collect(),
            )?)
        })
    }
}

/// Decodes a complete tensor file; trailing bytes are an error.
pub fn decode_tensor(bytes: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader::new(bytes);
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

pub fn save_tensor(path: &Path, t: &AnyTensor) -> Result<()> {
    let bytes = encode_tensor(t)?;
    std::fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

pub fn load_tensor(path: &Path) -> Result<AnyTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_tensor(&bytes).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let t = AnyTensor::Int32(Tensor::from_vec([2], vec![1, -2]).unwrap());
        let bytes = encode_tensor(&t).unwrap();
        let mut expected = b"LTNS".to_vec();
        expected.extend_from_slice(&[1, 1, 1, 0]);
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&[1, 0, 0, 0, 0xfe, 0xff, 0xff, 0xff]);
        assert_eq!(bytes, expected);
        assert_eq!(decode_tensor(&bytes).unwrap(), t);
    }

    fn offset_of(e: Error) -> (u64, &'static str) {
        match e {
            Error::Format { offset, field, .. } => (offset, field),
            other => panic!("expected a format error, got {other}"),
        }
    }

    #[test]
    fn malformed_inputs_name_offset_and_field() {
        let good = encode_tensor(&AnyTensor::Real32(
            Tensor::from_vec([2, 2], vec![1.0; 4]).unwrap(),
        ))
        .unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(offset_of(decode_tensor(&bad).unwrap_err()), (0, "magic"));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(offset_of(decode_tensor(&bad).unwrap_err()), (4, "version"));
        let mut bad = good.clone();
        bad[5] = 7;
        assert_eq!(offset_of(decode_tensor(&bad).unwrap_err()), (5, "dtype"));
        let mut bad = good.clone();
        bad[7] = 1;
        assert_eq!(offset_of(decode_tensor(&bad).unwrap_err()), (7, "reserved"));
        let mut bad = good.clone();
        bad[8..16].copy_from_slice(&0u64.to_le_bytes());
        assert_eq!(offset_of(decode_tensor(&bad).unwrap_err()), (8, "dims"));
        assert_eq!(
            offset_of(decode_tensor(&good[..good.len() - 1]).unwrap_err()),
            (24, "payload")
        );
        assert_eq!(
            offset_of(decode_tensor(&good[..10]).unwrap_err()),
            (8, "dims")
        );
        let mut long = good.clone();
        long.push(0);
        assert_eq!(
            offset_of(decode_tensor(&long).unwrap_err()),
            (good.len() as u64, "end of file")
        );
        let mut huge = good.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_tensor(&huge).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
            let n: usize = shape.iter().product();
            let reals: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2_654_435_761).wrapping_add(i as u32))).collect();
            let t = AnyTensor::Real32(Tensor::from_vec(shape.clone(), reals).unwrap());
            let back = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
            let bits = |a: &AnyTensor| match a {
                AnyTensor::Real32(t) => t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                _ => unreachable!(),
            };
            prop_assert_eq!(bits(&t), bits(&back));
            prop_assert_eq!(t.shape(), back.shape());
            let ints = AnyTensor::Int32(Tensor::from_vec(shape, (0..n as i32).map(|i| i ^ seed as i32).collect()).unwrap());
            prop_assert_eq!(decode_tensor(&encode_tensor(&ints).unwrap()).unwrap(), ints);
        }

        #[test]
        fn arbitrary_bytes_never_panic(tail in prop::collection::vec(any::<u8>(), 0..64), header in any::<bool>()) {
            let mut bytes = if header { b"LTNS\x01".to_vec() } else { Vec::new() };
            bytes.extend(tail);
            let _ = decode_tensor(&bytes);
        }
    }
}
