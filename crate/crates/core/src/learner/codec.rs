//! Binary layout of [`ModelParameters`]:
//!
//! ```text
//! "PHTP" | u8 format=1 | varint version | varint layer_count
//!   { varint name_len | name (UTF-8) | varint rank | varint dim * rank } * layer_count
//! varint value_count | f64 little-endian * value_count
//! ```
//!
//! Varints are unsigned LEB128. Values are written with `to_bits`, so the
//! round trip is exact for every bit pattern including NaN payloads.

use super::{LearnerError, ModelParameters};

const MAGIC: &[u8; 4] = b"PHTP";
const FORMAT: u8 = 1;

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LearnerError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| LearnerError::Codec(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn varint(&mut self) -> Result<u64, LearnerError> {
        let mut value = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = self.take(1)?[0];
            let bits = u64::from(byte & 0x7f);
            if shift == 63 && bits > 1 {
                return Err(LearnerError::Codec("varint overflow".into()));
            }
            value |= bits << shift;
            if byte & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(LearnerError::Codec("varint overflow".into()))
    }

    fn usize(&mut self) -> Result<usize, LearnerError> {
        usize::try_from(self.varint()?).map_err(|_| LearnerError::Codec("length overflow".into()))
    }
}

pub fn encode_parameters(params: &ModelParameters) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.values.len() * 8);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT);
    put_varint(&mut out, params.version);
    put_varint(&mut out, params.shapes.len() as u64);
    for (name, dims) in &params.shapes {
        put_varint(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_varint(&mut out, dims.len() as u64);
        for d in dims {
            put_varint(&mut out, *d as u64);
        }
    }
    put_varint(&mut out, params.values.len() as u64);
    for v in &params.values {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    out
}

pub fn decode_parameters(bytes: &[u8]) -> Result<ModelParameters, LearnerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(LearnerError::Codec("bad magic".into()));
    }
    let format = r.take(1)?[0];
    if format != FORMAT {
        return Err(LearnerError::Codec(format!("unsupported format {format}")));
    }
    let version = r.varint()?;
    let layers = r.usize()?;
    let mut shapes = Vec::new();
    for _ in 0..layers {
        let len = r.usize()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| LearnerError::Codec(format!("layer name: {e}")))?
            .to_owned();
        let rank = r.usize()?;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
        shapes.push((name, dims));
    }
    let count = r.usize()?;
    let raw = r.take(count.checked_mul(8).ok_or_else(|| LearnerError::Codec("length overflow".into()))?)?;
    let values =
        raw.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("chunk of 8")))).collect();
    if r.pos != bytes.len() {
        return Err(LearnerError::Codec(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ModelParameters::new(values, shapes, version)
}
