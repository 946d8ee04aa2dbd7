//! Big-endian IDX files: `00 00 <type> <ndims>`, `ndims` u32 dimensions,
//! then the elements in row-major order.

use std::path::Path;

use crate::error::{Error, Result};

/// Element types the loader accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxType {
    U8,
    I8,
    I16,
    I32,
}

impl IdxType {
    pub fn code(self) -> u8 {
        match self {
            Self::U8 => 0x08,
            Self::I8 => 0x09,
            Self::I16 => 0x0B,
            Self::I32 => 0x0C,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x08 => Some(Self::U8),
            0x09 => Some(Self::I8),
            0x0B => Some(Self::I16),
            0x0C => Some(Self::I32),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::I16 => 2,
            Self::I32 => 4,
        }
    }

    fn range(self) -> (f64, f64) {
        match self {
            Self::U8 => (0.0, 255.0),
            Self::I8 => (i8::MIN as f64, i8::MAX as f64),
            Self::I16 => (i16::MIN as f64, i16::MAX as f64),
            Self::I32 => (i32::MIN as f64, i32::MAX as f64),
        }
    }
}

/// A decoded IDX tensor holding raw integer element values.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub elem: IdxType,
    pub dims: Vec<usize>,
    pub values: Vec<i64>,
}

impl IdxArray {
    pub fn new(elem: IdxType, dims: Vec<usize>, values: Vec<i64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::InvalidArgument(format!(
                "idx dims {dims:?} hold {n} elements, got {}",
                values.len()
            )));
        }
        let (lo, hi) = elem.range();
        if let Some(v) = values.iter().find(|&&v| (v as f64) < lo || (v as f64) > hi) {
            return Err(Error::InvalidArgument(format!("value {v} does not fit {elem:?}")));
        }
        Ok(Self { elem, dims, values })
    }

    /// Elements mapped linearly from the type's range onto `[0, 1]`
    /// (`u8`: `v / 255`).
    pub fn scaled(&self) -> Vec<f64> {
        let (lo, hi) = self.elem.range();
        self.values.iter().map(|&v| (v as f64 - lo) / (hi - lo)).collect()
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::IdxParse {
        offset,
        message: message.into(),
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(parse_err(bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(
            0,
            format!("bad magic {:02x}{:02x}, expected 0000", bytes[0], bytes[1]),
        ));
    }
    let elem = IdxType::from_code(bytes[2]).ok_or_else(|| {
        parse_err(
            2,
            format!(
                "unsupported element type 0x{:02x} (accepted: 0x08 u8, 0x09 i8, 0x0b i16, 0x0c i32)",
                bytes[2]
            ),
        )
    })?;
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(parse_err(3, "zero dimensions"));
    }
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let at = 4 + 4 * i;
        let Some(b) = bytes.get(at..at + 4) else {
            return Err(parse_err(
                bytes.len(),
                format!("truncated header reading dimension {i}"),
            ));
        };
        dims.push(u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize);
    }
    let start = 4 + 4 * ndims;
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| parse_err(4, "element count overflows"))?;
    let w = elem.width();
    let need = count
        .checked_mul(w)
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| parse_err(4, "element count overflows"))?;
    if bytes.len() < need {
        return Err(parse_err(
            bytes.len(),
            format!(
                "truncated data: {count} elements need {need} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    if bytes.len() > need {
        return Err(parse_err(need, format!("{} trailing bytes", bytes.len() - need)));
    }
    let data = &bytes[start..need];
    let values = match elem {
        IdxType::U8 => data.iter().map(|&b| b as i64).collect(),
        IdxType::I8 => data.iter().map(|&b| b as i8 as i64).collect(),
        IdxType::I16 => data
            .chunks_exact(2)
            .map(|c| i16::from_be_bytes([c[0], c[1]]) as i64)
            .collect(),
        IdxType::I32 => data
            .chunks_exact(4)
            .map(|c| i32::from_be_bytes([c[0], c[1], c[2], c[3]]) as i64)
            .collect(),
    };
    Ok(IdxArray { elem, dims, values })
}

pub fn encode_idx(arr: &IdxArray) -> Result<Vec<u8>> {
    if arr.dims.len() > u8::MAX as usize {
        return Err(Error::InvalidArgument("idx supports at most 255 dimensions".into()));
    }
    let mut out = Vec::with_capacity(4 + 4 * arr.dims.len() + arr.values.len() * arr.elem.width());
    out.extend_from_slice(&[0, 0, arr.elem.code(), arr.dims.len() as u8]);
    for &d in &arr.dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    for &v in &arr.values {
        match arr.elem {
            IdxType::U8 => out.push(v as u8),
            IdxType::I8 => out.push(v as i8 as u8),
            IdxType::I16 => out.extend_from_slice(&(v as i16).to_be_bytes()),
            IdxType::I32 => out.extend_from_slice(&(v as i32).to_be_bytes()),
        }
    }
    Ok(out)
}

pub fn load_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&std::fs::read(path)?)
}

pub fn write_idx(path: &Path, arr: &IdxArray) -> Result<()> {
    std::fs::write(path, encode_idx(arr)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_pixel() {
        let bytes = [0, 0, 0x08, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255];
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![1, 1, 1]);
        assert_eq!(a.scaled(), vec![1.0]);
    }

    #[test]
    fn header_echo() {
        let a = IdxArray::new(IdxType::U8, vec![2, 3, 4], (0..24).collect()).unwrap();
        let b = parse_idx(&encode_idx(&a).unwrap()).unwrap();
        assert_eq!(b.dims, vec![2, 3, 4]);
        assert_eq!(a, b);
    }

    #[test]
    fn signed_types_round_trip() {
        for (t, vals) in [
            (IdxType::I8, vec![-128, 0, 127]),
            (IdxType::I16, vec![-32768, 5, 32767]),
            (IdxType::I32, vec![i32::MIN as i64, -1, i32::MAX as i64]),
        ] {
            let a = IdxArray::new(t, vec![3], vals).unwrap();
            assert_eq!(parse_idx(&encode_idx(&a).unwrap()).unwrap(), a);
        }
    }

    #[test]
    fn rejects_float_type_and_bad_magic() {
        let e = parse_idx(&[0, 0, 0x0D, 1, 0, 0, 0, 0]).unwrap_err();
        assert!(matches!(e, Error::IdxParse { offset: 2, .. }), "{e}");
        let e = parse_idx(&[1, 0, 0x08, 1, 0, 0, 0, 0]).unwrap_err();
        assert!(matches!(e, Error::IdxParse { offset: 0, .. }));
    }

    #[test]
    fn truncation_reports_offset() {
        let e = parse_idx(&[0, 0, 0x08, 1, 0, 0, 0, 3, 1, 2]).unwrap_err();
        assert!(matches!(e, Error::IdxParse { offset: 10, .. }), "{e}");
        let e = parse_idx(&[0, 0, 0x08, 2, 0, 0]).unwrap_err();
        assert!(matches!(e, Error::IdxParse { offset: 6, .. }));
    }
}
