//! Minimal NPY v1.0 reader and writer for 4-D little-endian float tensors.
//!
//! Format reference: <https://numpy.org/neps/nep-0001-npy-format.html>.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::numerics::{round_to_fp16, Fp16};
use crate::tensor::{Shape4, Tensor4};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
/// Magic, version and header-length field.
const PREAMBLE: usize = 10;
const ALIGN: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum NpyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an NPY file (bad magic)")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1}, only 1.0 is read")]
    UnsupportedVersion(u8, u8),
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?}, expected '<f4' or '<f2'")]
    UnsupportedDtype(String),
    #[error("Fortran-order arrays are not supported")]
    FortranOrder,
    #[error("expected a 4-D array, found shape {0:?}")]
    BadShape(Vec<usize>),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected bytes after the payload")]
    TrailingBytes(usize),
}

/// Element type stored in a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpyDtype {
    F4,
    F2,
}

impl NpyDtype {
    fn descr(self) -> &'static str {
        match self {
            NpyDtype::F4 => "<f4",
            NpyDtype::F2 => "<f2",
        }
    }

    fn size(self) -> usize {
        match self {
            NpyDtype::F4 => 4,
            NpyDtype::F2 => 2,
        }
    }

    fn parse(descr: &str) -> Result<Self, NpyError> {
        match descr {
            "<f4" => Ok(NpyDtype::F4),
            "<f2" => Ok(NpyDtype::F2),
            other => Err(NpyError::UnsupportedDtype(other.to_string())),
        }
    }
}

struct Header {
    dtype: NpyDtype,
    shape: Vec<usize>,
}

/// Reads a tensor. Binary16 payloads are widened to binary32 exactly.
pub fn read_npy<R: Read>(mut reader: R) -> Result<Tensor4, NpyError> {
    let header = read_header(&mut reader)?;
    let dims: [usize; 4] = header
        .shape
        .as_slice()
        .try_into()
        .map_err(|_| NpyError::BadShape(header.shape.clone()))?;
    let shape = Shape4::from(dims);
    let expected = shape
        .numel()
        .checked_mul(header.dtype.size())
        .ok_or_else(|| NpyError::MalformedHeader("shape too large".into()))?;
    let mut payload = Vec::with_capacity(expected);
    reader.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(NpyError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(NpyError::TrailingBytes(payload.len() - expected));
    }
    let data = match header.dtype {
        NpyDtype::F4 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        NpyDtype::F2 => payload
            .chunks_exact(2)
            .map(|b| Fp16::from_bits(u16::from_le_bytes([b[0], b[1]])).to_f32())
            .collect(),
    };
    Ok(Tensor4::from_vec(shape, data).expect("payload length checked against shape"))
}

fn read_header<R: Read>(reader: &mut R) -> Result<Header, NpyError> {
    let mut pre = [0u8; PREAMBLE];
    reader.read_exact(&mut pre).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => NpyError::BadMagic,
        _ => NpyError::Io(e),
    })?;
    if &pre[..6] != MAGIC {
        return Err(NpyError::BadMagic);
    }
    if (pre[6], pre[7]) != (1, 0) {
        return Err(NpyError::UnsupportedVersion(pre[6], pre[7]));
    }
    let len = usize::from(u16::from_le_bytes([pre[8], pre[9]]));
    let mut raw = vec![0u8; len];
    reader.read_exact(&mut raw).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => NpyError::MalformedHeader("header shorter than declared".into()),
        _ => NpyError::Io(e),
    })?;
    let text = std::str::from_utf8(&raw)
        .map_err(|_| NpyError::MalformedHeader("header is not ASCII".into()))?;
    parse_dict(text)
}

fn malformed(msg: &str) -> NpyError {
    NpyError::MalformedHeader(msg.to_string())
}

/// Parses the Python dict literal of a v1.0 header. Only the three standard
/// keys are accepted.
fn parse_dict(text: &str) -> Result<Header, NpyError> {
    let body = text
        .trim_end_matches(['\n', ' ', '\0'])
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| malformed("header is not a dict"))?;
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = parse_str(rest)?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| malformed("expected ':'"))?
            .trim_start();
        rest = match key {
            "descr" => {
                let (v, r) = parse_str(after)?;
                descr = Some(v.to_string());
                r
            }
            "fortran_order" => {
                if let Some(r) = after.strip_prefix("False") {
                    fortran = Some(false);
                    r
                } else if let Some(r) = after.strip_prefix("True") {
                    fortran = Some(true);
                    r
                } else {
                    return Err(malformed("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let (v, r) = parse_tuple(after)?;
                shape = Some(v);
                r
            }
            other => return Err(NpyError::MalformedHeader(format!("unknown key {other:?}"))),
        };
        rest = rest.trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(malformed("expected ','"));
        }
    }
    let descr = descr.ok_or_else(|| malformed("missing 'descr'"))?;
    let fortran = fortran.ok_or_else(|| malformed("missing 'fortran_order'"))?;
    let shape = shape.ok_or_else(|| malformed("missing 'shape'"))?;
    let dtype = NpyDtype::parse(&descr)?;
    if fortran {
        return Err(NpyError::FortranOrder);
    }
    Ok(Header { dtype, shape })
}

fn parse_str(s: &str) -> Result<(&str, &str), NpyError> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"');
    let quote = quote.ok_or_else(|| malformed("expected a quoted string"))?;
    let inner = &s[1..];
    let end = inner
        .find(quote)
        .ok_or_else(|| malformed("unterminated string"))?;
    Ok((&inner[..end], &inner[end + 1..]))
}

fn parse_tuple(s: &str) -> Result<(Vec<usize>, &str), NpyError> {
    let inner = s
        .strip_prefix('(')
        .ok_or_else(|| malformed("shape must be a tuple"))?;
    let end = inner
        .find(')')
        .ok_or_else(|| malformed("unterminated shape tuple"))?;
    let dims = inner[..end]
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| NpyError::MalformedHeader(format!("bad dimension {t:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((dims, &inner[end + 1..]))
}

/// Writes `t` as an NPY v1.0 file body. `F2` rounds each element to the
/// nearest binary16.
pub fn write_npy<W: Write>(mut writer: W, t: &Tensor4, dtype: NpyDtype) -> io::Result<()> {
    let [b, h, n, d] = t.shape().dims();
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({b}, {h}, {n}, {d}), }}",
        dtype.descr()
    );
    let total = (PREAMBLE + dict.len() + 1).next_multiple_of(ALIGN);
    dict.extend(std::iter::repeat_n(' ', total - PREAMBLE - dict.len() - 1));
    dict.push('\n');
    let len = u16::try_from(dict.len()).map_err(|_| io::Error::other("NPY header too long"))?;

    let mut buf = Vec::with_capacity(total + t.as_slice().len() * dtype.size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[1, 0]);
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(dict.as_bytes());
    match dtype {
        NpyDtype::F4 => t.as_slice().iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        NpyDtype::F2 => t
            .as_slice()
            .iter()
            .for_each(|&x| buf.extend_from_slice(&round_to_fp16(f64::from(x)).to_bits().to_le_bytes())),
    }
    writer.write_all(&buf)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor4, NpyError> {
    read_npy(io::BufReader::new(fs::File::open(path)?))
}

/// Saves as binary32, which round-trips bit for bit.
pub fn save_tensor(t: &Tensor4, path: impl AsRef<Path>) -> io::Result<()> {
    write_npy(io::BufWriter::new(fs::File::create(path)?), t, NpyDtype::F4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor4 {
        let shape = Shape4::new(1, 2, 3, 2);
        Tensor4::from_vec(shape, (0..12).map(|i| i as f32 * 0.37 - 2.0).collect()).unwrap()
    }

    fn with_header(dict: &str, payload: &[u8]) -> Vec<u8> {
        let mut v = MAGIC.to_vec();
        v.extend_from_slice(&[1, 0]);
        v.extend_from_slice(&(dict.len() as u16).to_le_bytes());
        v.extend_from_slice(dict.as_bytes());
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn round_trip_f4() {
        let t = sample();
        let mut buf = Vec::new();
        write_npy(&mut buf, &t, NpyDtype::F4).unwrap();
        let header_len = u16::from_le_bytes([buf[8], buf[9]]) as usize;
        assert_eq!((PREAMBLE + header_len) % ALIGN, 0);
        assert_eq!(read_npy(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn f2_is_upcast() {
        let t = Tensor4::from_vec(Shape4::new(1, 1, 1, 3), vec![1.0, 0.1, -65504.0]).unwrap();
        let mut buf = Vec::new();
        write_npy(&mut buf, &t, NpyDtype::F2).unwrap();
        let back = read_npy(buf.as_slice()).unwrap();
        assert_eq!(back.as_slice(), &[1.0, 0.099975586, -65504.0]);
    }

    #[test]
    fn numpy_style_header_parses() {
        let h = "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 1, 1), }          \n";
        let t = read_npy(with_header(h, &2.5f32.to_le_bytes()).as_slice()).unwrap();
        assert_eq!(t.as_slice(), &[2.5]);
    }

    #[test]
    fn distinct_errors() {
        let ok = |shape: &str, descr: &str, fortran: &str| {
            format!("{{'descr': '{descr}', 'fortran_order': {fortran}, 'shape': {shape}, }}\n")
        };
        let four = [0u8; 4];
        assert!(matches!(
            read_npy(with_header(&ok("(1, 1, 1, 1)", "<f4", "True"), &four).as_slice()),
            Err(NpyError::FortranOrder)
        ));
        assert!(matches!(
            read_npy(with_header(&ok("(1, 1, 1)", "<f4", "False"), &four).as_slice()),
            Err(NpyError::BadShape(s)) if s == vec![1, 1, 1]
        ));
        assert!(matches!(
            read_npy(with_header(&ok("(1, 1, 1, 1)", "<f8", "False"), &[0; 8]).as_slice()),
            Err(NpyError::UnsupportedDtype(_))
        ));
        assert!(matches!(
            read_npy(with_header(&ok("(1, 1, 1, 2)", "<f4", "False"), &four).as_slice()),
            Err(NpyError::Truncated { expected: 8, found: 4 })
        ));
        assert!(matches!(
            read_npy(with_header("{'descr': '<f4', 'shape': (1,1,1,1)}\n", &four).as_slice()),
            Err(NpyError::MalformedHeader(_))
        ));
        assert!(matches!(read_npy(&b"PK\x03\x04 not npy"[..]), Err(NpyError::BadMagic)));
        let mut v2 = with_header(&ok("(1, 1, 1, 1)", "<f4", "False"), &four);
        v2[6] = 2;
        assert!(matches!(read_npy(v2.as_slice()), Err(NpyError::UnsupportedVersion(2, 0))));
    }
}
