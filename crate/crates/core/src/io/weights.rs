//! `PMWB` weight container.
//!
//! Layout: magic `PMWB`, `u32` version, `u64` header length, a UTF-8 text
//! manifest with one `name dtype shape offset` line per tensor, then the
//! little-endian payload. Offsets are relative to the payload start and
//! shapes are written as `d0xd1x...` (`-` for a scalar).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::Weights;
use crate::tensor::NdArray;

pub const MAGIC: &[u8; 4] = b"PMWB";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            _ => Err(Error::Format(format!("unknown dtype '{s}'"))),
        }
    }
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        "-".into()
    } else {
        shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

/// Serializes `weights`. `F64` round-trips bit-exactly; `F32` halves the size.
pub fn encode_weights(weights: &Weights, dtype: Dtype) -> Vec<u8> {
    let mut header = String::new();
    let mut offset = 0;
    for (name, t) in weights.iter() {
        let _ = writeln!(header, "{name} {} {} {offset}", dtype.name(), shape_text(t.shape()));
        offset += t.len() * dtype.size();
    }
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, t) in weights.iter() {
        for &v in t.data() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

struct Entry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    offset: usize,
}

fn parse_line(line: &str, lineno: usize) -> Result<Entry> {
    let bad = |what: &str| Error::Format(format!("manifest line {lineno}: {what}: '{line}'"));
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    let [name, dtype, shape, offset] = fields[..] else {
        return Err(bad("expected 4 fields"));
    };
    let shape = if shape == "-" {
        Vec::new()
    } else {
        shape
            .split('x')
            .map(|d| d.parse().map_err(|_| bad("bad shape")))
            .collect::<Result<_>>()?
    };
    Ok(Entry {
        name: name.to_string(),
        dtype: dtype.parse()?,
        shape,
        offset: offset.parse().map_err(|_| bad("bad offset"))?,
    })
}

/// Parses a container without checking it against a model.
pub fn decode_weights(bytes: &[u8]) -> Result<Weights> {
    if bytes.len() < PREAMBLE || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a PMWB weight file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PMWB version {version} (expected {VERSION})")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header = bytes
        .get(PREAMBLE..PREAMBLE.saturating_add(header_len))
        .ok_or_else(|| Error::Format("header extends past end of file".into()))?;
    let header = std::str::from_utf8(header).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let payload = &bytes[PREAMBLE + header_len..];

    let mut weights = Weights::new();
    for (i, line) in header.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let e = parse_line(line, i + 1)?;
        if weights.get(&e.name).is_ok() {
            return Err(Error::Manifest(format!("duplicate tensor {}", e.name)));
        }
        let count: usize = e.shape.iter().product();
        let end = e.offset + count * e.dtype.size();
        let raw = payload.get(e.offset..end).ok_or_else(|| {
            Error::Format(format!(
                "payload truncated in tensor {} (needs bytes {}..{end}, have {})",
                e.name,
                e.offset,
                payload.len()
            ))
        })?;
        let data = match e.dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        weights.insert(e.name, NdArray::new(&e.shape, data)?);
    }
    Ok(weights)
}

pub fn save_weights(weights: &Weights, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(weights, dtype)).map_err(|e| Error::io(path, e))
}

/// Loads a container and checks every tensor against `config`.
pub fn load_weights(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Weights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let w = decode_weights(&bytes)?;
    w.check_against(config)?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Preset;
    use crate::model::params::init_params;

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let w = init_params(&Preset::Toy.config(), 3).unwrap();
        let back = decode_weights(&encode_weights(&w, Dtype::F64)).unwrap();
        for ((na, a), (nb, b)) in w.iter().zip(back.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn f32_is_close() {
        let w = init_params(&Preset::Toy.config(), 3).unwrap();
        let bytes = encode_weights(&w, Dtype::F32);
        let back = decode_weights(&bytes).unwrap();
        let t = "blocks.0.in_proj.weight";
        assert!(w.get(t).unwrap().max_abs_diff(back.get(t).unwrap()) < 1e-8);
    }

    #[test]
    fn truncation_names_tensor() {
        let w = init_params(&Preset::Toy.config(), 3).unwrap();
        let mut bytes = encode_weights(&w, Dtype::F64);
        bytes.truncate(bytes.len() - 3);
        let msg = decode_weights(&bytes).unwrap_err().to_string();
        assert!(msg.contains("head.bias"), "{msg}");
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(decode_weights(b"NOPE0000000000000"), Err(Error::Format(_))));
        let w = init_params(&Preset::Toy.config(), 3).unwrap();
        let mut bytes = encode_weights(&w, Dtype::F64);
        bytes[4] = 9;
        let msg = decode_weights(&bytes).unwrap_err().to_string();
        assert!(msg.contains("version 9"), "{msg}");
    }

    #[test]
    fn scalar_shape() {
        let mut w = Weights::new();
        w.insert("s", NdArray::scalar(2.5));
        let back = decode_weights(&encode_weights(&w, Dtype::F64)).unwrap();
        assert_eq!(back.get("s").unwrap(), &NdArray::scalar(2.5));
    }
}
