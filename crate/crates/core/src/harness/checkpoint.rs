//! Parameter checkpoints.
//!
//! ```text
//! FEPINN-CHECKPOINT
//! version 1
//! architecture 2-20x4-1-tanh
//! tags smart smart xavier xavier smart
//! payload 1401
//! <1401 little-endian f64 values>
//! ```

use std::fs;
use std::path::Path;

use crate::network::{Architecture, Parameters, Provenance};
use crate::{Error, Result};

pub const MAGIC: &str = "FEPINN-CHECKPOINT";
pub const VERSION: u32 = 1;

/// Serialize to bytes.
pub fn encode_checkpoint(params: &Parameters, arch: &Architecture) -> Result<Vec<u8>> {
    params.check(arch)?;
    let tags: Vec<&str> = params.provenance().iter().map(|t| t.name()).collect();
    let mut out = format!(
        "{MAGIC}\nversion {VERSION}\narchitecture {}\ntags {}\npayload {}\n",
        arch.describe(),
        tags.join(" "),
        params.len()
    )
    .into_bytes();
    out.reserve(params.len() * 8);
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn header_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptPayload("truncated header".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::CorruptPayload("header is not UTF-8".into()))
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
        .ok_or_else(|| Error::CorruptPayload(format!("expected `{key}` header line")))
}

/// Parse bytes produced by [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Parameters, Architecture)> {
    let mut pos = 0;
    if !bytes.starts_with(MAGIC.as_bytes()) || header_line(bytes, &mut pos)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version: u32 = field(header_line(bytes, &mut pos)?, "version")?
        .parse()
        .map_err(|_| Error::CorruptPayload("bad version".into()))?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let arch = Architecture::parse(field(header_line(bytes, &mut pos)?, "architecture")?)?;
    let tags = field(header_line(bytes, &mut pos)?, "tags")?
        .split_whitespace()
        .map(|t| Provenance::from_name(t).ok_or_else(|| Error::CorruptPayload(format!("unknown tag `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = field(header_line(bytes, &mut pos)?, "payload")?
        .parse()
        .map_err(|_| Error::CorruptPayload("bad payload length".into()))?;
    let payload = &bytes[pos..];
    if n != arch.n_params() || payload.len() != n * 8 {
        return Err(Error::CorruptPayload(format!(
            "expected {} values for {}, header says {n}, found {} bytes",
            arch.n_params(),
            arch.describe(),
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((Parameters::from_parts(&arch, values, tags)?, arch))
}

pub fn save_checkpoint(params: &Parameters, arch: &Architecture, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params, arch)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Parameters, Architecture)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Load and require a specific architecture.
pub fn load_checkpoint_for(path: &Path, expected: &Architecture) -> Result<Parameters> {
    let (params, arch) = load_checkpoint(path)?;
    if &arch != expected {
        return Err(Error::ArchitectureMismatch {
            expected: expected.describe(),
            found: arch.describe(),
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_xavier;

    #[test]
    fn round_trip_is_bitwise() {
        let arch = Architecture::new(2, vec![3, 4], 2).unwrap();
        let mut p = init_xavier(&arch, 7);
        p.set_provenance(0, Provenance::Smart);
        p.as_mut_slice()[0] = -0.0;
        p.as_mut_slice()[1] = f64::MIN_POSITIVE / 3.0;
        let bytes = encode_checkpoint(&p, &arch).unwrap();
        let (q, a) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(a, arch);
        assert_eq!(q.provenance(), p.provenance());
        for (x, y) in p.as_slice().iter().zip(q.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let arch = Architecture::new(1, vec![1], 1).unwrap();
        let p = init_xavier(&arch, 0);
        let bytes = encode_checkpoint(&p, &arch).unwrap();
        let text = String::from_utf8_lossy(&bytes[..bytes.len() - 32]);
        assert_eq!(
            text,
            "FEPINN-CHECKPOINT\nversion 1\narchitecture 1-1x1-1-tanh\ntags xavier xavier\npayload 4\n"
        );
    }

    #[test]
    fn corrupt_inputs() {
        let arch = Architecture::burgers();
        let p = init_xavier(&arch, 1);
        let bytes = encode_checkpoint(&p, &arch).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::CorruptPayload(_))
        ));
        assert!(matches!(decode_checkpoint(b"NOPE\n"), Err(Error::BadMagic)));
        let v2 = String::from_utf8_lossy(&bytes).replacen("version 1", "version 2", 1);
        assert!(matches!(
            decode_checkpoint(v2.as_bytes()),
            Err(Error::VersionMismatch(2)) | Err(Error::CorruptPayload(_))
        ));
        let mut v2 = bytes.clone();
        let at = MAGIC.len() + 1 + "version ".len();
        v2[at] = b'2';
        assert!(matches!(decode_checkpoint(&v2), Err(Error::VersionMismatch(2))));
    }

    #[test]
    fn architecture_mismatch_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let arch = Architecture::cylinder();
        save_checkpoint(&init_xavier(&arch, 0), &arch, &path).unwrap();
        assert!(load_checkpoint_for(&path, &arch).is_ok());
        assert!(matches!(
            load_checkpoint_for(&path, &Architecture::burgers()),
            Err(Error::ArchitectureMismatch { .. })
        ));
    }
}
