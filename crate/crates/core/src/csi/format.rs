//! `.csit` binary format: little-endian, magic `CSIT`, version 1.
//!
//! Layout (byte offsets):
//!
//! | offset      | field                         |
//! |-------------|-------------------------------|
//! | 0           | magic `CSIT`                  |
//! | 4           | u32 version = 1               |
//! | 8, 12, 16   | u32 C, H, W                   |
//! | 20          | u32 atom count M              |
//! | 24          | M × u32 atom ids              |
//! | 24+4M       | u32 class_index               |
//! | 28+4M       | f32 sample_rate               |
//! | 32+4M       | C·H·W f32 values, (C,H,W) row-major |
//!
//! Every malformed field is reported as [`CsiError::Format`] with the byte
//! offset where that field starts.

use super::{CompositeLabel, CsiError, CsiSample};
use std::fs;
use std::path::Path;

const MAGIC: [u8; 4] = *b"CSIT";
const VERSION: u32 = 1;
/// Cap on C·H·W (and intermediate products) to reject absurd headers before
/// allocating.
const MAX_ELEMS: u64 = 1 << 28;
const MAX_ATOMS: u32 = 4096;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CsiError> {
        if self.buf.len() - self.pos < n {
            return Err(CsiError::Format {
                offset: self.pos as u64,
                reason: format!(
                    "{what} truncated: expected {n} bytes, found {}",
                    self.buf.len() - self.pos
                ),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_u32(&mut self, what: &str) -> Result<(u32, u64), CsiError> {
        let offset = self.pos as u64;
        let b = self.take(4, what)?;
        Ok((u32::from_le_bytes([b[0], b[1], b[2], b[3]]), offset))
    }
}

/// Parses a `.csit` file.
pub fn read_csi_file(path: impl AsRef<Path>) -> Result<CsiSample, CsiError> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|source| CsiError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut sample = parse_csit(&buf)?;
    sample.source_id = path.display().to_string();
    Ok(sample)
}

/// Parses `.csit` bytes; offsets in errors are relative to `buf[0]`.
pub fn parse_csit(buf: &[u8]) -> Result<CsiSample, CsiError> {
    let mut cur = Cursor { buf, pos: 0 };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CsiError::Format {
            offset: 0,
            reason: format!("bad magic {magic:02x?}, expected \"CSIT\""),
        });
    }
    let (version, off) = cur.read_u32("version")?;
    if version != VERSION {
        return Err(CsiError::Format {
            offset: off,
            reason: format!("unsupported version {version}, expected {VERSION}"),
        });
    }

    let mut elems: u64 = 1;
    let mut dims = [0u32; 3];
    for (i, name) in ["C", "H", "W"].iter().enumerate() {
        let (d, off) = cur.read_u32(name)?;
        if d == 0 {
            return Err(CsiError::Format {
                offset: off,
                reason: format!("dimension {name} must be ≥ 1"),
            });
        }
        elems *= d as u64;
        if elems > MAX_ELEMS {
            return Err(CsiError::Format {
                offset: off,
                reason: format!("dimension overflow: C·H·W exceeds {MAX_ELEMS} at {name}={d}"),
            });
        }
        dims[i] = d;
    }

    let (m, m_off) = cur.read_u32("atom count")?;
    if m == 0 || m > MAX_ATOMS {
        return Err(CsiError::Format {
            offset: m_off,
            reason: format!("atom count {m} outside 1..={MAX_ATOMS}"),
        });
    }
    let mut atoms = Vec::with_capacity(m as usize);
    for i in 0..m {
        let (a, _) = cur.read_u32(&format!("atom id {i}"))?;
        atoms.push(a);
    }
    let (class_index, _) = cur.read_u32("class index")?;

    let rate_off = cur.pos as u64;
    let rb = cur.take(4, "sample rate")?;
    let sample_rate = f32::from_le_bytes([rb[0], rb[1], rb[2], rb[3]]);
    if !sample_rate.is_finite() || sample_rate <= 0.0 {
        return Err(CsiError::Format {
            offset: rate_off,
            reason: format!("sample rate must be a positive finite float, got {sample_rate}"),
        });
    }

    let payload_off = cur.pos as u64;
    let need = elems as usize * 4;
    if buf.len() - cur.pos < need {
        return Err(CsiError::Format {
            offset: payload_off,
            reason: format!(
                "payload truncated: expected {need} bytes, found {}",
                buf.len() - cur.pos
            ),
        });
    }
    let payload = cur.take(need, "payload")?;
    let mut values = Vec::with_capacity(elems as usize);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(CsiError::Format {
                offset: payload_off + 4 * i as u64,
                reason: format!("non-finite value {v} in payload"),
            });
        }
        values.push(v);
    }
    if cur.pos != buf.len() {
        return Err(CsiError::Format {
            offset: cur.pos as u64,
            reason: format!("trailing data: {} extra bytes", buf.len() - cur.pos),
        });
    }

    Ok(CsiSample::new(
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
        values,
        CompositeLabel { atoms, class_index },
        sample_rate,
    ))
}

/// Serializes a sample to `.csit` bytes.
pub fn encode_csit(sample: &CsiSample) -> Result<Vec<u8>, CsiError> {
    if sample.channels == 0 || sample.height == 0 || sample.width == 0 {
        return Err(CsiError::InvalidSample("zero dimension".into()));
    }
    let elems = sample.channels as u64 * sample.height as u64 * sample.width as u64;
    if elems > MAX_ELEMS {
        return Err(CsiError::InvalidSample(format!(
            "C·H·W = {elems} exceeds format limit {MAX_ELEMS}"
        )));
    }
    if sample.label.atoms.is_empty() || sample.label.atoms.len() > MAX_ATOMS as usize {
        return Err(CsiError::InvalidSample(format!(
            "atom count {} outside 1..={MAX_ATOMS}",
            sample.label.atoms.len()
        )));
    }
    if !sample.sample_rate.is_finite() || sample.sample_rate <= 0.0 {
        return Err(CsiError::InvalidSample(format!(
            "sample_rate must be positive, got {}",
            sample.sample_rate
        )));
    }
    sample.check_finite()?;

    let mut buf = Vec::with_capacity(32 + 4 * sample.label.atoms.len() + 4 * elems as usize);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(sample.channels as u32).to_le_bytes());
    buf.extend_from_slice(&(sample.height as u32).to_le_bytes());
    buf.extend_from_slice(&(sample.width as u32).to_le_bytes());
    buf.extend_from_slice(&(sample.label.atoms.len() as u32).to_le_bytes());
    for &a in &sample.label.atoms {
        buf.extend_from_slice(&a.to_le_bytes());
    }
    buf.extend_from_slice(&sample.label.class_index.to_le_bytes());
    buf.extend_from_slice(&sample.sample_rate.to_le_bytes());
    for &v in &sample.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Writes a sample as a `.csit` file.
pub fn write_csi_file(sample: &CsiSample, path: impl AsRef<Path>) -> Result<(), CsiError> {
    let path = path.as_ref();
    let bytes = encode_csit(sample)?;
    fs::write(path, bytes).map_err(|source| CsiError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn demo_sample() -> CsiSample {
        let mut rng = crate::seed::rng_for(42, &[7]);
        let values: Vec<f32> = (0..2 * 3 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut s = CsiSample::new(
            2,
            3,
            5,
            values,
            CompositeLabel {
                atoms: vec![3, 1],
                class_index: 13,
            },
            100.0,
        );
        s.source_id = "demo".into();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = demo_sample();
        let bytes = encode_csit(&s).unwrap();
        let back = parse_csit(&bytes).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.label, s.label);
        assert_eq!(back.sample_rate, s.sample_rate);
        assert_eq!(
            (back.channels, back.height, back.width),
            (s.channels, s.height, s.width)
        );
        // Re-encoding reproduces the exact bytes.
        let mut back2 = back;
        back2.source_id = s.source_id.clone();
        assert_eq!(encode_csit(&back2).unwrap(), bytes);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = encode_csit(&demo_sample()).unwrap();
        bytes[1] = b'X';
        match parse_csit(&bytes) {
            Err(CsiError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn short_payload_names_expected_and_actual() {
        let bytes = encode_csit(&demo_sample()).unwrap();
        let cut = &bytes[..bytes.len() - 4];
        match parse_csit(cut) {
            Err(CsiError::Format { offset, reason }) => {
                // Payload starts after the 32-byte fixed header + 2 atoms.
                assert_eq!(offset, 32 + 8);
                assert!(reason.contains("expected 120 bytes"), "{reason}");
                assert!(reason.contains("found 116"), "{reason}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn zero_dimension_reports_field_offset() {
        let mut bytes = encode_csit(&demo_sample()).unwrap();
        bytes[12..16].copy_from_slice(&0u32.to_le_bytes()); // H = 0
        match parse_csit(&bytes) {
            Err(CsiError::Format { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_overflow_reports_overflowing_field() {
        let mut bytes = encode_csit(&demo_sample()).unwrap();
        bytes[8..12].copy_from_slice(&0x0010_0000u32.to_le_bytes());
        bytes[12..16].copy_from_slice(&0x0010_0000u32.to_le_bytes());
        match parse_csit(&bytes) {
            Err(CsiError::Format { offset, reason }) => {
                assert_eq!(offset, 12);
                assert!(reason.contains("overflow"), "{reason}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_csit(&demo_sample()).unwrap();
        let expected_end = bytes.len() as u64;
        bytes.extend_from_slice(&[0u8; 3]);
        match parse_csit(&bytes) {
            Err(CsiError::Format { offset, .. }) => assert_eq!(offset, expected_end),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csit");
        let s = demo_sample();
        write_csi_file(&s, &path).unwrap();
        let back = read_csi_file(&path).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.source_id, path.display().to_string());
    }
}
