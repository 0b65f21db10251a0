//! Versioned binary container shared by all model files.
//!
//! ```text
//! magic      4 bytes
//! version    u32 LE
//! body_len   u64 LE
//! body       body_len bytes
//! checksum   u32 LE, CRC-32 of everything before it
//! ```

use thiserror::Error;

const HEADER_LEN: usize = 16;
const CHECKSUM_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {found}, this build reads version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed body: {0}")]
    Malformed(String),
}

pub fn encode(magic: &[u8; 4], version: u32, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + CHECKSUM_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Validates the envelope and returns the body.
pub fn decode<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<&'a [u8], FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            needed: HEADER_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    if &bytes[..4] != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(FormatError::UnsupportedVersion {
            found,
            supported: version,
        });
    }
    let body_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let needed = (HEADER_LEN as u64)
        .saturating_add(body_len)
        .saturating_add(CHECKSUM_LEN as u64);
    if needed != bytes.len() as u64 {
        return Err(FormatError::Truncated {
            needed,
            available: bytes.len() as u64,
        });
    }
    let split = bytes.len() - CHECKSUM_LEN;
    let stored = u32::from_le_bytes(bytes[split..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..split]);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }
    Ok(&bytes[HEADER_LEN..split])
}

/// Reads the magic of a container without validating anything else.
pub fn peek_magic(bytes: &[u8]) -> Option<[u8; 4]> {
    bytes.get(..4).map(|m| m.try_into().unwrap())
}

#[derive(Debug, Default)]
pub struct BodyWriter {
    buf: Vec<u8>,
}

impl BodyWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// `rows u32, cols u32, rows*cols f32`
    pub fn block(&mut self, rows: usize, cols: usize, data: &[f32]) {
        debug_assert_eq!(rows * cols, data.len());
        self.u32(rows as u32);
        self.u32(cols as u32);
        data.iter().for_each(|&v| self.f32(v));
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct BodyReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BodyReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FormatError::Malformed(format!("body ends at {} bytes", self.buf.len())))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a block and checks it has the expected shape.
    pub fn block(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f32>, FormatError> {
        let (r, c) = (self.u32()? as usize, self.u32()? as usize);
        if (r, c) != (rows, cols) {
            return Err(FormatError::Malformed(format!(
                "block {name}: declared shape {r}x{c}, expected {rows}x{cols}"
            )));
        }
        (0..rows * cols).map(|_| self.f32()).collect()
    }

    pub fn finish(self) -> Result<(), FormatError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip() {
        let bytes = encode(b"TEST", 3, b"hello");
        assert_eq!(decode(&bytes, b"TEST", 3).unwrap(), b"hello");
    }

    #[test]
    fn envelope_errors() {
        let bytes = encode(b"TEST", 3, b"hello");
        assert!(matches!(decode(&bytes, b"RFLN", 3), Err(FormatError::BadMagic { .. })));
        assert_eq!(
            decode(&bytes, b"TEST", 2),
            Err(FormatError::UnsupportedVersion { found: 3, supported: 2 })
        );
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1], b"TEST", 3),
            Err(FormatError::Truncated { .. })
        ));
        let mut flipped = bytes.clone();
        flipped[17] ^= 1;
        assert!(matches!(
            decode(&flipped, b"TEST", 3),
            Err(FormatError::ChecksumMismatch { .. })
        ));
    }
}
