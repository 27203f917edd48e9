//! Little-endian framing shared by the dataset and checkpoint files:
//! `magic[4] | version u16 | payload... | crc32 u32` where the CRC covers every
//! preceding byte.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameError {
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    BadVersion { expected: u16, found: u16 },
    Checksum { stored: u32, computed: u32 },
    Truncated(&'static str),
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::BadMagic { expected, found } => write!(
                f,
                "bad magic bytes: expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(found)
            ),
            FrameError::BadVersion { expected, found } => {
                write!(f, "unsupported format version {found} (expected {expected})")
            }
            FrameError::Checksum { stored, computed } => {
                write!(f, "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            FrameError::Truncated(what) => write!(f, "file truncated while reading {what}"),
        }
    }
}

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Writer { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn buf_mut(&mut self) -> &mut Vec<u8> {
        &mut self.buf
    }

    /// Length-prefixed (u32) byte string.
    pub fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and trailing CRC, then positions after the version.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self, FrameError> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(FrameError::BadMagic {
                expected: *magic,
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < 10 {
            return Err(FrameError::Truncated("header"));
        }
        let found = u16::from_le_bytes([bytes[4], bytes[5]]);
        if found != version {
            return Err(FrameError::BadVersion {
                expected: version,
                found,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FrameError::Checksum { stored, computed });
        }
        Ok(Reader { body, pos: 6 })
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FrameError> {
        if self.pos + n > self.body.len() {
            return Err(FrameError::Truncated(what));
        }
        let out = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, FrameError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }

    pub fn blob(&mut self, what: &'static str) -> Result<&'a [u8], FrameError> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.body.len()
    }
}
