//! Little-endian binary encoding helpers shared by the datastore and model
//! file formats: magic/version headers and a running 64-bit FNV-1a checksum
//! over everything that precedes the checksum trailer.

use crate::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Accumulates output bytes while hashing them. `finish` appends the checksum
/// trailer and returns the completed buffer.
pub struct ChecksumWriter {
    buf: Vec<u8>,
    hash: u64,
}

impl ChecksumWriter {
    pub fn new(magic: &'static [u8; 8]) -> Self {
        let mut w = ChecksumWriter {
            buf: Vec::new(),
            hash: FNV_OFFSET,
        };
        w.bytes(magic);
        w
    }

    pub fn bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.hash ^= u64::from(b);
            self.hash = self.hash.wrapping_mul(FNV_PRIME);
        }
        self.buf.extend_from_slice(bytes);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn finish(mut self) -> Vec<u8> {
        let checksum = self.hash;
        self.buf.extend_from_slice(&checksum.to_le_bytes());
        self.buf
    }
}

/// Cursor over an encoded file. Verifies magic and the checksum trailer up
/// front, then hands out typed reads over the checksummed region.
#[derive(Debug)]
pub struct ChecksumReader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> ChecksumReader<'a> {
    /// `bytes` must be a whole file: magic, body, 8-byte checksum trailer.
    pub fn open(
        bytes: &'a [u8],
        magic: &'static [u8; 8],
        magic_name: &'static str,
    ) -> Result<Self> {
        if bytes.len() < magic.len() {
            return Err(Error::TruncatedFile("shorter than the magic"));
        }
        if &bytes[..magic.len()] != magic {
            return Err(Error::BadMagic {
                expected: magic_name,
            });
        }
        if bytes.len() < magic.len() + 8 {
            return Err(Error::TruncatedFile("missing checksum trailer"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        Ok(ChecksumReader {
            body,
            pos: magic.len(),
        })
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.body.len() - self.pos < n {
            return Err(Error::TruncatedFile(what));
        }
        let slice = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn u32_array(&mut self, count: usize, what: &'static str) -> Result<Vec<u32>> {
        let raw = self.take(
            count.checked_mul(4).ok_or(Error::TruncatedFile(what))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// The declared payload must account for every byte before the trailer.
    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(Error::InvalidFormat(format!(
                "{} unexpected trailing bytes before the checksum",
                self.body.len() - self.pos
            )));
        }
        Ok(())
    }
}
