//! Little-endian encoding helpers shared by the file formats.

use crate::error::FormatError;

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    /// `u16` length prefix, then the UTF-8 bytes.
    pub fn str16(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }

    /// Appends the CRC32 of everything written so far.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub struct Reader<'a> {
    data: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.data.len() - self.pos < n {
            return Err(FormatError::new(self.pos, format!("truncated {what}: need {n} bytes, {} left", self.data.len() - self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn str16(&mut self, what: &str) -> Result<String, FormatError> {
        let len = self.u16(what)? as usize;
        let at = self.pos;
        let b = self.take(len, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| FormatError::new(at, format!("{what} is not UTF-8")))
    }

    /// Checks the magic, then the version.
    pub fn header(&mut self, magic: &[u8; 4], version: u16) -> Result<(), FormatError> {
        if self.take(4, "magic")? != magic {
            return Err(FormatError::new(0, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        let v = self.u16("version")?;
        if v != version {
            return Err(FormatError::new(4, format!("unsupported version {v}, expected {version}")));
        }
        Ok(())
    }

    /// Requires exactly the 4-byte CRC trailer to remain and checks it
    /// against everything before it.
    pub fn trailer(&mut self) -> Result<(), FormatError> {
        let body_end = self.pos;
        let stored = self.u32("checksum")?;
        if self.pos != self.data.len() {
            return Err(FormatError::new(self.pos, format!("{} unexpected trailing bytes", self.data.len() - self.pos)));
        }
        let computed = crc32fast::hash(&self.data[..body_end]);
        if stored != computed {
            return Err(FormatError::new(body_end, format!("checksum mismatch: stored {stored:08x}, computed {computed:08x}")));
        }
        Ok(())
    }
}
