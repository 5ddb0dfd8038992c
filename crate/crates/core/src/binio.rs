//! Little-endian byte cursor shared by the binary file formats.

use crate::error::{Error, Result};

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::format(
                self.offset(),
                format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.bytes(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<()> {
        let at = self.offset();
        let v = self.u32("version")?;
        if v != expected {
            return Err(Error::format(at, format!("unsupported version {v}, expected {expected}")));
        }
        Ok(())
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    /// A u16-length-prefixed UTF-8 string.
    pub fn short_str(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let at = self.offset();
        let raw = self.bytes(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format(at, format!("{what} is not valid UTF-8")))
    }

    pub fn finish(&self) -> Result<()> {
        if self.is_at_end() {
            Ok(())
        } else {
            Err(Error::format(
                self.offset(),
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ))
        }
    }
}

pub(crate) fn put_short_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Input(format!("id longer than 65535 bytes: {s:.32}...")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}
