//! Versioned little-endian container shared by model and checkpoint files:
//! 4-byte magic, `u32` version, payload, then CRC32 of the payload.

use crate::error::{Error, Result};

pub(crate) fn seal(magic: &[u8; 4], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

/// Validates the envelope and returns the payload. Nothing is decoded from
/// the payload until the checksum has matched.
pub(crate) fn open<'a>(magic: &[u8; 4], supported: &[u32], bytes: &'a [u8]) -> Result<&'a [u8]> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::Magic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Checksum {
            stored: 0,
            computed: crc32fast::hash(&[]),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if !supported.contains(&version) {
        return Err(Error::Version {
            found: version,
            supported: supported.to_vec(),
        });
    }
    let (payload, crc) = bytes[8..].split_at(bytes.len() - 12);
    let stored = u32::from_le_bytes(crc.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(payload)
}

/// Peeks at a file's magic without validating anything else.
pub fn magic_of(bytes: &[u8]) -> Option<[u8; 4]> {
    bytes.get(..4).map(|m| m.try_into().unwrap())
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length fits in u32"));
    }
    pub fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Payload("unexpected end of payload".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        // every encoded element takes at least one byte
        if n > self.buf.len() {
            return Err(Error::Payload(format!("length {n} exceeds payload")));
        }
        Ok(n)
    }
    /// Like `len`, for counts of elements that may be zero-sized on disk.
    pub fn count(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    pub fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Payload("string is not UTF-8".into()))
    }
    pub fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Payload(format!("{} trailing bytes", self.buf.len())))
        }
    }
}

pub(crate) fn write_charset(w: &mut Writer, cs: &crate::corpus::Charset) {
    w.len(cs.chars().len());
    for &c in cs.chars() {
        w.u32(c as u32);
    }
}

pub(crate) fn read_charset(r: &mut Reader<'_>) -> Result<crate::corpus::Charset> {
    let n = r.len()?;
    let mut chars = Vec::with_capacity(n);
    for _ in 0..n {
        let cp = r.u32()?;
        chars.push(char::from_u32(cp).ok_or_else(|| Error::Payload(format!("bad codepoint {cp:#x}")))?);
    }
    crate::corpus::Charset::from_chars(chars).map_err(|e| Error::Payload(e.to_string()))
}

pub(crate) fn write_labels(w: &mut Writer, labels: &[crate::corpus::Label]) {
    w.len(labels.len());
    for l in labels {
        w.str(&l.code);
        match l.group_id {
            Some(g) => {
                w.u8(1);
                w.u32(g);
            }
            None => w.u8(0),
        }
    }
}

pub(crate) fn read_labels(r: &mut Reader<'_>) -> Result<Vec<crate::corpus::Label>> {
    let n = r.len()?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut label =
            crate::corpus::Label::new(r.str()?).map_err(|e| Error::Payload(e.to_string()))?;
        if r.u8()? == 1 {
            label.group_id = Some(r.u32()?);
        }
        labels.push(label);
    }
    Ok(labels)
}
