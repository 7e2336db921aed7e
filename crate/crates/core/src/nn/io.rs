//! Container: 8-byte magic, u32 header length, JSON header, tensor payload.

use std::fs;
use std::path::Path;

use super::TensorMap;
use crate::error::{Error, Result};

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }
}

pub fn write_container(path: &Path, magic: &[u8; 8], header: &[u8], tensors: &TensorMap) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(&tensors.to_bytes()?);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path, magic: &[u8; 8]) -> Result<(Vec<u8>, TensorMap)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(&bytes);
    if cur.take(8)? != magic {
        return Err(Error::Checkpoint(format!(
            "{}: expected a {} file",
            path.display(),
            String::from_utf8_lossy(magic).trim_end_matches('\0')
        )));
    }
    let len = cur.u32()? as usize;
    let header = cur.take(len)?.to_vec();
    let (tensors, used) = TensorMap::from_bytes(&bytes[cur.position()..])?;
    if cur.position() + used != bytes.len() {
        return Err(Error::Checkpoint(format!("{}: trailing bytes", path.display())));
    }
    Ok((header, tensors))
}
