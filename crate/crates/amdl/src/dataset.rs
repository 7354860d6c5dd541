//! `AMDS` dataset files.
//!
//! ```text
//! "AMDS" | u16 version | u32 count | u16 H | u16 W | u8 C | u16 classes | u8 split
//! u16 len, provenance | u16 label * count | u8 pixel * count·H·W·C (HWC)
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use amdl_core::data::{DatasetContainer, Split};

use crate::binio::{Reader, Writer};
use crate::error::{AppError, AppResult, FormatError};

pub const MAGIC: &[u8; 4] = b"AMDS";
pub const VERSION: u16 = 1;

/// Bytes before the labels, for a given provenance string.
pub fn header_len(provenance: &str) -> usize {
    4 + 2 + 4 + 2 + 2 + 1 + 2 + 1 + 2 + provenance.len()
}

pub fn encode(data: &DatasetContainer) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(data.len() as u32);
    w.u16(data.height as u16);
    w.u16(data.width as u16);
    w.u8(data.channels as u8);
    w.u16(data.num_classes);
    w.u8(data.split.tag());
    w.str16(&data.provenance);
    for &l in &data.labels {
        w.u16(l);
    }
    w.bytes(&data.pixels);
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<DatasetContainer, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(MAGIC, VERSION)?;
    let count = r.u32("count")? as usize;
    let h = r.u16("height")? as usize;
    let w = r.u16("width")? as usize;
    let c = r.u8("channels")? as usize;
    let classes = r.u16("classes")?;
    let at = r.pos;
    let split = Split::from_tag(r.u8("split")?).ok_or_else(|| FormatError::new(at, "unknown split tag"))?;
    let provenance = r.str16("provenance")?;
    let labels = r.take(count * 2, "labels")?.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    let pixels = r.take(count * h * w * c, "pixels")?.to_vec();
    let end = r.pos;
    r.trailer()?;
    DatasetContainer::new(h, w, c, classes, split, provenance, labels, pixels).map_err(|e| FormatError::new(end, e.to_string()))
}

pub fn read(path: &Path) -> AppResult<DatasetContainer> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|source| AppError::Format { path: path.into(), source })
}

pub fn write(path: &Path, data: &DatasetContainer) -> AppResult<()> {
    fs::write(path, encode(data)).map_err(|e| AppError::io(path, e))
}

/// `DIR/{name}.{split}.amds`
pub fn split_path(dir: &Path, name: &str, split: Split) -> std::path::PathBuf {
    dir.join(format!("{name}.{}.amds", split.name()))
}
