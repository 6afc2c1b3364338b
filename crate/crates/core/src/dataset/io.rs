//! Dataset file format.
//!
//! ```text
//! "SCN1" | u32 version | u64 header length | TOML header | f32 payload
//! ```
//!
//! The header lists class names, image size and a sequence table (`id`,
//! `label`, `frames`, byte `offset` into the payload). Frame payloads follow
//! in table order as little-endian `f32`, row-major `H × W × 3`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SceneDataset, Sequence};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SCN1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceEntry {
    id: u32,
    label: String,
    frames: usize,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    classes: Vec<String>,
    height: usize,
    width: usize,
    provenance: String,
    sequences: Vec<SequenceEntry>,
}

pub(crate) fn to_bytes(d: &SceneDataset) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(d.sequences.len());
    for s in &d.sequences {
        entries.push(SequenceEntry {
            id: s.id,
            label: d.classes[s.label].clone(),
            frames: s.num_frames(),
            offset,
        });
        offset += 4 * s.pixels.len() as u64;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        classes: d.classes.clone(),
        height: d.height,
        width: d.width,
        provenance: d.provenance.clone(),
        sequences: entries,
    };
    let text = toml::to_string(&header)?;
    let mut out = Vec::with_capacity(16 + text.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for s in &d.sequences {
        for v in &s.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn truncated(what: &str) -> Error {
    Error::Format(format!("truncated while reading {what}"))
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<SceneDataset> {
    if bytes.len() < 16 {
        return Err(truncated("preamble"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| truncated("header"))?;
    let text = std::str::from_utf8(&bytes[16..header_end])
        .map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
    let header: Header = toml::from_str(text)?;
    if header.format_version != version {
        return Err(Error::Format(
            "header version disagrees with preamble".into(),
        ));
    }
    let payload = &bytes[header_end..];
    let frame_len = header.height * header.width * super::CHANNELS;
    let mut expected_offset = 0u64;
    let mut sequences = Vec::with_capacity(header.sequences.len());
    for e in &header.sequences {
        if e.offset != expected_offset {
            return Err(Error::Format(format!(
                "sequence {} starts at byte {}, expected {expected_offset}",
                e.id, e.offset
            )));
        }
        let len = e.frames * frame_len * 4;
        let start = e.offset as usize;
        let raw = payload
            .get(start..start + len)
            .ok_or_else(|| truncated(&format!("sequence {}", e.id)))?;
        let pixels = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let label = header
            .classes
            .iter()
            .position(|c| *c == e.label)
            .ok_or_else(|| {
                Error::Format(format!("sequence {} has unknown label `{}`", e.id, e.label))
            })?;
        sequences.push(Sequence::new(e.id, label, frame_len, pixels)?);
        expected_offset += len as u64;
    }
    if payload.len() as u64 != expected_offset {
        return Err(Error::Format(format!(
            "payload is {} bytes, sequence table covers {expected_offset}",
            payload.len()
        )));
    }
    SceneDataset::new(
        header.classes,
        sequences,
        header.height,
        header.width,
        header.provenance,
    )
}

pub fn save_dataset(dataset: &SceneDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SceneDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
