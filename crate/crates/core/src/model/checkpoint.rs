use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{build_network, ArchConfig, ComposedNetwork, Provenance};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"SCK1";
const FORMAT_VERSION: u32 = 1;

/// Serialized network: architecture, class list, provenance and every
/// parameter tensor in declaration order.
///
/// File layout: magic `SCK1`, `u32` format version, `u64` header length, a
/// TOML header, then the parameter blocks as little-endian `f64`. All
/// integers are little-endian.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub class_names: Vec<String>,
    /// Training stage that produced the parameters.
    pub stage: String,
    pub seed: u64,
    pub params: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    stage: String,
    // u64 does not fit a TOML integer.
    seed: String,
    classes: Vec<String>,
    arch: ArchConfig,
    params: Vec<ParamEntry>,
}

/// SHA-256 over the little-endian bytes of `tensors`, as lowercase hex.
pub(crate) fn digest<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        for s in t.shape() {
            h.update((*s as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl ComposedNetwork {
    /// Digest of every parameter.
    pub fn digest(&self) -> String {
        digest(self.parameters().into_iter().map(|(_, t)| t))
    }

    pub fn extractor_digest(&self) -> String {
        digest(self.extractor.parameters().into_iter().map(|(_, t)| t))
    }

    pub fn classifier_digest(&self) -> String {
        digest([&self.classifier.weight, &self.classifier.bias])
    }
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

impl Checkpoint {
    pub fn from_network(net: &ComposedNetwork) -> Self {
        Self {
            arch: net.arch().clone(),
            class_names: net.class_names().to_vec(),
            stage: net.provenance.stage.clone(),
            seed: net.provenance.seed,
            params: net
                .parameters()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    /// Rebuilds the network; parameter names and shapes must match the
    /// architecture exactly.
    pub fn to_network(&self) -> Result<ComposedNetwork> {
        let mut net = build_network(&self.arch, &self.class_names, self.seed)?;
        let names: Vec<String> = net.parameters().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameter blocks, architecture needs {}",
                self.params.len(),
                names.len()
            )));
        }
        for ((slot, name), (ck_name, tensor)) in net
            .parameters_mut()
            .into_iter()
            .zip(&names)
            .zip(&self.params)
        {
            if name != ck_name || slot.shape() != tensor.shape() {
                return Err(Error::Format(format!(
                    "parameter `{ck_name}` {:?} does not match `{name}` {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = tensor.clone();
        }
        net.provenance = Provenance {
            stage: self.stage.clone(),
            seed: self.seed,
        };
        Ok(net)
    }

    pub fn digest(&self) -> String {
        digest(self.params.iter().map(|(_, t)| t))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: FORMAT_VERSION,
            stage: self.stage.clone(),
            seed: self.seed.to_string(),
            classes: self.class_names.clone(),
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let text = toml::to_string(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, t) in &self.params {
            out.extend_from_slice(&t.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let buf = &mut bytes;
        if take(buf, 4, "magic")? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(take(buf, 4, "version")?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = u64::from_le_bytes(take(buf, 8, "header length")?.try_into().unwrap());
        let len =
            usize::try_from(len).map_err(|_| Error::Format("header length overflow".into()))?;
        let text = std::str::from_utf8(take(buf, len, "header")?)
            .map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
        let header: Header = toml::from_str(text)?;
        if header.format_version != version {
            return Err(Error::Format(
                "header version disagrees with preamble".into(),
            ));
        }
        let seed = header
            .seed
            .parse()
            .map_err(|_| Error::Format(format!("bad seed `{}`", header.seed)))?;
        let mut params = Vec::with_capacity(header.params.len());
        for entry in header.params {
            let n: usize = entry.shape.iter().product();
            let raw = take(buf, n * 8, &entry.name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push((entry.name, Tensor::new(entry.shape, data)?));
        }
        if !buf.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len())));
        }
        let ck = Self {
            arch: header.arch,
            class_names: header.classes,
            stage: header.stage,
            seed,
            params,
        };
        ck.to_network()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
