//! Binary container for latent traces, model matrices and checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic        8 bytes   "SEFTTRC1"
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (see `TraceHeader`)
//! W_in         V*d f32, row-major          (if has_input_matrix)
//! W_out_pinv   V*d f32, row-major          (if has_output_pinv)
//! records      per record: u32 token, u32 label, (m+1)*d f32
//! params       f32 payload of each tensor listed in header.params, in order
//! ```

mod analysis;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{
    analyze_trace, bases_from_trace, last_layer_cosine, PlanRecommendation, RecordAnalysis,
    TraceAnalysis,
};

pub const MAGIC: &[u8; 8] = b"SEFTTRC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic: not a trace container")]
    BadMagic,

    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated {section}{}", record.map(|r| format!(" at record {r}")).unwrap_or_default())]
    Truncated {
        section: &'static str,
        record: Option<usize>,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

type TraceResult<T> = std::result::Result<T, TraceError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    fn len(&self) -> Option<usize> {
        self.shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }
}

/// Extra configuration and tensor listing carried by model checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsSection {
    pub heads: usize,
    pub context_len: usize,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub model: String,
    pub layers: usize,
    pub dim: usize,
    pub vocab: usize,
    pub records: usize,
    pub has_input_matrix: bool,
    pub has_output_pinv: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsSection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub medium_token: u32,
    pub label: u32,
    /// `(m+1) x d` latents, row-major.
    pub latents: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub input_matrix: Option<Vec<f32>>,
    pub output_pinv: Option<Vec<f32>>,
    pub records: Vec<TraceRecord>,
    /// Checkpoint payloads, one per `header.params.tensors` entry.
    pub params: Vec<Vec<f32>>,
}

impl TraceFile {
    /// Builds a trace file with a header derived from the payloads.
    pub fn new(
        model: impl Into<String>,
        layers: usize,
        dim: usize,
        vocab: usize,
        input_matrix: Option<Vec<f32>>,
        output_pinv: Option<Vec<f32>>,
        records: Vec<TraceRecord>,
    ) -> TraceResult<Self> {
        let file = Self {
            header: TraceHeader {
                version: FORMAT_VERSION,
                model: model.into(),
                layers,
                dim,
                vocab,
                records: records.len(),
                has_input_matrix: input_matrix.is_some(),
                has_output_pinv: output_pinv.is_some(),
                params: None,
            },
            input_matrix,
            output_pinv,
            records,
            params: Vec::new(),
        };
        file.validate()?;
        Ok(file)
    }

    pub fn record_floats(&self) -> usize {
        (self.header.layers + 1) * self.header.dim
    }

    /// Checks that payloads agree with the header.
    pub fn validate(&self) -> TraceResult<()> {
        let h = &self.header;
        if h.version != FORMAT_VERSION {
            return Err(TraceError::UnsupportedVersion(h.version));
        }
        if h.records != self.records.len() {
            return Err(TraceError::ShapeMismatch(format!(
                "header declares {} records, payload has {}",
                h.records,
                self.records.len()
            )));
        }
        let vd = h.vocab * h.dim;
        for (name, flag, m) in [
            ("input matrix", h.has_input_matrix, &self.input_matrix),
            ("output pinv", h.has_output_pinv, &self.output_pinv),
        ] {
            match (flag, m) {
                (true, Some(m)) if m.len() == vd => {}
                (false, None) => {}
                _ => {
                    return Err(TraceError::ShapeMismatch(format!(
                        "{name} presence or size disagrees with header ({} x {})",
                        h.vocab, h.dim
                    )))
                }
            }
        }
        let per = self.record_floats();
        for (i, r) in self.records.iter().enumerate() {
            if r.latents.len() != per {
                return Err(TraceError::ShapeMismatch(format!(
                    "record {i} has {} floats, expected {per}",
                    r.latents.len()
                )));
            }
            if r.medium_token as usize >= h.vocab || r.label as usize >= h.vocab {
                return Err(TraceError::ShapeMismatch(format!(
                    "record {i} token/label outside vocabulary {}",
                    h.vocab
                )));
            }
        }
        let tensors = h
            .params
            .as_ref()
            .map(|p| p.tensors.as_slice())
            .unwrap_or(&[]);
        if tensors.len() != self.params.len() {
            return Err(TraceError::ShapeMismatch(format!(
                "header lists {} tensors, payload has {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for (entry, data) in tensors.iter().zip(&self.params) {
            if entry.len() != Some(data.len()) {
                return Err(TraceError::ShapeMismatch(format!(
                    "tensor {} has {} values for shape {:?}",
                    entry.name,
                    data.len(),
                    entry.shape
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> TraceResult<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| TraceError::MalformedHeader(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let put = |out: &mut Vec<u8>, xs: &[f32]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        if let Some(m) = &self.input_matrix {
            put(&mut out, m);
        }
        if let Some(m) = &self.output_pinv {
            put(&mut out, m);
        }
        for r in &self.records {
            out.extend_from_slice(&r.medium_token.to_le_bytes());
            out.extend_from_slice(&r.label.to_le_bytes());
            put(&mut out, &r.latents);
        }
        for p in &self.params {
            put(&mut out, p);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> TraceResult<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(TraceError::BadMagic);
        }
        cur.pos = MAGIC.len();
        let header_len = cur.u64("header length", None)?;
        let header_len = usize::try_from(header_len)
            .map_err(|_| TraceError::MalformedHeader("header length overflows".into()))?;
        let raw = cur.take(header_len, "header", None)?;
        let value: serde_json::Value =
            serde_json::from_slice(raw).map_err(|e| TraceError::MalformedHeader(e.to_string()))?;
        // Version is checked before the rest of the header is interpreted.
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| TraceError::MalformedHeader("missing version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(TraceError::UnsupportedVersion(version as u32));
        }
        let header: TraceHeader = serde_json::from_value(value)
            .map_err(|e| TraceError::MalformedHeader(e.to_string()))?;

        let vd = header
            .vocab
            .checked_mul(header.dim)
            .ok_or_else(|| TraceError::ShapeMismatch("vocab x dim overflows".into()))?;
        let input_matrix = if header.has_input_matrix {
            Some(cur.f32s(vd, "input matrix", None)?)
        } else {
            None
        };
        let output_pinv = if header.has_output_pinv {
            Some(cur.f32s(vd, "output pinv", None)?)
        } else {
            None
        };
        let per = header
            .layers
            .checked_add(1)
            .and_then(|l| l.checked_mul(header.dim))
            .ok_or_else(|| TraceError::ShapeMismatch("record size overflows".into()))?;
        let record_bytes = per
            .checked_mul(4)
            .and_then(|b| b.checked_add(8))
            .ok_or_else(|| TraceError::ShapeMismatch("record size overflows".into()))?;
        // Cap the preallocation by what the file can actually hold.
        let mut records =
            Vec::with_capacity(header.records.min(cur.remaining() / record_bytes.max(1)));
        for i in 0..header.records {
            let medium_token = cur.u32("record", Some(i))?;
            let label = cur.u32("record", Some(i))?;
            let latents = cur.f32s(per, "record", Some(i))?;
            records.push(TraceRecord {
                medium_token,
                label,
                latents,
            });
        }
        let mut params = Vec::new();
        if let Some(section) = &header.params {
            for entry in &section.tensors {
                let n = entry.len().ok_or_else(|| {
                    TraceError::ShapeMismatch(format!("tensor {} shape overflows", entry.name))
                })?;
                params.push(cur.f32s(n, "params", None)?);
            }
        }
        if cur.remaining() != 0 {
            return Err(TraceError::TrailingBytes(cur.remaining()));
        }
        let file = Self {
            header,
            input_matrix,
            output_pinv,
            records,
            params,
        };
        file.validate()?;
        Ok(file)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(
        &mut self,
        n: usize,
        section: &'static str,
        record: Option<usize>,
    ) -> TraceResult<&'a [u8]> {
        if self.remaining() < n {
            return Err(TraceError::Truncated { section, record });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self, section: &'static str, record: Option<usize>) -> TraceResult<u64> {
        let b = self.take(8, section, record)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn u32(&mut self, section: &'static str, record: Option<usize>) -> TraceResult<u32> {
        let b = self.take(4, section, record)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32s(
        &mut self,
        n: usize,
        section: &'static str,
        record: Option<usize>,
    ) -> TraceResult<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or(TraceError::Truncated { section, record })?;
        let b = self.take(len, section, record)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Writes via a sibling temporary file and a rename, so readers never see a partial file.
pub fn write_trace(path: impl AsRef<Path>, file: &TraceFile) -> TraceResult<()> {
    let path = path.as_ref();
    let bytes = file.encode()?;
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> TraceResult<TraceFile> {
    let bytes = fs::read(path)?;
    TraceFile::decode(&bytes)
}
