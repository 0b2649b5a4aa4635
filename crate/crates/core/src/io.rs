//! On-disk formats.
//!
//! Tensor container (all integers little-endian):
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 4         | magic `b"MOCT"`                         |
//! | 4      | 4         | version, `u32`, currently 1             |
//! | 8      | 4         | rank, `u32`, 3 or 4                     |
//! | 12     | 4 * rank  | dims, `u32` each                        |
//! | ...    | 4 * prod  | payload, `f32` each, row-major          |
//!
//! Rank 3 is `(H, W, C)`; rank 4 is `(K, H, W, C)` for per-frame clip maps.
//! Annotations are JSON, see [`VideoAnnotation`].

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::DenseMap;
use crate::types::Instance;

pub const TENSOR_MAGIC: &[u8; 4] = b"MOCT";
pub const TENSOR_VERSION: u32 = 1;

/// A decoded tensor container of rank 3 or 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn from_map(map: &DenseMap) -> Self {
        let (h, w, c) = map.dims();
        Tensor {
            dims: vec![h, w, c],
            data: map.data().to_vec(),
        }
    }

    /// Stacks per-frame maps of identical dims into a rank-4 tensor.
    pub fn from_frames(frames: &[DenseMap]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::DimMismatch("empty frame stack".into()))?;
        if frames.iter().any(|f| !f.same_dims(first)) {
            return Err(Error::DimMismatch("frames differ in dims".into()));
        }
        let (h, w, c) = first.dims();
        let mut data = Vec::with_capacity(frames.len() * h * w * c);
        for f in frames {
            data.extend_from_slice(f.data());
        }
        Ok(Tensor {
            dims: vec![frames.len(), h, w, c],
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Leading K of a rank-4 tensor.
    pub fn frames_len(&self) -> Option<usize> {
        (self.rank() == 4).then(|| self.dims[0])
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_map(self) -> Result<DenseMap> {
        match self.dims[..] {
            [h, w, c] => DenseMap::from_vec(h, w, c, self.data),
            _ => Err(Error::DimMismatch(format!(
                "expected a rank-3 tensor, found rank {}",
                self.rank()
            ))),
        }
    }

    /// Splits a rank-4 tensor into its frames. A rank-3 tensor yields one frame.
    pub fn into_frames(self) -> Result<Vec<DenseMap>> {
        match self.dims[..] {
            [_, _, _] => Ok(vec![self.into_map()?]),
            [k, h, w, c] => {
                let step = h * w * c;
                (0..k)
                    .map(|i| DenseMap::from_vec(h, w, c, self.data[i * step..(i + 1) * step].to_vec()))
                    .collect()
            }
            _ => unreachable!("rank validated on construction"),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Reader { bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != TENSOR_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = cursor.u32()?;
        if version != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let rank = cursor.u32()? as usize;
        if rank != 3 && rank != 4 {
            return Err(Error::Format(format!("unsupported rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| cursor.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("dims overflow".into()))?;
        let payload = &bytes[cursor.pos..];
        if payload.len() != count * 4 {
            return Err(Error::Format(format!(
                "payload length {} bytes, dims {dims:?} require {}",
                payload.len(),
                count * 4
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { dims, data })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated header: need {end} bytes, file has {}",
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &tensor.to_bytes())
}

pub fn read_map(path: impl AsRef<Path>) -> Result<DenseMap> {
    read_tensor(path)?.into_map()
}

pub fn write_map(path: impl AsRef<Path>, map: &DenseMap) -> Result<()> {
    write_tensor(path, &Tensor::from_map(map))
}

pub fn read_frames(path: impl AsRef<Path>) -> Result<Vec<DenseMap>> {
    read_tensor(path)?.into_frames()
}

pub fn write_frames(path: impl AsRef<Path>, frames: &[DenseMap]) -> Result<()> {
    write_tensor(path, &Tensor::from_frames(frames)?)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Per-video ground truth document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub num_frames: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "H")]
    pub height: usize,
    pub instances: Vec<Instance>,
}

impl VideoAnnotation {
    pub fn validate(&self, classes: usize) -> Result<()> {
        for (i, inst) in self.instances.iter().enumerate() {
            inst.validate(classes)
                .map_err(|e| Error::InvalidInstance(format!("instance {i}: {e}")))?;
            if inst.end_frame() >= self.num_frames {
                return Err(Error::InvalidInstance(format!(
                    "instance {i} ends at frame {} but video has {} frames",
                    inst.end_frame(),
                    self.num_frames
                )));
            }
        }
        Ok(())
    }
}

pub fn read_annotation(path: impl AsRef<Path>) -> Result<VideoAnnotation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_annotation(path: impl AsRef<Path>, ann: &VideoAnnotation) -> Result<()> {
    let mut text = serde_json::to_string_pretty(ann)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
