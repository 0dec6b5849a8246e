//! Binary model checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "GCNCKPT1"
//! tensor count
//! per tensor: name length, UTF-8 name, rank, dims[rank]
//! payloads: f64 little-endian, row-major, in manifest order
//! ```
//!
//! A model is stored as `meta.grid = [height, width, connectivity]`, then
//! `conv.<k>.weight` (`out × in × 3 × 3`) and `conv.<k>.bias` per convolution,
//! then `gcn.<k>.weight` (`d_in × d_out`) and `gcn.<k>.relu` (`[0|1]`) per
//! GCN layer.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::Connectivity;
use crate::matrix::DenseMatrix;
use crate::model::{ConvLayerParams, GcnLayerParams, GcnModel, KERNEL_SIZE};

pub const MAGIC: &[u8; 8] = b"GCNCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = dims.iter().map(|&d| d as usize).product();
        if expected != data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has dims {dims:?} but {} values",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

pub fn encode_tensors(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend(to_u32(tensors.len(), "tensor count")?.to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend(to_u32(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name);
        out.extend(to_u32(t.dims.len(), "rank")?.to_le_bytes());
        for &d in &t.dims {
            out.extend(d.to_le_bytes());
        }
    }
    for t in tensors {
        for &v in &t.data {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint at byte {} (needed {n} more bytes)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("missing GCNCKPT1 magic".into()));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint(format!("tensor name at byte {at} is not UTF-8")))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        manifest.push((name, dims));
    }
    let mut tensors = Vec::with_capacity(manifest.len());
    for (name, dims) in manifest {
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint(format!("tensor {name} is too large"))
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last payload",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

pub fn model_to_tensors(m: &GcnModel) -> Result<Vec<Tensor>> {
    let mut out = vec![Tensor::new(
        "meta.grid",
        vec![3],
        vec![
            m.height() as f64,
            m.width() as f64,
            m.connectivity().as_u32() as f64,
        ],
    )?];
    let k = KERNEL_SIZE as u32;
    for (i, l) in m.conv_layers().iter().enumerate() {
        out.push(Tensor::new(
            format!("conv.{i}.weight"),
            vec![
                to_u32(l.out_channels, "channels")?,
                to_u32(l.in_channels, "channels")?,
                k,
                k,
            ],
            l.kernels.clone(),
        )?);
        out.push(Tensor::new(
            format!("conv.{i}.bias"),
            vec![to_u32(l.out_channels, "channels")?],
            l.bias.clone(),
        )?);
    }
    for (i, l) in m.gcn_layers().iter().enumerate() {
        out.push(Tensor::new(
            format!("gcn.{i}.weight"),
            vec![to_u32(l.d_in(), "width")?, to_u32(l.d_out(), "width")?],
            l.w.as_slice().to_vec(),
        )?);
        out.push(Tensor::new(
            format!("gcn.{i}.relu"),
            vec![1],
            vec![if l.has_relu { 1.0 } else { 0.0 }],
        )?);
    }
    Ok(out)
}

pub fn model_from_tensors(tensors: &[Tensor]) -> Result<GcnModel> {
    let mut it = tensors.iter().peekable();
    let bad = |msg: String| Error::Checkpoint(msg);

    let grid = it
        .next()
        .filter(|t| t.name == "meta.grid" && t.data.len() == 3)
        .ok_or_else(|| bad("first tensor must be meta.grid with 3 values".into()))?;
    let as_index = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(Error::Checkpoint(format!("meta.grid holds non-integer {v}")))
        }
    };
    let height = as_index(grid.data[0])?;
    let width = as_index(grid.data[1])?;
    let connectivity = Connectivity::from_u32(as_index(grid.data[2])? as u32)?;

    let mut conv = Vec::new();
    while let Some(t) = it.next_if(|t| t.name.starts_with("conv.")) {
        let k = conv.len();
        if t.name != format!("conv.{k}.weight") || t.dims.len() != 4 {
            return Err(bad(format!("unexpected tensor {} (wanted conv.{k}.weight)", t.name)));
        }
        let (out_ch, in_ch) = (t.dims[0] as usize, t.dims[1] as usize);
        if t.dims[2] as usize != KERNEL_SIZE || t.dims[3] as usize != KERNEL_SIZE {
            return Err(bad(format!("{} is not a 3x3 kernel bank", t.name)));
        }
        let bias = it
            .next()
            .filter(|b| b.name == format!("conv.{k}.bias") && b.dims == [out_ch as u32])
            .ok_or_else(|| bad(format!("conv.{k}.bias missing or misshapen")))?;
        conv.push(ConvLayerParams {
            in_channels: in_ch,
            out_channels: out_ch,
            kernels: t.data.clone(),
            bias: bias.data.clone(),
        });
    }

    let mut gcn = Vec::new();
    while let Some(t) = it.next() {
        let k = gcn.len();
        if t.name != format!("gcn.{k}.weight") || t.dims.len() != 2 {
            return Err(bad(format!("unexpected tensor {} (wanted gcn.{k}.weight)", t.name)));
        }
        let w = DenseMatrix::from_vec(t.dims[0] as usize, t.dims[1] as usize, t.data.clone())?;
        let relu = it
            .next()
            .filter(|r| r.name == format!("gcn.{k}.relu") && r.data.len() == 1)
            .ok_or_else(|| bad(format!("gcn.{k}.relu missing or misshapen")))?;
        gcn.push(GcnLayerParams {
            w,
            has_relu: relu.data[0] != 0.0,
        });
    }
    GcnModel::from_layers(conv, gcn, height, width, connectivity)
}

pub fn encode_model(m: &GcnModel) -> Result<Vec<u8>> {
    encode_tensors(&model_to_tensors(m)?)
}

pub fn decode_model(bytes: &[u8]) -> Result<GcnModel> {
    model_from_tensors(&decode_tensors(bytes)?)
}

/// Writes to a sibling temporary file first, then renames over `path`.
pub fn save_checkpoint(m: &GcnModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_model(m)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GcnModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
