//! Tensor files and named-tensor bundles.
//!
//! Layout of a tensor file, all integers little-endian:
//!
//! ```text
//! "PGTN1\n"            6 bytes magic
//! dtype                u8   (1 = f32, 2 = f64, 3 = i64)
//! rank                 u8
//! dims                 rank x u64
//! payload              product(dims) x element size, row-major
//! ```
//!
//! A bundle is a directory holding `manifest.txt` plus one tensor file per
//! entry. Each manifest line reads `name dims file`, with dims written as
//! `2x3` (or `scalar` for rank 0).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 6] = b"PGTN1\n";
const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
            Dtype::I64 => 3,
        }
    }

    fn from_code(c: u8) -> Result<Dtype> {
        match c {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            3 => Ok(Dtype::I64),
            other => Err(Error::TensorFormat(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
            TensorData::I64(_) => Dtype::I64,
        }
    }
}

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::TensorFormat(format!("dims {dims:?} overflow")))
    })
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let count = element_count(&dims)?;
        count
            .checked_mul(data.dtype().size())
            .ok_or_else(|| Error::TensorFormat(format!("dims {dims:?} overflow")))?;
        if count != data.len() {
            return Err(Error::TensorFormat(format!(
                "dims {dims:?} need {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn from_array1(a: &Array1<f64>) -> Self {
        Tensor {
            dims: vec![a.len()],
            data: TensorData::F64(a.to_vec()),
        }
    }

    pub fn from_array2(a: &Array2<f64>) -> Self {
        Tensor {
            dims: vec![a.nrows(), a.ncols()],
            data: TensorData::F64(a.iter().copied().collect()),
        }
    }

    pub fn from_arrayd(a: &ArrayD<f64>) -> Self {
        Tensor {
            dims: a.shape().to_vec(),
            data: TensorData::F64(a.iter().copied().collect()),
        }
    }

    /// Values widened to f64 (i64 values convert with `as`).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn to_arrayd(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.dims), self.to_f64_vec()).expect("dims checked on construction")
    }

    pub fn to_array1(&self) -> Result<Array1<f64>> {
        match self.dims.as_slice() {
            [_] => Ok(Array1::from(self.to_f64_vec())),
            d => Err(Error::shape(format!("expected rank-1 tensor, got dims {d:?}"))),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        match *self.dims.as_slice() {
            [r, c] => Ok(Array2::from_shape_vec((r, c), self.to_f64_vec()).expect("dims checked")),
            ref d => Err(Error::shape(format!("expected rank-2 tensor, got dims {d:?}"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let rank = u8::try_from(self.dims.len())
            .map_err(|_| Error::TensorFormat(format!("rank {} exceeds 255", self.dims.len())))?;
        let payload = self.data.len() * self.dtype().size();
        let mut out = Vec::with_capacity(8 + 8 * self.dims.len() + payload);
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(self.dtype().code());
        out.push(rank);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        let bad = |m: &str| Error::TensorFormat(m.to_string());
        if bytes.len() < 8 || &bytes[..6] != TENSOR_MAGIC {
            return Err(bad("missing PGTN1 magic"));
        }
        let dtype = Dtype::from_code(bytes[6])?;
        let rank = bytes[7] as usize;
        let dims_end = 8 + 8 * rank;
        let dim_bytes = bytes.get(8..dims_end).ok_or_else(|| bad("truncated dims"))?;
        let dims = dim_bytes
            .chunks_exact(8)
            .map(|c| {
                usize::try_from(u64::from_le_bytes(c.try_into().unwrap()))
                    .map_err(|_| bad("dimension exceeds address space"))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = element_count(&dims)?;
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| bad("payload size overflows"))?;
        let payload = &bytes[dims_end..];
        if payload.len() != expected {
            return Err(Error::TensorFormat(format!(
                "payload has {} bytes, dims {dims:?} need {expected}",
                payload.len()
            )));
        }
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::I64 => TensorData::I64(
                payload
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Tensor { dims, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

fn format_dims(dims: &[usize]) -> String {
    if dims.is_empty() {
        "scalar".to_string()
    } else {
        dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

/// Writes named tensors into `dir` (created if missing), in the given order.
pub fn write_bundle(dir: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (name, t) in tensors {
        if !valid_name(name) {
            return Err(Error::TensorFormat(format!("invalid tensor name {name:?}")));
        }
        let file = format!("{name}.pgtn");
        write_tensor(dir.join(&file), t)?;
        manifest.push_str(&format!("{name} {} {file}\n", format_dims(t.dims())));
    }
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

/// Reads a bundle, checking each tensor's dims against its manifest line.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let [name, dims, file] = toks.as_slice() else {
            return Err(Error::TokenCount {
                line: i + 1,
                expected: 3,
                found: toks.len(),
            });
        };
        if !valid_name(name) || file.contains('/') || file.contains('\\') {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("bad manifest entry {line:?}"),
            });
        }
        let t = read_tensor(dir.join(file))?;
        if format_dims(t.dims()) != *dims {
            return Err(Error::TensorFormat(format!(
                "{name}: manifest dims {dims} but file holds {}",
                format_dims(t.dims())
            )));
        }
        out.push((name.to_string(), t));
    }
    Ok(out)
}

/// Looks up a tensor by name in a bundle.
pub fn bundle_get<'a>(bundle: &'a [(String, Tensor)], name: &str) -> Result<&'a Tensor> {
    bundle
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::TensorFormat(format!("bundle has no tensor named {name:?}")))
}
