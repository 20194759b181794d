//! Point cloud and tensor file formats.

mod ply;
mod tensor;
mod xyz;

pub use ply::{encode_ply, parse_ply, read_ply, write_ply, PlyEncoding};
pub use tensor::{
    bundle_get, read_bundle, read_tensor, write_bundle, write_tensor, Dtype, Tensor, TensorData, TENSOR_MAGIC,
};
pub use xyz::{format_xyz, parse_xyz, read_xyz, write_coords, write_xyz};

use std::path::Path;

use crate::error::{Error, Result};

/// Reads newline-separated class labels.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u32>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("label {l:?}: {e}"),
            })
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u32]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
