//! Portable tensor container.
//!
//! One record is `b"DAFT"`, a version byte, a rank byte, `rank` extents as
//! little-endian `u32`, then the payload as little-endian `f32` in row-major
//! order. Checkpoints concatenate records into one file and keep a JSON
//! index (`name -> byte offset`) next to it.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"DAFT";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    Version(u8),
    #[error("extent {0} does not fit in u32")]
    Extent(usize),
    #[error("invalid tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("index error: {0}")]
    Index(#[from] serde_json::Error),
    #[error("tensor {0:?} missing from checkpoint")]
    Missing(String),
}

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<(), ContainerError> {
    w.write_all(MAGIC)?;
    let rank = u8::try_from(t.rank()).map_err(|_| ContainerError::Extent(t.rank()))?;
    w.write_all(&[VERSION, rank])?;
    for &d in t.shape() {
        let d32 = u32::try_from(d).map_err(|_| ContainerError::Extent(d))?;
        w.write_all(&d32.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for &v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor<f32>, ContainerError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    if head[0] != VERSION {
        return Err(ContainerError::Version(head[0]));
    }
    let mut shape = Vec::with_capacity(head[1] as usize);
    for _ in 0..head[1] {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::new(shape, data)?)
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<(), ContainerError> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>, ContainerError> {
    let bytes = fs::read(path)?;
    read_tensor(&mut bytes.as_slice())
}

/// Path of the JSON index that accompanies a checkpoint file.
pub fn index_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

/// Writes every tensor into `path` and the offset index next to it.
pub fn save_named<'a, T: Scalar + 'a>(
    path: impl AsRef<Path>,
    tensors: impl IntoIterator<Item = (&'a String, &'a Tensor<T>)>,
) -> Result<(), ContainerError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    let mut index = BTreeMap::new();
    for (name, t) in tensors {
        index.insert(name.clone(), buf.len() as u64);
        write_tensor(&mut buf, t)?;
    }
    fs::write(path, buf)?;
    fs::write(index_path(path), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn load_named(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor<f32>>, ContainerError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let index: BTreeMap<String, u64> = serde_json::from_str(&fs::read_to_string(index_path(path))?)?;
    let mut out = BTreeMap::new();
    for (name, off) in index {
        let start = usize::try_from(off).map_err(|_| ContainerError::Missing(name.clone()))?;
        let mut slice = bytes.get(start..).ok_or_else(|| ContainerError::Missing(name.clone()))?;
        out.insert(name, read_tensor(&mut slice)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::new([2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = b"DAFT".to_vec();
        expected.extend_from_slice(&[1, 2]);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_corrupt_records() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::<f32>::scalar(4.0)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(ContainerError::BadMagic(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(ContainerError::Version(9))));
        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_tensor(&mut &short[..]), Err(ContainerError::Io(_))));
    }

    #[test]
    fn named_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.daft");
        let mut named = BTreeMap::new();
        named.insert("a.w".to_string(), Tensor::<f32>::from_fn([2, 3], |i| i[1] as f32 - i[0] as f32));
        named.insert("b".to_string(), Tensor::<f32>::scalar(0.25));
        save_named(&path, &named).unwrap();
        let index: BTreeMap<String, u64> =
            serde_json::from_str(&fs::read_to_string(index_path(&path)).unwrap()).unwrap();
        assert_eq!(index["a.w"], 0);
        assert_eq!(load_named(&path).unwrap(), named);
    }

    proptest! {
        #[test]
        fn record_round_trip(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let t = Tensor::<f32>::from_fn(shape.clone(), |i| {
                let h = i.iter().fold(seed, |a, &x| a.wrapping_mul(31).wrapping_add(x as u64));
                (h % 1000) as f32 / 7.0 - 50.0
            });
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            prop_assert_eq!(buf.len(), 6 + 4 * shape.len() + 4 * t.len());
            prop_assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
        }
    }
}
