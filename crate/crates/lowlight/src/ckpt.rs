//! Named-tensor checkpoint container.
//!
//! Layout: magic `LLE1`, u32-LE tensor count, then per tensor a u16-LE name
//! length, the UTF-8 name, a u8 rank, rank u32-LE extents, and the f32-LE
//! samples. Round-trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LLE1";

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default)]
pub struct NamedTensors {
    entries: Vec<(String, Tensor)>,
}

impl NamedTensors {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fetches a tensor by name and validates its shape; the error names
    /// the offending tensor.
    pub fn take_checked(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                shape
            )));
        }
        Ok(t.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Checkpoint("too many tensors".into()))?;
        buf.extend_from_slice(&count.to_le_bytes());
        for (name, tensor) in &self.entries {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("tensor name `{name}` too long")))?;
            buf.extend_from_slice(&name_len.to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(tensor.shape().len())
                .map_err(|_| Error::Checkpoint(format!("tensor `{name}` rank too large")))?;
            buf.push(rank);
            for &ext in tensor.shape() {
                let ext = u32::try_from(ext)
                    .map_err(|_| Error::Checkpoint(format!("tensor `{name}` extent too large")))?;
                buf.extend_from_slice(&ext.to_le_bytes());
            }
            for &v in tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
            let slice = bytes
                .get(*pos..*pos + n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated file reading {what}")))?;
            *pos += n;
            Ok(slice)
        };
        let magic = take(&mut pos, 4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("magic mismatch (not a checkpoint)".into()));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4, "tensor count")?.try_into().unwrap());
        let mut entries = Vec::with_capacity(count as usize);
        for i in 0..count {
            let name_len =
                u16::from_le_bytes(take(&mut pos, 2, "name length")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len, "name")?)
                .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let rank = take(&mut pos, 1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let ext = u32::from_le_bytes(
                    take(&mut pos, 4, &format!("extents of `{name}`"))?
                        .try_into()
                        .unwrap(),
                );
                shape.push(ext as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = take(&mut pos, numel * 4, &format!("samples of `{name}`"))?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::from_vec(shape, data)?));
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - pos
            )));
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.llc");
        let mut nt = NamedTensors::new();
        nt.push(
            "a.weight",
            Tensor::from_vec(vec![2, 3], vec![0.1, -0.2, 3.5e-8, f32::MIN_POSITIVE, 1.0, -0.0])
                .unwrap(),
        );
        nt.push("b", Tensor::scalar(42.0));
        nt.save(&path).unwrap();
        let back = NamedTensors::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in nt.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn magic_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.llc");
        std::fs::write(&path, b"NOPE\0\0\0\0").unwrap();
        assert!(matches!(
            NamedTensors::load(&path),
            Err(Error::Checkpoint(msg)) if msg.contains("magic")
        ));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.llc");
        let mut nt = NamedTensors::new();
        nt.push("w", Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        nt.save(&path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert!(matches!(
            NamedTensors::load(&path),
            Err(Error::Checkpoint(msg)) if msg.contains("truncated")
        ));
    }

    #[test]
    fn shape_check_names_offender() {
        let mut nt = NamedTensors::new();
        nt.push("gen.conv1.weight", Tensor::zeros(vec![32, 3, 3, 3]));
        let err = nt.take_checked("gen.conv1.weight", &[8, 3, 3, 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gen.conv1.weight"), "{msg}");
    }
}
