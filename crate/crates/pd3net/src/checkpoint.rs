//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"PD3N"
//! version u32 (currently 1)
//! height  u32            input height
//! width   u32            input width
//! scale   f64            channel-width multiplier
//! epoch   u32            training metadata
//! stage   u32
//! best    f64            best validation loss (+inf when untrained)
//! count   u32            number of named tensors
//! entry*  name_len u32, name bytes (UTF-8), trainable u8,
//!         shape 4 x u32, payload f32 x len
//! ```
//!
//! Payloads are `f32`; the in-memory parameters are kept on the `f32` grid at
//! all times (see [`crate::tape`]), so a save/load round trip reproduces
//! bit-identical forward outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{NetworkGraph, TrainMeta};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

const MAGIC: [u8; 4] = *b"PD3N";
const VERSION: u32 = 1;

/// Parsed checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub height: usize,
    pub width: usize,
    pub scale: f64,
    pub meta: TrainMeta,
    pub entries: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub name: String,
    pub trainable: bool,
    pub shape: Shape,
    pub values: Vec<f32>,
}

impl Checkpoint {
    /// Snapshot a network's parameters and metadata.
    pub fn from_network(net: &NetworkGraph) -> Checkpoint {
        let (height, width, scale) = net.geometry();
        let entries = net
            .params
            .entries()
            .iter()
            .map(|e| CheckpointEntry {
                name: e.name.clone(),
                trainable: e.trainable,
                shape: e.value.shape(),
                values: e.value.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Checkpoint { height, width, scale, meta: net.meta, entries }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&self.scale.to_le_bytes())?;
        w.write_all(&self.meta.epoch.to_le_bytes())?;
        w.write_all(&self.meta.stage.to_le_bytes())?;
        w.write_all(&self.meta.best_val_loss.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[e.trainable as u8])?;
            for dim in [e.shape.batch, e.shape.channels, e.shape.height, e.shape.width] {
                w.write_all(&(dim as u32).to_le_bytes())?;
            }
            for v in &e.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let height = read_u32(&mut r)? as usize;
        let width = read_u32(&mut r)? as usize;
        let scale = read_f64(&mut r)?;
        let meta = TrainMeta {
            epoch: read_u32(&mut r)?,
            stage: read_u32(&mut r)?,
            best_val_loss: read_f64(&mut r)?,
        };
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 1 << 16 {
                return Err(Error::Format("unreasonable name length".into()));
            }
            let mut name_bytes = vec![0u8; name_len];
            read_exact(&mut r, &mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let mut flag = [0u8; 1];
            read_exact(&mut r, &mut flag)?;
            let shape = Shape::new(
                read_u32(&mut r)? as usize,
                read_u32(&mut r)? as usize,
                read_u32(&mut r)? as usize,
                read_u32(&mut r)? as usize,
            );
            let len = shape.len()?;
            let mut values = vec![0f32; len];
            for v in values.iter_mut() {
                let mut buf = [0u8; 4];
                read_exact(&mut r, &mut buf)?;
                *v = f32::from_le_bytes(buf);
            }
            entries.push(CheckpointEntry { name, trainable: flag[0] != 0, shape, values });
        }
        Ok(Checkpoint { height, width, scale, meta, entries })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("truncated checkpoint file".into())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

impl NetworkGraph {
    /// Overwrite this network's parameters from a checkpoint. The checkpoint
    /// must describe the same geometry and the same parameter set.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let (height, width, scale) = self.geometry();
        if (ckpt.height, ckpt.width) != (height, width) || ckpt.scale != scale {
            return Err(Error::Shape(format!(
                "checkpoint is for {}x{} scale {}, network is {}x{} scale {}",
                ckpt.height, ckpt.width, ckpt.scale, height, width, scale
            )));
        }
        if ckpt.entries.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, network has {}",
                ckpt.entries.len(),
                self.params.len()
            )));
        }
        for (entry, target) in ckpt.entries.iter().zip(self.params.entries_mut()) {
            if entry.name != target.name {
                return Err(Error::Format(format!(
                    "parameter order mismatch: {} vs {}",
                    entry.name, target.name
                )));
            }
            if entry.shape != target.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {}, checkpoint stores {}",
                    target.name,
                    target.value.shape(),
                    entry.shape
                )));
            }
            for (dst, src) in target.value.data_mut().iter_mut().zip(&entry.values) {
                *dst = *src as f64;
            }
        }
        self.meta = ckpt.meta;
        Ok(())
    }

    /// Rebuild a network from a checkpoint file.
    pub fn load(path: impl AsRef<Path>) -> Result<NetworkGraph> {
        let ckpt = Checkpoint::read(path)?;
        // Geometry comes from the file; the He-normal draws are overwritten.
        let mut net = NetworkGraph::build(ckpt.height, ckpt.width, ckpt.scale, &mut Rng::new(0))?;
        net.restore(&ckpt)?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::from_network(self).write(path)
    }
}

/// Probe tensor for round-trip checks: a deterministic mid-range ramp.
pub fn probe_image(height: usize, width: usize) -> Tensor {
    let mut t = Tensor::zeros(Shape::new(1, 1, height, width));
    let len = t.data().len();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = 0.1 + 0.8 * (i as f64 / len as f64);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn round_trip_reproduces_forward_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.pd3n");
        let mut rng = Rng::new(11);
        let net = NetworkGraph::build(24, 32, 0.125, &mut rng).unwrap();
        net.save(&path).unwrap();
        let restored = NetworkGraph::load(&path).unwrap();

        let image = probe_image(24, 32);
        let (c_a, p_a) = net.infer(&image).unwrap();
        let (c_b, p_b) = restored.infer(&image).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&c_a), bits(&c_b));
        assert_eq!(bits(&p_a), bits(&p_b));
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.pd3n");
        let b = dir.path().join("b.pd3n");
        let net = NetworkGraph::build(24, 32, 0.125, &mut Rng::new(3)).unwrap();
        net.save(&a).unwrap();
        net.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn corrupt_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pd3n");
        let net = NetworkGraph::build(24, 32, 0.125, &mut Rng::new(4)).unwrap();
        net.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(NetworkGraph::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ver.pd3n");
        let net = NetworkGraph::build(24, 32, 0.125, &mut Rng::new(5)).unwrap();
        net.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(NetworkGraph::load(&path), Err(Error::Version { .. })));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.pd3n");
        let net = NetworkGraph::build(24, 32, 0.125, &mut Rng::new(6)).unwrap();
        net.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut f = File::create(&path).unwrap();
        f.write_all(&bytes[..bytes.len() / 2]).unwrap();
        drop(f);
        assert!(matches!(NetworkGraph::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn scale_mismatch_refuses_restore() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quarter.pd3n");
        let quarter = NetworkGraph::build(24, 32, 0.125, &mut Rng::new(7)).unwrap();
        quarter.save(&path).unwrap();
        let ckpt = Checkpoint::read(&path).unwrap();
        let mut full = NetworkGraph::build(24, 32, 0.25, &mut Rng::new(8)).unwrap();
        assert!(matches!(full.restore(&ckpt), Err(Error::Shape(_))));
    }
}
