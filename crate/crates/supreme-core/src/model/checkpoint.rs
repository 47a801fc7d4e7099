//! Checkpoint container: a JSON manifest (config plus parameter directory)
//! followed by one little-endian float32 blob.
//!
//! Layout: magic "SPCK" | version u8 = 1 | manifest_len u32 | manifest JSON
//! (`{config, params: [{name, shape, offset}]}`, offsets in elements) | blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::net::SupremeModel;
use super::{ModelError, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

fn checkpoint_err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl SupremeModel<f32> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut offset = 0usize;
        let entries: Vec<ParamEntry> = self
            .params()
            .iter()
            .map(|p| {
                let entry = ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    offset,
                };
                offset += p.value.len();
                entry
            })
            .collect();
        let manifest = Manifest { config: self.config().clone(), params: entries };
        let manifest_bytes = serde_json::to_vec(&manifest).expect("manifest serializes");

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        let len = u32::try_from(manifest_bytes.len())
            .map_err(|_| checkpoint_err("manifest too large"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&manifest_bytes)?;
        for p in self.params() {
            for &v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| checkpoint_err("file ends inside magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(checkpoint_err(format!("bad magic {magic:?}")));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version).map_err(|_| checkpoint_err("file ends inside version"))?;
        if version[0] != CHECKPOINT_VERSION {
            return Err(checkpoint_err(format!("unsupported version {}", version[0])));
        }
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes).map_err(|_| checkpoint_err("file ends inside manifest length"))?;
        let mut manifest_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
        r.read_exact(&mut manifest_bytes).map_err(|_| checkpoint_err("file ends inside manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| checkpoint_err(format!("manifest JSON: {e}")))?;

        let mut model = SupremeModel::<f32>::zeroed(manifest.config.clone())?;
        if manifest.params.len() != model.params().len() {
            return Err(checkpoint_err(format!(
                "manifest lists {} parameters, model defines {}",
                manifest.params.len(),
                model.params().len()
            )));
        }
        let total: usize = model.params().iter().map(|p| p.value.len()).sum();
        let mut blob_bytes = vec![0u8; total * 4];
        r.read_exact(&mut blob_bytes)
            .map_err(|_| checkpoint_err(format!("blob shorter than {total} floats")))?;
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(checkpoint_err("trailing bytes after blob"));
        }
        let blob: Vec<f32> = blob_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        for (i, entry) in manifest.params.iter().enumerate() {
            let param = &model.params()[i];
            if entry.name != param.name {
                return Err(checkpoint_err(format!(
                    "parameter {i} named {:?} in manifest but {:?} in model",
                    entry.name, param.name
                )));
            }
            if entry.shape != param.value.shape() {
                return Err(checkpoint_err(format!(
                    "parameter {:?} has shape {:?} in manifest but {:?} in model",
                    entry.name,
                    entry.shape,
                    param.value.shape()
                )));
            }
            let n = param.value.len();
            let end = entry
                .offset
                .checked_add(n)
                .filter(|&e| e <= blob.len())
                .ok_or_else(|| {
                    checkpoint_err(format!("parameter {:?} overruns the blob", entry.name))
                })?;
            let shape = param.value.shape().to_vec();
            model.params_mut()[i].value =
                Tensor::from_vec(&shape, blob[entry.offset..end].to_vec());
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::super::net::Mode;
    use super::*;
    use crate::nn::{Element, Tape};
    use crate::rng::RngFactory;

    fn tiny() -> ModelConfig {
        ModelConfig {
            leads: 2,
            samples: 40,
            patch_len: 10,
            vit_width: 8,
            vit_depth: 2,
            vit_heads: 2,
            hidden: 16,
            latent: 8,
            cfn_depth: 2,
            cfn_heads: 2,
            dropout: 0.1,
            droppath: 0.1,
            embed_dim: 12,
        }
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = RngFactory::new(seed).stream("ckpt-test");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| <f32 as Element>::standard_normal(&mut rng))
            .collect();
        Tensor::from_vec(shape, data)
    }

    fn logits(model: &SupremeModel<f32>, x: &Tensor<f32>, e: &Tensor<f32>) -> Vec<f32> {
        let mut tape = Tape::new();
        let binding = model.bind(&mut tape);
        let out = model.forward(&mut tape, &binding, x, e, &mut Mode::Eval).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn round_trip_preserves_forward_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.spck");
        let model = SupremeModel::<f32>::new(tiny(), 41).unwrap();
        model.save_checkpoint(&path).unwrap();
        let loaded = SupremeModel::<f32>::load_checkpoint(&path).unwrap();

        let x = random_tensor(&[2, 2, 40], 1);
        let e = random_tensor(&[4, 12], 2);
        assert_eq!(logits(&model, &x, &e), logits(&loaded, &x, &e));
        assert_eq!(loaded.config(), model.config());
    }

    #[test]
    fn manifest_lists_every_parameter_exactly_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.spck");
        let model = SupremeModel::<f32>::new(tiny(), 43).unwrap();
        model.save_checkpoint(&path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
        let manifest: Manifest = serde_json::from_slice(&bytes[9..9 + len]).unwrap();
        assert_eq!(manifest.params.len(), model.params().len());
        let mut names: Vec<&str> = manifest.params.iter().map(|p| p.name.as_str()).collect();
        let before = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), before, "duplicate names in manifest");
        // Offsets tile the blob contiguously.
        let mut expected = 0;
        for p in &manifest.params {
            assert_eq!(p.offset, expected);
            expected += p.shape.iter().product::<usize>();
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.spck");
        let model = SupremeModel::<f32>::new(tiny(), 47).unwrap();
        model.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            SupremeModel::<f32>::load_checkpoint(&path),
            Err(ModelError::Checkpoint(_))
        ));

        // Truncated blob.
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            SupremeModel::<f32>::load_checkpoint(&path),
            Err(ModelError::Checkpoint(_))
        ));

        // Mismatched config: tamper the manifest's lead count. The JSON
        // length shifts, so rebuild the container around the edited manifest.
        let len = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[9..9 + len]).unwrap();
        manifest.config.leads = 3;
        let edited = serde_json::to_vec(&manifest).unwrap();
        let mut rebuilt = Vec::new();
        rebuilt.extend_from_slice(&bytes[..5]);
        rebuilt.extend_from_slice(&(edited.len() as u32).to_le_bytes());
        rebuilt.extend_from_slice(&edited);
        rebuilt.extend_from_slice(&bytes[9 + len..]);
        std::fs::write(&path, &rebuilt).unwrap();
        let err = SupremeModel::<f32>::load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, ModelError::Checkpoint(_)), "got {err:?}");
    }
}
