//! Binary checkpoint format.
//!
//! Layout: 8-byte magic `BGPTCKPT`, u32 format version, a length-prefixed
//! TOML rendering of the model config, then a tensor table. Each tensor is a
//! length-prefixed name, u32 rows, u32 cols, and row-major f32
//! little-endian data. Tensors are always stored as f32 whatever the
//! in-memory scalar type.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::{ModelConfig, ModelError, TransformerParams};
use crate::Scalar;

const MAGIC: &[u8; 8] = b"BGPTCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint<S: Scalar>(
    params: &TransformerParams<S>,
    config: &ModelConfig,
    path: &Path,
) -> Result<(), ModelError> {
    config.validate()?;
    let as_f32: TransformerParams<f32> = params.convert();
    let tensors = as_f32.named_tensors();

    let cfg_text = toml::to_string(config)
        .map_err(|e| ModelError::CheckpointFormat(format!("config serialization: {e}")))?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg_text.as_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let (rows, cols) = tensor.dim();
        buf.extend_from_slice(&(rows as u32).to_le_bytes());
        buf.extend_from_slice(&(cols as u32).to_le_bytes());
        for &x in tensor.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    // write-then-rename so a crash cannot leave a truncated checkpoint
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::CheckpointFormat(format!(
                "truncated at byte {} (wanted {n} more of {})",
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_checkpoint<S: Scalar>(
    path: &Path,
) -> Result<(ModelConfig, TransformerParams<S>), ModelError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::CheckpointFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::CheckpointFormat(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|e| ModelError::CheckpointFormat(format!("config not utf-8: {e}")))?;
    let config: ModelConfig = toml::from_str(cfg_text)
        .map_err(|e| ModelError::CheckpointFormat(format!("config parse: {e}")))?;
    config.validate()?;

    let n_tensors = r.u32()? as usize;
    let mut table: BTreeMap<String, Array2<f32>> = BTreeMap::new();
    for _ in 0..n_tensors {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| ModelError::CheckpointFormat(format!("tensor name not utf-8: {e}")))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let data = r.take(rows * cols * 4)?;
        let values: Vec<f32> = data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let arr = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| ModelError::CheckpointFormat(format!("tensor {name}: {e}")))?;
        if table.insert(name.clone(), arr).is_some() {
            return Err(ModelError::CheckpointFormat(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(ModelError::CheckpointFormat(format!(
            "{} trailing bytes after tensor table",
            buf.len() - r.pos
        )));
    }

    let mut params = TransformerParams::<f32>::zeros(&config);
    for (name, tensor) in params.named_tensors_mut() {
        let loaded = table.remove(&name).ok_or_else(|| {
            ModelError::CheckpointFormat(format!("missing tensor {name}"))
        })?;
        if loaded.dim() != tensor.dim() {
            return Err(ModelError::CheckpointFormat(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                loaded.dim(),
                tensor.dim()
            )));
        }
        *tensor = loaded;
    }
    if let Some(extra) = table.keys().next() {
        return Err(ModelError::CheckpointFormat(format!("unexpected tensor {extra}")));
    }
    Ok((config, params.convert()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 8,
            d_ff: 16,
            n_heads: 2,
            head_dim: 4,
            vocab_size: 11,
            max_seq_len: 6,
            dropout: 0.05,
            attention_dropout: 0.1,
            layer_norm_eps: 1e-5,
        }
    }

    #[test]
    fn f32_round_trip_is_bit_identical() {
        let cfg = tiny();
        let p = TransformerParams::<f32>::init(&cfg, 21);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &cfg, &path).unwrap();
        let (cfg2, p2) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(cfg2, cfg);
        for ((n1, t1), (_, t2)) in p.named_tensors().iter().zip(p2.named_tensors().iter()) {
            assert_eq!(t1, t2, "{n1} not preserved");
        }
    }

    #[test]
    fn f64_params_load_back_as_their_f32_projection() {
        let cfg = tiny();
        let p = TransformerParams::<f64>::init(&cfg, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &cfg, &path).unwrap();
        let (_, p2) = load_checkpoint::<f64>(&path).unwrap();
        let want: TransformerParams<f64> = p.convert::<f32>().convert();
        for ((n1, t1), (_, t2)) in want.named_tensors().iter().zip(p2.named_tensors().iter()) {
            assert_eq!(t1, t2, "{n1} not preserved through f32 storage");
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let cfg = tiny();
        let p = TransformerParams::<f32>::init(&cfg, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &cfg, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let p1 = dir.path().join("bad_magic.ckpt");
        std::fs::write(&p1, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p1), Err(ModelError::CheckpointFormat(_))));

        let mut bad = bytes.clone();
        bad[8] = 99;
        let p2 = dir.path().join("bad_version.ckpt");
        std::fs::write(&p2, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p2), Err(ModelError::CheckpointFormat(_))));

        let p3 = dir.path().join("truncated.ckpt");
        std::fs::write(&p3, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p3), Err(ModelError::CheckpointFormat(_))));

        let mut long = bytes.clone();
        long.extend_from_slice(&[0u8; 3]);
        let p4 = dir.path().join("trailing.ckpt");
        std::fs::write(&p4, &long).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p4), Err(ModelError::CheckpointFormat(_))));
    }

    #[test]
    fn no_temp_file_remains_after_save() {
        let cfg = tiny();
        let p = TransformerParams::<f32>::init(&cfg, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &cfg, &path).unwrap();
        let entries: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(entries, vec!["m.ckpt".to_string()]);
    }
}
