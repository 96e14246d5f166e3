//! Model checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//!   magic    8 bytes  "ROICKPT\0"
//!   version  u32      (1)
//!   cfg_len  u32      canonical config text length
//!   cfg      bytes    ModelConfig canonical key-value text
//!   meta_len u32      metadata text length (key=value lines, may be empty)
//!   meta     bytes
//!   n_params u32
//!   repeated per parameter, in declaration order:
//!     name_len u32, name bytes, numel u64, numel × f32
//!   crc32    u32      IEEE CRC-32 of every preceding byte
//! ```

use super::{CodecModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"ROICKPT\0";
const VERSION: u32 = 1;

pub type Metadata = BTreeMap<String, String>;

fn meta_to_text(meta: &Metadata) -> String {
    let mut s = String::new();
    for (k, v) in meta {
        s.push_str(k);
        s.push('=');
        s.push_str(v);
        s.push('\n');
    }
    s
}

fn meta_from_text(text: &str) -> Result<Metadata> {
    let mut meta = Metadata::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Checkpoint(format!(
            "bad metadata line {}: '{line}'",
            i + 1
        )))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(meta)
}

pub fn save<T: Scalar>(
    model: &CodecModel<T>,
    meta: &Metadata,
    path: &Path,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config.canonical_text();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    let meta_text = meta_to_text(meta);
    buf.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_text.as_bytes());
    let params = model.named_params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.tensor.numel() as u64).to_le_bytes());
        for v in p.tensor.to_vec() {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load<T: Scalar>(path: &Path) -> Result<(CodecModel<T>, Metadata)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < MAGIC.len() + 4 + 4 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored_crc = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(Error::Checkpoint(format!(
            "crc mismatch: stored {stored_crc:08x}, computed {actual_crc:08x}"
        )));
    }
    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let cfg_len = cur.u32()? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len)?)
        .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
    let config = ModelConfig::from_canonical_text(cfg_text)?;
    let meta_len = cur.u32()? as usize;
    let meta_text = std::str::from_utf8(cur.take(meta_len)?)
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let meta = meta_from_text(meta_text)?;

    let model = CodecModel::<T>::new(config)?;
    let n_params = cur.u32()? as usize;
    if n_params != model.named_params().len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: file has {n_params}, model expects {}",
            model.named_params().len()
        )));
    }
    for p in model.named_params() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        if name != p.name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: file has '{name}', model expects '{}'",
                p.name
            )));
        }
        let numel = cur.u64()? as usize;
        if numel != p.tensor.numel() {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' has {numel} values, model expects {}",
                p.tensor.numel()
            )));
        }
        let raw = cur.take(numel * 4)?;
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        p.tensor.set_data(&values);
    }
    if cur.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes in checkpoint".into()));
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn save_load_roundtrip_preserves_hash() {
        let dir = std::env::temp_dir().join(format!("roicodec-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.ckpt");

        let model = CodecModel::<f32>::new(ModelConfig::toy(42)).unwrap();
        let mut meta = Metadata::new();
        meta.insert("train_omega".into(), "5".into());
        save(&model, &meta, &path).unwrap();

        let (loaded, meta2) = load::<f32>(&path).unwrap();
        assert_eq!(meta2.get("train_omega").map(String::as_str), Some("5"));
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.model_hash(), model.model_hash());
        for (a, b) in model.named_params().iter().zip(loaded.named_params()) {
            assert_eq!(a.tensor.to_vec(), b.tensor.to_vec(), "param {}", a.name);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_checkpoint_detected() {
        let dir = std::env::temp_dir().join(format!("roicodec-ckpt2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.ckpt");
        let model = CodecModel::<f32>::new(ModelConfig::toy(0)).unwrap();
        save(&model, &Metadata::new(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load::<f32>(&path), Err(Error::Checkpoint(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
