//! Model checkpoints: a text header with the architecture followed by the
//! binary tensor container.
//!
//! ```text
//! GTFMN-CHECKPOINT v1
//! depth = 4
//! ...
//! step = 1200
//! <blank line>
//! <tensor container>
//! ```

use std::fs;
use std::path::Path;

use gtfmn_tensor::{parse_tensors, write_tensors, Element};

use crate::config::GtfmnConfig;
use crate::error::{io_err, GtfmnError, Result};
use crate::kv::KeyValues;
use crate::model::GtfmnModel;

pub const CHECKPOINT_MAGIC: &str = "GTFMN-CHECKPOINT v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub config: GtfmnConfig,
    pub step: usize,
}

fn ckpt_err(path: &Path, message: impl ToString) -> GtfmnError {
    GtfmnError::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn checkpoint_bytes<T: Element>(model: &GtfmnModel<T>, step: usize) -> Result<Vec<u8>> {
    let mut kv = model.config().to_key_values();
    kv.set("step", step);
    let mut out = format!("{CHECKPOINT_MAGIC}\n{}\n", kv.to_text()).into_bytes();
    let entries: Vec<(&str, &_)> = model.params().iter().collect();
    write_tensors(&mut out, &entries)?;
    Ok(out)
}

/// Writes through a temporary file so an interrupted save never leaves a
/// truncated checkpoint behind.
pub fn save_checkpoint<T: Element>(path: &Path, model: &GtfmnModel<T>, step: usize) -> Result<()> {
    let bytes = checkpoint_bytes(model, step)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}

pub fn parse_checkpoint<T: Element>(path: &Path, bytes: &[u8]) -> Result<(GtfmnModel<T>, CheckpointMeta)> {
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| ckpt_err(path, "missing header terminator"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| ckpt_err(path, e))?;
    let (magic, body) = header.split_once('\n').unwrap_or((header, ""));
    if magic != CHECKPOINT_MAGIC {
        return Err(ckpt_err(path, format!("not a checkpoint (header {magic:?})")));
    }
    let kv = KeyValues::parse(body).map_err(|e| ckpt_err(path, e))?;
    let config = GtfmnConfig::from_key_values(&kv).map_err(|e| ckpt_err(path, e))?;
    let step = kv.get("step").map_err(|e| ckpt_err(path, e))?.unwrap_or(0);
    let tensors = parse_tensors(&bytes[header_end + 2..]).map_err(|e| ckpt_err(path, e))?;
    let mut model = GtfmnModel::new(config.clone(), 0)?;
    model
        .load_parameters(tensors.into_iter().map(|(n, t)| (n, t.into_tensor())).collect())
        .map_err(|e| ckpt_err(path, e))?;
    Ok((model, CheckpointMeta { config, step }))
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<(GtfmnModel<T>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    parse_checkpoint(path, &bytes)
}

/// Loads parameters into an existing model, rejecting any architecture
/// difference.
pub fn load_into<T: Element>(path: &Path, model: &mut GtfmnModel<T>) -> Result<CheckpointMeta> {
    let (loaded, meta) = load_checkpoint::<T>(path)?;
    if &meta.config != model.config() {
        return Err(ckpt_err(
            path,
            format!(
                "architecture mismatch: checkpoint has {:?}, model has {:?}",
                meta.config,
                model.config()
            ),
        ));
    }
    let entries = loaded
        .params()
        .iter()
        .map(|(n, t)| (n.to_owned(), t.clone()))
        .collect();
    model.load_parameters(entries)?;
    Ok(meta)
}
