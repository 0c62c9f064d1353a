//! Parameter checkpoints.
//!
//! ```text
//! "MLMCCKPT"                           8 bytes
//! config_len u32 | config JSON         model config echo
//! step_count u64
//! has_moments u8
//! P u64 | θ (P f64)
//! [m (P f64) | v (P f64)]              when has_moments = 1
//! crc32 u32                            over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MLMCCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step_count: u64,
    /// Adam first and second moments, if the run used Adam.
    pub moments: Option<(Vec<f64>, Vec<f64>)>,
}

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let p = ckpt.params.len();
    let config = serde_json::to_vec(&ckpt.params.config)?;
    let mut buf = Vec::with_capacity(40 + config.len() + 24 * p);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&ckpt.step_count.to_le_bytes());
    buf.push(ckpt.moments.is_some() as u8);
    buf.extend_from_slice(&(p as u64).to_le_bytes());
    put_f64s(&mut buf, &ckpt.params.values);
    if let Some((m, v)) = &ckpt.moments {
        if m.len() != p || v.len() != p {
            return Err(Error::InvalidArgument("moment vectors do not match parameters".into()));
        }
        put_f64s(&mut buf, m);
        put_f64s(&mut buf, v);
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    if bytes.len() < 12 {
        return Err(Error::Checksum { path: path.to_owned() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checksum { path: path.to_owned() });
    }

    let mut pos = 8;
    let mut take = |len: usize| -> Result<&[u8]> {
        let end = pos + len;
        if end > body.len() {
            return Err(Error::Format("checkpoint ends early".into()));
        }
        let out = &body[pos..end];
        pos = end;
        Ok(out)
    };
    let config_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let config: ModelConfig = serde_json::from_slice(take(config_len)?)?;
    let step_count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let has_moments = take(1)?[0] == 1;
    let p = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut f64s = |count: usize| -> Result<Vec<f64>> {
        Ok(take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let values = f64s(p)?;
    let moments = if has_moments {
        Some((f64s(p)?, f64s(p)?))
    } else {
        None
    };
    Ok(Checkpoint {
        params: ModelParams::new(config, values)?,
        step_count,
        moments,
    })
}
