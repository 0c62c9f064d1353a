//! Binary dataset container.
//!
//! ```text
//! "MLMCDS01"                      8 bytes
//! version u32 | m u32 | N u64 | R_1..R_m u32 | d u32
//! for each level (coarsest first):
//!     inputs  N × R^d f64   (sample-major, row-major)
//!     outputs N × R^d f64
//! crc32 u32                        over every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Provenance goes to a JSON
//! sidecar next to the container (see [`metadata_path`]).

use std::fs;
use std::path::{Path, PathBuf};

use super::{MultiResDataset, Provenance};
use crate::multires::{GridField, ResolutionLevel};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"MLMCDS01";
pub const DATASET_VERSION: u32 = 1;

/// Sidecar location: `<path>.meta.json`.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn save_dataset(ds: &MultiResDataset, path: &Path) -> Result<()> {
    let n = ds.n_samples();
    let payload: usize = ds.hierarchy.iter().map(|l| 2 * n * l.len() * 8).sum();
    let mut buf = Vec::with_capacity(32 + 4 * ds.n_levels() + payload);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.n_levels() as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for level in &ds.hierarchy {
        buf.extend_from_slice(&(level.points_per_side as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    for (inputs, outputs) in ds.inputs.iter().zip(&ds.outputs) {
        for field in inputs.iter().chain(outputs) {
            for v in field.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf)?;
    fs::write(metadata_path(path), serde_json::to_vec_pretty(&ds.provenance)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_dataset(path: &Path) -> Result<MultiResDataset> {
    let bytes = fs::read(path)?;
    if bytes.len() < DATASET_MAGIC.len() || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format(format!("{} is not a dataset file", path.display())));
    }
    if bytes.len() < 12 {
        return Err(Error::Checksum { path: path.to_owned() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(Error::Checksum { path: path.to_owned() });
    }

    let mut rd = Reader { bytes: body, pos: 8 };
    let version = rd.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Version { found: version, expected: DATASET_VERSION });
    }
    let m = rd.u32()? as usize;
    let n = rd.u64()? as usize;
    let resolutions = (0..m).map(|_| rd.u32().map(|r| r as usize)).collect::<Result<Vec<_>>>()?;
    let dim = rd.u32()? as usize;
    if m == 0 || !(1..=2).contains(&dim) {
        return Err(Error::Format(format!("bad header: m = {m}, d = {dim}")));
    }
    let hierarchy: Vec<ResolutionLevel> = resolutions
        .iter()
        .enumerate()
        .map(|(i, &r)| ResolutionLevel { index: i + 1, points_per_side: r, dim })
        .collect();
    let expected = crate::multires::build_hierarchy_nd(resolutions[m - 1], m, dim)?;
    if expected != hierarchy {
        return Err(Error::Format(format!("resolutions {resolutions:?} are not nested")));
    }

    let mut inputs = Vec::with_capacity(m);
    let mut outputs = Vec::with_capacity(m);
    for level in &hierarchy {
        let mut read_block = || -> Result<Vec<GridField>> {
            (0..n)
                .map(|_| GridField::new(*level, rd.f64s(level.len())?))
                .collect()
        };
        inputs.push(read_block()?);
        outputs.push(read_block()?);
    }
    if rd.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes", body.len() - rd.pos)));
    }

    let provenance: Provenance = serde_json::from_slice(&fs::read(metadata_path(path))?)?;
    Ok(MultiResDataset { hierarchy, inputs, outputs, provenance })
}
