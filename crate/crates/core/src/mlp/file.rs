//! Model file layout, all integers little-endian:
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 8            | magic `COWQKDNN`                                    |
//! | 4            | format version (u32)                                |
//! | 4            | header length `h` (u32)                             |
//! | h            | UTF-8 JSON header: topology, scaler, history, sizes |
//! | 8·n          | weights and biases (f64), in layout order           |
//! | 8·n · 2      | Adam first, then second moments (f64)              |
//! | 4            | CRC-32 of every preceding byte                      |

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, EpochStats, MlpModel, MlpTopology};
use crate::data::MinMaxScaler;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"COWQKDNN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    topology: MlpTopology,
    scaler: MinMaxScaler,
    history: Vec<EpochStats>,
    n_params: usize,
    adam_step: u64,
}

impl MlpModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            topology: self.topology.clone(),
            scaler: self.scaler.clone(),
            history: self.history.clone(),
            n_params: self.params.len(),
            adam_step: self.adam.step,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 24 * self.params.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.iter().chain(&self.adam.m).chain(&self.adam.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(m.to_string());
        if bytes.len() < 20 {
            return Err(corrupt("file too short"));
        }
        if bytes[..8] != MAGIC {
            return Err(corrupt("bad magic; not a model file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch (truncated or damaged)"));
        }
        let h_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let h_end = 16usize.checked_add(h_len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("header overruns file"))?;
        let header: Header = serde_json::from_slice(&body[16..h_end]).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        let floats = &body[h_end..];
        let n = header.n_params;
        if floats.len() != 24 * n {
            return Err(corrupt("weight section has the wrong length"));
        }
        let mut values = floats.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let params: Vec<f64> = values.by_ref().take(n).collect();
        let m: Vec<f64> = values.by_ref().take(n).collect();
        let v: Vec<f64> = values.collect();
        MlpModel::from_parts(
            header.topology,
            params,
            AdamState {
                m,
                v,
                step: header.adam_step,
            },
            header.scaler,
            header.history,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::tests::toy_topology;

    fn model() -> MlpModel {
        let mut m = MlpModel::init(toy_topology(), 21).unwrap();
        m.adam.m.iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 1e-3);
        m.adam.step = 17;
        m.scaler.columns[0].max = 0.5;
        m
    }

    #[test]
    fn round_trip_is_lossless() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        m.save(&p).unwrap();
        let back = MlpModel::load(&p).unwrap();
        assert_eq!(back, m);
        let row = [0.1, 0.9, 0.4, 0.2, 0.3, 0.7];
        assert_eq!(back.forward(&row).unwrap().to_bits(), m.forward(&row).unwrap().to_bits());
    }

    #[test]
    fn damage_is_detected() {
        let bytes = model().to_bytes().unwrap();
        for cut in [0, 10, 19, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(MlpModel::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(MlpModel::from_bytes(&flipped), Err(Error::Corrupt(_))));
        let mut future = bytes;
        future[8] = 9;
        assert!(matches!(MlpModel::from_bytes(&future), Err(Error::Version(9))));
    }
}
