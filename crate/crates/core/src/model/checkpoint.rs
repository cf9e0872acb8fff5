//! Binary checkpoint: magic, version, JSON network config, f32 parameters and
//! batch-norm running statistics, all little-endian. See `docs/checkpoint.md`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{FusionNetwork, ModelError, NetworkConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HPNETCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: Vec<f32>,
    pub running_stats: Vec<f32>,
}

impl Checkpoint {
    pub fn from_network(net: &FusionNetwork<f32>) -> Self {
        Checkpoint {
            config: net.config().clone(),
            params: net.params(),
            running_stats: net.running_stats(),
        }
    }

    pub fn into_network(self) -> Result<FusionNetwork<f32>, ModelError> {
        let mut net = FusionNetwork::build(&self.config, 0)?;
        net.set_params(&self.params)?;
        net.set_running_stats(&self.running_stats)?;
        Ok(net)
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, net: &FusionNetwork<f32>) -> Result<(), ModelError> {
    let config = serde_json::to_vec(net.config()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(config.len() as u32)?;
    w.write_all(&config)?;
    for block in [net.params(), net.running_stats()] {
        w.write_u64::<LittleEndian>(block.len() as u64)?;
        for v in block {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, what: &str, expected: usize) -> Result<Vec<f32>, ModelError> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    if n != expected {
        return Err(ModelError::Checkpoint(format!(
            "{what} count {n} does not match the stored config ({expected})"
        )));
    }
    let mut out = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let config: NetworkConfig = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let shape = FusionNetwork::<f32>::build(&config, 0)?;
    let params = read_f32s(&mut r, "parameter", shape.num_params())?;
    let running_stats = read_f32s(&mut r, "running-stat", shape.running_stats().len())?;
    Ok(Checkpoint {
        config,
        params,
        running_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputMode, Preset};

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetworkConfig::preset(Preset::C1, 28, InputMode::DtiLr);
        let mut net = FusionNetwork::<f32>::build(&cfg, 11).unwrap();
        let stats: Vec<f32> = (0..net.running_stats().len()).map(|i| i as f32 * 0.37).collect();
        net.set_running_stats(&stats).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let ck = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ck.config, cfg);
        let back = ck.into_network().unwrap();
        assert_eq!(
            back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            net.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.running_stats(), stats);
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let cfg = NetworkConfig::preset(Preset::C1, 28, InputMode::DtiLr);
        let net = FusionNetwork::<f32>::build(&cfg, 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(ModelError::Checkpoint(_))));
    }
}
