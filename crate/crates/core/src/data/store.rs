//! Sample store: `<name>.bin` holds the pipeline tensors back to back as
//! little-endian f32, `<name>.json` describes them.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::{DataError, Diagnosis, Side, Transform};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    pub transform: Transform,
    pub side: Side,
    /// Pipeline labels such as `sMRI_L`, one per stored tensor.
    pub pipelines: Vec<String>,
    pub shape: Vec<usize>,
}

pub fn write_sample(dir: &Path, name: &str, tensors: &[Tensor<f32>], meta: &SampleMeta) -> Result<(), DataError> {
    if tensors.len() != meta.pipelines.len() {
        return Err(DataError::Invalid(format!(
            "{} tensors for {} pipelines",
            tensors.len(),
            meta.pipelines.len()
        )));
    }
    let mut blob = Vec::new();
    for t in tensors {
        if t.dims() != meta.shape.as_slice() {
            return Err(DataError::ShapeMismatch(t.dims().to_vec(), meta.shape.clone()));
        }
        let start = blob.len();
        blob.resize(start + 4 * t.len(), 0);
        LittleEndian::write_f32_into(t.data(), &mut blob[start..]);
    }
    std::fs::write(dir.join(format!("{name}.bin")), blob)?;
    std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

pub fn read_sample(dir: &Path, name: &str) -> Result<(Vec<Tensor<f32>>, SampleMeta), DataError> {
    let meta: SampleMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{name}.json")))?)?;
    let blob = std::fs::read(dir.join(format!("{name}.bin")))?;
    let per: usize = meta.shape.iter().product();
    let expected = 4 * per * meta.pipelines.len();
    if blob.len() != expected {
        return Err(DataError::Invalid(format!(
            "sample {name}: blob has {} bytes, sidecar implies {expected}",
            blob.len()
        )));
    }
    let tensors = blob
        .chunks(4 * per.max(1))
        .take(meta.pipelines.len())
        .map(|chunk| {
            let mut v = vec![0f32; per];
            LittleEndian::read_f32_into(chunk, &mut v);
            Tensor::from_vec(&meta.shape, v).map_err(DataError::from)
        })
        .collect::<Result<_, _>>()?;
    Ok((tensors, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tensors = vec![
            Tensor::from_fn(&[1, 2, 2, 2], |i| i as f32 - 3.5).unwrap(),
            Tensor::from_fn(&[1, 2, 2, 2], |i| (i as f32).sqrt()).unwrap(),
        ];
        let meta = SampleMeta {
            subject_id: "AD_001".into(),
            diagnosis: Diagnosis::AD,
            transform: Transform {
                shift: [1, -2, 0],
                sigma: 0.7,
            },
            side: Side::Left,
            pipelines: vec!["sMRI_L".into(), "sMRI_R".into()],
            shape: vec![1, 2, 2, 2],
        };
        write_sample(dir.path(), "x", &tensors, &meta).unwrap();
        let (back, back_meta) = read_sample(dir.path(), "x").unwrap();
        assert_eq!(back, tensors);
        assert_eq!(back_meta, meta);
        std::fs::write(dir.path().join("x.bin"), [0u8; 5]).unwrap();
        assert!(read_sample(dir.path(), "x").is_err());
    }
}
