//! Phantom volumes: a smooth background with two ellipsoidal "hippocampi"
//! whose size and brightness shrink with disease severity.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, Diagnosis, RoiCenters, SubjectRecord, Volume};
use crate::model::Modality;
use crate::seed::{derive, sample_rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects_per_class: BTreeMap<Diagnosis, usize>,
    /// Volume extent `(nx, ny, nz)`.
    pub shape: [usize; 3],
    pub centers: RoiCenters,
    /// Scales the class effect on radius and intensity; 0 makes classes identical.
    pub separation: f64,
    /// Standard deviation of voxel noise.
    pub noise: f64,
    /// Ellipsoid semi-axes `(i, j, k)` for a healthy subject, in voxels.
    pub radii: [f64; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects_per_class: Diagnosis::ALL.iter().map(|&d| (d, 12)).collect(),
            shape: [121, 145, 121],
            centers: RoiCenters {
                left_hippocampus: [42, 72, 50],
                right_hippocampus: [78, 72, 50],
            },
            separation: 1.0,
            noise: 0.05,
            radii: [5.0, 9.0, 6.0],
            seed: 0,
        }
    }
}

fn severity(d: Diagnosis) -> f64 {
    match d {
        Diagnosis::NC => 0.0,
        Diagnosis::MCI => 0.5,
        Diagnosis::AD => 1.0,
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.separation >= 0.0) {
            return Err(DataError::Invalid(format!("separation {} must be >= 0", self.separation)));
        }
        if !(self.noise >= 0.0) {
            return Err(DataError::Invalid(format!("noise {} must be >= 0", self.noise)));
        }
        if self.shape.iter().any(|&e| e == 0) {
            return Err(DataError::Invalid("volume shape has a zero extent".into()));
        }
        Ok(())
    }

    /// `(subject_id, diagnosis)` for every subject in generation order.
    pub fn roster(&self) -> Vec<(String, Diagnosis)> {
        let mut out = Vec::new();
        for (&d, &n) in &self.subjects_per_class {
            out.extend((0..n).map(|i| (format!("{d}_{i:03}"), d)));
        }
        out
    }

    /// Generates subject number `index` of [`SynthConfig::roster`].
    pub fn subject(&self, index: usize) -> Result<SubjectRecord, DataError> {
        let roster = self.roster();
        let (id, diagnosis) = roster
            .get(index)
            .cloned()
            .ok_or_else(|| DataError::Invalid(format!("subject index {index} beyond roster of {}", roster.len())))?;
        let mut rng = sample_rng(derive(self.seed, "synth"), index as u64);
        let mut normal = move || -> f64 { rng.sample(StandardNormal) };

        let c = severity(diagnosis) * self.separation;
        let shrink = (1.0 - 0.25 * c).max(0.3);
        let amplitude = (1.0 - 0.35 * c).max(0.1);
        let jitter = |n: f64| 1.0 + 0.03 * n;
        let blobs: Vec<([f64; 3], [f64; 3], f64)> = [self.centers.left_hippocampus, self.centers.right_hippocampus]
            .iter()
            .map(|center| {
                let radii = std::array::from_fn(|a| self.radii[a] * shrink * jitter(normal()));
                let center = std::array::from_fn(|a| center[a] as f64 + 0.5 * normal());
                (center, radii, amplitude * jitter(normal()))
            })
            .collect();
        let offset = 0.02 * normal();

        let [nx, ny, nz] = self.shape;
        let mut tissue = vec![0f64; nx * ny * nz];
        for (idx, t) in tissue.iter_mut().enumerate() {
            let (i, j, k) = ((idx % nx) as f64, ((idx / nx) % ny) as f64, (idx / (nx * ny)) as f64);
            let mut v = 0.3 + offset + 0.05 * (i / 7.0).sin() * (j / 9.0).cos() + 0.03 * (k / 5.0).sin();
            for (center, radii, amp) in &blobs {
                let p = [i, j, k];
                let d = (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum::<f64>().sqrt();
                v += amp / (1.0 + (4.0 * (d - 1.0)).exp());
            }
            *t = v;
        }
        let smri: Vec<f32> = tissue.iter().map(|&t| (t + self.noise * normal()) as f32).collect();
        let md: Vec<f32> = tissue
            .iter()
            .map(|&t| (0.7 + 0.9 * (1.0 - t).powi(2) + self.noise * normal()) as f32)
            .collect();
        let mut volumes = BTreeMap::new();
        for (m, data) in [(Modality::Smri, smri), (Modality::MdDti, md)] {
            let grid = Tensor::from_vec(&[nz, ny, nx], data)?;
            volumes.insert(m, Volume::new(grid, id.clone(), m)?);
        }
        Ok(SubjectRecord {
            subject_id: id,
            diagnosis,
            volumes,
        })
    }
}

/// Every subject of the roster, generated in parallel; identical to serial
/// generation because each subject has its own seed stream.
pub fn synth_dataset(config: &SynthConfig) -> Result<Vec<SubjectRecord>, DataError> {
    config.validate()?;
    (0..config.roster().len())
        .into_par_iter()
        .map(|i| config.subject(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{extract_roi, RoiSpec};
    use crate::model::RoiName;

    fn small(separation: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            subjects_per_class: [(Diagnosis::AD, 6), (Diagnosis::NC, 6)].into_iter().collect(),
            shape: [40, 24, 20],
            centers: RoiCenters {
                left_hippocampus: [12, 12, 10],
                right_hippocampus: [27, 12, 10],
            },
            separation,
            radii: [3.0, 5.0, 3.5],
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(synth_dataset(&small(1.0, 4)).unwrap(), synth_dataset(&small(1.0, 4)).unwrap());
        assert_ne!(synth_dataset(&small(1.0, 4)).unwrap(), synth_dataset(&small(1.0, 5)).unwrap());
    }

    #[test]
    fn modalities_have_distinct_contrast() {
        let s = small(1.0, 1).subject(0).unwrap();
        let a = s.volume(Modality::Smri).unwrap().grid.data();
        let b = s.volume(Modality::MdDti).unwrap().grid.data();
        let corr = {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().map(|&x| x as f64).sum::<f64>() / n, b.iter().map(|&x| x as f64).sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb)).sum();
            let va: f64 = a.iter().map(|&x| (x as f64 - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|&y| (y as f64 - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        assert!(corr < -0.5, "{corr}");
    }

    #[test]
    fn large_separation_is_threshold_separable() {
        let cfg = small(2.0, 3);
        let spec = RoiSpec {
            name: RoiName::LeftHippocampus,
            center: cfg.centers.left_hippocampus,
            size: 8,
        };
        let mean = |s: &SubjectRecord| {
            let r = extract_roi(s.volume(Modality::Smri).unwrap(), &spec, [0; 3]).unwrap();
            r.sum() as f64 / r.len() as f64
        };
        let data = synth_dataset(&cfg).unwrap();
        let ad: Vec<f64> = data.iter().filter(|s| s.diagnosis == Diagnosis::AD).map(mean).collect();
        let nc: Vec<f64> = data.iter().filter(|s| s.diagnosis == Diagnosis::NC).map(mean).collect();
        let ad_max = ad.iter().cloned().fold(f64::MIN, f64::max);
        let nc_min = nc.iter().cloned().fold(f64::MAX, f64::min);
        assert!(ad_max < nc_min, "{ad:?} vs {nc:?}");
    }

    #[test]
    fn negative_separation_rejected() {
        assert!(synth_dataset(&small(-1.0, 0)).is_err());
    }
}
