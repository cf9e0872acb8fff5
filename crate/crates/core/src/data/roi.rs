use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gaussian_blur3d, DataError, SubjectRecord, Transform, Volume};
use crate::model::{Modality, PipelineInput, RoiName};
use crate::tensor::Tensor;

/// Hippocampus centers in voxel coordinates `(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiCenters {
    pub left_hippocampus: [usize; 3],
    pub right_hippocampus: [usize; 3],
}

impl RoiCenters {
    pub fn spec(&self, roi: RoiName, size: usize) -> Result<RoiSpec, DataError> {
        let center = match roi {
            RoiName::LeftHippocampus => self.left_hippocampus,
            RoiName::RightHippocampus => self.right_hippocampus,
            RoiName::MergedLr => {
                return Err(DataError::Invalid(
                    "merged_LR is a pipeline input, not an extraction window".into(),
                ))
            }
        };
        Ok(RoiSpec {
            name: roi,
            center,
            size,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub name: RoiName,
    /// Voxel coordinates `(i, j, k)`.
    pub center: [usize; 3],
    pub size: usize,
}

impl RoiSpec {
    /// Window origin `(i, j, k)` = center - floor(size / 2) + shift.
    pub fn origin(&self, shift: [i32; 3]) -> [i64; 3] {
        let half = (self.size / 2) as i64;
        std::array::from_fn(|a| self.center[a] as i64 - half + shift[a] as i64)
    }
}

/// Which hippocampus a merged-pipeline sample comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

fn window_origin(
    subject: &str,
    roi: RoiName,
    origin: [i64; 3],
    size: usize,
    extent: [usize; 3],
) -> Result<[usize; 3], DataError> {
    let fits = (0..3).all(|a| origin[a] >= 0 && origin[a] as usize + size <= extent[a]);
    if !fits {
        return Err(DataError::RoiOutOfBounds {
            subject: subject.to_string(),
            roi: format!("{roi:?}"),
            origin,
            size,
            shape: extent,
        });
    }
    Ok([origin[0] as usize, origin[1] as usize, origin[2] as usize])
}

fn crop_cube(grid: &Tensor<f32>, origin_ijk: [usize; 3], size: usize) -> Result<Tensor<f32>, DataError> {
    let [i, j, k] = origin_ijk;
    Ok(grid.crop(&[k, j, i], &[size, size, size])?)
}

/// Crops an `s³` window, moved by `shift` voxels, out of the full volume.
/// Returns `[1, s, s, s]`.
pub fn extract_roi(volume: &Volume, spec: &RoiSpec, shift: [i32; 3]) -> Result<Tensor<f32>, DataError> {
    let origin = window_origin(
        &volume.subject_id,
        spec.name,
        spec.origin(shift),
        spec.size,
        volume.extent_ijk(),
    )?;
    let s = spec.size;
    Ok(crop_cube(&volume.grid, origin, s)?.reshape(&[1, s, s, s])?)
}

/// Left ROI unchanged and right ROI flipped along the sagittal axis: two
/// samples for one shared pipeline.
pub fn merge_lr(left: &Tensor<f32>, right: &Tensor<f32>) -> Result<[Tensor<f32>; 2], DataError> {
    if left.dims() != right.dims() {
        return Err(DataError::ShapeMismatch(left.dims().to_vec(), right.dims().to_vec()));
    }
    let sagittal = right.rank() - 1;
    Ok([left.clone(), right.flip_axis(sagittal)?])
}

/// Inverse of [`merge_lr`].
pub fn split_merged(merged: &[Tensor<f32>; 2]) -> Result<(Tensor<f32>, Tensor<f32>), DataError> {
    let sagittal = merged[1].rank() - 1;
    Ok((merged[0].clone(), merged[1].flip_axis(sagittal)?))
}

/// Per-subject ROI neighborhoods large enough for every shifted window, so
/// full volumes need not stay resident. Extraction from the bank is
/// bit-identical to extraction from the full volume.
#[derive(Debug, Clone)]
pub struct RoiBank {
    centers: RoiCenters,
    roi_size: usize,
    max_shift: usize,
    modalities: Vec<Modality>,
    regions: BTreeMap<String, BTreeMap<(Modality, RoiName), Tensor<f32>>>,
}

impl RoiBank {
    pub fn new(centers: RoiCenters, roi_size: usize, max_shift: usize, modalities: &[Modality]) -> Self {
        RoiBank {
            centers,
            roi_size,
            max_shift,
            modalities: modalities.to_vec(),
            regions: BTreeMap::new(),
        }
    }

    fn regions_of(&self, subject: &SubjectRecord) -> Result<BTreeMap<(Modality, RoiName), Tensor<f32>>, DataError> {
        let span = self.roi_size + 2 * self.max_shift;
        let mut regions = BTreeMap::new();
        for &m in &self.modalities {
            let volume = subject.volume(m)?;
            for roi in [RoiName::LeftHippocampus, RoiName::RightHippocampus] {
                let spec = self.centers.spec(roi, self.roi_size)?;
                let shift = [-(self.max_shift as i32); 3];
                let origin = window_origin(&subject.subject_id, roi, spec.origin(shift), span, volume.extent_ijk())?;
                regions.insert((m, roi), crop_cube(&volume.grid, origin, span)?);
            }
        }
        Ok(regions)
    }

    /// Keeps the neighborhoods of one subject; the full volumes can be dropped afterwards.
    pub fn insert(&mut self, subject: &SubjectRecord) -> Result<(), DataError> {
        let regions = self.regions_of(subject)?;
        self.regions.insert(subject.subject_id.clone(), regions);
        Ok(())
    }

    pub fn build(
        subjects: &[SubjectRecord],
        centers: &RoiCenters,
        roi_size: usize,
        max_shift: usize,
        modalities: &[Modality],
    ) -> Result<Self, DataError> {
        let mut bank = RoiBank::new(*centers, roi_size, max_shift, modalities);
        let entries: Vec<_> = subjects
            .par_iter()
            .map(|s| Ok((s.subject_id.clone(), bank.regions_of(s)?)))
            .collect::<Result<_, DataError>>()?;
        bank.regions = entries.into_iter().collect();
        Ok(bank)
    }

    pub fn roi_size(&self) -> usize {
        self.roi_size
    }

    pub fn contains(&self, subject: &str) -> bool {
        self.regions.contains_key(subject)
    }

    pub fn has_modality(&self, subject: &str, modality: Modality) -> bool {
        self.regions
            .get(subject)
            .is_some_and(|r| r.contains_key(&(modality, RoiName::LeftHippocampus)))
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.regions.keys().map(String::as_str)
    }

    /// Shifted, blurred window for one modality and hemisphere, `[1, s, s, s]`.
    pub fn window(&self, subject: &str, modality: Modality, roi: RoiName, transform: &Transform) -> Result<Tensor<f32>, DataError> {
        let region = self
            .regions
            .get(subject)
            .ok_or_else(|| DataError::UnknownSubject(subject.to_string()))?
            .get(&(modality, roi))
            .ok_or_else(|| DataError::MissingModality {
                subject: subject.to_string(),
                modality,
            })?;
        let m = self.max_shift as i64;
        if transform.shift.iter().any(|&d| (d as i64).abs() > m) {
            return Err(DataError::Invalid(format!(
                "shift {:?} exceeds the bank margin of {m}",
                transform.shift
            )));
        }
        let origin: [usize; 3] = std::array::from_fn(|a| (m + transform.shift[a] as i64) as usize);
        let s = self.roi_size;
        let crop = crop_cube(region, origin, s)?;
        let blurred = gaussian_blur3d(&crop, transform.sigma)?;
        Ok(blurred.reshape(&[1, s, s, s])?)
    }

    /// One `[1, s, s, s]` tensor per pipeline. Merged pipelines take the left
    /// window, or the sagittally flipped right window when `side` is right.
    pub fn materialize(
        &self,
        subject: &str,
        transform: &Transform,
        side: Side,
        pipelines: &[PipelineInput],
    ) -> Result<Vec<Tensor<f32>>, DataError> {
        pipelines
            .iter()
            .map(|p| match (p.roi, side) {
                (RoiName::MergedLr, Side::Left) => self.window(subject, p.modality, RoiName::LeftHippocampus, transform),
                (RoiName::MergedLr, Side::Right) => {
                    let w = self.window(subject, p.modality, RoiName::RightHippocampus, transform)?;
                    Ok(w.flip_axis(3)?)
                }
                (roi, _) => self.window(subject, p.modality, roi, transform),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_volume(nx: usize, ny: usize, nz: usize) -> Volume {
        let grid = Tensor::from_fn(&[nz, ny, nx], |i| i as f32).unwrap();
        Volume::new(grid, "ramp", Modality::Smri).unwrap()
    }

    #[test]
    fn window_arithmetic() {
        let spec = RoiSpec {
            name: RoiName::LeftHippocampus,
            center: [60, 72, 60],
            size: 28,
        };
        assert_eq!(spec.origin([0, 0, 0]), [46, 58, 46]);
        assert_eq!(spec.origin([2, 0, -2]), [48, 58, 44]);
    }

    #[test]
    fn extraction_reads_the_right_voxels() {
        let v = ramp_volume(10, 9, 8);
        let spec = RoiSpec {
            name: RoiName::LeftHippocampus,
            center: [5, 4, 4],
            size: 4,
        };
        let roi = extract_roi(&v, &spec, [0, 0, 0]).unwrap();
        assert_eq!(roi.dims(), &[1, 4, 4, 4]);
        // First voxel is (i, j, k) = (3, 2, 2) -> offset 3 + 10 * (2 + 9 * 2).
        assert_eq!(roi.data()[0], (3 + 10 * (2 + 9 * 2)) as f32);
        let shifted = extract_roi(&v, &spec, [1, 0, -1]).unwrap();
        assert_eq!(shifted.data()[0], v.grid.get(&[1, 2, 4]));
    }

    #[test]
    fn extended_roi_center_crop_equals_base() {
        let v = ramp_volume(60, 60, 60);
        let center = [30, 29, 31];
        for (base, ext) in [(28, 48), (28, 38), (28, 42)] {
            let b = extract_roi(&v, &RoiSpec { name: RoiName::LeftHippocampus, center, size: base }, [0; 3]).unwrap();
            let e = extract_roi(&v, &RoiSpec { name: RoiName::LeftHippocampus, center, size: ext }, [0; 3]).unwrap();
            let off = (ext - base) / 2;
            assert_eq!(e.crop(&[0, off, off, off], &[1, base, base, base]).unwrap(), b);
        }
    }

    #[test]
    fn out_of_bounds_names_subject() {
        let v = ramp_volume(10, 10, 10);
        let spec = RoiSpec {
            name: RoiName::RightHippocampus,
            center: [8, 5, 5],
            size: 4,
        };
        match extract_roi(&v, &spec, [2, 0, 0]) {
            Err(DataError::RoiOutOfBounds { subject, .. }) => assert_eq!(subject, "ramp"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn merge_split_and_symmetry() {
        let left = Tensor::from_fn(&[1, 2, 2, 3], |i| i as f32).unwrap();
        let right = Tensor::from_fn(&[1, 2, 2, 3], |i| (i * i) as f32).unwrap();
        let merged = merge_lr(&left, &right).unwrap();
        assert_eq!(split_merged(&merged).unwrap(), (left.clone(), right));
        let mirrored = left.flip_axis(3).unwrap();
        let [a, b] = merge_lr(&left, &mirrored).unwrap();
        assert_eq!(a, b);
        assert!(merge_lr(&left, &Tensor::zeros(&[1, 2, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn bank_matches_full_volume_extraction() {
        let mut volumes = BTreeMap::new();
        volumes.insert(Modality::Smri, ramp_volume(30, 20, 20));
        let subject = SubjectRecord {
            subject_id: "ramp".into(),
            diagnosis: crate::data::Diagnosis::AD,
            volumes,
        };
        let centers = RoiCenters {
            left_hippocampus: [8, 10, 10],
            right_hippocampus: [21, 10, 10],
        };
        let bank = RoiBank::build(std::slice::from_ref(&subject), &centers, 6, 2, &[Modality::Smri]).unwrap();
        for shift in [[0, 0, 0], [2, -2, 1], [-2, 2, -1]] {
            let t = Transform { shift, sigma: 0.0 };
            for roi in [RoiName::LeftHippocampus, RoiName::RightHippocampus] {
                let spec = centers.spec(roi, 6).unwrap();
                let direct = extract_roi(&subject.volumes[&Modality::Smri], &spec, shift).unwrap();
                assert_eq!(bank.window("ramp", Modality::Smri, roi, &t).unwrap(), direct);
            }
        }
        let bad = Transform {
            shift: [3, 0, 0],
            sigma: 0.0,
        };
        assert!(bank.window("ramp", Modality::Smri, RoiName::LeftHippocampus, &bad).is_err());
        assert!(RoiBank::build(&[subject], &centers, 6, 2, &[Modality::MdDti]).is_err());
    }
}
