use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{read_nifti, AugmentationPlan, DataError, Diagnosis, RoiBank, RoiCenters, SubjectRecord, TestSets};
use crate::model::Modality;
use crate::seed::{derive, sample_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub id: String,
    pub diagnosis: Diagnosis,
    /// NIfTI path per modality, relative to the manifest file.
    pub files: BTreeMap<Modality, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub k: usize,
    pub roi_centers: RoiCenters,
    pub subjects: Vec<ManifestSubject>,
    pub test_subjects: Vec<String>,
    /// Filled in once the training set has been augmented.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<AugmentationPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_sets: Option<TestSets>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut ids = BTreeSet::new();
        for s in &self.subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(DataError::Invalid(format!("duplicate subject id {}", s.id)));
            }
            if s.files.is_empty() {
                return Err(DataError::Invalid(format!("subject {} lists no modality files", s.id)));
            }
        }
        for t in &self.test_subjects {
            if !ids.contains(t.as_str()) {
                return Err(DataError::UnknownSubject(t.clone()));
            }
        }
        if let Some(plan) = &self.augmentation {
            let test: BTreeSet<&str> = self.test_subjects.iter().map(String::as_str).collect();
            if let Some(s) = plan.samples.iter().find(|s| test.contains(s.subject_id.as_str())) {
                return Err(DataError::Invalid(format!(
                    "training sample derives from test subject {}",
                    s.subject_id
                )));
            }
        }
        if let Some(sets) = &self.test_sets {
            let test: BTreeSet<&str> = self.test_subjects.iter().map(String::as_str).collect();
            let all = sets.test0.iter().chain(&sets.test1).chain(&sets.test2);
            if let Some(s) = all.into_iter().find(|s| !test.contains(s.subject_id.as_str())) {
                return Err(DataError::Invalid(format!(
                    "test sample derives from non-test subject {}",
                    s.subject_id
                )));
            }
        }
        Ok(())
    }

    fn grouped(&self, test: bool) -> BTreeMap<Diagnosis, Vec<String>> {
        let members: BTreeSet<&str> = self.test_subjects.iter().map(String::as_str).collect();
        super::group_by_class(
            self.subjects
                .iter()
                .filter(|s| members.contains(s.id.as_str()) == test)
                .map(|s| (s.id.as_str(), s.diagnosis)),
        )
    }

    pub fn train_classes(&self) -> BTreeMap<Diagnosis, Vec<String>> {
        self.grouped(false)
    }

    pub fn test_classes(&self) -> BTreeMap<Diagnosis, Vec<String>> {
        self.grouped(true)
    }

    /// Reads the requested modalities of one subject from disk.
    pub fn load_subject(&self, base: &Path, id: &str, modalities: &[Modality]) -> Result<SubjectRecord, DataError> {
        let s = self
            .subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| DataError::UnknownSubject(id.to_string()))?;
        let mut volumes = BTreeMap::new();
        for &m in modalities {
            let rel = s.files.get(&m).ok_or_else(|| DataError::MissingModality {
                subject: id.to_string(),
                modality: m,
            })?;
            volumes.insert(m, read_nifti(&base.join(rel), id, m)?);
        }
        Ok(SubjectRecord {
            subject_id: id.to_string(),
            diagnosis: s.diagnosis,
            volumes,
        })
    }

    /// Loads the subjects selected by `keep` one at a time and keeps only
    /// their ROI neighborhoods, so at most one set of full volumes is resident.
    pub fn load_bank(
        &self,
        base: &Path,
        roi_size: usize,
        max_shift: usize,
        modalities: &[Modality],
        keep: impl Fn(&ManifestSubject) -> bool,
    ) -> Result<RoiBank, DataError> {
        let mut bank = RoiBank::new(self.roi_centers, roi_size, max_shift, modalities);
        for s in self.subjects.iter().filter(|s| keep(s)) {
            bank.insert(&self.load_subject(base, &s.id, modalities)?)?;
        }
        Ok(bank)
    }
}

/// Draws `per_class` test subjects from each class, seeded; the result is
/// sorted by id.
pub fn select_test_subjects(
    classes: &BTreeMap<Diagnosis, Vec<String>>,
    per_class: usize,
    seed: u64,
) -> Result<Vec<String>, DataError> {
    let mut out = Vec::new();
    for (i, (d, ids)) in classes.iter().enumerate() {
        if ids.len() <= per_class {
            return Err(DataError::Invalid(format!(
                "class {d} has {} subjects; {per_class} test subjects would leave none for training",
                ids.len()
            )));
        }
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut sample_rng(derive(seed, "test-subjects"), i as u64));
        out.extend(shuffled.into_iter().take(per_class));
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        let subjects = (0..6)
            .map(|i| ManifestSubject {
                id: format!("s{i}"),
                diagnosis: if i % 2 == 0 { Diagnosis::AD } else { Diagnosis::NC },
                files: [(Modality::Smri, PathBuf::from(format!("s{i}.nii")))].into_iter().collect(),
            })
            .collect();
        DatasetManifest {
            seed: 1,
            k: 10,
            roi_centers: RoiCenters {
                left_hippocampus: [1, 2, 3],
                right_hippocampus: [4, 5, 6],
            },
            subjects,
            test_subjects: vec!["s0".into(), "s1".into()],
            augmentation: None,
            test_sets: None,
        }
    }

    #[test]
    fn json_round_trip_and_groups() {
        let m = manifest();
        let back: DatasetManifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.train_classes()[&Diagnosis::AD], vec!["s2", "s4"]);
        assert_eq!(m.test_classes()[&Diagnosis::NC], vec!["s1"]);
    }

    #[test]
    fn validation_catches_problems() {
        let mut m = manifest();
        m.test_subjects.push("nobody".into());
        assert!(m.validate().is_err());
        let mut m = manifest();
        m.subjects[1].id = "s0".into();
        assert!(m.validate().is_err());
        let text = serde_json::to_string(&manifest()).unwrap().replace("\"k\":", "\"kk\":");
        assert!(serde_json::from_str::<DatasetManifest>(&text).is_err());
    }

    #[test]
    fn test_selection_is_seeded_and_disjoint_from_train() {
        let m = manifest();
        let classes = super::super::group_by_class(m.subjects.iter().map(|s| (s.id.as_str(), s.diagnosis)));
        let a = select_test_subjects(&classes, 1, 3).unwrap();
        assert_eq!(a, select_test_subjects(&classes, 1, 3).unwrap());
        assert_eq!(a.len(), 2);
        assert!(select_test_subjects(&classes, 3, 3).is_err());
    }
}
