//! Volume ingestion, ROI extraction, augmentation, dataset splitting and a
//! synthetic phantom generator.
//!
//! Volumes are stored as `[nz, ny, nx]` tensors, the NIfTI on-disk order with
//! `x` varying fastest. Voxel coordinates in configs and manifests are written
//! `(i, j, k) = (x, y, z)`; the sagittal axis is `x`, the last tensor axis.

mod augment;
mod blur;
mod manifest;
mod nifti;
mod roi;
mod split;
mod store;
mod synth;

pub use augment::{
    balance_and_augment, build_test_sets, AugmentParams, AugmentationPlan, AugmentedSample, ClassCounts, TestSets,
    Transform,
};
pub use blur::gaussian_blur3d;
pub use manifest::{select_test_subjects, DatasetManifest, ManifestSubject};
pub use nifti::{read_nifti, write_nifti, NiftiDatatype};
pub use roi::{extract_roi, merge_lr, split_merged, RoiBank, RoiCenters, RoiSpec, Side};
pub use split::make_validation_split;
pub use store::{read_sample, write_sample, SampleMeta};
pub use synth::{synth_dataset, SynthConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Modality;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("NIfTI {field}: {detail}")]
    Nifti { field: &'static str, detail: String },
    #[error("subject {subject}: {roi} window origin {origin:?} size {size} leaves volume of shape {shape:?}")]
    RoiOutOfBounds {
        subject: String,
        roi: String,
        origin: [i64; 3],
        size: usize,
        shape: [usize; 3],
    },
    #[error("subject {subject} has no {modality} volume")]
    MissingModality { subject: String, modality: Modality },
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("blur sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Diagnosis {
    AD,
    MCI,
    NC,
}

impl Diagnosis {
    pub const ALL: [Diagnosis; 3] = [Diagnosis::AD, Diagnosis::MCI, Diagnosis::NC];
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A binary classification task. Index 0 of [`ClassPair::classes`] is the
/// positive class for sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassPair {
    #[serde(rename = "AD/NC")]
    AdNc,
    #[serde(rename = "AD/MCI")]
    AdMci,
    #[serde(rename = "MCI/NC")]
    MciNc,
}

impl ClassPair {
    pub const ALL: [ClassPair; 3] = [ClassPair::AdNc, ClassPair::AdMci, ClassPair::MciNc];

    pub fn classes(self) -> [Diagnosis; 2] {
        match self {
            ClassPair::AdNc => [Diagnosis::AD, Diagnosis::NC],
            ClassPair::AdMci => [Diagnosis::AD, Diagnosis::MCI],
            ClassPair::MciNc => [Diagnosis::MCI, Diagnosis::NC],
        }
    }

    pub fn label_of(self, d: Diagnosis) -> Option<usize> {
        self.classes().iter().position(|&c| c == d)
    }

    pub fn label(self) -> &'static str {
        match self {
            ClassPair::AdNc => "AD/NC",
            ClassPair::AdMci => "AD/MCI",
            ClassPair::MciNc => "MCI/NC",
        }
    }
}

impl fmt::Display for ClassPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ClassPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassPair::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown class pair {s:?}; expected AD/NC, AD/MCI or MCI/NC"))
    }
}

/// One scan: a `[nz, ny, nx]` intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: Tensor<f32>,
    pub subject_id: String,
    pub modality: Modality,
}

impl Volume {
    pub fn new(grid: Tensor<f32>, subject_id: impl Into<String>, modality: Modality) -> Result<Self, DataError> {
        if grid.rank() != 3 {
            return Err(DataError::Invalid(format!("volume must have 3 axes, got {:?}", grid.dims())));
        }
        if grid.data().iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("volume contains non-finite intensities".into()));
        }
        Ok(Volume {
            grid,
            subject_id: subject_id.into(),
            modality,
        })
    }

    /// Extent as `(nx, ny, nz)`.
    pub fn extent_ijk(&self) -> [usize; 3] {
        let d = self.grid.dims();
        [d[2], d[1], d[0]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    pub volumes: BTreeMap<Modality, Volume>,
}

impl SubjectRecord {
    pub fn volume(&self, modality: Modality) -> Result<&Volume, DataError> {
        self.volumes.get(&modality).ok_or_else(|| DataError::MissingModality {
            subject: self.subject_id.clone(),
            modality,
        })
    }
}

/// Subject ids grouped by diagnosis, in input order.
pub fn group_by_class<'a>(subjects: impl IntoIterator<Item = (&'a str, Diagnosis)>) -> BTreeMap<Diagnosis, Vec<String>> {
    let mut out: BTreeMap<Diagnosis, Vec<String>> = BTreeMap::new();
    for (id, d) in subjects {
        out.entry(d).or_default().push(id.to_string());
    }
    out
}
