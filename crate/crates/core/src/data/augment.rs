use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Diagnosis};
use crate::seed::{derive, sample_rng};

/// Integer window offset `(i, j, k)` plus blur width applied at extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Transform {
    pub shift: [i32; 3],
    pub sigma: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        shift: [0; 3],
        sigma: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Largest shift magnitude per axis, in voxels.
    pub max_shift: u32,
    /// Upper end of the uniform blur-sigma range.
    pub max_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_shift: 2,
            max_sigma: 1.2,
        }
    }
}

impl AugmentParams {
    fn draw<R: Rng>(&self, rng: &mut R, blur: bool) -> Transform {
        let m = self.max_shift as i32;
        let shift = [rng.gen_range(-m..=m), rng.gen_range(-m..=m), rng.gen_range(-m..=m)];
        let sigma = if blur { rng.gen_range(0.0..=self.max_sigma) } else { 0.0 };
        Transform { shift, sigma }
    }
}

/// A training or test sample described by its provenance; ROI tensors are
/// produced on demand from a [`super::RoiBank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub subject_id: String,
    pub diagnosis: Diagnosis,
    pub transform: Transform,
    pub generated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub original: usize,
    pub generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub k: usize,
    pub n_max: usize,
    pub target_per_class: usize,
    pub counts: BTreeMap<Diagnosis, ClassCounts>,
    /// Per class in diagnosis order: originals, then generated samples.
    pub samples: Vec<AugmentedSample>,
}

fn generate(
    subjects: &[String],
    diagnosis: Diagnosis,
    count: usize,
    stream: u64,
    params: &AugmentParams,
    blur: bool,
) -> Vec<AugmentedSample> {
    (0..count)
        .map(|g| {
            let mut rng = sample_rng(stream, g as u64);
            AugmentedSample {
                subject_id: subjects[g % subjects.len()].clone(),
                diagnosis,
                transform: params.draw(&mut rng, blur),
                generated: true,
            }
        })
        .collect()
}

/// Brings every class to `n_max * k` samples: the originals plus
/// `n_max * k - n_i` shifted and blurred copies, cycling through the class's
/// subjects in order.
pub fn balance_and_augment(
    classes: &BTreeMap<Diagnosis, Vec<String>>,
    k: usize,
    params: &AugmentParams,
    seed: u64,
) -> Result<AugmentationPlan, DataError> {
    if k == 0 {
        return Err(DataError::Invalid("augmentation factor k must be at least 1".into()));
    }
    if let Some((d, _)) = classes.iter().find(|(_, s)| s.is_empty()) {
        return Err(DataError::Invalid(format!("class {d} has no subjects")));
    }
    let n_max = classes.values().map(Vec::len).max().unwrap_or(0);
    let target = n_max * k;
    let mut counts = BTreeMap::new();
    let mut samples = Vec::with_capacity(target * classes.len());
    for (&d, subjects) in classes {
        let generated = target - subjects.len();
        counts.insert(
            d,
            ClassCounts {
                original: subjects.len(),
                generated,
            },
        );
        samples.extend(subjects.iter().map(|s| AugmentedSample {
            subject_id: s.clone(),
            diagnosis: d,
            transform: Transform::IDENTITY,
            generated: false,
        }));
        let stream = derive(seed, &format!("train/{d}"));
        samples.extend(generate(subjects, d, generated, stream, params, true));
    }
    Ok(AugmentationPlan {
        k,
        n_max,
        target_per_class: target,
        counts,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSets {
    /// Untransformed test subjects.
    pub test0: Vec<AugmentedSample>,
    /// `copies` shifted samples per subject, no blur.
    pub test1: Vec<AugmentedSample>,
    /// `copies` shifted and blurred samples per subject.
    pub test2: Vec<AugmentedSample>,
}

pub fn build_test_sets(
    classes: &BTreeMap<Diagnosis, Vec<String>>,
    copies: usize,
    params: &AugmentParams,
    seed: u64,
) -> Result<TestSets, DataError> {
    let mut sets = TestSets {
        test0: Vec::new(),
        test1: Vec::new(),
        test2: Vec::new(),
    };
    for (&d, subjects) in classes {
        if subjects.is_empty() {
            return Err(DataError::Invalid(format!("class {d} has no test subjects")));
        }
        sets.test0.extend(subjects.iter().map(|s| AugmentedSample {
            subject_id: s.clone(),
            diagnosis: d,
            transform: Transform::IDENTITY,
            generated: false,
        }));
        let n = subjects.len() * copies;
        sets.test1
            .extend(generate(subjects, d, n, derive(seed, &format!("test1/{d}")), params, false));
        sets.test2
            .extend(generate(subjects, d, n, derive(seed, &format!("test2/{d}")), params, true));
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(sizes: &[(Diagnosis, usize)]) -> BTreeMap<Diagnosis, Vec<String>> {
        sizes
            .iter()
            .map(|&(d, n)| (d, (0..n).map(|i| format!("{d}{i:03}")).collect()))
            .collect()
    }

    #[test]
    fn degenerate_k1_equal_sizes() {
        let c = classes(&[(Diagnosis::AD, 5), (Diagnosis::NC, 5)]);
        let plan = balance_and_augment(&c, 1, &AugmentParams::default(), 1).unwrap();
        assert!(plan.counts.values().all(|c| c.generated == 0));
        assert_eq!(plan.samples.len(), 10);
    }

    #[test]
    fn provenance_within_ranges_and_seeded() {
        let c = classes(&[(Diagnosis::AD, 3), (Diagnosis::MCI, 7)]);
        let p = AugmentParams::default();
        let a = balance_and_augment(&c, 3, &p, 9).unwrap();
        let b = balance_and_augment(&c, 3, &p, 9).unwrap();
        let other = balance_and_augment(&c, 3, &p, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
        for s in &a.samples {
            assert!(s.transform.shift.iter().all(|v| v.abs() <= 2));
            assert!((0.0..=1.2).contains(&s.transform.sigma));
            assert!(s.subject_id.starts_with(&s.diagnosis.to_string()));
        }
        assert!(balance_and_augment(&c, 0, &p, 9).is_err());
    }

    #[test]
    fn test_sets_have_expected_structure() {
        let c = classes(&[(Diagnosis::AD, 2), (Diagnosis::NC, 2)]);
        let p = AugmentParams::default();
        let t = build_test_sets(&c, 10, &p, 1).unwrap();
        assert_eq!((t.test0.len(), t.test1.len(), t.test2.len()), (4, 40, 40));
        assert!(t.test1.iter().all(|s| s.transform.sigma == 0.0));
        assert!(t.test2.iter().any(|s| s.transform.sigma > 0.0));
        assert_eq!(build_test_sets(&c, 10, &p, 2).unwrap().test0, t.test0);
    }
}
