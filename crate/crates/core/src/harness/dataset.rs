use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{
    balance_and_augment, build_test_sets, AugmentParams, AugmentationPlan, AugmentedSample, ClassPair, DataError,
    Diagnosis, RoiBank, Side, TestSets,
};
use crate::model::{InputMode, PipelineInput};
use crate::tensor::Tensor;

/// How the augmented train set and the test sets are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Train classes are brought to `n_max * k` samples.
    pub k: usize,
    /// Augmented copies per test subject in test sets 1 and 2.
    pub test_copies: usize,
    pub augment: AugmentParams,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            k: 10,
            test_copies: 10,
            augment: AugmentParams::default(),
        }
    }
}

/// One network input: a sample of some list, the hemisphere used by merged
/// pipelines, and the binary label within the classifier pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Item {
    pub sample: usize,
    pub side: Side,
    pub label: usize,
}

/// ROI neighborhoods of every subject plus the sample lists drawn from them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub bank: RoiBank,
    pub plan: AugmentationPlan,
    pub tests: TestSets,
}

impl Dataset {
    /// Augments the train classes over all diagnoses present and builds the
    /// three test sets.
    pub fn prepare(
        bank: RoiBank,
        train_classes: &BTreeMap<Diagnosis, Vec<String>>,
        test_classes: &BTreeMap<Diagnosis, Vec<String>>,
        spec: &DatasetSpec,
        seed: u64,
    ) -> Result<Self, HarnessError> {
        for ids in train_classes.values() {
            if let Some(id) = ids.iter().find(|id| test_classes.values().flatten().any(|t| t == *id)) {
                return Err(HarnessError::Config(format!("subject {id} is in both train and test sets")));
            }
        }
        let plan = balance_and_augment(train_classes, spec.k, &spec.augment, seed)?;
        let tests = build_test_sets(test_classes, spec.test_copies, &spec.augment, seed)?;
        Ok(Dataset { bank, plan, tests })
    }

    pub fn test_set(&self, index: usize) -> &[AugmentedSample] {
        match index {
            0 => &self.tests.test0,
            1 => &self.tests.test1,
            _ => &self.tests.test2,
        }
    }

    /// Items of `samples` belonging to the pair; merged input modes use
    /// every sample twice, once per hemisphere.
    pub fn items(samples: &[AugmentedSample], pair: ClassPair, mode: InputMode) -> Vec<Item> {
        let sides: &[Side] = if mode.is_merged() { &[Side::Left, Side::Right] } else { &[Side::Left] };
        let mut out = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if let Some(label) = pair.label_of(s.diagnosis) {
                out.extend(sides.iter().map(|&side| Item { sample: i, side, label }));
            }
        }
        out
    }

    /// Fails before any work if a subject used by the pair lacks a modality.
    pub fn check(&self, pair: ClassPair, pipelines: &[PipelineInput]) -> Result<(), HarnessError> {
        let lists = [&self.plan.samples, &self.tests.test0, &self.tests.test1, &self.tests.test2];
        for s in lists.into_iter().flatten() {
            if pair.label_of(s.diagnosis).is_none() {
                continue;
            }
            if !self.bank.contains(&s.subject_id) {
                return Err(DataError::UnknownSubject(s.subject_id.clone()).into());
            }
            for p in pipelines {
                if !self.bank.has_modality(&s.subject_id, p.modality) {
                    return Err(DataError::MissingModality {
                        subject: s.subject_id.clone(),
                        modality: p.modality,
                    }
                    .into());
                }
            }
        }
        for d in pair.classes() {
            if !self.plan.samples.iter().any(|s| s.diagnosis == d) {
                return Err(HarnessError::Config(format!("no training samples for class {d}")));
            }
        }
        Ok(())
    }

    pub fn materialize(
        &self,
        samples: &[AugmentedSample],
        item: &Item,
        pipelines: &[PipelineInput],
    ) -> Result<Vec<Tensor<f32>>, HarnessError> {
        let s = &samples[item.sample];
        Ok(self.bank.materialize(&s.subject_id, &s.transform, item.side, pipelines)?)
    }
}
