#![allow(dead_code)]

use std::collections::BTreeMap;

use hipponet::data::{group_by_class, select_test_subjects, AugmentParams, Diagnosis, RoiBank, RoiCenters, SynthConfig, synth_dataset};
use hipponet::harness::{Dataset, DatasetSpec, RunConfig};
use hipponet::data::ClassPair;
use hipponet::model::{InputMode, Modality, NetworkConfig, Preset};

pub const CENTERS: RoiCenters = RoiCenters {
    left_hippocampus: [8, 9, 8],
    right_hippocampus: [23, 9, 8],
};

/// Phantom AD/NC dataset with 8-voxel ROIs: `per_class` subjects per class,
/// two of which are held out for testing.
pub fn tiny_dataset(per_class: usize, test_copies: usize, seed: u64) -> Dataset {
    let sc = SynthConfig {
        subjects_per_class: [(Diagnosis::AD, per_class), (Diagnosis::NC, per_class)].into_iter().collect(),
        shape: [32, 18, 16],
        centers: CENTERS,
        radii: [3.0, 4.0, 3.0],
        seed,
        ..SynthConfig::default()
    };
    let subjects = synth_dataset(&sc).unwrap();
    let classes = group_by_class(subjects.iter().map(|s| (s.subject_id.as_str(), s.diagnosis)));
    let test_ids = select_test_subjects(&classes, 2, seed).unwrap();
    let split = |test: bool| -> BTreeMap<Diagnosis, Vec<String>> {
        classes
            .iter()
            .map(|(d, ids)| (*d, ids.iter().filter(|i| test_ids.contains(i) == test).cloned().collect()))
            .collect()
    };
    let bank = RoiBank::build(&subjects, &CENTERS, 8, 2, &[Modality::Smri, Modality::MdDti]).unwrap();
    let spec = DatasetSpec {
        k: 2,
        test_copies,
        augment: AugmentParams {
            max_shift: 2,
            ..AugmentParams::default()
        },
    };
    Dataset::prepare(bank, &split(false), &split(true), &spec, seed).unwrap()
}

/// A small C1-shaped network on 8-voxel ROIs.
pub fn tiny_run(mode: InputMode, iterations: u64, seed: u64) -> RunConfig {
    let mut net = NetworkConfig::preset(Preset::C1, 8, mode);
    net.conv_filter_counts = vec![4, 4, 4, 4];
    net.fc_units = vec![8, 4];
    let mut c = RunConfig::new(ClassPair::AdNc, net, seed);
    c.iterations = iterations;
    c.q = 4;
    c.mini_group_size = 2;
    c.eval_period = 3;
    c.resplit_period = 3;
    c.top_mean_window = 3;
    c
}
