use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::DataError;
use crate::seed::sample_rng;

/// Stratified random partition of a pool into fit and validation indices.
/// Each class contributes `round(n_class * fraction)` validation items. The
/// partition depends only on `(seed, epoch_index)`; both index lists are
/// returned in ascending order.
pub fn make_validation_split(
    labels: &[usize],
    fraction: f64,
    seed: u64,
    epoch_index: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if labels.len() < 10 {
        return Err(DataError::Invalid(format!(
            "validation split needs at least 10 samples, pool has {}",
            labels.len()
        )));
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(DataError::Invalid(format!("validation fraction {fraction} not in [0, 1)")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = sample_rng(seed, epoch_index);
    let mut fit = Vec::with_capacity(labels.len());
    let mut val = Vec::new();
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let n_val = (members.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&members[..n_val]);
        fit.extend_from_slice(&members[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    Ok((fit, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn per_class_counts_and_disjointness() {
        let labels: Vec<usize> = (0..1920).map(|i| i % 2).collect();
        let (fit, val) = make_validation_split(&labels, 0.1, 3, 0).unwrap();
        assert_eq!(val.iter().filter(|&&i| labels[i] == 0).count(), 96);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 96);
        assert_eq!(fit.len(), 1728);
        let all: HashSet<usize> = fit.iter().chain(&val).copied().collect();
        assert_eq!(all.len(), labels.len());
    }

    #[test]
    fn determinism_and_freshness() {
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let a = make_validation_split(&labels, 0.1, 5, 7).unwrap();
        assert_eq!(a, make_validation_split(&labels, 0.1, 5, 7).unwrap());
        let distinct: HashSet<Vec<usize>> = (0..100)
            .map(|e| make_validation_split(&labels, 0.1, 5, e).unwrap().1)
            .collect();
        assert!(distinct.len() >= 99);
        assert!(make_validation_split(&labels[..9], 0.1, 5, 7).is_err());
    }
}
