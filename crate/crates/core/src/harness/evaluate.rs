use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, HarnessError, IntervalConfig, Item};
use crate::data::ClassPair;
use crate::layers::Phase;
use crate::metrics::{confidence_interval, Confusion, Rates};
use crate::model::{Batch, FusionNetwork};
use crate::tensor::Tensor;

/// Inference-phase predictions for `n` inputs fetched by index, in index
/// order. Batches run in parallel; each prediction depends only on its own
/// input, so results do not depend on the batching or thread count.
pub(crate) fn predict_all(
    net: &FusionNetwork<f32>,
    n: usize,
    batch: usize,
    fetch: impl Fn(usize) -> Result<Vec<Tensor<f32>>, HarnessError> + Sync,
) -> Result<Vec<usize>, HarnessError> {
    let starts: Vec<usize> = (0..n).step_by(batch.max(1)).collect();
    let chunks: Vec<Vec<usize>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + batch).min(n);
            let inputs = (start..end).map(&fetch).collect::<Result<Vec<_>, _>>()?;
            let b = Batch::stack(&inputs, (start as u64..end as u64).collect())?;
            let probs = net.forward_batch(&b, Phase::Infer, 0)?;
            let classes = probs.dims()[1];
            Ok(probs
                .data()
                .chunks(classes)
                .map(crate::model::argmax)
                .collect())
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Confusion counts of one labelled item list.
pub fn evaluate_items(
    net: &FusionNetwork<f32>,
    dataset: &Dataset,
    samples: &[crate::data::AugmentedSample],
    items: &[Item],
    batch: usize,
) -> Result<Confusion, HarnessError> {
    let pipelines = net.config().pipelines();
    let predictions = predict_all(net, items.len(), batch, |i| dataset.materialize(samples, &items[i], &pipelines))?;
    let truths: Vec<usize> = items.iter().map(|it| it.label).collect();
    Ok(Confusion::from_labels(&predictions, &truths, 0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEvaluation {
    pub set: String,
    pub n: usize,
    pub confusion: Confusion,
    pub rates: Rates,
    /// Interval for the accuracy with `n` equal to the set size.
    pub accuracy_ci: Option<(f64, f64)>,
}

impl SetEvaluation {
    pub fn from_confusion(set: &str, confusion: Confusion, interval: &IntervalConfig) -> Result<Self, HarnessError> {
        let rates = confusion.rates();
        let n = confusion.total();
        let accuracy_ci = match rates.accuracy {
            Some(a) => Some(confidence_interval(a, n, interval.theta, interval.kind)?),
            None => None,
        };
        Ok(SetEvaluation {
            set: set.to_string(),
            n,
            confusion,
            rates,
            accuracy_ci,
        })
    }
}

/// Accuracy, sensitivity and specificity of a trained network on test sets 0, 1 and 2.
pub fn evaluate(
    net: &FusionNetwork<f32>,
    dataset: &Dataset,
    pair: ClassPair,
    batch: usize,
    interval: &IntervalConfig,
) -> Result<Vec<SetEvaluation>, HarnessError> {
    let pipelines = net.config().pipelines();
    dataset.check(pair, &pipelines)?;
    (0..3)
        .map(|t| {
            let samples = dataset.test_set(t);
            let items = Dataset::items(samples, pair, net.config().input_mode);
            let c = evaluate_items(net, dataset, samples, &items, batch)?;
            SetEvaluation::from_confusion(&format!("test{t}"), c, interval)
        })
        .collect()
}
