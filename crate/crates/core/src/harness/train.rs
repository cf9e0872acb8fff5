use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::predict_all;
use super::{Dataset, HarnessError, Item, LogRecord, RunConfig, RunLog};
use crate::data::{make_validation_split, AugmentedSample};
use crate::metrics::Confusion;
use crate::model::{Batch, FusionNetwork, PipelineInput};
use crate::optim::{MiniGroupAccumulator, Nesterov};
use crate::seed::{derive, mix64, SubSeeds};
use crate::tensor::Tensor;

/// Test-set tensors are kept in memory when they fit in this many bytes.
const TEST_CACHE_BYTES: usize = 768 << 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub network: FusionNetwork<f32>,
    /// Wall-clock measurements; kept apart from the log, which is deterministic.
    pub timings: Timings,
}

/// Per-class draw queues over the current fit split. Each class is consumed
/// without replacement and reshuffled once exhausted.
struct Sampler {
    queues: Vec<Vec<usize>>,
    cursors: Vec<usize>,
}

impl Sampler {
    fn new(fit: &[usize], pool: &[Item], rng: &mut ChaCha8Rng) -> Self {
        let mut queues = vec![Vec::new(), Vec::new()];
        for &i in fit {
            queues[pool[i].label].push(i);
        }
        for q in &mut queues {
            q.shuffle(rng);
        }
        Sampler {
            queues,
            cursors: vec![0, 0],
        }
    }

    fn take(&mut self, class: usize, rng: &mut ChaCha8Rng) -> usize {
        if self.cursors[class] == self.queues[class].len() {
            self.queues[class].shuffle(rng);
            self.cursors[class] = 0;
        }
        let v = self.queues[class][self.cursors[class]];
        self.cursors[class] += 1;
        v
    }

    /// `ceil(q / 2)` items of the positive class and `floor(q / 2)` of the other, shuffled together.
    fn draw(&mut self, q: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out: Vec<usize> = (0..q.div_ceil(2)).map(|_| self.take(0, rng)).collect();
        out.extend((0..q / 2).map(|_| self.take(1, rng)));
        out.shuffle(rng);
        out
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

struct TestSet<'a> {
    samples: &'a [AugmentedSample],
    items: Vec<Item>,
    cache: Option<Vec<Vec<Tensor<f32>>>>,
}

impl TestSet<'_> {
    fn confusion(&self, net: &FusionNetwork<f32>, dataset: &Dataset, batch: usize) -> Result<Confusion, HarnessError> {
        let pipelines = net.config().pipelines();
        let predictions = match &self.cache {
            Some(cache) => predict_all(net, self.items.len(), batch, |i| Ok(cache[i].clone()))?,
            None => predict_all(net, self.items.len(), batch, |i| {
                dataset.materialize(self.samples, &self.items[i], &pipelines)
            })?,
        };
        let truths: Vec<usize> = self.items.iter().map(|i| i.label).collect();
        Ok(Confusion::from_labels(&predictions, &truths, 0)?)
    }
}

fn materialize_batch(
    dataset: &Dataset,
    samples: &[AugmentedSample],
    items: &[Item],
    pipelines: &[PipelineInput],
) -> Result<Vec<Vec<Tensor<f32>>>, HarnessError> {
    items
        .par_iter()
        .map(|it| dataset.materialize(samples, it, pipelines))
        .collect()
}

/// Runs `config.iterations` Nesterov steps on the pair's augmented train
/// set, evaluating validation and test accuracy at every evaluation point.
pub fn train(config: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let pair = config.classifier_pair;
    let mode = config.network.input_mode;
    let pipelines = config.network.pipelines();
    dataset.check(pair, &pipelines)?;

    let seeds = SubSeeds::from_master(config.seed);
    let mut net = FusionNetwork::<f32>::build(&config.network, seeds.init)?;
    let mut params: Vec<f64> = net.params().iter().map(|&x| x as f64).collect();
    let mut opt = Nesterov::new(config.optimizer.clone(), params.len());

    let train_samples = &dataset.plan.samples;
    let pool = Dataset::items(train_samples, pair, mode);
    let labels: Vec<usize> = pool.iter().map(|i| i.label).collect();

    let s = config.network.roi_size;
    let test_bytes: usize = (0..3)
        .map(|t| Dataset::items(dataset.test_set(t), pair, mode).len() * pipelines.len() * s * s * s * 4)
        .sum();
    let tests = (0..3)
        .map(|t| {
            let samples = dataset.test_set(t);
            let items = Dataset::items(samples, pair, mode);
            let cache = if test_bytes <= TEST_CACHE_BYTES {
                Some(materialize_batch(dataset, samples, &items, &pipelines)?)
            } else {
                None
            };
            Ok(TestSet { samples, items, cache })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let split_seed = derive(seeds.training, "split");
    let mut draw_rng = ChaCha8Rng::seed_from_u64(derive(seeds.training, "draw"));
    let mut epoch = None;
    let mut val_items: Vec<Item> = Vec::new();
    let mut sampler = Sampler {
        queues: Vec::new(),
        cursors: Vec::new(),
    };

    let eval_points = config.eval_points();
    let mut next_eval = 0;
    let mut records = Vec::with_capacity(eval_points.len());
    let (mut loss_sum, mut loss_count) = (0.0f64, 0usize);
    let mut timings = Timings::default();

    for t in 0..=config.iterations {
        let e = t / config.resplit_period;
        if epoch != Some(e) {
            let (fit, val) = make_validation_split(&labels, config.validation_fraction, split_seed, e)?;
            sampler = Sampler::new(&fit, &pool, &mut draw_rng);
            val_items = val.iter().map(|&i| pool[i]).collect();
            epoch = Some(e);
        }

        if eval_points.get(next_eval) == Some(&t) {
            let started = Instant::now();
            let val = TestSet {
                samples: train_samples,
                items: val_items.clone(),
                cache: None,
            };
            let mut confusions = [Confusion::default(); 4];
            confusions[0] = val.confusion(&net, dataset, config.eval_batch)?;
            for (k, set) in tests.iter().enumerate() {
                confusions[k + 1] = set.confusion(&net, dataset, config.eval_batch)?;
            }
            records.push(LogRecord {
                iteration: t,
                lr: config.optimizer.lr_at(t),
                train_loss: if loss_count == 0 { f64::NAN } else { loss_sum / loss_count as f64 },
                confusions,
            });
            loss_sum = 0.0;
            loss_count = 0;
            next_eval += 1;
            timings.eval_seconds += started.elapsed().as_secs_f64();
        }
        if t == config.iterations {
            break;
        }

        let started = Instant::now();
        let drawn: Vec<Item> = sampler.draw(config.q, &mut draw_rng).into_iter().map(|i| pool[i]).collect();
        net.set_params(&to_f32(&opt.lookahead(&params)))?;
        let mut acc = MiniGroupAccumulator::new(config.q, params.len())?;
        let dropout_seed = mix64(seeds.dropout ^ t);
        for (g, group) in drawn.chunks(config.mini_group_size).enumerate() {
            let inputs = materialize_batch(dataset, train_samples, group, &pipelines)?;
            let first = g * config.mini_group_size;
            let keys = (first as u64..(first + group.len()) as u64).collect();
            let item_labels: Vec<usize> = group.iter().map(|i| i.label).collect();
            let batch = Batch::stack(&inputs, keys)?.with_labels(&item_labels, 2)?;
            let lg = net.loss_and_grad(&batch, dropout_seed)?;
            let n = group.len() as f64;
            let sum: Vec<f64> = lg.grad.iter().map(|&x| x as f64 * n).collect();
            acc.accumulate(&sum, group.len())?;
            loss_sum += lg.loss as f64 * n;
            loss_count += group.len();
            net.apply_bn_stats(&lg.bn_stats);
        }
        let grad = acc.release()?;
        opt.apply(&mut params, &grad)?;
        net.set_params(&to_f32(&params))?;
        timings.train_seconds += started.elapsed().as_secs_f64();
    }

    let num_params = net.num_params();
    Ok(TrainOutcome {
        log: RunLog {
            config: config.clone(),
            num_params,
            records,
        },
        network: net,
        timings,
    })
}
