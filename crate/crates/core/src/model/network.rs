use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, NetworkConfig};
use crate::layers::{
    dropout_backward, dropout_forward, maxpool3d_backward, maxpool3d_forward, relu_backward, relu_forward,
    softmax_backward, softmax_rows, BatchNorm, BatchNormCache, BatchStats, Conv3d, Dense, DropoutMask, Phase,
    PoolCache,
};
use crate::seed::sample_rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv: Conv3d<T>,
    bn: BatchNorm<T>,
    pool: bool,
}

#[derive(Debug, Clone)]
struct Tower<T> {
    blocks: Vec<ConvBlock<T>>,
}

#[derive(Debug, Clone)]
struct Head<T> {
    hidden: Vec<Dense<T>>,
    output: Dense<T>,
}

/// Late-fusion network: one conv tower per pipeline (or one shared tower),
/// flattened outputs concatenated in pipeline order, then FC layers with
/// ReLU, dropout, a final projection to class logits, and softmax.
#[derive(Debug, Clone)]
pub struct FusionNetwork<T = f32> {
    config: NetworkConfig,
    towers: Vec<Tower<T>>,
    head: Head<T>,
}

/// A named contiguous range of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Network inputs for `N` samples.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// One `[N, 1, s, s, s]` tensor per pipeline.
    pub inputs: Vec<Tensor<T>>,
    /// One-hot targets `[N, classes]`, required by the loss.
    pub targets: Option<Tensor<T>>,
    /// Dropout stream index per sample.
    pub keys: Vec<u64>,
}

impl<T: Real> Batch<T> {
    /// Stacks per-sample pipeline tensors (each `[1, s, s, s]`) into batch tensors.
    pub fn stack(samples: &[Vec<Tensor<T>>], keys: Vec<u64>) -> Result<Self, ModelError> {
        let first = samples.first().ok_or(ModelError::EmptyBatch)?;
        let pipelines = first.len();
        let mut inputs = Vec::with_capacity(pipelines);
        for p in 0..pipelines {
            let dims = first[p].dims().to_vec();
            let mut data = Vec::with_capacity(samples.len() * first[p].len());
            for sample in samples {
                if sample.len() != pipelines {
                    return Err(ModelError::PipelineCount {
                        expected: pipelines,
                        got: sample.len(),
                    });
                }
                if sample[p].dims() != dims.as_slice() {
                    return Err(ModelError::PipelineShape {
                        pipeline: format!("#{p}"),
                        expected: dims.clone(),
                        got: sample[p].dims().to_vec(),
                    });
                }
                data.extend_from_slice(sample[p].data());
            }
            let mut bdims = vec![samples.len()];
            bdims.extend_from_slice(&dims);
            inputs.push(Tensor::from_vec(&bdims, data)?);
        }
        Ok(Batch {
            inputs,
            targets: None,
            keys,
        })
    }

    pub fn with_labels(mut self, labels: &[usize], classes: usize) -> Result<Self, ModelError> {
        let mut t = Tensor::zeros(&[labels.len().max(1), classes])?;
        for (row, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(ModelError::NotOneHot { row, classes });
            }
            t.set(&[row, l], T::one());
        }
        self.targets = Some(t);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.first().map(|t| t.dims()[0]).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of [`FusionNetwork::loss_and_grad`].
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    /// Mean per-sample loss `0.5 * |p - y|^2`.
    pub loss: T,
    /// Gradient of the mean loss, laid out like [`FusionNetwork::params`].
    pub grad: Vec<T>,
    pub probs: Tensor<T>,
    /// Batch statistics for every (tower, block) visit, in visit order.
    pub bn_stats: Vec<(usize, usize, BatchStats<T>)>,
}

struct BlockCache<T> {
    input: Tensor<T>,
    bn: Option<BatchNormCache<T>>,
    pre_relu: Tensor<T>,
    pool: Option<PoolCache>,
}

struct PipelineCache<T> {
    blocks: Vec<BlockCache<T>>,
    out_dims: Vec<usize>,
}

struct HeadCache<T> {
    /// Input of each hidden layer, then the input of the output layer (post-dropout).
    layer_inputs: Vec<Tensor<T>>,
    /// Pre-activation of each hidden layer.
    pre_relu: Vec<Tensor<T>>,
    masks: Vec<DropoutMask<T>>,
    /// Post-ReLU activation of the last hidden layer, before dropout.
    pre_dropout: Tensor<T>,
}

struct ForwardState<T> {
    probs: Tensor<T>,
    pipelines: Vec<PipelineCache<T>>,
    head: HeadCache<T>,
    bn_stats: Vec<(usize, usize, BatchStats<T>)>,
}

impl<T: Real> FusionNetwork<T> {
    /// Builds the network with Glorot-uniform weights drawn from `init_seed`.
    pub fn build(config: &NetworkConfig, init_seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let n_towers = if config.shared_weights { 1 } else { config.pipelines().len() };
        let ladder = config.shape_ladder();
        let eps = T::lit(config.bn_epsilon);
        let momentum = T::lit(config.bn_momentum);
        let mut towers = Vec::with_capacity(n_towers);
        for _ in 0..n_towers {
            let mut c_in = 1;
            let mut blocks = Vec::new();
            for (i, (&k, &c_out)) in config
                .conv_kernel_sizes
                .iter()
                .zip(&config.conv_filter_counts)
                .enumerate()
            {
                blocks.push(ConvBlock {
                    conv: Conv3d::init(c_in, c_out, k, &mut rng)?,
                    bn: BatchNorm::new(c_out, eps, momentum),
                    pool: ladder[i].1,
                });
                c_in = c_out;
            }
            towers.push(Tower { blocks });
        }
        let mut width = config.head_input_len();
        let mut hidden = Vec::new();
        for &units in &config.fc_units {
            hidden.push(Dense::init(width, units, &mut rng)?);
            width = units;
        }
        let output = Dense::init(width, config.num_classes, &mut rng)?;
        Ok(FusionNetwork {
            config: config.clone(),
            towers,
            head: Head { hidden, output },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn tower_for(&self, pipeline: usize) -> usize {
        if self.config.shared_weights {
            0
        } else {
            pipeline
        }
    }

    /// Visits parameter tensors in flat-vector order.
    fn visit_params(&self, mut f: impl FnMut(String, &[T])) {
        for (t, tower) in self.towers.iter().enumerate() {
            for (b, block) in tower.blocks.iter().enumerate() {
                f(format!("tower{t}.block{b}.conv.kernels"), block.conv.kernels.data());
                f(format!("tower{t}.block{b}.conv.bias"), block.conv.bias.data());
                f(format!("tower{t}.block{b}.bn.gamma"), &block.bn.gamma);
                f(format!("tower{t}.block{b}.bn.beta"), &block.bn.beta);
            }
        }
        for (i, d) in self.head.hidden.iter().enumerate() {
            f(format!("head.fc{i}.weights"), d.weights.data());
            f(format!("head.fc{i}.bias"), d.bias.data());
        }
        f("head.out.weights".into(), self.head.output.weights.data());
        f("head.out.bias".into(), self.head.output.bias.data());
    }

    fn visit_params_mut(&mut self, mut f: impl FnMut(&mut [T])) {
        for tower in &mut self.towers {
            for block in &mut tower.blocks {
                f(block.conv.kernels.data_mut());
                f(block.conv.bias.data_mut());
                f(&mut block.bn.gamma);
                f(&mut block.bn.beta);
            }
        }
        for d in &mut self.head.hidden {
            f(d.weights.data_mut());
            f(d.bias.data_mut());
        }
        f(self.head.output.weights.data_mut());
        f(self.head.output.bias.data_mut());
    }

    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        let mut offset = 0;
        self.visit_params(|name, s| {
            out.push(ParamBlock {
                name,
                offset,
                len: s.len(),
            });
            offset += s.len();
        });
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_, s| n += s.len());
        n
    }

    /// Gathers every trainable parameter into one flat vector.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit_params(|_, s| out.extend_from_slice(s));
        out
    }

    /// Scatters a flat vector produced by [`FusionNetwork::params`] back into the layers.
    pub fn set_params(&mut self, flat: &[T]) -> Result<(), ModelError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(ModelError::ParamLength {
                expected,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        self.visit_params_mut(|s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        Ok(())
    }

    /// Batch-norm running means and variances, block by block.
    pub fn running_stats(&self) -> Vec<T> {
        let mut out = Vec::new();
        for tower in &self.towers {
            for block in &tower.blocks {
                out.extend_from_slice(&block.bn.running_mean);
                out.extend_from_slice(&block.bn.running_var);
            }
        }
        out
    }

    pub fn set_running_stats(&mut self, flat: &[T]) -> Result<(), ModelError> {
        let expected = self.running_stats().len();
        if flat.len() != expected {
            return Err(ModelError::ParamLength {
                expected,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for tower in &mut self.towers {
            for block in &mut tower.blocks {
                let c = block.bn.channels();
                block.bn.running_mean.copy_from_slice(&flat[offset..offset + c]);
                block.bn.running_var.copy_from_slice(&flat[offset + c..offset + 2 * c]);
                offset += 2 * c;
            }
        }
        Ok(())
    }

    pub fn apply_bn_stats(&mut self, stats: &[(usize, usize, BatchStats<T>)]) {
        for (t, b, s) in stats {
            self.towers[*t].blocks[*b].bn.update_running(s);
        }
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> FusionNetwork<U> {
        let mut net = FusionNetwork::<U>::build(&self.config, 0).expect("config already validated");
        let params: Vec<U> = self.params().iter().map(|&x| U::lit(x.as_f64())).collect();
        net.set_params(&params).expect("same layout");
        let stats: Vec<U> = self.running_stats().iter().map(|&x| U::lit(x.as_f64())).collect();
        net.set_running_stats(&stats).expect("same layout");
        net
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<usize, ModelError> {
        let pipelines = self.config.pipelines();
        if batch.inputs.len() != pipelines.len() {
            return Err(ModelError::PipelineCount {
                expected: pipelines.len(),
                got: batch.inputs.len(),
            });
        }
        let n = batch.len();
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let s = self.config.roi_size;
        let expected = vec![n, 1, s, s, s];
        for (p, (input, spec)) in batch.inputs.iter().zip(&pipelines).enumerate() {
            if input.dims() != expected.as_slice() {
                return Err(ModelError::PipelineShape {
                    pipeline: format!("{spec} (#{p})"),
                    expected: expected.clone(),
                    got: input.dims().to_vec(),
                });
            }
        }
        if batch.keys.len() != n {
            return Err(ModelError::Config(format!(
                "batch has {n} samples but {} dropout keys",
                batch.keys.len()
            )));
        }
        Ok(n)
    }

    fn run(&self, batch: &Batch<T>, phase: Phase, dropout_seed: u64, keep: bool) -> Result<ForwardState<T>, ModelError> {
        let n = self.check_batch(batch)?;
        let mut pipelines = Vec::with_capacity(batch.inputs.len());
        let mut bn_stats = Vec::new();
        let mut features: Vec<Tensor<T>> = Vec::with_capacity(batch.inputs.len());

        for (p, input) in batch.inputs.iter().enumerate() {
            let t = self.tower_for(p);
            let mut x = input.clone();
            let mut caches = Vec::new();
            for (b, block) in self.towers[t].blocks.iter().enumerate() {
                let z = block.conv.forward(&x)?;
                let (y, bn_cache) = match phase {
                    Phase::Train => {
                        let (y, cache, stats) = block.bn.forward_train(&z)?;
                        bn_stats.push((t, b, stats));
                        (y, Some(cache))
                    }
                    Phase::Infer => (block.bn.forward_infer(&z)?, None),
                };
                drop(z);
                let a = relu_forward(&y);
                let (next, pool) = if block.pool {
                    let (o, c) = maxpool3d_forward(&a)?;
                    (o, Some(c))
                } else {
                    (a, None)
                };
                if keep {
                    caches.push(BlockCache {
                        input: std::mem::replace(&mut x, next),
                        bn: bn_cache,
                        pre_relu: y,
                        pool,
                    });
                } else {
                    x = next;
                }
            }
            let out_dims = x.dims().to_vec();
            let flat_len = x.len() / n;
            features.push(x.reshape(&[n, flat_len])?);
            pipelines.push(PipelineCache {
                blocks: caches,
                out_dims,
            });
        }

        // Late fusion: concatenate per-sample feature rows in pipeline order.
        let total: usize = features.iter().map(|f| f.dims()[1]).sum();
        let mut fused = Vec::with_capacity(n * total);
        for s in 0..n {
            for f in &features {
                let w = f.dims()[1];
                fused.extend_from_slice(&f.data()[s * w..(s + 1) * w]);
            }
        }
        let mut h = Tensor::from_vec(&[n, total], fused)?;

        let mut layer_inputs = Vec::new();
        let mut pre_relu = Vec::new();
        for dense in &self.head.hidden {
            let z = dense.forward(&h)?;
            let a = relu_forward(&z);
            layer_inputs.push(std::mem::replace(&mut h, a));
            pre_relu.push(z);
        }
        let width = h.dims()[1];
        let mut dropped = Vec::with_capacity(h.len());
        let mut masks = Vec::with_capacity(n);
        for s in 0..n {
            let row = Tensor::from_vec(&[width], h.data()[s * width..(s + 1) * width].to_vec())?;
            let mut rng = sample_rng(dropout_seed, batch.keys[s]);
            let (out, mask) = dropout_forward(&row, self.config.dropout_rate, phase, &mut rng)?;
            dropped.extend_from_slice(out.data());
            masks.push(mask);
        }
        let dropped = Tensor::from_vec(&[n, width], dropped)?;
        let logits = self.head.output.forward(&dropped)?;
        let probs = softmax_rows(&logits)?;
        layer_inputs.push(dropped);

        Ok(ForwardState {
            probs,
            pipelines,
            head: HeadCache {
                layer_inputs,
                pre_relu,
                masks,
                pre_dropout: h,
            },
            bn_stats,
        })
    }

    /// Class probabilities `[N, classes]`.
    pub fn forward_batch(&self, batch: &Batch<T>, phase: Phase, dropout_seed: u64) -> Result<Tensor<T>, ModelError> {
        Ok(self.run(batch, phase, dropout_seed, false)?.probs)
    }

    /// Probabilities for one sample given one `[1, s, s, s]` tensor per pipeline.
    pub fn forward(&self, sample: &[Tensor<T>], phase: Phase) -> Result<Tensor<T>, ModelError> {
        let batch = Batch::stack(&[sample.to_vec()], vec![0])?;
        let probs = self.forward_batch(&batch, phase, 0)?;
        Ok(probs.reshape(&[self.config.num_classes])?)
    }

    /// Index of the most probable class; ties resolve to the lower index.
    pub fn predict(&self, sample: &[Tensor<T>]) -> Result<usize, ModelError> {
        Ok(argmax(self.forward(sample, Phase::Infer)?.data()))
    }

    /// Mean Euclidean loss on softmax outputs and its gradient, train phase.
    pub fn loss_and_grad(&self, batch: &Batch<T>, dropout_seed: u64) -> Result<LossGrad<T>, ModelError> {
        let n = self.check_batch(batch)?;
        let classes = self.config.num_classes;
        let targets = batch
            .targets
            .as_ref()
            .ok_or_else(|| ModelError::Config("loss needs one-hot targets".into()))?;
        if targets.dims() != [n, classes] {
            return Err(ModelError::NotOneHot { row: 0, classes });
        }
        for (row, r) in targets.data().chunks(classes).enumerate() {
            let ones = r.iter().filter(|&&v| v == T::one()).count();
            let zeros = r.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != classes - 1 {
                return Err(ModelError::NotOneHot { row, classes });
            }
        }

        let state = self.run(batch, Phase::Train, dropout_seed, true)?;
        let inv_n = T::one() / T::lit(n as f64);
        let half = T::lit(0.5);
        let mut loss = T::zero();
        let mut dprobs = state.probs.zeros_like();
        for ((p, y), g) in state
            .probs
            .data()
            .iter()
            .zip(targets.data())
            .zip(dprobs.data_mut())
        {
            let diff = *p - *y;
            loss += half * diff * diff;
            *g = diff * inv_n;
        }
        loss = loss * inv_n;

        let grad = self.backward(&state, &dprobs, n)?;
        Ok(LossGrad {
            loss,
            grad,
            probs: state.probs,
            bn_stats: state.bn_stats,
        })
    }

    fn backward(&self, state: &ForwardState<T>, dprobs: &Tensor<T>, n: usize) -> Result<Vec<T>, ModelError> {
        let head = &state.head;
        let dlogits = softmax_backward(&state.probs, dprobs)?;
        let out_in = head.layer_inputs.last().expect("output layer input cached");
        let og = self.head.output.backward(out_in, &dlogits)?;

        let width = head.pre_dropout.dims()[1];
        let mut g = Vec::with_capacity(n * width);
        for (s, mask) in head.masks.iter().enumerate() {
            let row = Tensor::from_vec(&[width], og.input.data()[s * width..(s + 1) * width].to_vec())?;
            g.extend_from_slice(dropout_backward(mask, &row)?.data());
        }
        let mut g = Tensor::from_vec(&[n, width], g)?;

        let mut hidden_grads = Vec::with_capacity(self.head.hidden.len());
        for (i, dense) in self.head.hidden.iter().enumerate().rev() {
            let gz = relu_backward(&head.pre_relu[i], &g)?;
            let dg = dense.backward(&head.layer_inputs[i], &gz)?;
            g = dg.input;
            hidden_grads.push((dg.weights, dg.bias));
        }
        hidden_grads.reverse();

        // Split the fused gradient back into per-pipeline feature gradients.
        let total = g.dims()[1];
        let mut tower_grads: Vec<Vec<(Tensor<T>, Tensor<T>, Vec<T>, Vec<T>)>> = self
            .towers
            .iter()
            .map(|t| {
                t.blocks
                    .iter()
                    .map(|b| {
                        (
                            b.conv.kernels.zeros_like(),
                            b.conv.bias.zeros_like(),
                            vec![T::zero(); b.bn.channels()],
                            vec![T::zero(); b.bn.channels()],
                        )
                    })
                    .collect()
            })
            .collect();
        let mut col = 0;
        for (p, cache) in state.pipelines.iter().enumerate() {
            let t = self.tower_for(p);
            let w: usize = cache.out_dims.iter().skip(1).product();
            let mut gp = Vec::with_capacity(n * w);
            for s in 0..n {
                gp.extend_from_slice(&g.data()[s * total + col..s * total + col + w]);
            }
            col += w;
            let mut gx = Tensor::from_vec(&cache.out_dims, gp)?;
            for (b, (block, bc)) in self.towers[t].blocks.iter().zip(&cache.blocks).enumerate().rev() {
                let ga = match &bc.pool {
                    Some(pc) => maxpool3d_backward(pc, &gx)?,
                    None => gx,
                };
                let gy = relu_backward(&bc.pre_relu, &ga)?;
                let bn_cache = bc.bn.as_ref().expect("train-phase cache");
                let bng = block.bn.backward(bn_cache, &gy)?;
                let cg = block.conv.backward(&bc.input, &bng.input, b > 0)?;
                let acc = &mut tower_grads[t][b];
                for (a, v) in acc.0.data_mut().iter_mut().zip(cg.kernels.data()) {
                    *a += *v;
                }
                for (a, v) in acc.1.data_mut().iter_mut().zip(cg.bias.data()) {
                    *a += *v;
                }
                for (a, v) in acc.2.iter_mut().zip(&bng.gamma) {
                    *a += *v;
                }
                for (a, v) in acc.3.iter_mut().zip(&bng.beta) {
                    *a += *v;
                }
                gx = match cg.input {
                    Some(gi) => gi,
                    None => break,
                };
            }
        }

        let mut flat = Vec::with_capacity(self.num_params());
        for tower in tower_grads {
            for (k, b, gamma, beta) in tower {
                flat.extend_from_slice(k.data());
                flat.extend_from_slice(b.data());
                flat.extend_from_slice(&gamma);
                flat.extend_from_slice(&beta);
            }
        }
        for (w, b) in hidden_grads {
            flat.extend_from_slice(w.data());
            flat.extend_from_slice(b.data());
        }
        flat.extend_from_slice(og.weights.data());
        flat.extend_from_slice(og.bias.data());
        debug_assert_eq!(flat.len(), self.num_params());
        Ok(flat)
    }
}

/// First index of the maximum.
pub(crate) fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputMode, Preset};
    use rand::Rng;

    fn tiny_config(mode: InputMode) -> NetworkConfig {
        NetworkConfig {
            name: "tiny".into(),
            conv_kernel_sizes: vec![3, 2],
            conv_filter_counts: vec![2, 3],
            fc_units: vec![6, 4],
            dropout_rate: 0.25,
            roi_size: 8,
            input_mode: mode,
            num_classes: 2,
            shared_weights: false,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }

    fn random_sample(rng: &mut ChaCha8Rng, pipelines: usize, s: usize) -> Vec<Tensor<f64>> {
        (0..pipelines)
            .map(|_| Tensor::from_fn(&[1, s, s, s], |_| rng.gen_range(-1.0..1.0)).unwrap())
            .collect()
    }

    #[test]
    fn flat_round_trip_is_exact() {
        let mut net = FusionNetwork::<f32>::build(&tiny_config(InputMode::Fusion), 4).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.num_params());
        let shifted: Vec<f32> = p.iter().map(|x| x * 0.5 + 0.125).collect();
        net.set_params(&shifted).unwrap();
        assert_eq!(net.params(), shifted);
        net.set_params(&p).unwrap();
        assert_eq!(net.params(), p);
        assert!(matches!(net.set_params(&p[1..]), Err(ModelError::ParamLength { .. })));
        let blocks = net.param_blocks();
        assert_eq!(blocks.iter().map(|b| b.len).sum::<usize>(), p.len());
    }

    #[test]
    fn head_width_follows_pipelines() {
        let c = NetworkConfig::preset(Preset::C1, 28, InputMode::SmriLr);
        let net = FusionNetwork::<f32>::build(&c, 1).unwrap();
        assert_eq!(net.head.hidden[0].inputs(), 256);
        assert_eq!(net.head.output.outputs(), 2);
    }

    #[test]
    fn wrong_pipeline_shape_names_pipeline() {
        let net = FusionNetwork::<f64>::build(&tiny_config(InputMode::SmriLr), 1).unwrap();
        let good = Tensor::zeros(&[1, 8, 8, 8]).unwrap();
        let bad = Tensor::zeros(&[1, 6, 6, 6]).unwrap();
        let err = net.forward(&[good, bad], Phase::Infer).unwrap_err();
        assert!(err.to_string().contains("sMRI_R"), "{err}");
    }

    #[test]
    fn infer_is_deterministic_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = FusionNetwork::<f64>::build(&tiny_config(InputMode::Fusion), 3).unwrap();
        let sample = random_sample(&mut rng, 4, 8);
        let a = net.forward(&sample, Phase::Infer).unwrap();
        let b = net.forward(&sample, Phase::Infer).unwrap();
        assert_eq!(a, b);
        assert!((a.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn loss_examples() {
        // The loss is a function of the softmax output only; check it on
        // hand-picked probabilities through the same formula.
        let half_sq = |p: &[f64], y: &[f64]| 0.5 * p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        assert_eq!(half_sq(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(half_sq(&[0.5, 0.5], &[1.0, 0.0]), 0.25);

        // A network with zero output weights emits exactly (0.5, 0.5).
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = FusionNetwork::<f64>::build(&tiny_config(InputMode::SmriLr), 5).unwrap();
        net.head.output.weights = net.head.output.weights.zeros_like();
        let samples = vec![random_sample(&mut rng, 2, 8), random_sample(&mut rng, 2, 8)];
        let batch = Batch::stack(&samples, vec![0, 1]).unwrap().with_labels(&[0, 1], 2).unwrap();
        let lg = net.loss_and_grad(&batch, 0).unwrap();
        assert!((lg.loss - 0.25).abs() < 1e-15);
        assert_eq!(lg.grad.len(), net.num_params());
    }

    #[test]
    fn non_one_hot_targets_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = FusionNetwork::<f64>::build(&tiny_config(InputMode::SmriLr), 5).unwrap();
        let samples = vec![random_sample(&mut rng, 2, 8), random_sample(&mut rng, 2, 8)];
        let mut batch = Batch::stack(&samples, vec![0, 1]).unwrap();
        batch.targets = Some(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.5, 0.5]).unwrap());
        assert!(matches!(
            net.loss_and_grad(&batch, 0),
            Err(ModelError::NotOneHot { row: 1, .. })
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.9, 0.1]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.8]), 1);
    }

    #[test]
    fn shared_mode_swap_with_matching_concat_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut cfg = tiny_config(InputMode::SmriLr);
        cfg.shared_weights = true;
        let net = FusionNetwork::<f64>::build(&cfg, 6).unwrap();
        assert_eq!(net.towers.len(), 1);
        let sample = random_sample(&mut rng, 2, 8);
        let out = net.forward(&sample, Phase::Infer).unwrap();

        // Swap the inputs and the matching column blocks of the first FC layer.
        let mut swapped_net = net.clone();
        let f = cfg.flatten_len();
        let w = &mut swapped_net.head.hidden[0].weights;
        let cols = w.dims()[1];
        for row in w.data_mut().chunks_mut(cols) {
            let (a, b) = row.split_at_mut(f);
            a.swap_with_slice(&mut b[..f]);
        }
        let swapped = vec![sample[1].clone(), sample[0].clone()];
        let out2 = swapped_net.forward(&swapped, Phase::Infer).unwrap();
        for (a, b) in out.data().iter().zip(out2.data()) {
            assert!((a - b).abs() < 1e-14);
        }

        // With one shared tower there is nothing to swap; a separate-tower copy
        // holding two identical towers behaves the same either way round.
        let mut unshared_cfg = cfg.clone();
        unshared_cfg.shared_weights = false;
        let mut twin = FusionNetwork::<f64>::build(&unshared_cfg, 6).unwrap();
        twin.towers = vec![net.towers[0].clone(), net.towers[0].clone()];
        twin.head = net.head.clone();
        assert_eq!(twin.forward(&sample, Phase::Infer).unwrap(), out);
        twin.towers.swap(0, 1);
        assert_eq!(twin.forward(&sample, Phase::Infer).unwrap(), out);
    }
}
