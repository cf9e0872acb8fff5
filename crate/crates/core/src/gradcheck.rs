//! Finite-difference verification of every analytic gradient, in f64.
//!
//! Each layer is checked on the scalar `L = sum(r * layer(x))` with a random
//! weighting `r`, so the upstream gradient is exactly `r`. The end-to-end
//! check perturbs every parameter of a small fusion network and compares the
//! change in the Euclidean loss with the flat gradient from `loss_and_grad`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::layers::{
    dropout_backward, dropout_forward, maxpool3d_backward, maxpool3d_forward, relu_backward, relu_forward,
    softmax_backward, softmax_rows, BatchNorm, Conv3d, Dense, Phase,
};
use crate::model::{Batch, FusionNetwork, InputMode, ModelError, NetworkConfig};
use crate::seed::sample_rng;
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-6;

/// Gradient norm below which a block is compared in absolute terms. A conv
/// bias feeding batch norm has an exactly zero gradient, and the ratio of two
/// round-off residues is meaningless.
pub const NORM_FLOOR: f64 = 1e-4;

/// Comparison of one analytic gradient block against its numeric estimate.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub count: usize,
    /// `|a - n| / max(|a|, |n|, NORM_FLOOR)` in the Euclidean norm over the block.
    pub rel_error: f64,
    pub max_abs_diff: f64,
}

impl GradCheck {
    fn compare(name: impl Into<String>, analytic: &[f64], numeric: &[f64]) -> Self {
        assert_eq!(analytic.len(), numeric.len());
        GradCheck {
            name: name.into(),
            count: analytic.len(),
            rel_error: floored_relative_error(analytic, numeric),
            max_abs_diff: analytic
                .iter()
                .zip(numeric)
                .map(|(a, n)| (a - n).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.rel_error < tolerance
    }
}

/// Norm-wise relative error; zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn floored_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(NORM_FLOOR)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).expect("valid dims")
}

fn weighted(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with_data(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.dims(), data.to_vec()).expect("same length")
}

/// Checks every layer type on small random shapes drawn from `seed`.
pub fn check_layers(seed: u64) -> Result<Vec<GradCheck>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // conv3d: input, kernels, bias; odd and even kernels.
    for k in [3usize, 2] {
        let (n, ci, co, d) = (2, 2, 3, 5);
        let conv = Conv3d::<f64>::init(ci, co, k, &mut rng)?;
        let mut conv = Conv3d::new(conv.kernels, random_tensor(&mut rng, &[co]))?;
        let x = random_tensor(&mut rng, &[n, ci, d, d, d]);
        let r = random_tensor(&mut rng, &[n, co, d, d, d]);
        let g = conv.backward(&x, &r, true)?;
        let num = central_difference(x.data(), |p| weighted(&conv.forward(&with_data(&x, p)).unwrap(), &r));
        out.push(GradCheck::compare(format!("conv3d k={k} input"), g.input.unwrap().data(), &num));
        let kernels = conv.kernels.clone();
        let num = central_difference(kernels.data(), |p| {
            conv.kernels = with_data(&kernels, p);
            weighted(&conv.forward(&x).unwrap(), &r)
        });
        conv.kernels = kernels;
        out.push(GradCheck::compare(format!("conv3d k={k} kernels"), g.kernels.data(), &num));
        let bias = conv.bias.clone();
        let num = central_difference(bias.data(), |p| {
            conv.bias = with_data(&bias, p);
            weighted(&conv.forward(&x).unwrap(), &r)
        });
        out.push(GradCheck::compare(format!("conv3d k={k} bias"), g.bias.data(), &num));
    }

    // batch norm, train phase: input, gamma, beta.
    {
        let (n, c, d) = (3, 2, 3);
        let mut bn = BatchNorm::<f64>::new(c, 1e-5, 0.9);
        bn.gamma = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        bn.beta = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x = random_tensor(&mut rng, &[n, c, d, d, d]);
        let r = random_tensor(&mut rng, &[n, c, d, d, d]);
        let (_, cache, _) = bn.forward_train(&x)?;
        let g = bn.backward(&cache, &r)?;
        let num = central_difference(x.data(), |p| weighted(&bn.forward_train(&with_data(&x, p)).unwrap().0, &r));
        out.push(GradCheck::compare("batchnorm input", g.input.data(), &num));
        let gamma = bn.gamma.clone();
        let num = central_difference(&gamma, |p| {
            bn.gamma = p.to_vec();
            weighted(&bn.forward_train(&x).unwrap().0, &r)
        });
        bn.gamma = gamma;
        out.push(GradCheck::compare("batchnorm gamma", &g.gamma, &num));
        let beta = bn.beta.clone();
        let num = central_difference(&beta, |p| {
            bn.beta = p.to_vec();
            weighted(&bn.forward_train(&x).unwrap().0, &r)
        });
        out.push(GradCheck::compare("batchnorm beta", &g.beta, &num));
    }

    // relu, kept away from the kink so the step never crosses it.
    {
        let x = Tensor::from_fn(&[2, 2, 3, 3, 3], |_| {
            let v: f64 = rng.gen_range(0.01..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .expect("valid dims");
        let r = random_tensor(&mut rng, x.dims());
        let g = relu_backward(&x, &r)?;
        let num = central_difference(x.data(), |p| weighted(&relu_forward(&with_data(&x, p)), &r));
        out.push(GradCheck::compare("relu input", g.data(), &num));
    }

    // max pooling, odd extent to exercise the floor.
    {
        let x = random_tensor(&mut rng, &[2, 2, 5, 4, 5]);
        let (y, cache) = maxpool3d_forward(&x)?;
        let r = random_tensor(&mut rng, y.dims());
        let g = maxpool3d_backward(&cache, &r)?;
        let num = central_difference(x.data(), |p| weighted(&maxpool3d_forward(&with_data(&x, p)).unwrap().0, &r));
        out.push(GradCheck::compare("maxpool input", g.data(), &num));
    }

    // fully connected: input, weights, bias.
    {
        let (n, i, o) = (3, 7, 4);
        let d = Dense::<f64>::init(i, o, &mut rng)?;
        let mut dense = Dense::new(d.weights, random_tensor(&mut rng, &[o]))?;
        let x = random_tensor(&mut rng, &[n, i]);
        let r = random_tensor(&mut rng, &[n, o]);
        let g = dense.backward(&x, &r)?;
        let num = central_difference(x.data(), |p| weighted(&dense.forward(&with_data(&x, p)).unwrap(), &r));
        out.push(GradCheck::compare("dense input", g.input.data(), &num));
        let w = dense.weights.clone();
        let num = central_difference(w.data(), |p| {
            dense.weights = with_data(&w, p);
            weighted(&dense.forward(&x).unwrap(), &r)
        });
        dense.weights = w;
        out.push(GradCheck::compare("dense weights", g.weights.data(), &num));
        let b = dense.bias.clone();
        let num = central_difference(b.data(), |p| {
            dense.bias = with_data(&b, p);
            weighted(&dense.forward(&x).unwrap(), &r)
        });
        out.push(GradCheck::compare("dense bias", g.bias.data(), &num));
    }

    // dropout with a fixed mask.
    {
        let x = random_tensor(&mut rng, &[12]);
        let r = random_tensor(&mut rng, &[12]);
        let (_, mask) = dropout_forward(&x, 0.5, Phase::Train, &mut sample_rng(seed, 0))?;
        let g = dropout_backward(&mask, &r)?;
        let num = central_difference(x.data(), |p| {
            let (y, _) = dropout_forward(&with_data(&x, p), 0.5, Phase::Train, &mut sample_rng(seed, 0)).unwrap();
            weighted(&y, &r)
        });
        out.push(GradCheck::compare("dropout input", g.data(), &num));
    }

    // softmax over rows.
    {
        let x = random_tensor(&mut rng, &[3, 4]).scale(3.0);
        let r = random_tensor(&mut rng, &[3, 4]);
        let probs = softmax_rows(&x)?;
        let g = softmax_backward(&probs, &r)?;
        let num = central_difference(x.data(), |p| weighted(&softmax_rows(&with_data(&x, p)).unwrap(), &r));
        out.push(GradCheck::compare("softmax input", g.data(), &num));
    }

    Ok(out)
}

/// Two-block, two-pipeline network on 8-voxel cubes (well under 5000 parameters).
pub fn tiny_fusion_config() -> NetworkConfig {
    NetworkConfig {
        name: "tiny".into(),
        conv_kernel_sizes: vec![3, 3],
        conv_filter_counts: vec![3, 4],
        fc_units: vec![8],
        dropout_rate: 0.5,
        roi_size: 8,
        input_mode: InputMode::SmriLr,
        num_classes: 2,
        shared_weights: false,
        bn_epsilon: 1e-5,
        bn_momentum: 0.9,
    }
}

/// Compares the analytic loss gradient of a network built from `config`
/// with central differences over every parameter. Returns one entry per
/// parameter block followed by an `all parameters` entry.
pub fn check_network(config: &NetworkConfig, batch_size: usize, seed: u64) -> Result<Vec<GradCheck>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = FusionNetwork::<f64>::build(config, seed)?;
    // Nudge the affine batch-norm parameters off their defaults so their
    // gradients are not trivially structured.
    let mut params = net.params();
    for block in net.param_blocks() {
        if block.name.ends_with("gamma") || block.name.ends_with("beta") {
            for v in &mut params[block.offset..block.offset + block.len] {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    net.set_params(&params)?;

    let s = config.roi_size;
    let samples: Vec<Vec<Tensor<f64>>> = (0..batch_size)
        .map(|_| {
            config
                .pipelines()
                .iter()
                .map(|_| random_tensor(&mut rng, &[1, s, s, s]))
                .collect()
        })
        .collect();
    let labels: Vec<usize> = (0..batch_size).map(|i| i % config.num_classes).collect();
    let keys = (0..batch_size as u64).collect();
    let batch = Batch::stack(&samples, keys)?.with_labels(&labels, config.num_classes)?;
    let dropout_seed = seed ^ 0xD809;

    let analytic = net.loss_and_grad(&batch, dropout_seed)?.grad;
    let mut probe = net.clone();
    let numeric = central_difference(&params, |p| {
        probe.set_params(p).expect("same length");
        probe.loss_and_grad(&batch, dropout_seed).expect("valid batch").loss
    });

    let mut out: Vec<GradCheck> = net
        .param_blocks()
        .into_iter()
        .map(|b| {
            let r = b.offset..b.offset + b.len;
            GradCheck::compare(b.name, &analytic[r.clone()], &numeric[r])
        })
        .collect();
    out.push(GradCheck::compare("all parameters", &analytic, &numeric));
    Ok(out)
}
