use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

use super::adam::AdamState;
use super::layers::{self, BatchStats, BnCache};
use super::{Scalar, Tensor4};

/// Two quads of four `(x, y)` corners.
pub const OUTPUT_DIM: usize = 16;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub out_channels: usize,
    pub pool: bool,
}

/// Architecture description. Every conv block is conv 3x3 (stride 1, pad 1)
/// -> batch norm -> ReLU -> optional 2x2 max pool. Every FC layer but the
/// last is followed by ReLU; the last one emits the 16 coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_size: usize,
    pub conv_blocks: Vec<ConvBlockSpec>,
    pub fc_sizes: Vec<usize>,
}

impl NetConfig {
    /// Small network used for CPU-scale training.
    pub fn desk() -> Self {
        Self {
            input_size: 56,
            conv_blocks: [8, 16, 32]
                .map(|c| ConvBlockSpec {
                    out_channels: c,
                    pool: true,
                })
                .to_vec(),
            fc_sizes: vec![64, OUTPUT_DIM],
        }
    }

    /// Full-size 224x224 network with VGG-F-like widths. The widths and FC
    /// sizes are an approximation, not a published architecture.
    pub fn paper() -> Self {
        Self {
            input_size: 224,
            conv_blocks: [64, 256, 256, 256, 256]
                .map(|c| ConvBlockSpec {
                    out_channels: c,
                    pool: true,
                })
                .to_vec(),
            fc_sizes: vec![1024, OUTPUT_DIM],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown network preset '{other}' (expected 'desk' or 'paper')"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        if self.fc_sizes.last() != Some(&OUTPUT_DIM) {
            return Err(Error::Config(format!(
                "the last fully connected layer must have {OUTPUT_DIM} outputs"
            )));
        }
        if self.conv_blocks.iter().any(|b| b.out_channels == 0) || self.fc_sizes.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let (c, h, w) = self.feature_dims();
        if c * h * w == 0 {
            return Err(Error::Config(format!(
                "input size {} is too small for {} pooling stages",
                self.input_size,
                self.conv_blocks.iter().filter(|b| b.pool).count()
            )));
        }
        Ok(())
    }

    /// Shape (C, H, W) of the flattened conv output.
    pub fn feature_dims(&self) -> (usize, usize, usize) {
        let mut s = self.input_size;
        let mut c = 1;
        for b in &self.conv_blocks {
            c = b.out_channels;
            if b.pool {
                s /= 2;
            }
        }
        (c, s, s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// All network state: weights, batch-norm statistics and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub convs: Vec<ConvParams<T>>,
    pub fcs: Vec<DenseParams<T>>,
    pub adam: AdamState<T>,
}

/// Gradients in the order of [`NetParams::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> NetGrads<T> {
    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    /// Adds `other` element-wise.
    pub fn accumulate(&mut self, other: &NetGrads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

impl<T: Scalar> NetParams<T> {
    /// Trainable tensors in canonical order: per conv block weight, bias,
    /// gamma, beta; then per FC layer weight, bias.
    pub fn trainable(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::new();
        for c in &self.convs {
            v.extend([&c.weight[..], &c.bias, &c.gamma, &c.beta]);
        }
        for f in &self.fcs {
            v.extend([&f.weight[..], &f.bias]);
        }
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v: Vec<&mut Vec<T>> = Vec::new();
        for c in &mut self.convs {
            v.extend([&mut c.weight, &mut c.bias, &mut c.gamma, &mut c.beta]);
        }
        for f in &mut self.fcs {
            v.extend([&mut f.weight, &mut f.bias]);
        }
        v
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.convs.len() {
            for p in ["weight", "bias", "gamma", "beta"] {
                v.push(format!("conv{i}.{p}"));
            }
        }
        for i in 0..self.fcs.len() {
            for p in ["weight", "bias"] {
                v.push(format!("fc{i}.{p}"));
            }
        }
        v
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        let cv = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        NetParams {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    weight: cv(&c.weight),
                    bias: cv(&c.bias),
                    gamma: cv(&c.gamma),
                    beta: cv(&c.beta),
                    running_mean: cv(&c.running_mean),
                    running_var: cv(&c.running_var),
                })
                .collect(),
            fcs: self
                .fcs
                .iter()
                .map(|f| DenseParams {
                    in_features: f.in_features,
                    out_features: f.out_features,
                    weight: cv(&f.weight),
                    bias: cv(&f.bias),
                })
                .collect(),
            adam: AdamState {
                step: self.adam.step,
                m: self.adam.m.iter().map(cv).collect(),
                v: self.adam.v.iter().map(cv).collect(),
            },
        }
    }

    fn check_shapes(&self, cfg: &NetConfig) -> Result<()> {
        let bad = |what: String| Err(Error::Shape(format!("parameters do not match config: {what}")));
        if self.convs.len() != cfg.conv_blocks.len() || self.fcs.len() != cfg.fc_sizes.len() {
            return bad("layer count".into());
        }
        let mut in_c = 1;
        for (i, (p, b)) in self.convs.iter().zip(&cfg.conv_blocks).enumerate() {
            let oc = b.out_channels;
            if p.in_channels != in_c
                || p.out_channels != oc
                || p.weight.len() != oc * in_c * 9
                || [&p.bias, &p.gamma, &p.beta, &p.running_mean, &p.running_var]
                    .iter()
                    .any(|v| v.len() != oc)
            {
                return bad(format!("conv{i}"));
            }
            if p.running_var.iter().any(|v| !(*v > T::zero())) {
                return bad(format!("conv{i} running variance must be positive"));
            }
            in_c = oc;
        }
        let (c, h, w) = cfg.feature_dims();
        let mut in_f = c * h * w;
        for (i, (p, &of)) in self.fcs.iter().zip(&cfg.fc_sizes).enumerate() {
            if p.in_features != in_f || p.out_features != of || p.weight.len() != in_f * of || p.bias.len() != of {
                return bad(format!("fc{i}"));
            }
            in_f = of;
        }
        let n = self.trainable().len();
        if self.adam.m.len() != n || self.adam.v.len() != n {
            return bad("optimizer state".into());
        }
        for (t, (m, v)) in self.trainable().iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            if m.len() != t.len() || v.len() != t.len() {
                return bad("optimizer state".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    input: Tensor4<T>,
    bn: BnCache<T>,
    pre_relu: Tensor4<T>,
    pool: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct FcCache<T> {
    input: Vec<T>,
    pre_relu: Option<Vec<T>>,
}

/// Intermediate values of one forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    batch: usize,
    conv: Vec<ConvCache<T>>,
    fc: Vec<FcCache<T>>,
    /// Per conv block, present in training mode.
    pub batch_stats: Vec<BatchStats>,
}

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetConfig,
    pub params: NetParams<T>,
}

impl<T: Scalar> Network<T> {
    /// He-normal weights, zero biases, unit batch-norm scale.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for (i, c) in net.params.convs.iter_mut().enumerate() {
            let std = (2.0 / (c.in_channels * 9) as f64).sqrt();
            fill_normal(&mut c.weight, std, seed, &[0, i as u64]);
        }
        for (i, f) in net.params.fcs.iter_mut().enumerate() {
            let std = (2.0 / f.in_features as f64).sqrt();
            fill_normal(&mut f.weight, std, seed, &[1, i as u64]);
        }
        Ok(net)
    }

    /// All weights and biases zero; batch norm at identity scale.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut in_c = 1;
        for b in &config.conv_blocks {
            let oc = b.out_channels;
            convs.push(ConvParams {
                in_channels: in_c,
                out_channels: oc,
                weight: vec![T::zero(); oc * in_c * 9],
                bias: vec![T::zero(); oc],
                gamma: vec![T::one(); oc],
                beta: vec![T::zero(); oc],
                running_mean: vec![T::zero(); oc],
                running_var: vec![T::one(); oc],
            });
            in_c = oc;
        }
        let (c, h, w) = config.feature_dims();
        let mut in_f = c * h * w;
        let mut fcs = Vec::new();
        for &of in &config.fc_sizes {
            fcs.push(DenseParams {
                in_features: in_f,
                out_features: of,
                weight: vec![T::zero(); in_f * of],
                bias: vec![T::zero(); of],
            });
            in_f = of;
        }
        let mut params = NetParams {
            convs,
            fcs,
            adam: AdamState::default(),
        };
        params.adam = AdamState::for_params(&params);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: NetConfig, params: NetParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    /// Forward pass without touching running statistics. In training mode
    /// the cache carries the batch statistics to fold in afterwards.
    pub fn forward_pass(&self, x: &Tensor4<T>, mode: Mode) -> Result<(Vec<T>, ForwardCache<T>)> {
        let s = self.config.input_size;
        let n = x.batch();
        if x.dims() != [n, 1, s, s] || n == 0 {
            return Err(Error::Shape(format!(
                "network expects [N, 1, {s}, {s}] input, got {:?}",
                x.dims()
            )));
        }
        let mut cache = ForwardCache {
            batch: n,
            conv: Vec::with_capacity(self.params.convs.len()),
            fc: Vec::with_capacity(self.params.fcs.len()),
            batch_stats: Vec::new(),
        };
        let mut act = x.clone();
        for (p, spec) in self.params.convs.iter().zip(&self.config.conv_blocks) {
            let z = layers::conv2d_forward(&act, &p.weight, &p.bias, p.out_channels)?;
            let (y, bn) = match mode {
                Mode::Train => {
                    let (y, bn, stats) = layers::batchnorm_forward_train(&z, &p.gamma, &p.beta, BN_EPS)?;
                    cache.batch_stats.push(stats);
                    (y, bn)
                }
                Mode::Eval => {
                    layers::batchnorm_forward_eval(&z, &p.gamma, &p.beta, &p.running_mean, &p.running_var, BN_EPS)?
                }
            };
            let dims = y.dims();
            let r = Tensor4::from_vec(dims, layers::relu_forward(y.data()))?;
            let (next, pool) = if spec.pool {
                let (pooled, arg) = layers::maxpool_forward(&r);
                (pooled, Some(arg))
            } else {
                (r, None)
            };
            cache.conv.push(ConvCache {
                input: std::mem::replace(&mut act, next),
                bn,
                pre_relu: y,
                pool,
            });
        }
        let mut h = act.into_vec();
        let last = self.params.fcs.len() - 1;
        for (i, p) in self.params.fcs.iter().enumerate() {
            let z = layers::fc_forward(&h, n, &p.weight, &p.bias)?;
            if i == last {
                cache.fc.push(FcCache {
                    input: h,
                    pre_relu: None,
                });
                h = z;
            } else {
                let a = layers::relu_forward(&z);
                cache.fc.push(FcCache {
                    input: std::mem::replace(&mut h, a),
                    pre_relu: Some(z),
                });
            }
        }
        Ok((h, cache))
    }

    /// Inference: `[N, 16]` outputs, row-major.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Vec<T>> {
        Ok(self.forward_pass(x, Mode::Eval)?.0)
    }

    /// Training-mode forward that also folds the batch statistics into the
    /// running mean and variance.
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Vec<T>, ForwardCache<T>)> {
        let (out, cache) = self.forward_pass(x, Mode::Train)?;
        self.update_running_stats(&cache.batch_stats);
        Ok((out, cache))
    }

    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        let mom = BN_MOMENTUM;
        for (p, s) in self.params.convs.iter_mut().zip(stats) {
            let unbias = s.count as f64 / (s.count as f64 - 1.0);
            for c in 0..p.out_channels {
                let rm = p.running_mean[c].as_f64();
                let rv = p.running_var[c].as_f64();
                p.running_mean[c] = T::of((1.0 - mom) * rm + mom * s.mean[c]);
                p.running_var[c] = T::of((1.0 - mom) * rv + mom * s.var[c] * unbias);
            }
        }
    }

    /// Gradients of the parameters given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache<T>, dout: &[T]) -> Result<NetGrads<T>> {
        let n = cache.batch;
        if dout.len() != n * OUTPUT_DIM {
            return Err(Error::Shape("output gradient length".into()));
        }
        let mut fc_grads = Vec::with_capacity(self.params.fcs.len());
        let mut g = dout.to_vec();
        for (p, c) in self.params.fcs.iter().zip(&cache.fc).rev() {
            if let Some(z) = &c.pre_relu {
                g = layers::relu_backward(z, &g);
            }
            let (dx, dw, db) = layers::fc_backward(&c.input, n, &p.weight, &g)?;
            fc_grads.push((dw, db));
            g = dx;
        }
        fc_grads.reverse();

        let (fc_, fh, fw) = self.config.feature_dims();
        let mut gt = Tensor4::from_vec([n, fc_, fh, fw], g)?;
        let mut conv_grads = Vec::with_capacity(self.params.convs.len());
        for (p, c) in self.params.convs.iter().zip(&cache.conv).rev() {
            let pre_dims = c.pre_relu.dims();
            if let Some(arg) = &c.pool {
                gt = layers::maxpool_backward(&gt, arg, pre_dims)?;
            } else {
                gt = gt.with_dims(pre_dims)?;
            }
            let g_relu = Tensor4::from_vec(pre_dims, layers::relu_backward(c.pre_relu.data(), gt.data()))?;
            let (g_bn, dgamma, dbeta) = layers::batchnorm_backward(&c.bn, &p.gamma, &g_relu)?;
            let (dx, dw, db) = layers::conv2d_backward(&c.input, &p.weight, p.out_channels, &g_bn)?;
            conv_grads.push([dw, db, dgamma, dbeta]);
            gt = dx;
        }
        conv_grads.reverse();

        let mut tensors = Vec::new();
        for g4 in conv_grads {
            tensors.extend(g4);
        }
        for (dw, db) in fc_grads {
            tensors.push(dw);
            tensors.push(db);
        }
        Ok(NetGrads { tensors })
    }
}

fn fill_normal<T: Scalar>(dst: &mut [T], std: f64, seed: u64, keys: &[u64]) {
    let mut rng = rng_for(seed, keys);
    let normal = Normal::new(0.0, std).expect("finite std");
    for v in dst {
        *v = T::of(normal.sample(&mut rng));
    }
}
