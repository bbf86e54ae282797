//! The LITE classifier.
//!
//! ```text
//! x [B,1,T]
//!   ├─ frozen custom filters (17 kernels)  ┐
//!   └─ multiplexed convs, kernels 40/20/10 ┴─ concat → BN → ReLU        block 1
//!   depthwise (K=20, d=2) → pointwise → BN → ReLU                        block 2
//!   depthwise (K=20, d=4) → pointwise → BN → ReLU  = features [B,32,T]   block 3
//!   GAP → dense → logits [B, classes]
//! ```
//!
//! Convolutions are bias-free (batch norm follows each of them). The
//! features returned by [`LiteModel::forward`] are the post-activation
//! output of block 3, i.e. what the orthogonality loss sees.

mod checkpoint;
pub mod filters;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use filters::{CustomFilterBank, FilterKind};

use crate::error::{Error, Result};
use crate::tensor::{Fnv, Graph, Mode, RunningStats, Tensor, Var};

/// Trainable parameter count of one InceptionTime network as reported
/// alongside LITE; used only to express LITE's relative size.
pub const INCEPTION_TIME_PARAM_COUNT: usize = 420_192;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteConfig {
    /// Output channels of the two depthwise-separable blocks.
    pub n_filters: usize,
    pub first_layer_kernel_sizes: Vec<usize>,
    /// Trainable filters per first-layer kernel size.
    pub first_layer_filters_per_kernel: usize,
    pub dwsc_kernel_sizes: [usize; 2],
    pub dwsc_dilations: [usize; 2],
    pub increasing_lengths: Vec<usize>,
    pub decreasing_lengths: Vec<usize>,
    pub peak_lengths: Vec<usize>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for LiteConfig {
    fn default() -> Self {
        LiteConfig {
            n_filters: 32,
            first_layer_kernel_sizes: vec![40, 20, 10],
            first_layer_filters_per_kernel: 32,
            dwsc_kernel_sizes: [20, 20],
            dwsc_dilations: [2, 4],
            increasing_lengths: vec![2, 4, 8, 16, 32, 64],
            decreasing_lengths: vec![2, 4, 8, 16, 32, 64],
            peak_lengths: vec![4, 8, 16, 32, 64],
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }
}

impl LiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_filters == 0 || self.first_layer_filters_per_kernel == 0 {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        if self.first_layer_kernel_sizes.is_empty() || self.first_layer_kernel_sizes.contains(&0) {
            return Err(Error::Config("first layer needs at least one positive kernel size".into()));
        }
        if self.dwsc_kernel_sizes.contains(&0) || self.dwsc_dilations.contains(&0) {
            return Err(Error::Config("depthwise kernel sizes and dilations must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_epsilon <= 0.0 {
            return Err(Error::Config("batch-norm momentum must be in [0,1) and epsilon > 0".into()));
        }
        Ok(())
    }

    fn custom_count(&self) -> usize {
        self.increasing_lengths.len() + self.decreasing_lengths.len() + self.peak_lengths.len()
    }

    /// Channels leaving block 1.
    pub fn block1_channels(&self) -> usize {
        self.first_layer_kernel_sizes.len() * self.first_layer_filters_per_kernel + self.custom_count()
    }

    /// Trainable parameter count from the layer algebra alone.
    pub fn expected_param_count(&self, n_classes: usize) -> usize {
        let c1 = self.block1_channels();
        let f = self.n_filters;
        let mux: usize = self.first_layer_kernel_sizes.iter().map(|k| k * self.first_layer_filters_per_kernel).sum();
        let block1 = mux + 2 * c1;
        let block2 = c1 * self.dwsc_kernel_sizes[0] + f * c1 + 2 * f;
        let block3 = f * self.dwsc_kernel_sizes[1] + f * f + 2 * f;
        let head = f * n_classes + n_classes;
        block1 + block2 + block3 + head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
}

impl BatchNormLayer {
    fn new(c: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
            running: RunningStats::new(c),
        }
    }
}

/// Node handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    pub features: Var,
    /// Trainable parameters, in [`LiteModel::param_names`] order.
    pub params: Vec<Var>,
    /// Frozen custom filter kernels.
    pub custom: Vec<Var>,
}

/// Final depthwise kernel bank, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalFilters {
    pub filters: Tensor,
    pub channels: usize,
    pub kernel_len: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiteModel {
    config: LiteConfig,
    n_classes: usize,
    seed: u64,
    custom: CustomFilterBank,
    mux: Vec<Tensor>,
    bn: [BatchNormLayer; 3],
    depthwise: [Tensor; 2],
    pointwise: [Tensor; 2],
    dense_w: Tensor,
    dense_b: Tensor,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("valid shape")
}

/// Glorot-uniform init of a conv kernel `[out, in_per_group, k]`.
fn glorot_conv(rng: &mut ChaCha8Rng, out: usize, in_g: usize, k: usize, groups: usize) -> Tensor {
    glorot(rng, &[out, in_g, k], in_g * k, (out / groups) * k)
}

impl LiteModel {
    /// Builds a freshly initialised model. Identical `(config, n_classes,
    /// seed)` give bit-identical parameters.
    pub fn init(config: &LiteConfig, n_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let custom = CustomFilterBank::build(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fpk = config.first_layer_filters_per_kernel;
        let mux = config
            .first_layer_kernel_sizes
            .iter()
            .map(|&k| glorot_conv(&mut rng, fpk, 1, k, 1))
            .collect();
        let c1 = config.block1_channels();
        let f = config.n_filters;
        let [k2, k3] = config.dwsc_kernel_sizes;
        let dw2 = glorot_conv(&mut rng, c1, 1, k2, c1);
        let pw2 = glorot_conv(&mut rng, f, c1, 1, 1);
        let dw3 = glorot_conv(&mut rng, f, 1, k3, f);
        let pw3 = glorot_conv(&mut rng, f, f, 1, 1);
        let dense_w = glorot(&mut rng, &[n_classes, f], f, n_classes);
        Ok(LiteModel {
            config: config.clone(),
            n_classes,
            seed,
            custom,
            mux,
            bn: [BatchNormLayer::new(c1), BatchNormLayer::new(f), BatchNormLayer::new(f)],
            depthwise: [dw2, dw3],
            pointwise: [pw2, pw3],
            dense_w,
            dense_b: Tensor::zeros(&[n_classes]),
        })
    }

    pub fn config(&self) -> &LiteConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn custom_filters(&self) -> &CustomFilterBank {
        &self.custom
    }

    pub fn batch_norms(&self) -> &[BatchNormLayer; 3] {
        &self.bn
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .config
            .first_layer_kernel_sizes
            .iter()
            .map(|k| format!("block1.conv_k{k}"))
            .collect();
        names.extend(
            [
                "block1.bn.gamma",
                "block1.bn.beta",
                "block2.depthwise",
                "block2.pointwise",
                "block2.bn.gamma",
                "block2.bn.beta",
                "block3.depthwise",
                "block3.pointwise",
                "block3.bn.gamma",
                "block3.bn.beta",
                "head.weight",
                "head.bias",
            ]
            .map(String::from),
        );
        names
    }

    /// Trainable tensors, in [`LiteModel::param_names`] order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.mux.iter().collect();
        v.extend([
            &self.bn[0].gamma,
            &self.bn[0].beta,
            &self.depthwise[0],
            &self.pointwise[0],
            &self.bn[1].gamma,
            &self.bn[1].beta,
            &self.depthwise[1],
            &self.pointwise[1],
            &self.bn[2].gamma,
            &self.bn[2].beta,
            &self.dense_w,
            &self.dense_b,
        ]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let [bn0, bn1, bn2] = &mut self.bn;
        let [dw0, dw1] = &mut self.depthwise;
        let [pw0, pw1] = &mut self.pointwise;
        let mut v: Vec<&mut Tensor> = self.mux.iter_mut().collect();
        v.extend([
            &mut bn0.gamma,
            &mut bn0.beta,
            dw0,
            pw0,
            &mut bn1.gamma,
            &mut bn1.beta,
            dw1,
            pw1,
            &mut bn2.gamma,
            &mut bn2.beta,
            &mut self.dense_w,
            &mut self.dense_b,
        ]);
        v
    }

    /// Exact trainable parameter count; frozen custom filters excluded.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Fingerprint of every trainable tensor and all running statistics.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::default();
        for t in self.params() {
            h.write(t.checksum());
        }
        for bn in &self.bn {
            for v in bn.running.mean.iter().chain(&bn.running.var) {
                h.write(v.to_bits());
            }
        }
        h.0
    }

    pub fn extract_final_filters(&self) -> FinalFilters {
        let dw = &self.depthwise[1];
        let (c, k) = (dw.shape()[0], dw.shape()[2]);
        FinalFilters {
            filters: Tensor::new(&[c, k], dw.data().to_vec()).expect("reshape"),
            channels: c,
            kernel_len: k,
            dilation: self.config.dwsc_dilations[1],
        }
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let s = g.value(x).shape();
        if s.len() != 3 || s[1] != 1 {
            return Err(Error::Dimension(format!("LITE expects input [B, 1, T], got {s:?}")));
        }
        Ok(())
    }

    fn build(&self, g: &mut Graph, x: Var, mode: Mode, track_grad: bool) -> Result<(ForwardOutput, Vec<crate::tensor::BatchStats>)> {
        self.check_input(g, x)?;
        let mut params = Vec::with_capacity(15);
        let mut put = |g: &mut Graph, t: &Tensor| -> Result<Var> {
            let v = if track_grad { g.param(t.clone())? } else { g.constant(t.clone())? };
            params.push(v);
            Ok(v)
        };
        let eps = self.config.bn_epsilon;
        let mut stats = Vec::with_capacity(3);

        // block 1
        let mut branches = Vec::with_capacity(self.mux.len() + 6);
        for k in &self.mux {
            let kv = put(g, k)?;
            branches.push(g.conv1d(x, kv, None, 1, 1)?);
        }
        let mut custom = Vec::new();
        for k in self.custom.kernels() {
            let kv = g.constant(k)?;
            custom.push(kv);
            branches.push(g.conv1d(x, kv, None, 1, 1)?);
        }
        let cat = g.concat_channels(&branches)?;
        let gam = put(g, &self.bn[0].gamma)?;
        let bet = put(g, &self.bn[0].beta)?;
        let (h, st) = g.batch_norm_1d(cat, gam, bet, &self.bn[0].running, mode, eps)?;
        stats.extend(st);
        let mut h = g.relu(h);
        check_finite(g, h, "block 1")?;

        // blocks 2 and 3
        for i in 0..2 {
            let ch = g.value(h).shape()[1];
            let dw = put(g, &self.depthwise[i])?;
            let pw = put(g, &self.pointwise[i])?;
            let d = g.conv1d(h, dw, None, self.config.dwsc_dilations[i], ch)?;
            let p = g.conv1d(d, pw, None, 1, 1)?;
            let gam = put(g, &self.bn[i + 1].gamma)?;
            let bet = put(g, &self.bn[i + 1].beta)?;
            let (n, st) = g.batch_norm_1d(p, gam, bet, &self.bn[i + 1].running, mode, eps)?;
            stats.extend(st);
            h = g.relu(n);
            check_finite(g, h, if i == 0 { "block 2" } else { "block 3" })?;
        }
        let features = h;

        let pooled = g.global_avg_pool(features)?;
        let w = put(g, &self.dense_w)?;
        let b = put(g, &self.dense_b)?;
        let logits = g.dense(pooled, w, b)?;
        check_finite(g, logits, "classification head")?;
        Ok((
            ForwardOutput {
                logits,
                features,
                params,
                custom,
            },
            stats,
        ))
    }

    /// Records a forward pass on `g`. In train mode the batch statistics
    /// are folded into the running statistics.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode, track_grad: bool) -> Result<ForwardOutput> {
        let (out, stats) = self.build(g, x, mode, track_grad)?;
        let m = self.config.bn_momentum;
        for (bn, st) in self.bn.iter_mut().zip(&stats) {
            bn.running.update(st, m);
        }
        Ok(out)
    }

    /// Eval-mode forward pass without gradient tracking, chunked over the
    /// batch. Returns `(logits [N, classes], features [N, C, T])`.
    pub fn infer(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        const CHUNK: usize = 64;
        let s = x.shape();
        if s.len() != 3 || s[1] != 1 {
            return Err(Error::Dimension(format!("LITE expects input [N, 1, T], got {s:?}")));
        }
        let n = s[0];
        let mut logits = Vec::new();
        let mut feats = Vec::new();
        let mut fshape = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut g = Graph::new();
            let xv = g.constant(x.select_rows(&idx)?)?;
            let (out, _) = self.build(&mut g, xv, Mode::Eval, false)?;
            logits.extend_from_slice(g.value(out.logits).data());
            let f = g.value(out.features);
            fshape = f.shape().to_vec();
            feats.extend_from_slice(f.data());
            start = end;
        }
        fshape[0] = n;
        Ok((Tensor::new(&[n, self.n_classes], logits)?, Tensor::new(&fshape, feats)?))
    }

    /// Softmax class probabilities in eval mode, `[N, classes]`.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let (logits, _) = self.infer(x)?;
        let k = self.n_classes;
        let mut p = logits.into_data();
        for row in p.chunks_mut(k) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Tensor::new(&[x.shape()[0], k], p)
    }
}

fn check_finite(g: &Graph, v: Var, layer: &str) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activations in {layer}")))
    }
}

/// Model size relative to a reference parameter count.
pub fn ratio_vs_reference(count: usize, reference_count: usize) -> f64 {
    count as f64 / reference_count as f64
}
