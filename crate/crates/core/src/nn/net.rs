//! Small residual classifier: stem conv, residual blocks grouped in stages,
//! global average pooling and a final fully-connected layer.

use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm, BnCache, BnMode, Conv2d, Linear,
};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{substream, SeededRng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Input patch edge in pixels.
    pub input_size: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    /// Output channels of each stage. Stage 0 keeps resolution, later stages halve it.
    pub stage_channels: Vec<usize>,
    /// Residual blocks in each stage; the total is the block count `B`.
    pub blocks_per_stage: Vec<usize>,
    pub classes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetConfig {
    /// 64 px input, six blocks.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            stem_channels: 8,
            stem_stride: 2,
            stage_channels: vec![8, 16, 32],
            blocks_per_stage: vec![2, 2, 2],
            classes: 2,
        }
    }

    /// 512 px input, 14 blocks (28 convolutions plus the classifier), about
    /// 5M parameters. Expressible, not exercised by the test suite.
    pub fn production_shape() -> Self {
        Self {
            input_size: 512,
            stem_channels: 32,
            stem_stride: 4,
            stage_channels: vec![32, 64, 128, 256],
            blocks_per_stage: vec![3, 4, 4, 3],
            classes: 2,
        }
    }

    pub fn block_count(&self) -> usize {
        self.blocks_per_stage.iter().sum()
    }

    pub fn total_stride(&self) -> usize {
        self.stem_stride * (1usize << self.stage_channels.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: String| Err(Error::config(format!("net.{f}"), m));
        if self.stage_channels.is_empty() || self.stage_channels.len() != self.blocks_per_stage.len() {
            return err("stage_channels", "needs one entry per stage, matching blocks_per_stage".into());
        }
        if self.block_count() == 0 {
            return err("blocks_per_stage", "at least one residual block is required".into());
        }
        if self.stem_stride == 0 || self.input_size == 0 || !self.input_size.is_multiple_of(self.total_stride()) {
            return err(
                "input_size",
                format!("{} not divisible by total stride {}", self.input_size, self.total_stride()),
            );
        }
        if self.classes < 2 || self.stem_channels == 0 || self.stage_channels.contains(&0) {
            return err("classes", "need >= 2 classes and nonzero channel counts".into());
        }
        Ok(())
    }

    /// `(in_channels, out_channels, stride)` for every block, in order.
    pub fn block_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = Vec::with_capacity(self.block_count());
        let mut c_in = self.stem_channels;
        for (s, (&c, &n)) in self.stage_channels.iter().zip(&self.blocks_per_stage).enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                shapes.push((c_in, c, stride));
                c_in = c;
            }
        }
        shapes
    }
}

/// Convolution followed by batch normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct ConvBnCache {
    input: Tensor,
    bn: BnCache,
    /// Post-ReLU output when the unit ends in a ReLU.
    relu_out: Option<Tensor>,
}

impl ConvBn {
    pub fn init(in_c: usize, out_c: usize, k: usize, stride: usize, rng: &mut SeededRng) -> Self {
        Self { conv: Conv2d::init(in_c, out_c, k, stride, rng), bn: BatchNorm::new(out_c) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { conv: self.conv.zeros_like(), bn: self.bn.zeros_like() }
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode, with_relu: bool) -> (Tensor, ConvBnCache) {
        let z = self.conv.forward(x);
        let (mut y, bn) = self.bn.forward(&z, mode);
        let relu_out = with_relu.then(|| {
            relu(&mut y);
            y.clone()
        });
        (y, ConvBnCache { input: x.clone(), bn, relu_out })
    }

    pub fn backward(
        &self,
        cache: &ConvBnCache,
        mut dy: Tensor,
        grads: Option<&mut ConvBn>,
        want_dx: bool,
    ) -> Option<Tensor> {
        if let Some(out) = &cache.relu_out {
            relu_backward(out, &mut dy);
        }
        match grads {
            Some(g) => {
                let dz = self.bn.backward(&cache.bn, &dy, Some(&mut g.bn));
                self.conv.backward(&cache.input, &dz, Some(&mut g.conv.weight), want_dx)
            }
            None => {
                if !want_dx {
                    return None;
                }
                let dz = self.bn.backward(&cache.bn, &dy, None);
                self.conv.backward(&cache.input, &dz, None, true)
            }
        }
    }

    pub fn update_running(&mut self, cache: &ConvBnCache, momentum: f64) {
        self.bn.update_running(&cache.bn, momentum);
    }
}

/// `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`, where the shortcut is
/// the identity or a strided 1×1 conv + BN when the shape changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub shortcut: Option<ConvBn>,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    c1: ConvBnCache,
    c2: ConvBnCache,
    sc: Option<ConvBnCache>,
    out: Tensor,
}

impl BlockParams {
    pub fn init(in_c: usize, out_c: usize, stride: usize, rng: &mut SeededRng) -> Self {
        let conv1 = ConvBn::init(in_c, out_c, 3, stride, rng);
        let conv2 = ConvBn::init(out_c, out_c, 3, 1, rng);
        let shortcut = (stride != 1 || in_c != out_c).then(|| ConvBn::init(in_c, out_c, 1, stride, rng));
        Self { conv1, conv2, shortcut }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            shortcut: self.shortcut.as_ref().map(ConvBn::zeros_like),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode) -> (Tensor, BlockCache) {
        let (h1, c1) = self.conv1.forward(x, mode, true);
        let (mut h2, c2) = self.conv2.forward(&h1, mode, false);
        let sc = match &self.shortcut {
            Some(s) => {
                let (y, c) = s.forward(x, mode, false);
                h2.add_assign(&y);
                Some(c)
            }
            None => {
                h2.add_assign(x);
                None
            }
        };
        relu(&mut h2);
        let cache = BlockCache { c1, c2, sc, out: h2.clone() };
        (h2, cache)
    }

    /// Gradient w.r.t. the block input; parameter gradients accumulate into
    /// `grads` when given.
    pub fn backward(&self, cache: &BlockCache, dy: &Tensor, mut grads: Option<&mut BlockParams>) -> Tensor {
        let mut dz = dy.clone();
        relu_backward(&cache.out, &mut dz);
        let dh1 = self
            .conv2
            .backward(&cache.c2, dz.clone(), grads.as_deref_mut().map(|g| &mut g.conv2), true)
            .expect("dx requested");
        let mut dx = self
            .conv1
            .backward(&cache.c1, dh1, grads.as_deref_mut().map(|g| &mut g.conv1), true)
            .expect("dx requested");
        match (&self.shortcut, &cache.sc) {
            (Some(s), Some(c)) => {
                let g = grads.and_then(|g| g.shortcut.as_mut());
                dx.add_assign(&s.backward(c, dz, g, true).expect("dx requested"));
            }
            _ => dx.add_assign(&dz),
        }
        dx
    }

    pub fn update_running(&mut self, cache: &BlockCache, momentum: f64) {
        self.conv1.update_running(&cache.c1, momentum);
        self.conv2.update_running(&cache.c2, momentum);
        if let (Some(s), Some(c)) = (self.shortcut.as_mut(), cache.sc.as_ref()) {
            s.update_running(c, momentum);
        }
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a [f64])) {
        visit_conv_bn(&self.conv1, &format!("{prefix}.conv1"), f);
        visit_conv_bn(&self.conv2, &format!("{prefix}.conv2"), f);
        if let Some(s) = &self.shortcut {
            visit_conv_bn(s, &format!("{prefix}.shortcut"), f);
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_conv_bn_mut(&mut self.conv1, &format!("{prefix}.conv1"), f);
        visit_conv_bn_mut(&mut self.conv2, &format!("{prefix}.conv2"), f);
        if let Some(s) = &mut self.shortcut {
            visit_conv_bn_mut(s, &format!("{prefix}.shortcut"), f);
        }
    }

    pub(crate) fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a [f64])) {
        visit_bn_buffers(&self.conv1.bn, &format!("{prefix}.conv1"), f);
        visit_bn_buffers(&self.conv2.bn, &format!("{prefix}.conv2"), f);
        if let Some(s) = &self.shortcut {
            visit_bn_buffers(&s.bn, &format!("{prefix}.shortcut"), f);
        }
    }

    pub(crate) fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_bn_buffers_mut(&mut self.conv1.bn, &format!("{prefix}.conv1"), f);
        visit_bn_buffers_mut(&mut self.conv2.bn, &format!("{prefix}.conv2"), f);
        if let Some(s) = &mut self.shortcut {
            visit_bn_buffers_mut(&mut s.bn, &format!("{prefix}.shortcut"), f);
        }
    }
}

pub(crate) fn visit_conv_bn<'a>(u: &'a ConvBn, prefix: &str, f: &mut dyn FnMut(&str, &'a [f64])) {
    f(&format!("{prefix}.weight"), &u.conv.weight);
    f(&format!("{prefix}.bn.gamma"), &u.bn.gamma);
    f(&format!("{prefix}.bn.beta"), &u.bn.beta);
}

pub(crate) fn visit_conv_bn_mut(u: &mut ConvBn, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
    f(&format!("{prefix}.weight"), &mut u.conv.weight);
    f(&format!("{prefix}.bn.gamma"), &mut u.bn.gamma);
    f(&format!("{prefix}.bn.beta"), &mut u.bn.beta);
}

fn visit_bn_buffers<'a>(bn: &'a BatchNorm, prefix: &str, f: &mut dyn FnMut(&str, &'a [f64])) {
    f(&format!("{prefix}.bn.running_mean"), &bn.running_mean);
    f(&format!("{prefix}.bn.running_var"), &bn.running_var);
}

fn visit_bn_buffers_mut(bn: &mut BatchNorm, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
    f(&format!("{prefix}.bn.running_mean"), &mut bn.running_mean);
    f(&format!("{prefix}.bn.running_var"), &mut bn.running_var);
}

/// Every learned tensor of the classifier plus its normalization buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub config: NetConfig,
    pub stem: ConvBn,
    pub blocks: Vec<BlockParams>,
    pub fc: Linear,
}

/// Name prefix of the final fully-connected layer's tensors.
pub const FINAL_LAYER_PREFIX: &str = "fc.";

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct NetCache {
    stem: ConvBnCache,
    blocks: Vec<BlockCache>,
    last_hw: (usize, usize),
    pooled: Tensor,
}

impl NetParams {
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "net-init");
        let stem = ConvBn::init(1, config.stem_channels, 3, config.stem_stride, &mut rng);
        let blocks = config
            .block_shapes()
            .into_iter()
            .map(|(i, o, s)| BlockParams::init(i, o, s, &mut rng))
            .collect();
        let last = *config.stage_channels.last().expect("validated");
        let fc = Linear::init(last, config.classes, &mut rng);
        Ok(Self { config: config.clone(), stem, blocks, fc })
    }

    /// Same shapes, every value zero (used as a gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            stem: self.stem.zeros_like(),
            blocks: self.blocks.iter().map(BlockParams::zeros_like).collect(),
            fc: self.fc.zeros_like(),
        }
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        if x.c != 1 || x.h != s || x.w != s || x.n == 0 {
            return Err(Error::Argument(format!(
                "batch is {}x{}x{}x{}, net expects Nx1x{s}x{s}",
                x.n, x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    pub fn stem_forward(&self, x: &Tensor, mode: BnMode) -> (Tensor, ConvBnCache) {
        self.stem.forward(x, mode, true)
    }

    /// Pool and classify block features; returns logits `[n][classes]`.
    pub fn head_forward(&self, feat: &Tensor) -> (Vec<f64>, Tensor) {
        let pooled = global_avg_pool(feat);
        (self.fc.forward(&pooled.data, feat.n), pooled)
    }

    pub fn forward(&self, x: &Tensor, mode: BnMode) -> Result<(Vec<f64>, NetCache)> {
        self.check_input(x)?;
        let (mut h, stem) = self.stem_forward(x, mode);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&h, mode);
            blocks.push(c);
            h = y;
        }
        let (logits, pooled) = self.head_forward(&h);
        Ok((logits, NetCache { stem, blocks, last_hw: (h.h, h.w), pooled }))
    }

    /// Final-layer input features (pooled block output) without caching.
    pub fn features(&self, x: &Tensor, mode: BnMode) -> Result<Tensor> {
        self.check_input(x)?;
        let (mut h, _) = self.stem_forward(x, mode);
        for b in &self.blocks {
            h = b.forward(&h, mode).0;
        }
        Ok(global_avg_pool(&h))
    }

    /// Gradient of the loss whose logit gradient is `dlogits` w.r.t. every parameter.
    pub fn backward(&self, cache: &NetCache, dlogits: &[f64]) -> NetParams {
        let mut grads = self.zeros_like();
        let n = cache.pooled.n;
        let dpooled = self.fc.backward(&cache.pooled.data, dlogits, n, Some(&mut grads.fc));
        let (h, w) = cache.last_hw;
        let mut dh = global_avg_pool_backward(&Tensor::from_vec(n, cache.pooled.c, 1, 1, dpooled), h, w);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dh = b.backward(&cache.blocks[i], &dh, Some(&mut grads.blocks[i]));
        }
        self.stem.backward(&cache.stem, dh, Some(&mut grads.stem), false);
        grads
    }

    /// Fold batch statistics from a batch-mode forward into the running buffers.
    pub fn update_running(&mut self, cache: &NetCache, momentum: f64) {
        self.stem.update_running(&cache.stem, momentum);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.update_running(c, momentum);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }

    /// Running statistics, which are state but not trained by gradient.
    pub fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        visit_bn_buffers(&self.stem.bn, "stem", f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_buffers(&format!("blocks.{i}"), f);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_bn_buffers_mut(&mut self.stem.bn, "stem", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers_mut(&format!("blocks.{i}"), f);
        }
    }
}

impl ParamSet for NetParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        visit_conv_bn(&self.stem, "stem", f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        f("fc.weight", &self.fc.weight);
        f("fc.bias", &self.fc.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_conv_bn_mut(&mut self.stem, "stem", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), f);
        }
        f("fc.weight", &mut self.fc.weight);
        f("fc.bias", &mut self.fc.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradient_check, GradCheckOptions};
    use crate::nn::loss::cross_entropy;
    use crate::rng::seeded;
    use rand::Rng;

    fn tiny() -> NetConfig {
        NetConfig {
            input_size: 8,
            stem_channels: 3,
            stem_stride: 1,
            stage_channels: vec![3, 4],
            blocks_per_stage: vec![1, 1],
            classes: 2,
        }
    }

    fn batch(n: usize, s: usize, seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        Tensor::from_vec(n, 1, s, s, (0..n * s * s).map(|_| rng.random::<f64>()).collect())
    }

    #[test]
    fn desk_shape_and_names() {
        let p = NetParams::init(&NetConfig::desk(), 0).unwrap();
        assert_eq!(p.blocks.len(), 6);
        let names = p.names();
        assert_eq!(names.first().unwrap(), "stem.weight");
        assert_eq!(names.last().unwrap(), "fc.bias");
        assert!(names.iter().any(|n| n == "blocks.2.shortcut.weight"));
        let (logits, _) = p.forward(&batch(3, 64, 1), BnMode::Batch).unwrap();
        assert_eq!(logits.len(), 6);
        assert!(p.forward(&batch(1, 32, 1), BnMode::Batch).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        let a = NetParams::init(&tiny(), 5).unwrap();
        assert_eq!(a.digest(), NetParams::init(&tiny(), 5).unwrap().digest());
        assert_ne!(a.digest(), NetParams::init(&tiny(), 6).unwrap().digest());
    }

    #[test]
    fn finite_difference_agrees_in_both_modes() {
        let mut p = NetParams::init(&tiny(), 3).unwrap();
        // non-trivial running statistics for the eval-mode check
        for b in 0..3 {
            let (_, c) = p.forward(&batch(4, 8, 10 + b), BnMode::Batch).unwrap();
            p.update_running(&c, 0.5);
        }
        let x = batch(4, 8, 2);
        let labels = [0, 1, 1, 0];
        for mode in [BnMode::Batch, BnMode::Running] {
            let (logits, cache) = p.forward(&x, mode).unwrap();
            let (_, dl) = cross_entropy(&logits, &labels, 2);
            let grads = p.backward(&cache, &dl);
            let loss = |q: &NetParams| Ok(cross_entropy(&q.forward(&x, mode)?.0, &labels, 2).0);
            let opts = GradCheckOptions { per_tensor: 6, ..GradCheckOptions::default() };
            let r = gradient_check(&p, &grads, |_| true, loss, opts).unwrap();
            assert!(r.max_rel_error < 1e-4, "{mode:?}: {r:?}");
        }
    }

    #[test]
    fn running_update_blends_batch_statistics() {
        let mut p = NetParams::init(&tiny(), 1).unwrap();
        let x = batch(5, 8, 4);
        let before = p.stem.bn.running_mean.clone();
        let (_, c) = p.forward(&x, BnMode::Batch).unwrap();
        p.update_running(&c, 0.1);
        let changed = p.stem.bn.running_mean.iter().zip(&before).any(|(a, b)| a != b);
        assert!(changed);
        // eval forward never touches buffers
        let snapshot = p.clone();
        p.forward(&x, BnMode::Running).unwrap();
        assert_eq!(p, snapshot);
    }
}
