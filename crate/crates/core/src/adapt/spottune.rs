//! Per-instance block routing between a frozen and a fine-tuned copy of the
//! residual blocks.
//!
//! A small policy network reads the input patch and emits two logits per
//! block, `[reuse, finetune]`. In training the decision is a Gumbel-softmax
//! sample used with the straight-through estimator (hard one-hot forward,
//! relaxed gradient); at evaluation it is the argmax. Block `b` outputs
//! `w_reuse * frozen_b(x) + w_finetune * tuned_b(x)`.
//!
//! The stem always comes from the frozen copy and the classifier from the
//! tuned copy. Frozen blocks always normalize with running statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::nn::adam::AdamState;
use crate::nn::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BnMode, Conv2d, Linear,
};
use crate::nn::loss::{cross_entropy, positive_probability};
use crate::nn::net::BlockCache;
use crate::nn::params::ParamSet;
use crate::nn::train::{fit, score_in_chunks, BatchSource, LabelledBatch, TrainConfig, TrainOutcome};
use crate::nn::{NetParams, Tensor};
use crate::rng::{substream, SeededRng};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// Two strided conv stages, global pooling and a linear head producing
/// `2 * blocks` logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub fc: Linear,
    pub blocks: usize,
}

struct PolicyCache {
    x: Tensor,
    h1: Tensor,
    h2: Tensor,
    pooled: Tensor,
}

impl PolicyNet {
    pub fn init(blocks: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "policy-init");
        let conv1 = Conv2d::init(1, 4, 3, 2, &mut rng);
        let conv2 = Conv2d::init(4, 8, 3, 2, &mut rng);
        let fc = Linear::init(8, 2 * blocks, &mut rng);
        Self { conv1, conv2, fc, blocks }
    }

    pub fn zeros_like(&self) -> Self {
        Self { conv1: self.conv1.zeros_like(), conv2: self.conv2.zeros_like(), fc: self.fc.zeros_like(), blocks: self.blocks }
    }

    /// Make the policy input-independent: every block decides `finetune`
    /// (or `reuse`) with a logit margin of 20.
    pub fn force(&mut self, finetune: bool) {
        self.fc.weight.iter_mut().for_each(|w| *w = 0.0);
        for b in 0..self.blocks {
            let (r, f) = if finetune { (-10.0, 10.0) } else { (10.0, -10.0) };
            self.fc.bias[2 * b] = r;
            self.fc.bias[2 * b + 1] = f;
        }
    }

    /// Force per-block decisions (`true` = finetune), independent of input.
    pub fn force_blocks(&mut self, finetune: &[bool]) {
        assert_eq!(finetune.len(), self.blocks);
        self.fc.weight.iter_mut().for_each(|w| *w = 0.0);
        for (b, &f) in finetune.iter().enumerate() {
            self.fc.bias[2 * b] = if f { -10.0 } else { 10.0 };
            self.fc.bias[2 * b + 1] = -self.fc.bias[2 * b];
        }
    }

    fn forward(&self, x: &Tensor) -> (Vec<f64>, PolicyCache) {
        let mut h1 = self.conv1.forward(x);
        relu(&mut h1);
        let mut h2 = self.conv2.forward(&h1);
        relu(&mut h2);
        let pooled = global_avg_pool(&h2);
        let logits = self.fc.forward(&pooled.data, x.n);
        (logits, PolicyCache { x: x.clone(), h1, h2, pooled })
    }

    /// Logits `[n][blocks][2]` flattened.
    pub fn logits(&self, x: &Tensor) -> Vec<f64> {
        self.forward(x).0
    }

    fn backward(&self, cache: &PolicyCache, dlogits: &[f64], grads: &mut PolicyNet) {
        let n = cache.x.n;
        let dpooled = self.fc.backward(&cache.pooled.data, dlogits, n, Some(&mut grads.fc));
        let mut dh2 = global_avg_pool_backward(
            &Tensor::from_vec(n, cache.h2.c, 1, 1, dpooled),
            cache.h2.h,
            cache.h2.w,
        );
        relu_backward(&cache.h2, &mut dh2);
        let mut dh1 = self
            .conv2
            .backward(&cache.h1, &dh2, Some(&mut grads.conv2.weight), true)
            .expect("dx requested");
        relu_backward(&cache.h1, &mut dh1);
        self.conv1.backward(&cache.x, &dh1, Some(&mut grads.conv1.weight), false);
    }
}

impl ParamSet for PolicyNet {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        f("conv1.weight", &self.conv1.weight);
        f("conv2.weight", &self.conv2.weight);
        f("fc.weight", &self.fc.weight);
        f("fc.bias", &self.fc.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("conv1.weight", &mut self.conv1.weight);
        f("conv2.weight", &mut self.conv2.weight);
        f("fc.weight", &mut self.fc.weight);
        f("fc.bias", &mut self.fc.bias);
    }
}

/// Per-block mixing weights, policy probabilities and the policy cache.
type RoutingState = (Vec<f64>, Option<Vec<f64>>, Option<PolicyCache>);

/// Frozen base, trainable copy and routing policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotTuneNet {
    frozen: NetParams,
    pub tuned: NetParams,
    pub policy: PolicyNet,
    pub temperature: f64,
}

/// Trainable part of a [`SpotTuneNet`]: tuned blocks, tuned classifier and policy.
pub fn spottune_trainable(name: &str) -> bool {
    name.starts_with("tuned.blocks.") || name.starts_with("tuned.fc.") || name.starts_with("policy.")
}

impl ParamSet for SpotTuneNet {
    /// Tuned copy (`tuned.*`) then policy (`policy.*`); the frozen copy is not
    /// a parameter of the adapted model.
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64])) {
        self.tuned.visit(&mut |n, v| f(&format!("tuned.{n}"), v));
        self.policy.visit(&mut |n, v| f(&format!("policy.{n}"), v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.tuned.visit_mut(&mut |n, v| f(&format!("tuned.{n}"), v));
        self.policy.visit_mut(&mut |n, v| f(&format!("policy.{n}"), v));
    }
}

/// How per-block routing weights are obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum Routing {
    /// Argmax of the policy logits; no sampling.
    Hard,
    /// Gumbel-softmax sample, hard forward, relaxed backward. `gumbel` holds
    /// one noise value per logit (`n * blocks * 2`).
    StraightThrough { gumbel: Vec<f64> },
    /// Gumbel-softmax sample used as a soft convex mix in both passes.
    Relaxed { gumbel: Vec<f64> },
    /// Explicit finetune weights `[n][blocks]` in `[0, 1]`; policy bypassed.
    Fixed(Vec<f64>),
}

/// Standard Gumbel(0, 1) noise.
pub fn sample_gumbel(len: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

pub struct SpotTuneCache {
    stem_out_hw: (usize, usize),
    frozen_blocks: Vec<BlockCache>,
    tuned_blocks: Vec<BlockCache>,
    frozen_out: Vec<Tensor>,
    tuned_out: Vec<Tensor>,
    /// Routing weights `[n][blocks][reuse, finetune]` used in the forward pass.
    pub weights: Vec<f64>,
    /// Relaxed softmax values behind the weights (train modes only).
    soft: Option<Vec<f64>>,
    policy: Option<PolicyCache>,
    pooled: Tensor,
    last_hw: (usize, usize),
    n: usize,
}

impl SpotTuneNet {
    /// Start adaptation from `base`: the tuned copy is an exact clone.
    pub fn new(base: &NetParams, policy_seed: u64, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::config("spottune.temperature", "must be finite and > 0"));
        }
        Ok(Self {
            frozen: base.clone(),
            tuned: base.clone(),
            policy: PolicyNet::init(base.blocks.len(), policy_seed),
            temperature,
        })
    }

    pub fn frozen(&self) -> &NetParams {
        &self.frozen
    }

    pub fn blocks(&self) -> usize {
        self.frozen.blocks.len()
    }

    /// Routing weights `[n][blocks][2]` and, for sampled modes, the relaxed
    /// softmax they derive from.
    fn routing_weights(&self, x: &Tensor, routing: &Routing) -> Result<RoutingState> {
        let nb = self.blocks();
        let expect = x.n * nb * 2;
        match routing {
            Routing::Fixed(w) => {
                if w.len() != x.n * nb || w.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Argument(format!("fixed routing needs {} weights in [0,1]", x.n * nb)));
                }
                Ok((w.iter().flat_map(|&f| [1.0 - f, f]).collect(), None, None))
            }
            Routing::Hard => {
                let (logits, _) = self.policy.forward(x);
                let w = logits
                    .chunks(2)
                    .flat_map(|l| if l[1] > l[0] { [0.0, 1.0] } else { [1.0, 0.0] })
                    .collect();
                Ok((w, None, None))
            }
            Routing::StraightThrough { gumbel } | Routing::Relaxed { gumbel } => {
                if gumbel.len() != expect {
                    return Err(Error::Argument(format!("need {expect} gumbel values, got {}", gumbel.len())));
                }
                let (logits, cache) = self.policy.forward(x);
                let mut soft = Vec::with_capacity(expect);
                for (l, g) in logits.chunks(2).zip(gumbel.chunks(2)) {
                    let z0 = (l[0] + g[0]) / self.temperature;
                    let z1 = (l[1] + g[1]) / self.temperature;
                    let m = z0.max(z1);
                    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
                    soft.push(e0 / (e0 + e1));
                    soft.push(e1 / (e0 + e1));
                }
                let w = if matches!(routing, Routing::StraightThrough { .. }) {
                    soft.chunks(2).flat_map(|s| if s[1] > s[0] { [0.0, 1.0] } else { [1.0, 0.0] }).collect()
                } else {
                    soft.clone()
                };
                Ok((w, Some(soft), Some(cache)))
            }
        }
    }

    /// Logits `[n][classes]`. `train` selects batch statistics for the tuned
    /// blocks; frozen blocks always use running statistics.
    pub fn forward(&self, x: &Tensor, routing: &Routing, train: bool) -> Result<(Vec<f64>, SpotTuneCache)> {
        self.frozen.check_input(x)?;
        let nb = self.blocks();
        let (weights, soft, policy) = self.routing_weights(x, routing)?;
        let tuned_mode = if train { BnMode::Batch } else { BnMode::Running };
        let (mut h, _) = self.frozen.stem_forward(x, BnMode::Running);
        let stem_out_hw = (h.h, h.w);
        let mut frozen_blocks = Vec::with_capacity(nb);
        let mut tuned_blocks = Vec::with_capacity(nb);
        let mut frozen_out = Vec::with_capacity(nb);
        let mut tuned_out = Vec::with_capacity(nb);
        for b in 0..nb {
            let (f, fc) = self.frozen.blocks[b].forward(&h, BnMode::Running);
            let (t, tc) = self.tuned.blocks[b].forward(&h, tuned_mode);
            let mut out = Tensor::zeros(f.n, f.c, f.h, f.w);
            for i in 0..x.n {
                let (wr, wf) = (weights[(i * nb + b) * 2], weights[(i * nb + b) * 2 + 1]);
                let dst = out.sample_mut(i);
                if wf == 0.0 && wr == 1.0 {
                    dst.copy_from_slice(f.sample(i));
                } else if wf == 1.0 && wr == 0.0 {
                    dst.copy_from_slice(t.sample(i));
                } else {
                    for ((d, fv), tv) in dst.iter_mut().zip(f.sample(i)).zip(t.sample(i)) {
                        *d = wr * fv + wf * tv;
                    }
                }
            }
            frozen_blocks.push(fc);
            tuned_blocks.push(tc);
            frozen_out.push(f);
            tuned_out.push(t);
            h = out;
        }
        let (logits, pooled) = self.tuned.head_forward(&h);
        let cache = SpotTuneCache {
            stem_out_hw,
            frozen_blocks,
            tuned_blocks,
            frozen_out,
            tuned_out,
            weights,
            soft,
            policy,
            pooled,
            last_hw: (h.h, h.w),
            n: x.n,
        };
        Ok((logits, cache))
    }

    /// Gradients for the trainable part (`tuned.*`, `policy.*`).
    pub fn backward(&self, cache: &SpotTuneCache, dlogits: &[f64]) -> SpotTuneNet {
        let nb = self.blocks();
        let n = cache.n;
        let mut grads = SpotTuneNet {
            frozen: self.frozen.clone(),
            tuned: self.tuned.zeros_like(),
            policy: self.policy.zeros_like(),
            temperature: self.temperature,
        };
        let dpooled = self.tuned.fc.backward(&cache.pooled.data, dlogits, n, Some(&mut grads.tuned.fc));
        let (h, w) = cache.last_hw;
        let mut dh = global_avg_pool_backward(&Tensor::from_vec(n, cache.pooled.c, 1, 1, dpooled), h, w);
        // d loss / d routing weight, [n][blocks][2]
        let mut dweights = vec![0.0; n * nb * 2];
        for b in (0..nb).rev() {
            let f = &cache.frozen_out[b];
            let t = &cache.tuned_out[b];
            let mut df = Tensor::zeros(dh.n, dh.c, dh.h, dh.w);
            let mut dt = Tensor::zeros(dh.n, dh.c, dh.h, dh.w);
            for i in 0..n {
                let k = (i * nb + b) * 2;
                let (wr, wf) = (cache.weights[k], cache.weights[k + 1]);
                let g = dh.sample(i);
                dweights[k] = g.iter().zip(f.sample(i)).map(|(a, c)| a * c).sum();
                dweights[k + 1] = g.iter().zip(t.sample(i)).map(|(a, c)| a * c).sum();
                for (d, gv) in df.sample_mut(i).iter_mut().zip(g) {
                    *d = wr * gv;
                }
                for (d, gv) in dt.sample_mut(i).iter_mut().zip(g) {
                    *d = wf * gv;
                }
            }
            let mut dx = self.frozen.blocks[b].backward(&cache.frozen_blocks[b], &df, None);
            dx.add_assign(&self.tuned.blocks[b].backward(&cache.tuned_blocks[b], &dt, Some(&mut grads.tuned.blocks[b])));
            dh = dx;
        }
        debug_assert_eq!((dh.h, dh.w), cache.stem_out_hw);
        if let (Some(soft), Some(pc)) = (&cache.soft, &cache.policy) {
            // softmax with temperature: dz_k = y_k (dy_k - sum_j y_j dy_j) / tau
            let mut dlogits_policy = vec![0.0; soft.len()];
            for ((dz, y), dy) in dlogits_policy.chunks_mut(2).zip(soft.chunks(2)).zip(dweights.chunks(2)) {
                let dot = y[0] * dy[0] + y[1] * dy[1];
                dz[0] = y[0] * (dy[0] - dot) / self.temperature;
                dz[1] = y[1] * (dy[1] - dot) / self.temperature;
            }
            self.policy.backward(pc, &dlogits_policy, &mut grads.policy);
        }
        grads
    }

    /// Eval-mode positive-class probabilities with hard routing.
    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        score_in_chunks(x, 64, |b| Ok(positive_probability(&self.forward(b, &Routing::Hard, false)?.0)))
    }

    /// Hard finetune decisions `[n][blocks]` (true = finetune).
    pub fn decisions(&self, x: &Tensor) -> Vec<bool> {
        self.policy.logits(x).chunks(2).map(|l| l[1] > l[0]).collect()
    }

    pub fn update_running(&mut self, cache: &SpotTuneCache, momentum: f64) {
        for (b, c) in self.tuned.blocks.iter_mut().zip(&cache.tuned_blocks) {
            b.update_running(c, momentum);
        }
    }
}

/// One straight-through training step on a batch.
pub fn spottune_step(
    net: &mut SpotTuneNet,
    opt: &mut AdamState,
    x: &Tensor,
    labels: &[usize],
    momentum: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    let gumbel = sample_gumbel(x.n * net.blocks() * 2, rng);
    let (logits, cache) = net.forward(x, &Routing::StraightThrough { gumbel }, true)?;
    let (loss, dlogits) = cross_entropy(&logits, labels, net.tuned.config.classes);
    let grads = net.backward(&cache, &dlogits);
    net.update_running(&cache, momentum);
    opt.step(net, &grads, spottune_trainable);
    Ok(loss)
}

/// Jointly train the tuned copy and the policy; frozen blocks never change.
pub fn spottune_train(
    init: SpotTuneNet,
    source: &mut impl BatchSource,
    val: &LabelledBatch,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainOutcome<SpotTuneNet>> {
    cfg.validate("finetune")?;
    let mut opt = AdamState::new(cfg.adam);
    fit(
        init,
        cfg,
        |net| {
            let (x, y) = source.next_batch(cfg.batch_size)?;
            spottune_step(net, &mut opt, &x, &y, cfg.bn_momentum, rng)
        },
        |net| roc_auc(&val.scored(net.scores(&val.x)?)),
    )
}

/// Per-block fraction of samples routed to the fine-tuned copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub finetune_probability: Vec<f64>,
    pub sample_count: usize,
}

impl PolicyStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block_index,finetune_probability\n");
        for (i, p) in self.finetune_probability.iter().enumerate() {
            s.push_str(&format!("{i},{p}\n"));
        }
        s
    }
}

pub fn policy_stats(net: &SpotTuneNet, x: &Tensor) -> Result<PolicyStats> {
    if x.n == 0 {
        return Err(Error::Data("policy statistics need at least one sample".into()));
    }
    let nb = net.blocks();
    let mut counts = vec![0usize; nb];
    let idx: Vec<usize> = (0..x.n).collect();
    for part in idx.chunks(64) {
        for (k, d) in net.decisions(&x.select(part)).into_iter().enumerate() {
            if d {
                counts[k % nb] += 1;
            }
        }
    }
    Ok(PolicyStats {
        finetune_probability: counts.iter().map(|&c| c as f64 / x.n as f64).collect(),
        sample_count: x.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradient_check, GradCheckOptions};
    use crate::nn::layers::BnMode;
    use crate::nn::params::ParamSet;
    use crate::nn::NetConfig;
    use crate::rng::seeded;

    fn cfg() -> NetConfig {
        NetConfig {
            input_size: 8,
            stem_channels: 3,
            stem_stride: 1,
            stage_channels: vec![3, 4],
            blocks_per_stage: vec![1, 1],
            classes: 2,
        }
    }

    fn batch(n: usize, seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        Tensor::from_vec(n, 1, 8, 8, (0..n * 64).map(|_| rng.random::<f64>()).collect())
    }

    fn base() -> NetParams {
        let mut p = NetParams::init(&cfg(), 11).unwrap();
        for s in 0..3 {
            let (_, c) = p.forward(&batch(6, 100 + s), BnMode::Batch).unwrap();
            p.update_running(&c, 0.5);
        }
        p
    }

    fn perturb_tuned_blocks(net: &mut SpotTuneNet) {
        let mut rng = seeded(77);
        net.tuned.visit_mut(&mut |n, v| {
            if n.starts_with("blocks.") {
                v.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
            }
        });
    }

    #[test]
    fn all_reuse_is_the_frozen_network() {
        let b = base();
        let mut net = SpotTuneNet::new(&b, 1, 0.1).unwrap();
        perturb_tuned_blocks(&mut net);
        net.policy.force(false);
        let x = batch(5, 1);
        let expected = b.forward(&x, BnMode::Running).unwrap().0;
        assert_eq!(net.forward(&x, &Routing::Hard, false).unwrap().0, expected);
        assert_eq!(net.forward(&x, &Routing::Hard, true).unwrap().0, expected);
    }

    #[test]
    fn all_finetune_with_clone_is_the_base_network() {
        let b = base();
        let mut net = SpotTuneNet::new(&b, 1, 0.1).unwrap();
        net.policy.force(true);
        let x = batch(5, 2);
        let expected = b.forward(&x, BnMode::Running).unwrap().0;
        assert_eq!(net.forward(&x, &Routing::Hard, false).unwrap().0, expected);
    }

    #[test]
    fn fixed_routes_match_path_composition() {
        let b = base();
        let mut net = SpotTuneNet::new(&b, 1, 0.1).unwrap();
        perturb_tuned_blocks(&mut net);
        let x = batch(3, 3);
        for route in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]] {
            // oracle: run the chosen copy of each block by hand
            let (mut h, _) = b.stem_forward(&x, BnMode::Running);
            for (blk, &w) in route.iter().enumerate() {
                let copy = if w == 1.0 { &net.tuned } else { &b };
                h = copy.blocks[blk].forward(&h, BnMode::Running).0;
            }
            let expected = net.tuned.head_forward(&h).0;
            let weights: Vec<f64> = (0..3).flat_map(|_| route).collect();
            let got = net.forward(&x, &Routing::Fixed(weights), false).unwrap().0;
            assert_eq!(got, expected, "route {route:?}");
        }
    }

    #[test]
    fn relaxed_routing_gradients_match_finite_differences() {
        let b = base();
        let mut net = SpotTuneNet::new(&b, 4, 0.5).unwrap();
        perturb_tuned_blocks(&mut net);
        let x = batch(4, 5);
        let labels = [1, 0, 0, 1];
        let gumbel = sample_gumbel(4 * 2 * 2, &mut seeded(9));
        let routing = Routing::Relaxed { gumbel };
        let (logits, cache) = net.forward(&x, &routing, true).unwrap();
        // the mix is genuinely soft
        assert!(cache.weights.iter().any(|w| *w > 1e-3 && *w < 1.0 - 1e-3));
        let (_, dl) = cross_entropy(&logits, &labels, 2);
        let grads = net.backward(&cache, &dl);
        let loss = |n: &SpotTuneNet| Ok(cross_entropy(&n.forward(&x, &routing, true)?.0, &labels, 2).0);
        let opts = GradCheckOptions { per_tensor: 5, ..GradCheckOptions::default() };
        let r = gradient_check(&net, &grads, spottune_trainable, loss, opts).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > 40);
    }

    #[test]
    fn routing_weights_sum_to_one() {
        let net = SpotTuneNet::new(&base(), 2, 0.1).unwrap();
        let x = batch(6, 6);
        let g = sample_gumbel(6 * 2 * 2, &mut seeded(1));
        for routing in [Routing::Hard, Routing::StraightThrough { gumbel: g.clone() }, Routing::Relaxed { gumbel: g }] {
            let (_, c) = net.forward(&x, &routing, true).unwrap();
            for pair in c.weights.chunks(2) {
                assert!((pair[0] + pair[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_temperature_relaxed_agrees_with_hard_argmax() {
        let net = SpotTuneNet::new(&base(), 3, 1e-4).unwrap();
        let x = batch(6, 7);
        let zero = vec![0.0; 6 * 2 * 2];
        let hard = net.decisions(&x);
        let (_, c) = net.forward(&x, &Routing::Relaxed { gumbel: zero }, false).unwrap();
        let relaxed: Vec<bool> = c.weights.chunks(2).map(|w| w[1] > w[0]).collect();
        assert_eq!(relaxed, hard);
    }

    #[test]
    fn eval_is_deterministic() {
        let net = SpotTuneNet::new(&base(), 5, 0.1).unwrap();
        let x = batch(7, 8);
        assert_eq!(net.scores(&x).unwrap(), net.scores(&x).unwrap());
    }

    #[test]
    fn forced_policies_give_degenerate_stats() {
        let mut net = SpotTuneNet::new(&base(), 5, 0.1).unwrap();
        let x = batch(9, 9);
        net.policy.force(false);
        assert_eq!(policy_stats(&net, &x).unwrap().finetune_probability, vec![0.0, 0.0]);
        net.policy.force(true);
        let s = policy_stats(&net, &x).unwrap();
        assert_eq!(s.finetune_probability, vec![1.0, 1.0]);
        assert_eq!(s.sample_count, 9);
        assert_eq!(s.to_csv(), "block_index,finetune_probability\n0,1\n1,1\n");
        net.policy.force_blocks(&[true, false]);
        assert_eq!(policy_stats(&net, &x).unwrap().finetune_probability, vec![1.0, 0.0]);
        let empty = Tensor::zeros(0, 1, 8, 8);
        assert!(matches!(policy_stats(&net, &empty), Err(Error::Data(_))));
    }

    #[test]
    fn hand_set_policy_matches_counting_oracle() {
        let mut net = SpotTuneNet::new(&base(), 5, 0.1).unwrap();
        // pass the input through unchanged on channel 0 (center taps)
        let p = &mut net.policy;
        p.conv1.weight.iter_mut().for_each(|w| *w = 0.0);
        p.conv2.weight.iter_mut().for_each(|w| *w = 0.0);
        p.conv1.weight[4] = 1.0;
        p.conv2.weight[4] = 1.0;
        p.fc.weight.iter_mut().for_each(|w| *w = 0.0);
        p.fc.bias.iter_mut().for_each(|w| *w = 0.0);
        // finetune logit = feature - threshold: block 0 at 0.5, block 1 at 0.25
        p.fc.weight[8] = 1.0;
        p.fc.bias[1] = -0.5;
        p.fc.weight[3 * 8] = 1.0;
        p.fc.bias[3] = -0.25;
        let levels = [0.1, 0.3, 0.6, 0.9];
        let x = Tensor::from_vec(4, 1, 8, 8, levels.iter().flat_map(|&v| vec![v; 64]).collect());
        let decisions = net.decisions(&x);
        let oracle: Vec<bool> = levels.iter().flat_map(|&v| [v > 0.5, v > 0.25]).collect();
        assert_eq!(decisions, oracle);
        let counts = [0, 1].map(|b| oracle.iter().skip(b).step_by(2).filter(|&&d| d).count() as f64 / 4.0);
        assert_eq!(policy_stats(&net, &x).unwrap().finetune_probability, counts.to_vec());
    }

    #[test]
    fn training_never_moves_the_frozen_copy() {
        struct Fixed(Tensor, Vec<usize>);
        impl BatchSource for Fixed {
            fn next_batch(&mut self, _: usize) -> Result<(Tensor, Vec<usize>)> {
                Ok((self.0.clone(), self.1.clone()))
            }
        }
        let b = base();
        let net = SpotTuneNet::new(&b, 1, 0.1).unwrap();
        let frozen_digest = net.frozen().digest();
        let mut buffers = Vec::new();
        net.frozen().visit_buffers(&mut |_, v| buffers.extend_from_slice(v));
        let x = batch(4, 3);
        let val = LabelledBatch { x: x.clone(), labels: vec![0, 1, 0, 1] };
        let cfg = TrainConfig { epochs: 2, epoch_size: 8, batch_size: 4, ..TrainConfig::default() };
        let run = |seed| {
            let mut src = Fixed(x.clone(), vec![0, 1, 0, 1]);
            spottune_train(net.clone(), &mut src, &val, &cfg, &mut seeded(seed)).unwrap()
        };
        let out = run(3);
        for m in [&out.best, &out.last] {
            assert_eq!(m.frozen().digest(), frozen_digest);
            let mut after = Vec::new();
            m.frozen().visit_buffers(&mut |_, v| after.extend_from_slice(v));
            assert_eq!(after, buffers);
        }
        assert_ne!(out.last.tuned.digest(), b.digest());
        assert_eq!(run(3).last, out.last);
    }
}
