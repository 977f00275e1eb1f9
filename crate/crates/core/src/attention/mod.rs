//! Recurrent hard-attention classifier over a glimpse grid, trained with REINFORCE on
//! unsupervised examples and teacher-forced location likelihood on supervised ones.

mod train;

pub use train::{
    evaluate, iterations_to_within, train, EvalReport, MetricRow, Phase, TrainConfig, TrainReport,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{mix_seed, SeededRng};
use crate::tensor::{argmax, fovea, log_softmax, softmax, DesignGrid, GlimpseLocation, Image};
use rayon::prelude::*;

/// Layer widths of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionDims {
    pub classes: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Default for AttentionDims {
    fn default() -> Self {
        Self {
            classes: 10,
            embed: 32,
            hidden: 64,
        }
    }
}

/// Parameter blocks, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    /// Glimpse embedder `embed x (g^2 + 2)`.
    We,
    Be,
    /// Recurrent weights `hidden x hidden`.
    Wh,
    /// Input weights `hidden x embed`.
    Wx,
    Bh,
    /// Location head `|L| x hidden`.
    Wl,
    Bl,
    /// Classifier `classes x hidden`.
    Wc,
    Bc,
    /// Baseline weights `hidden`.
    Wb,
    Cb,
    /// Initial hidden state.
    H0,
}

impl Block {
    pub const ALL: [Block; 12] = [
        Block::We,
        Block::Be,
        Block::Wh,
        Block::Wx,
        Block::Bh,
        Block::Wl,
        Block::Bl,
        Block::Wc,
        Block::Bc,
        Block::Wb,
        Block::Cb,
        Block::H0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::We => "w_e",
            Block::Be => "b_e",
            Block::Wh => "w_h",
            Block::Wx => "w_x",
            Block::Bh => "b_h",
            Block::Wl => "w_l",
            Block::Bl => "b_l",
            Block::Wc => "w_c",
            Block::Bc => "b_c",
            Block::Wb => "w_b",
            Block::Cb => "c_b",
            Block::H0 => "h0",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionNet {
    grid: DesignGrid,
    dims: AttentionDims,
    params: Vec<f64>,
}

/// One episode of the network on an image.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `h_0 ..= h_T`.
    pub hidden: Vec<Vec<f64>>,
    pub embeds: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub locs: Vec<GlimpseLocation>,
    pub loc_indices: Vec<usize>,
    /// Policy over the grid at each step.
    pub policies: Vec<Vec<f64>>,
    pub loc_log_probs: Vec<f64>,
    pub class_probs: Vec<f64>,
    pub baselines: Vec<f64>,
    pub forced: bool,
}

impl Rollout {
    pub fn prediction(&self) -> usize {
        argmax(&self.class_probs)
    }

    pub fn reward(&self, label: usize) -> f64 {
        if self.prediction() == label {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum RolloutMode<'a> {
    /// Locations drawn from the policy.
    Sampled,
    /// Locations drawn uniformly from the grid regardless of the policy.
    Uniform,
    Forced(&'a [GlimpseLocation]),
}

/// Options for the unsupervised objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinforceOptions {
    pub baseline_weight: f64,
    /// Let the REINFORCE term flow through the hidden state into the core and embedder.
    pub full_backprop: bool,
    /// Sample locations uniformly instead of from the policy (core pretraining).
    pub uniform_locations: bool,
}

impl Default for ReinforceOptions {
    fn default() -> Self {
        Self {
            baseline_weight: 1.0,
            full_backprop: false,
            uniform_locations: false,
        }
    }
}

/// Batch-mean diagnostics of a loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub examples: usize,
    pub class_nll: f64,
    pub loc_nll: f64,
    pub reward: f64,
    pub baseline_mse: f64,
}

fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += W^T dy`
fn matvec_t_add(dx: &mut [f64], w: &[f64], dy: &[f64]) {
    let cols = dx.len();
    for (row, &d) in w.chunks_exact(cols).zip(dy) {
        if d != 0.0 {
            for (x, a) in dx.iter_mut().zip(row) {
                *x += a * d;
            }
        }
    }
}

/// `dW += dy x^T`
fn outer_add(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &d) in dw.chunks_exact_mut(cols).zip(dy) {
        if d != 0.0 {
            for (g, a) in row.iter_mut().zip(x) {
                *g += d * a;
            }
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

impl AttentionNet {
    pub fn zeros(grid: DesignGrid, dims: AttentionDims) -> Result<Self> {
        if dims.classes == 0 || dims.embed == 0 || dims.hidden == 0 {
            return Err(invalid("attention dims must be positive"));
        }
        let mut net = Self {
            grid,
            dims,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.offset(Block::H0) + dims.hidden];
        Ok(net)
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, biases and `h_0` zero.
    pub fn init(grid: DesignGrid, dims: AttentionDims, rng: &mut SeededRng) -> Result<Self> {
        let mut net = Self::zeros(grid, dims)?;
        for (block, fan_in) in [
            (Block::We, net.input_len()),
            (Block::Wh, dims.hidden),
            (Block::Wx, dims.embed),
            (Block::Wl, dims.hidden),
            (Block::Wc, dims.hidden),
            (Block::Wb, dims.hidden),
        ] {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in net.block_mut(block) {
                *p = scale * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(net)
    }

    pub fn from_params(grid: DesignGrid, dims: AttentionDims, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(grid, dims)?;
        if params.len() != net.params.len() {
            return Err(Error::Model(format!(
                "expected {} attention parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Model("non-finite attention parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    pub fn dims(&self) -> AttentionDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Embedder input width: flattened patch plus two coordinates.
    pub fn input_len(&self) -> usize {
        self.grid.geometry.size * self.grid.geometry.size + 2
    }

    pub fn block_len(&self, block: Block) -> usize {
        let d = &self.dims;
        match block {
            Block::We => d.embed * self.input_len(),
            Block::Be => d.embed,
            Block::Wh => d.hidden * d.hidden,
            Block::Wx => d.hidden * d.embed,
            Block::Bh | Block::Wb | Block::H0 => d.hidden,
            Block::Wl => self.grid.len() * d.hidden,
            Block::Bl => self.grid.len(),
            Block::Wc => d.classes * d.hidden,
            Block::Bc => d.classes,
            Block::Cb => 1,
        }
    }

    pub fn offset(&self, block: Block) -> usize {
        Block::ALL
            .iter()
            .take_while(|&&b| b != block)
            .map(|&b| self.block_len(b))
            .sum()
    }

    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        let o = self.offset(block);
        o..o + self.block_len(block)
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.params[self.range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.range(block);
        &mut self.params[r]
    }

    fn glimpse_input(&self, image: &Image, loc: GlimpseLocation) -> Result<Vec<f64>> {
        let patch = fovea(image, &self.grid.geometry, loc)?;
        let (cx, cy) = self.grid.normalized_coords(loc);
        let mut x = patch.pixels;
        x.push(cx);
        x.push(cy);
        Ok(x)
    }

    fn policy_logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.block(Block::Bl).to_vec();
        matvec_add(&mut z, self.block(Block::Wl), h);
        z
    }

    fn step(&self, h_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut e = self.block(Block::Be).to_vec();
        matvec_add(&mut e, self.block(Block::We), x);
        for v in &mut e {
            *v = v.tanh();
        }
        let mut h = self.block(Block::Bh).to_vec();
        matvec_add(&mut h, self.block(Block::Wh), h_prev);
        matvec_add(&mut h, self.block(Block::Wx), &e);
        for v in &mut h {
            *v = v.tanh();
        }
        (e, h)
    }

    /// Runs the network for `steps` glimpses. Sampled and uniform modes need `rng`.
    pub fn rollout(
        &self,
        image: &Image,
        steps: usize,
        mode: RolloutMode<'_>,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<Rollout> {
        if image.height() != self.grid.height || image.width() != self.grid.width {
            return Err(invalid("image size does not match attention grid"));
        }
        if let RolloutMode::Forced(locs) = mode {
            if locs.len() != steps {
                return Err(invalid(format!("forced rollout needs {steps} locations, got {}", locs.len())));
            }
        }
        let wb = self.block(Block::Wb);
        let cb = self.block(Block::Cb)[0];
        let mut ro = Rollout {
            hidden: vec![self.block(Block::H0).to_vec()],
            embeds: Vec::with_capacity(steps),
            inputs: Vec::with_capacity(steps),
            locs: Vec::with_capacity(steps),
            loc_indices: Vec::with_capacity(steps),
            policies: Vec::with_capacity(steps),
            loc_log_probs: Vec::with_capacity(steps),
            class_probs: Vec::new(),
            baselines: Vec::with_capacity(steps),
            forced: matches!(mode, RolloutMode::Forced(_)),
        };
        for t in 0..steps {
            let h_prev = &ro.hidden[t];
            let logits = self.policy_logits(h_prev);
            let log_pi = log_softmax(&logits);
            let idx = match mode {
                RolloutMode::Forced(locs) => self.grid.index(locs[t])?,
                RolloutMode::Sampled => {
                    let r = rng.as_deref_mut().ok_or_else(|| invalid("sampled rollout needs an rng"))?;
                    r.categorical(&softmax(&logits))
                }
                RolloutMode::Uniform => {
                    let r = rng.as_deref_mut().ok_or_else(|| invalid("uniform rollout needs an rng"))?;
                    r.below(self.grid.len())
                }
            };
            let loc = self.grid.location(idx);
            let baseline = cb + wb.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
            let x = self.glimpse_input(image, loc)?;
            let (e, h) = self.step(h_prev, &x);
            ro.baselines.push(baseline);
            ro.loc_log_probs.push(log_pi[idx]);
            ro.policies.push(log_pi.iter().map(|l| l.exp()).collect());
            ro.locs.push(loc);
            ro.loc_indices.push(idx);
            ro.inputs.push(x);
            ro.embeds.push(e);
            ro.hidden.push(h);
        }
        let mut zc = self.block(Block::Bc).to_vec();
        matvec_add(&mut zc, self.block(Block::Wc), &ro.hidden[steps]);
        ro.class_probs = softmax(&zc);
        Ok(ro)
    }

    /// Gradient of
    /// `-log q(label) - sum_t coef_t log pi(l_t) + baseline_weight * sum_t (b_t - target)^2`
    /// with `coef` and `target` held constant. The location term reaches the core only
    /// when `loc_into_core` is set; the baseline term only reaches `w_b` and `c_b`.
    pub fn backward(
        &self,
        ro: &Rollout,
        label: usize,
        loc_coef: &[f64],
        loc_into_core: bool,
        baseline: Option<(f64, f64)>,
    ) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        let steps = ro.locs.len();
        let (hd, ed) = (self.dims.hidden, self.dims.embed);
        let r = |b| self.range(b);
        // Classifier.
        let mut dz = ro.class_probs.clone();
        dz[label] -= 1.0;
        outer_add(&mut g[r(Block::Wc)], &dz, &ro.hidden[steps]);
        add_into(&mut g[r(Block::Bc)], &dz);
        let mut dh = vec![0.0; hd];
        matvec_t_add(&mut dh, self.block(Block::Wc), &dz);

        let mut da = vec![0.0; hd];
        let mut dpre_e = vec![0.0; ed];
        for t in (0..steps).rev() {
            let h = &ro.hidden[t + 1];
            let h_prev = &ro.hidden[t];
            let e = &ro.embeds[t];
            for ((a, d), hv) in da.iter_mut().zip(&dh).zip(h) {
                *a = d * (1.0 - hv * hv);
            }
            outer_add(&mut g[r(Block::Wh)], &da, h_prev);
            outer_add(&mut g[r(Block::Wx)], &da, e);
            add_into(&mut g[r(Block::Bh)], &da);
            let mut de = vec![0.0; ed];
            matvec_t_add(&mut de, self.block(Block::Wx), &da);
            for ((p, d), ev) in dpre_e.iter_mut().zip(&de).zip(e) {
                *p = d * (1.0 - ev * ev);
            }
            outer_add(&mut g[r(Block::We)], &dpre_e, &ro.inputs[t]);
            add_into(&mut g[r(Block::Be)], &dpre_e);

            let mut dh_prev = vec![0.0; hd];
            matvec_t_add(&mut dh_prev, self.block(Block::Wh), &da);

            let c = loc_coef[t];
            if c != 0.0 {
                let mut dl = ro.policies[t].iter().map(|p| c * p).collect::<Vec<_>>();
                dl[ro.loc_indices[t]] -= c;
                outer_add(&mut g[r(Block::Wl)], &dl, h_prev);
                add_into(&mut g[r(Block::Bl)], &dl);
                if loc_into_core {
                    matvec_t_add(&mut dh_prev, self.block(Block::Wl), &dl);
                }
            }
            if let Some((weight, target)) = baseline {
                let db = weight * 2.0 * (ro.baselines[t] - target);
                let wb = r(Block::Wb);
                for (gw, hv) in g[wb].iter_mut().zip(h_prev) {
                    *gw += db * hv;
                }
                g[r(Block::Cb).start] += db;
            }
            dh = dh_prev;
        }
        add_into(&mut g[r(Block::H0)], &dh);
        g
    }

    /// Teacher-forced loss `-log q(label) - sum_t log pi(l*_t)` for one example.
    pub fn supervised_example(
        &self,
        image: &Image,
        label: usize,
        locs: &[GlimpseLocation],
    ) -> Result<(f64, f64, Vec<f64>)> {
        let ro = self.rollout(image, locs.len(), RolloutMode::Forced(locs), None)?;
        let class_nll = -ro.class_probs[label].ln();
        let loc_nll = -ro.loc_log_probs.iter().sum::<f64>();
        let g = self.backward(&ro, label, &vec![1.0; locs.len()], true, None);
        Ok((class_nll, loc_nll, g))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.dims.classes {
            return Err(invalid(format!("label {label} out of range for {} classes", self.dims.classes)));
        }
        Ok(())
    }

    /// Summed gradients and diagnostics of the unsupervised objective. Each example draws
    /// from its own stream derived from one draw of `rng`.
    pub(crate) fn unsupervised_sum(
        &self,
        batch: &[(&Image, usize)],
        steps: usize,
        opts: &ReinforceOptions,
        rng: &mut SeededRng,
    ) -> Result<(LossStats, Vec<f64>)> {
        let base = rng.next_seed();
        let per: Vec<(LossStats, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, &(image, label))| {
                self.check_label(label)?;
                let mut r = SeededRng::new(mix_seed(base, i as u64));
                let mode = if opts.uniform_locations {
                    RolloutMode::Uniform
                } else {
                    RolloutMode::Sampled
                };
                let ro = self.rollout(image, steps, mode, Some(&mut r))?;
                let reward = ro.reward(label);
                let coef: Vec<f64> = if opts.uniform_locations {
                    vec![0.0; steps]
                } else {
                    ro.baselines.iter().map(|b| reward - b).collect()
                };
                let g = self.backward(&ro, label, &coef, opts.full_backprop, Some((opts.baseline_weight, reward)));
                let stats = LossStats {
                    examples: 1,
                    class_nll: -ro.class_probs[label].ln(),
                    loc_nll: -ro.loc_log_probs.iter().sum::<f64>(),
                    reward,
                    baseline_mse: ro.baselines.iter().map(|b| (b - reward).powi(2)).sum::<f64>() / steps.max(1) as f64,
                };
                Ok((stats, g))
            })
            .collect::<Result<_>>()?;
        Ok(reduce(per, self.params.len()))
    }

    pub(crate) fn supervised_sum(&self, batch: &[(&Image, usize, &[GlimpseLocation])]) -> Result<(LossStats, Vec<f64>)> {
        let per: Vec<(LossStats, Vec<f64>)> = batch
            .par_iter()
            .map(|&(image, label, locs)| {
                self.check_label(label)?;
                let (class_nll, loc_nll, g) = self.supervised_example(image, label, locs)?;
                Ok((
                    LossStats {
                        examples: 1,
                        class_nll,
                        loc_nll,
                        ..Default::default()
                    },
                    g,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(reduce(per, self.params.len()))
    }
}

/// Fixed-order sum of per-example results.
fn reduce(per: Vec<(LossStats, Vec<f64>)>, len: usize) -> (LossStats, Vec<f64>) {
    let mut g = vec![0.0; len];
    let mut s = LossStats::default();
    for (st, gi) in per {
        add_into(&mut g, &gi);
        s.examples += st.examples;
        s.class_nll += st.class_nll;
        s.loc_nll += st.loc_nll;
        s.reward += st.reward;
        s.baseline_mse += st.baseline_mse;
    }
    (s, g)
}

fn mean(stats: LossStats, grads: Vec<f64>) -> (LossStats, Vec<f64>) {
    let n = stats.examples.max(1) as f64;
    (
        LossStats {
            examples: stats.examples,
            class_nll: stats.class_nll / n,
            loc_nll: stats.loc_nll / n,
            reward: stats.reward / n,
            baseline_mse: stats.baseline_mse / n,
        },
        grads.into_iter().map(|g| g / n).collect(),
    )
}

/// Batch-mean gradient of the unsupervised objective: class cross-entropy through time,
/// REINFORCE with a learned baseline on the location head, squared error on the baseline.
pub fn loss_unsupervised(
    net: &AttentionNet,
    batch: &[(&Image, usize)],
    steps: usize,
    opts: &ReinforceOptions,
    rng: &mut SeededRng,
) -> Result<(LossStats, Vec<f64>)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let (s, g) = net.unsupervised_sum(batch, steps, opts, rng)?;
    Ok(mean(s, g))
}

/// Batch-mean gradient of the teacher-forced objective.
pub fn loss_supervised(
    net: &AttentionNet,
    batch: &[(&Image, usize, &[GlimpseLocation])],
    steps: usize,
) -> Result<(LossStats, Vec<f64>)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    if let Some(&(_, _, locs)) = batch.iter().find(|b| b.2.len() != steps) {
        return Err(invalid(format!("supervision has {} steps, expected {steps}", locs.len())));
    }
    let (s, g) = net.supervised_sum(batch)?;
    Ok(mean(s, g))
}
