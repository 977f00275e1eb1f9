use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AttentionNet, Block, LossStats, ReinforceOptions, RolloutMode};
use crate::boed::SupervisionRecord;
use crate::error::{invalid, Error, Result};
use crate::posterior::AdamState;
use crate::rng::{mix_seed, SeededRng};
use crate::tensor::{GlimpseLocation, Image};
use crate::world::LabeledDataset;

const EVAL_STREAM: u64 = 0x4556_414c;

/// Which parameters a training run updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    #[default]
    Joint,
    /// Uniformly random locations; location head and baseline frozen.
    Pretrain,
    /// Only the location head and baseline move.
    LocationOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Share of each minibatch drawn from the supervision set (when it is non-empty).
    pub supervised_fraction: f64,
    pub baseline_weight: f64,
    pub full_backprop: bool,
    pub seed: u64,
    pub epochs: usize,
    /// Validate every this many epochs.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub phase: Phase,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            batch: 64,
            lr: 1e-3,
            supervised_fraction: 0.5,
            baseline_weight: 1.0,
            full_backprop: false,
            seed: 0,
            epochs: 50,
            eval_every: 1,
            eval_episodes: 1,
            phase: Phase::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("steps, batch, eval_every and eval_episodes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.supervised_fraction) {
            return Err(Error::Config("supervised_fraction must lie in [0, 1]".into()));
        }
        if !(self.lr > 0.0) || !(self.baseline_weight >= 0.0) {
            return Err(Error::Config("lr must be positive and baseline_weight non-negative".into()));
        }
        Ok(())
    }

    fn reinforce(&self) -> ReinforceOptions {
        ReinforceOptions {
            baseline_weight: self.baseline_weight,
            full_backprop: self.full_backprop,
            uniform_locations: self.phase == Phase::Pretrain,
        }
    }
}

/// One line of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: &'static str,
    pub accuracy: f64,
    pub xent: f64,
    pub loc_nll: f64,
    pub iters: usize,
}

impl MetricRow {
    pub const HEADER: &'static str = "epoch,split,accuracy,xent,loc_nll,iters";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.split, self.accuracy, self.xent, self.loc_nll, self.iters
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<MetricRow>,
    /// `(iterations, validation accuracy)` at each evaluation.
    pub val_accuracy: Vec<(usize, f64)>,
    pub iterations: usize,
    /// Examples that went through the REINFORCE path.
    pub reinforce_examples: usize,
    pub supervised_examples: usize,
}

impl TrainReport {
    pub fn best_accuracy(&self) -> f64 {
        self.val_accuracy.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.val_accuracy.last().map(|v| v.1)
    }
}

/// First iteration count whose accuracy is within `tolerance` (absolute) of the best.
pub fn iterations_to_within(history: &[(usize, f64)], tolerance: f64) -> Option<usize> {
    let best = history.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    history.iter().find(|v| v.1 >= best - tolerance).map(|v| v.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub xent: f64,
    pub loc_nll: f64,
    /// Per step, the share of episodes that glimpsed each grid location.
    pub frequencies: Vec<Vec<f64>>,
    pub episodes: usize,
}

/// Accuracy of sampled rollouts, `episodes` per image.
pub fn evaluate(
    net: &AttentionNet,
    data: &LabeledDataset,
    steps: usize,
    episodes: usize,
    rng: &mut SeededRng,
) -> Result<EvalReport> {
    if data.is_empty() || episodes == 0 {
        return Err(invalid("evaluation needs images and at least one episode"));
    }
    let base = rng.next_seed();
    let runs: Vec<Vec<(f64, f64, f64, Vec<usize>)>> = data
        .items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut r = SeededRng::new(mix_seed(base, i as u64));
            (0..episodes)
                .map(|_| {
                    let ro = net.rollout(&item.image, steps, RolloutMode::Sampled, Some(&mut r))?;
                    Ok((
                        ro.reward(item.label),
                        -ro.class_probs[item.label].ln(),
                        -ro.loc_log_probs.iter().sum::<f64>(),
                        ro.loc_indices,
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = (data.len() * episodes) as f64;
    let mut frequencies = vec![vec![0.0; net.grid().len()]; steps];
    let (mut acc, mut xent, mut loc) = (0.0, 0.0, 0.0);
    for (r, x, l, idx) in runs.iter().flatten() {
        acc += r;
        xent += x;
        loc += l;
        for (t, &i) in idx.iter().enumerate() {
            frequencies[t][i] += 1.0;
        }
    }
    for row in &mut frequencies {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok(EvalReport {
        accuracy: acc / n,
        xent: xent / n,
        loc_nll: loc / n,
        frequencies,
        episodes: data.len() * episodes,
    })
}

fn frozen(phase: Phase, block: Block) -> bool {
    let head = matches!(block, Block::Wl | Block::Bl | Block::Wb | Block::Cb);
    match phase {
        Phase::Joint => false,
        Phase::Pretrain => head,
        Phase::LocationOnly => !head,
    }
}

/// Minibatch training on a mix of unsupervised examples (REINFORCE) and supervised
/// examples (teacher forcing). With no supervision records this is plain REINFORCE
/// training of the recurrent attention model.
pub fn train(
    mut net: AttentionNet,
    train_data: &LabeledDataset,
    val: &LabeledDataset,
    supervision: &[SupervisionRecord],
    cfg: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut SeededRng,
) -> Result<(AttentionNet, TrainReport)> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(invalid("empty training set"));
    }
    if adam.len() != net.params().len() {
        return Err(Error::Model("optimizer state does not match the network".into()));
    }
    let index: HashMap<u64, usize> = train_data.items.iter().enumerate().map(|(i, it)| (it.id, i)).collect();
    let mut sup: Vec<(usize, &[GlimpseLocation])> = Vec::with_capacity(supervision.len());
    for rec in supervision {
        let &i = index
            .get(&rec.id)
            .ok_or_else(|| Error::Config(format!("supervision id {} not in the training set", rec.id)))?;
        if rec.t != cfg.steps {
            return Err(Error::Config(format!("supervision record {} has t = {}, expected {}", rec.id, rec.t, cfg.steps)));
        }
        rec.validate(net.grid())?;
        sup.push((i, &rec.locs));
    }
    let n_sup = if sup.is_empty() {
        0
    } else {
        ((cfg.supervised_fraction * cfg.batch as f64).round() as usize).min(cfg.batch)
    };
    let n_uns = cfg.batch - n_sup;
    let opts = cfg.reinforce();
    let per_epoch = train_data.len().div_ceil(cfg.batch);
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.epochs {
        let mut epoch_stats = LossStats::default();
        for _ in 0..per_epoch {
            let uns: Vec<(&Image, usize)> = (0..n_uns)
                .map(|_| {
                    let it = &train_data.items[rng.below(train_data.len())];
                    (&it.image, it.label)
                })
                .collect();
            let sups: Vec<(&Image, usize, &[GlimpseLocation])> = (0..n_sup)
                .map(|_| {
                    let (i, locs) = sup[rng.below(sup.len())];
                    let it = &train_data.items[i];
                    (&it.image, it.label, locs)
                })
                .collect();
            let mut grad = vec![0.0; net.params().len()];
            let mut have = false;
            for part in [
                (!uns.is_empty()).then(|| net.unsupervised_sum(&uns, cfg.steps, &opts, rng)),
                (!sups.is_empty()).then(|| net.supervised_sum(&sups)),
            ]
            .into_iter()
            .flatten()
            {
                let (s, g) = part?;
                if have {
                    for (a, b) in grad.iter_mut().zip(&g) {
                        *a += b;
                    }
                } else {
                    grad = g;
                    have = true;
                }
                epoch_stats.class_nll += s.class_nll;
                epoch_stats.loc_nll += s.loc_nll;
                epoch_stats.reward += s.reward;
                epoch_stats.examples += s.examples;
            }
            report.reinforce_examples += uns.len();
            report.supervised_examples += sups.len();
            let scale = cfg.batch as f64;
            for g in &mut grad {
                *g /= scale;
            }
            for b in Block::ALL {
                if frozen(cfg.phase, b) {
                    grad[net.range(b)].fill(0.0);
                }
            }
            adam.update(net.params_mut(), &grad)?;
            report.iterations += 1;
        }
        let n = epoch_stats.examples.max(1) as f64;
        report.metrics.push(MetricRow {
            epoch,
            split: "train",
            accuracy: epoch_stats.reward / n,
            xent: epoch_stats.class_nll / n,
            loc_nll: epoch_stats.loc_nll / n,
            iters: report.iterations,
        });
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) && !val.is_empty() {
            let mut eval_rng = SeededRng::new(mix_seed(cfg.seed, EVAL_STREAM));
            let ev = evaluate(&net, val, cfg.steps, cfg.eval_episodes, &mut eval_rng)?;
            report.val_accuracy.push((report.iterations, ev.accuracy));
            report.metrics.push(MetricRow {
                epoch,
                split: "val",
                accuracy: ev.accuracy,
                xent: ev.xent,
                loc_nll: ev.loc_nll,
                iters: report.iterations,
            });
        }
        if net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("attention parameters diverged in epoch {epoch}")));
        }
    }
    Ok((net, report))
}
