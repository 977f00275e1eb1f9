use super::{AdamState, AvpModel};
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{
    entropy_of, log_sum_exp, masked_embedding, softmax, Categorical, DesignGrid, GlimpseHistory, GlimpseLocation,
    Image, MaskedEmbedding,
};
use crate::world::LabeledDataset;

/// Linear-softmax classifier over the `[values; mask]` embedding.
///
/// Parameters are one flat vector: the `K x 2P` weight matrix row-major, followed by
/// `K` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedLinearAvp {
    classes: usize,
    grid: DesignGrid,
    params: Vec<f64>,
    pub epochs_trained: usize,
}

impl MaskedLinearAvp {
    pub fn zeros(classes: usize, grid: DesignGrid) -> Self {
        let p = grid.height * grid.width;
        Self {
            classes,
            grid,
            params: vec![0.0; classes * (2 * p + 1)],
            epochs_trained: 0,
        }
    }

    pub fn from_params(classes: usize, grid: DesignGrid, params: Vec<f64>) -> Result<Self> {
        let expected = classes * (2 * grid.height * grid.width + 1);
        if params.len() != expected {
            return Err(Error::Model(format!("expected {expected} parameters, got {}", params.len())));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(Self {
            classes,
            grid,
            params,
            epochs_trained: 0,
        })
    }

    pub fn pixels(&self) -> usize {
        self.grid.height * self.grid.width
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight for class `k` and feature `f` (`f < P` value channel, `f >= P` mask channel).
    pub fn weight(&self, k: usize, f: usize) -> f64 {
        self.params[k * 2 * self.pixels() + f]
    }

    pub fn set_weight(&mut self, k: usize, f: usize, v: f64) {
        let p = self.pixels();
        self.params[k * 2 * p + f] = v;
    }

    pub fn bias(&self, k: usize) -> f64 {
        self.params[self.classes * 2 * self.pixels() + k]
    }

    pub fn set_bias(&mut self, k: usize, v: f64) {
        let off = self.classes * 2 * self.pixels();
        self.params[off + k] = v;
    }

    fn check_embedding(&self, emb: &MaskedEmbedding) -> Result<()> {
        if emb.height != self.grid.height || emb.width != self.grid.width {
            return Err(Error::Model(format!(
                "embedding is {}x{}, model expects {}x{}",
                emb.width, emb.height, self.grid.width, self.grid.height
            )));
        }
        Ok(())
    }

    /// Logits, summing only over observed pixels (all other features are zero).
    pub fn logits(&self, emb: &MaskedEmbedding) -> Result<Vec<f64>> {
        self.check_embedding(emb)?;
        let p = self.pixels();
        let observed: Vec<usize> = (0..p).filter(|&i| emb.mask[i] != 0.0).collect();
        Ok((0..self.classes)
            .map(|k| {
                let row = &self.params[k * 2 * p..(k + 1) * 2 * p];
                observed
                    .iter()
                    .fold(self.bias(k), |acc, &i| acc + row[i] * emb.values[i] + row[p + i] * emb.mask[i])
            })
            .collect())
    }

    pub fn classify_embedding(&self, emb: &MaskedEmbedding) -> Result<Categorical> {
        Ok(Categorical::from_logits(&self.logits(emb)?))
    }

    fn embed(&self, history: &GlimpseHistory) -> Result<MaskedEmbedding> {
        MaskedEmbedding::from_history(self.grid.height, self.grid.width, &self.grid.geometry, history)
    }

    /// Mean negative log-likelihood of the labels and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[(GlimpseHistory, usize)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let p = self.pixels();
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let bias_off = self.classes * 2 * p;
        for (hist, label) in batch {
            if *label >= self.classes {
                return Err(invalid(format!("label {label} out of range")));
            }
            let emb = self.embed(hist)?;
            let logits = self.logits(&emb)?;
            loss += log_sum_exp(&logits) - logits[*label];
            let probs = softmax(&logits);
            let observed: Vec<usize> = (0..p).filter(|&i| emb.mask[i] != 0.0).collect();
            for k in 0..self.classes {
                let delta = (probs[k] - if k == *label { 1.0 } else { 0.0 }) / n;
                let row = &mut grad[k * 2 * p..(k + 1) * 2 * p];
                for &i in &observed {
                    row[i] += delta * emb.values[i];
                    row[p + i] += delta * emb.mask[i];
                }
                grad[bias_off + k] += delta;
            }
        }
        Ok((loss / n, grad))
    }

    /// Mean cross-entropy of labels under the model.
    pub fn cross_entropy(&self, samples: &[(GlimpseHistory, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (hist, label) in samples {
            let logits = self.logits(&self.embed(hist)?)?;
            total += log_sum_exp(&logits) - logits[*label];
        }
        Ok(total / samples.len().max(1) as f64)
    }
}

impl AvpModel for MaskedLinearAvp {
    fn classes(&self) -> usize {
        self.classes
    }

    fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    fn classify(&self, history: &GlimpseHistory) -> Result<Categorical> {
        self.classify_embedding(&self.embed(history)?)
    }

    fn classify_view(&self, image: &Image, locs: &[GlimpseLocation]) -> Result<Categorical> {
        self.classify_embedding(&masked_embedding(image, &self.grid.geometry, locs)?)
    }

    fn candidate_entropies(&self, image: &Image, observed: &[GlimpseLocation]) -> Result<Vec<f64>> {
        // Incremental: logits for observed ∪ candidate = base logits + newly covered pixels.
        let emb = masked_embedding(image, &self.grid.geometry, observed)?;
        let base = self.logits(&emb)?;
        let p = self.pixels();
        let w = self.grid.width;
        let px = image.pixels();
        let mut logits = vec![0.0; self.classes];
        self.grid
            .locations()
            .map(|loc| {
                logits.copy_from_slice(&base);
                for i in self.grid.geometry.footprint(loc, w) {
                    if emb.mask[i] == 0.0 {
                        for (k, l) in logits.iter_mut().enumerate() {
                            let row = k * 2 * p;
                            *l += self.params[row + i] * px[i] + self.params[row + p + i];
                        }
                    }
                }
                Ok(entropy_of(&softmax(&logits)))
            })
            .collect()
    }
}

/// Draws training histories: an item uniformly from `data`, `t` uniform on `1..=t_max`,
/// each location uniform over the design grid.
pub fn avp_training_batch(
    data: &LabeledDataset,
    t_max: usize,
    grid: &DesignGrid,
    batch: usize,
    rng: &mut SeededRng,
) -> Result<Vec<(GlimpseHistory, usize)>> {
    if data.is_empty() || t_max == 0 {
        return Err(invalid("training batch needs data and t_max >= 1"));
    }
    (0..batch)
        .map(|_| {
            let item = &data.items[rng.below(data.len())];
            let t = 1 + rng.below(t_max);
            let locs: Vec<GlimpseLocation> = (0..t).map(|_| grid.location(rng.below(grid.len()))).collect();
            Ok((GlimpseHistory::observe(&item.image, &grid.geometry, &locs)?, item.label))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvpTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Maximum history length sampled during training.
    pub t_max: usize,
    /// Fixed validation histories drawn once from the validation split.
    pub val_histories: usize,
    pub lr: f64,
}

impl Default for AvpTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 64,
            t_max: 5,
            val_histories: 1000,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AvpTrainReport {
    pub initial_val_xent: f64,
    pub val_xent: Vec<f64>,
    pub train_loss: Vec<f64>,
    /// 0 when the initial model was never beaten.
    pub best_epoch: usize,
}

/// Trains with Adam and returns the checkpoint with the lowest validation cross-entropy.
pub fn avp_train(
    model: MaskedLinearAvp,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &AvpTrainConfig,
    adam: &mut AdamState,
    rng: &mut SeededRng,
) -> Result<(MaskedLinearAvp, AvpTrainReport)> {
    if train.is_empty() || val.is_empty() {
        return Err(invalid("avp training needs non-empty train and validation splits"));
    }
    let grid = model.grid;
    let mut val_rng = rng.derive(0x5641_4c);
    let val_set = avp_training_batch(val, cfg.t_max, &grid, cfg.val_histories.max(1), &mut val_rng)?;
    let initial = model.cross_entropy(&val_set)?;
    let mut report = AvpTrainReport {
        initial_val_xent: initial,
        val_xent: Vec::with_capacity(cfg.epochs),
        train_loss: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    let mut best = (initial, model.clone());
    let mut model = model;
    let iters = train.len().div_ceil(cfg.batch.max(1));
    for epoch in 1..=cfg.epochs {
        let mut running = 0.0;
        for _ in 0..iters {
            let batch = avp_training_batch(train, cfg.t_max, &grid, cfg.batch.max(1), rng)?;
            let (loss, grad) = model.loss_and_grad(&batch)?;
            adam.update(&mut model.params, &grad)?;
            running += loss;
        }
        model.epochs_trained += 1;
        let xent = model.cross_entropy(&val_set)?;
        report.train_loss.push(running / iters as f64);
        report.val_xent.push(xent);
        if xent < best.0 {
            best = (xent, model.clone());
            report.best_epoch = epoch;
        }
    }
    Ok((best.1, report))
}
