//! Sequential experimental design over glimpse locations: Monte-Carlo expected posterior
//! entropy, greedy location selection, and supervision-sequence generation.

mod heatmap;

pub use heatmap::{export_heatmap, heatmap_csv, heatmap_pgm, parse_heatmap_csv};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::{Completer, Completions};
use crate::error::{invalid, Error, Result};
use crate::posterior::AvpModel;
use crate::rng::{mix_seed, SeededRng};
use crate::tensor::{log_sum_exp, DesignGrid, GlimpseLocation, Image};
use crate::world::LabeledDataset;

/// Default Monte-Carlo completions per step.
pub const DEFAULT_SAMPLES: usize = 200;

/// Expected posterior entropy (nats) at every grid location, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EpeMap {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    /// Completions behind each estimate.
    pub samples: usize,
    /// Glimpses already taken when the map was computed.
    pub history_len: usize,
}

impl EpeMap {
    pub fn get(&self, loc: GlimpseLocation) -> f64 {
        self.values[loc.gy * self.nx + loc.gx]
    }

    pub fn location(&self, index: usize) -> GlimpseLocation {
        GlimpseLocation::new(index % self.nx, index / self.nx)
    }
}

fn check_completions(completions: &Completions) -> Result<()> {
    if completions.is_empty() {
        return Err(invalid("EPE needs at least one completion"));
    }
    if completions.weights.len() != completions.images.len() {
        return Err(invalid("completion weights and images differ in length"));
    }
    Ok(())
}

/// Weighted mean over completions of the posterior entropy after observing the history
/// locations plus `candidate`, with every patch taken from the completion.
pub fn estimate_epe(
    avp: &dyn AvpModel,
    completions: &Completions,
    history: &[GlimpseLocation],
    candidate: GlimpseLocation,
) -> Result<f64> {
    check_completions(completions)?;
    avp.grid().index(candidate)?;
    let mut locs = history.to_vec();
    locs.push(candidate);
    let total: f64 = completions.weights.iter().sum();
    let mut acc = 0.0;
    for (img, w) in completions.images.iter().zip(&completions.weights) {
        acc += w * avp.classify_view(img, &locs)?.entropy();
    }
    Ok(acc / total)
}

/// [`estimate_epe`] at every grid location, sharing one completion set.
pub fn epe_map(avp: &dyn AvpModel, completions: &Completions, history: &[GlimpseLocation]) -> Result<EpeMap> {
    check_completions(completions)?;
    let grid = avp.grid();
    let per_image: Vec<Vec<f64>> = completions
        .images
        .par_iter()
        .map(|img| avp.candidate_entropies(img, history))
        .collect::<Result<_>>()?;
    let total: f64 = completions.weights.iter().sum();
    let mut values = vec![0.0; grid.len()];
    for (ents, w) in per_image.iter().zip(&completions.weights) {
        for (v, e) in values.iter_mut().zip(ents) {
            *v += w * e;
        }
    }
    for v in &mut values {
        *v /= total;
    }
    Ok(EpeMap {
        nx: grid.nx,
        ny: grid.ny,
        values,
        samples: completions.len(),
        history_len: history.len(),
    })
}

/// Location of the smallest value; ties go to the lowest row-major index.
pub fn select_location(map: &EpeMap) -> Result<GlimpseLocation> {
    if map.values.is_empty() {
        return Err(invalid("empty EPE map"));
    }
    let mut best = 0;
    for (i, &v) in map.values.iter().enumerate() {
        if v.is_nan() {
            return Err(Error::Numeric(format!("NaN in EPE map at index {i}")));
        }
        if v < map.values[best] {
            best = i;
        }
    }
    Ok(map.location(best))
}

#[derive(Clone, Debug, PartialEq)]
pub enum SupervisionKind {
    Nogs,
    Heuristic { inv_temperature: f64 },
    Handcrafted(Vec<GlimpseLocation>),
}

impl SupervisionKind {
    pub fn tag(&self) -> String {
        match self {
            SupervisionKind::Nogs => "nogs".into(),
            SupervisionKind::Heuristic { inv_temperature } => format!("heuristic-{inv_temperature}"),
            SupervisionKind::Handcrafted(_) => "handcrafted".into(),
        }
    }
}

/// A glimpse sequence for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisionRecord {
    pub id: u64,
    pub kind: String,
    pub t: usize,
    #[serde(with = "loc_pairs")]
    pub locs: Vec<GlimpseLocation>,
    #[serde(skip)]
    pub maps: Option<Vec<EpeMap>>,
}

mod loc_pairs {
    use super::GlimpseLocation;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(locs: &[GlimpseLocation], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[usize; 2]> = locs.iter().map(|l| [l.gx, l.gy]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<GlimpseLocation>, D::Error> {
        let pairs = Vec::<[usize; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[gx, gy]| GlimpseLocation::new(gx, gy)).collect())
    }
}

impl SupervisionRecord {
    pub fn validate(&self, grid: &DesignGrid) -> Result<()> {
        if self.locs.len() != self.t {
            return Err(invalid(format!("record {} has {} locations for t = {}", self.id, self.locs.len(), self.t)));
        }
        for &l in &self.locs {
            grid.index(l)?;
        }
        Ok(())
    }
}

/// Greedy sequential design: at each step draw `samples` completions given the glimpses so
/// far, pick the location of least expected posterior entropy, and observe it.
#[allow(clippy::too_many_arguments)]
pub fn annotate_sequence(
    id: u64,
    image: &Image,
    steps: usize,
    avp: &dyn AvpModel,
    completer: &dyn Completer,
    samples: usize,
    keep_maps: bool,
    rng: &mut SeededRng,
) -> Result<SupervisionRecord> {
    if steps == 0 {
        return Err(invalid("annotation needs at least one step"));
    }
    let mut locs = Vec::with_capacity(steps);
    let mut maps = Vec::new();
    for step in 0..steps {
        let wrap = |e: Error| Error::Completion {
            step,
            source: Box::new(e),
        };
        let completions = completer.complete(image, &locs, samples, rng).map_err(wrap)?;
        let map = epe_map(avp, &completions, &locs)?;
        locs.push(select_location(&map)?);
        if keep_maps {
            maps.push(map);
        }
    }
    Ok(SupervisionRecord {
        id,
        kind: SupervisionKind::Nogs.tag(),
        t: steps,
        locs,
        maps: keep_maps.then_some(maps),
    })
}

/// Location distribution `log p(l) = C - inv_temperature * EPE(l)` from an empty-history map.
#[derive(Clone, Debug, PartialEq)]
pub struct HeuristicSaliency {
    pub log_probs: Vec<f64>,
    pub inv_temperature: f64,
    pub normalizer: f64,
    pub nx: usize,
}

impl HeuristicSaliency {
    pub fn from_map(map: &EpeMap, inv_temperature: f64) -> Result<Self> {
        if !(inv_temperature > 0.0) {
            return Err(invalid("inverse temperature must be positive"));
        }
        let scaled: Vec<f64> = map.values.iter().map(|e| -inv_temperature * e).collect();
        let normalizer = -log_sum_exp(&scaled);
        Ok(Self {
            log_probs: scaled.iter().map(|s| normalizer + s).collect(),
            inv_temperature,
            normalizer,
            nx: map.nx,
        })
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn sample(&self, rng: &mut SeededRng) -> GlimpseLocation {
        let i = rng.categorical(&self.probs());
        GlimpseLocation::new(i % self.nx, i / self.nx)
    }
}

/// Saliency from `samples` unconditional completions.
pub fn heuristic_saliency(
    avp: &dyn AvpModel,
    completer: &dyn Completer,
    reference: &Image,
    inv_temperature: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<HeuristicSaliency> {
    let completions = completer.complete(reference, &[], samples, rng)?;
    HeuristicSaliency::from_map(&epe_map(avp, &completions, &[])?, inv_temperature)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnnotationConfig {
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub keep_maps: bool,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            keep_maps: false,
        }
    }
}

/// Supervision records for the first `count` images of `data`, in dataset order.
///
/// Every image gets its own stream derived from the seed and its id, so results do not
/// depend on the thread count.
pub fn make_supervision_set(
    data: &LabeledDataset,
    kind: &SupervisionKind,
    count: usize,
    avp: &dyn AvpModel,
    completer: &dyn Completer,
    cfg: &AnnotationConfig,
) -> Result<Vec<SupervisionRecord>> {
    if count > data.len() {
        return Err(invalid(format!("cannot annotate {count} of {} images", data.len())));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let items = &data.items[..count];
    match kind {
        SupervisionKind::Nogs => items
            .par_iter()
            .map(|item| {
                let mut rng = SeededRng::new(mix_seed(cfg.seed, item.id));
                annotate_sequence(item.id, &item.image, cfg.steps, avp, completer, cfg.samples, cfg.keep_maps, &mut rng)
            })
            .collect(),
        SupervisionKind::Heuristic { inv_temperature } => {
            let mut rng = SeededRng::new(mix_seed(cfg.seed, u64::MAX));
            let saliency =
                heuristic_saliency(avp, completer, &items[0].image, *inv_temperature, cfg.samples, &mut rng)?;
            Ok(items
                .iter()
                .map(|item| {
                    let mut rng = SeededRng::new(mix_seed(cfg.seed, item.id));
                    SupervisionRecord {
                        id: item.id,
                        kind: kind.tag(),
                        t: cfg.steps,
                        locs: (0..cfg.steps).map(|_| saliency.sample(&mut rng)).collect(),
                        maps: None,
                    }
                })
                .collect())
        }
        SupervisionKind::Handcrafted(locs) => {
            if locs.len() != cfg.steps {
                return Err(Error::Config(format!(
                    "handcrafted sequence has {} locations, expected {}",
                    locs.len(),
                    cfg.steps
                )));
            }
            for &l in locs {
                avp.grid().index(l)?;
            }
            Ok(items
                .iter()
                .map(|item| SupervisionRecord {
                    id: item.id,
                    kind: kind.tag(),
                    t: cfg.steps,
                    locs: locs.clone(),
                    maps: None,
                })
                .collect())
        }
    }
}
