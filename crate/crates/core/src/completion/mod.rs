//! Stochastic image completion: PCA-compressed retrieval with importance resampling,
//! and the exact finite-world completer.

mod pca;
mod sampler;

pub use pca::{pca_fit, PcaBank, RankDeficiency};
pub use sampler::{
    adaptive_sigma_q, effective_sample_size, exact_log_likelihood, importance_log_weights, proposal_sq_distances,
    resample_log, sample_candidate_indices, sample_images, sample_proposal, AdaptiveSigma, CompletionParams,
    ImageStore, Proposal, Resampling, Sigma, SigmaQ,
};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{GlimpseGeometry, GlimpseHistory, GlimpseLocation, Image};
use crate::world::FiniteWorld;

/// Images with normalized weights standing in for `p(image | observed glimpses)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Completions {
    pub images: Vec<Image>,
    pub weights: Vec<f64>,
}

impl Completions {
    /// Equally weighted Monte-Carlo samples.
    pub fn uniform(images: Vec<Image>) -> Self {
        let w = 1.0 / images.len().max(1) as f64;
        let weights = vec![w; images.len()];
        Self { images, weights }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Draws completions of an image from its glimpses at `locs`.
pub trait Completer: Sync {
    fn complete(&self, source: &Image, locs: &[GlimpseLocation], n: usize, rng: &mut SeededRng)
        -> Result<Completions>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactMode {
    /// Every consistent entry with its exact weight; `n` is ignored.
    Exhaustive,
    /// `n` i.i.d. draws from the exact completion distribution.
    Sample,
}

/// Completion by enumerating a finite world.
#[derive(Clone, Copy, Debug)]
pub struct ExactCompleter<'w> {
    pub world: &'w FiniteWorld,
    pub mode: ExactMode,
}

impl<'w> ExactCompleter<'w> {
    pub fn new(world: &'w FiniteWorld, mode: ExactMode) -> Self {
        Self { world, mode }
    }
}

impl Completer for ExactCompleter<'_> {
    fn complete(
        &self,
        source: &Image,
        locs: &[GlimpseLocation],
        n: usize,
        rng: &mut SeededRng,
    ) -> Result<Completions> {
        let history = GlimpseHistory::observe(source, self.world.geometry(), locs)?;
        let support = self.world.exact_completion(&history)?;
        let entries = self.world.entries();
        Ok(match self.mode {
            ExactMode::Exhaustive => Completions {
                images: support.iter().map(|&(i, _)| entries[i].image.clone()).collect(),
                weights: support.iter().map(|&(_, w)| w).collect(),
            },
            ExactMode::Sample => {
                let w: Vec<f64> = support.iter().map(|&(_, w)| w).collect();
                Completions::uniform(
                    (0..n)
                        .map(|_| entries[support[rng.categorical(&w)].0].image.clone())
                        .collect(),
                )
            }
        })
    }
}

/// Retrieval-based completion over a PCA bank and its raw image store.
pub struct RetrievalCompleter<'a, S: ImageStore + ?Sized> {
    pub bank: &'a PcaBank,
    pub store: &'a S,
    pub geometry: GlimpseGeometry,
    pub params: CompletionParams,
}

impl<S: ImageStore + ?Sized> Completer for RetrievalCompleter<'_, S> {
    fn complete(
        &self,
        source: &Image,
        locs: &[GlimpseLocation],
        n: usize,
        rng: &mut SeededRng,
    ) -> Result<Completions> {
        if n == 0 {
            return Err(Error::InvalidInput("requested zero completions".into()));
        }
        let params = CompletionParams {
            k2: n,
            k1: self.params.k1.max(n),
            ..self.params.clone()
        };
        let images = sample_images(self.bank, self.store, source, &self.geometry, locs, &params, rng)?;
        Ok(Completions::uniform(images))
    }
}
