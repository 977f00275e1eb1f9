//! The attentional variational posterior: classifiers of partially observed images.

mod adam;
mod linear;

pub use adam::AdamState;
pub use linear::{avp_train, avp_training_batch, AvpTrainConfig, AvpTrainReport, MaskedLinearAvp};

use crate::error::Result;
use crate::tensor::{Categorical, DesignGrid, GlimpseHistory, GlimpseLocation, Image};
use crate::world::FiniteWorld;

/// Maps a glimpse history to a class distribution.
pub trait AvpModel: Sync {
    fn classes(&self) -> usize;

    fn grid(&self) -> &DesignGrid;

    fn classify(&self, history: &GlimpseHistory) -> Result<Categorical>;

    /// Class distribution after observing `image` at `locs`.
    fn classify_view(&self, image: &Image, locs: &[GlimpseLocation]) -> Result<Categorical> {
        let history = GlimpseHistory::observe(image, &self.grid().geometry, locs)?;
        self.classify(&history)
    }

    /// Entropy of the class distribution for `observed` plus each grid location in turn,
    /// all patches taken from `image`. Indexed by row-major grid index.
    fn candidate_entropies(&self, image: &Image, observed: &[GlimpseLocation]) -> Result<Vec<f64>> {
        let mut locs = observed.to_vec();
        locs.push(observed.first().copied().unwrap_or(GlimpseLocation::new(0, 0)));
        let last = locs.len() - 1;
        self.grid()
            .locations()
            .map(|l| {
                locs[last] = l;
                self.classify_view(image, &locs).map(|c| c.entropy())
            })
            .collect()
    }
}

/// Exact posterior of a finite world, by enumeration.
#[derive(Clone, Copy, Debug)]
pub struct ExactPosterior<'w> {
    world: &'w FiniteWorld,
}

impl<'w> ExactPosterior<'w> {
    pub fn new(world: &'w FiniteWorld) -> Self {
        Self { world }
    }
}

impl AvpModel for ExactPosterior<'_> {
    fn classes(&self) -> usize {
        self.world.classes()
    }

    fn grid(&self) -> &DesignGrid {
        self.world.grid()
    }

    fn classify(&self, history: &GlimpseHistory) -> Result<Categorical> {
        self.world.exact_posterior(history)
    }

    fn classify_view(&self, image: &Image, locs: &[GlimpseLocation]) -> Result<Categorical> {
        self.world.posterior_of_view(image, locs)
    }
}
