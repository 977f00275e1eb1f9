use super::glimpse::{GlimpseGeometry, GlimpseHistory, GlimpseLocation};
use super::image::Image;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Two-channel view of a partially observed image: observed pixel values (zero elsewhere)
/// and a 0/1 mask of observed pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedEmbedding<T: Scalar = f64> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
    pub mask: Vec<T>,
}

impl<T: Scalar> MaskedEmbedding<T> {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![T::zero(); height * width],
            mask: vec![T::zero(); height * width],
        }
    }

    /// Rebuilds the embedding from observed patches alone.
    pub fn from_history(
        height: usize,
        width: usize,
        geometry: &GlimpseGeometry,
        history: &GlimpseHistory<T>,
    ) -> Result<Self> {
        let mut emb = Self::empty(height, width);
        for (loc, patch) in history.steps() {
            geometry.check(*loc, height, width)?;
            if patch.size != geometry.size {
                return Err(invalid("patch size does not match glimpse geometry"));
            }
            for (p, &v) in geometry.footprint(*loc, width).zip(&patch.pixels) {
                emb.values[p] = v;
                emb.mask[p] = T::one();
            }
        }
        Ok(emb)
    }

    /// `[values; mask]` flattened, the classifier input layout.
    pub fn features(&self) -> Vec<T> {
        let mut f = Vec::with_capacity(2 * self.values.len());
        f.extend_from_slice(&self.values);
        f.extend_from_slice(&self.mask);
        f
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m > T::zero()).count()
    }
}

/// Masks `image` down to the union of glimpse footprints at `locs`.
pub fn masked_embedding<T: Scalar>(
    image: &Image<T>,
    geometry: &GlimpseGeometry,
    locs: &[GlimpseLocation],
) -> Result<MaskedEmbedding<T>> {
    let (h, w) = (image.height(), image.width());
    let mut emb = MaskedEmbedding::empty(h, w);
    for &loc in locs {
        geometry.check(loc, h, w)?;
        for p in geometry.footprint(loc, w) {
            emb.mask[p] = T::one();
            emb.values[p] = image.pixels()[p];
        }
    }
    Ok(emb)
}
