use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{GlimpseGeometry, GlimpseLocation, Image, Patch};

/// What to do when fewer than `latent` directions carry variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankDeficiency {
    /// Keep zero-variance directions (still orthonormal, codes zero along them).
    #[default]
    Keep,
    /// Truncate the latent dimension to the numerical rank (at least 1).
    Reduce,
    Error,
}

/// Mean-centred PCA representation of an image bank: `z = W (x - mu)`.
///
/// Raw images are not retained; only `mu` (P), `W` (L x P) and the codes (N x L, doubled
/// when mirrored candidates are enabled).
#[derive(Clone, Debug, PartialEq)]
pub struct PcaBank {
    pub height: usize,
    pub width: usize,
    pub latent: usize,
    pub mean: Vec<f64>,
    /// Row-major `latent x P`, rows orthonormal.
    pub components: Vec<f64>,
    /// Row-major `candidates x latent`. Rows `n..2n` are mirrored images when `flip` is set.
    pub codes: Vec<f64>,
    pub images: usize,
    pub flip: bool,
    /// Eigenvalues of the retained components, descending.
    pub variances: Vec<f64>,
}

impl PcaBank {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn candidates(&self) -> usize {
        if self.flip {
            2 * self.images
        } else {
            self.images
        }
    }

    pub fn code(&self, candidate: usize) -> &[f64] {
        &self.codes[candidate * self.latent..(candidate + 1) * self.latent]
    }

    pub fn component(&self, j: usize) -> &[f64] {
        let p = self.pixels();
        &self.components[j * p..(j + 1) * p]
    }

    pub fn encode(&self, image: &Image) -> Result<Vec<f64>> {
        if image.len() != self.pixels() {
            return Err(invalid("image size does not match PCA bank"));
        }
        let centred: Vec<f64> = image.pixels().iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok((0..self.latent).map(|j| dot(self.component(j), &centred)).collect())
    }

    /// Full reconstruction `mu + W^T z`.
    pub fn reconstruct(&self, code: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (j, &z) in code.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.component(j)) {
                *o += w * z;
            }
        }
        out
    }

    /// Reconstruction restricted to the glimpses at `locs` (one patch per location).
    pub fn slice_reconstruct(
        &self,
        code: &[f64],
        geometry: &GlimpseGeometry,
        locs: &[GlimpseLocation],
    ) -> Result<Vec<Patch>> {
        if code.len() != self.latent {
            return Err(invalid("code length does not match latent dimension"));
        }
        locs.iter()
            .map(|&l| {
                geometry.check(l, self.height, self.width)?;
                let pixels = geometry
                    .footprint(l, self.width)
                    .map(|p| {
                        code.iter()
                            .enumerate()
                            .fold(self.mean[p], |acc, (j, z)| acc + self.components[j * self.pixels() + p] * z)
                    })
                    .collect();
                Ok(Patch {
                    size: geometry.size,
                    pixels,
                })
            })
            .collect()
    }

    /// Gram matrix `W~ W~^T` over the observed pixels (with multiplicity for overlaps).
    pub(crate) fn sliced_gram(&self, geometry: &GlimpseGeometry, locs: &[GlimpseLocation]) -> Result<Vec<f64>> {
        let l = self.latent;
        let p = self.pixels();
        let mut gram = vec![0.0; l * l];
        for &loc in locs {
            geometry.check(loc, self.height, self.width)?;
            for px in geometry.footprint(loc, self.width) {
                for a in 0..l {
                    let wa = self.components[a * p + px];
                    if wa == 0.0 {
                        continue;
                    }
                    for b in a..l {
                        gram[a * l + b] += wa * self.components[b * p + px];
                    }
                }
            }
        }
        for a in 0..l {
            for b in 0..a {
                gram[a * l + b] = gram[b * l + a];
            }
        }
        Ok(gram)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits a mean-centred PCA with `latent` components.
pub fn pca_fit(images: &[Image], latent: usize, flip: bool, rank: RankDeficiency) -> Result<PcaBank> {
    let first = images.first().ok_or_else(|| invalid("PCA needs at least one image"))?;
    let (h, w) = (first.height(), first.width());
    let p = h * w;
    let n = images.len();
    if latent == 0 || latent > n || latent > p {
        return Err(invalid(format!(
            "latent dimension {latent} must satisfy 1 <= latent <= min(images {n}, pixels {p})"
        )));
    }
    if images.iter().any(|im| im.height() != h || im.width() != w) {
        return Err(invalid("PCA bank images must share dimensions"));
    }

    let mut mean = vec![0.0; p];
    for im in images {
        for (m, x) in mean.iter_mut().zip(im.pixels()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centred = DMatrix::from_fn(n, p, |i, j| images[i].pixels()[j] - mean[j]);
    let cov = (centred.transpose() * &centred) / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let numerical_rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(1e-300))
        .count();
    let latent = if numerical_rank < latent {
        match rank {
            RankDeficiency::Keep => latent,
            RankDeficiency::Reduce => numerical_rank.max(1),
            RankDeficiency::Error => {
                return Err(Error::Numeric(format!(
                    "covariance rank {numerical_rank} below requested latent dimension {latent}"
                )))
            }
        }
    } else {
        latent
    };

    let mut components = Vec::with_capacity(latent * p);
    let mut variances = Vec::with_capacity(latent);
    for &col in order.iter().take(latent) {
        let v = eig.eigenvectors.column(col);
        // Deterministic sign: the first entry of largest magnitude is positive.
        let mut pivot = 0;
        for i in 1..p {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(v.iter().map(|x| x * sign));
        variances.push(eig.eigenvalues[col].max(0.0));
    }

    let mut bank = PcaBank {
        height: h,
        width: w,
        latent,
        mean,
        components,
        codes: Vec::new(),
        images: n,
        flip,
        variances,
    };
    let mut codes = Vec::with_capacity(bank.candidates() * latent);
    for im in images {
        codes.extend(bank.encode(im)?);
    }
    if flip {
        for im in images {
            codes.extend(bank.encode(&im.flipped_horizontal())?);
        }
    }
    bank.codes = codes;
    Ok(bank)
}
