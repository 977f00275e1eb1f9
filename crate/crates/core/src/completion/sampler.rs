//! Two-stage importance resampling over a PCA-compressed image bank.
//!
//! Stage one scores every bank candidate with a Gaussian likelihood of PCA-reconstructed
//! observations and resamples `k1` candidates. Stage two loads those raw images, scores
//! them with the exact Gaussian likelihood of the true observed patches, divides by the
//! proposal probability, and resamples `k2` images.

use serde::{Deserialize, Serialize};

use super::pca::{dot, PcaBank};
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{fovea, GlimpseGeometry, GlimpseLocation, Image};

/// Standard deviation schedule `base * growth^t`, `t` = number of conditioning glimpses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sigma {
    pub base: f64,
    pub growth: f64,
}

impl Sigma {
    pub fn fixed(sigma: f64) -> Self {
        Self { base: sigma, growth: 1.0 }
    }

    pub fn at(&self, observations: usize) -> f64 {
        self.base * self.growth.powi(observations as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SigmaQ {
    Fixed(Sigma),
    /// Tuned per proposal so its effective sample size is close to `k1`.
    Adaptive { initial: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionParams {
    pub k1: usize,
    pub k2: usize,
    pub sigma_p: Sigma,
    pub sigma_q: SigmaQ,
    pub resampling: Resampling,
}

impl Default for CompletionParams {
    /// `k1 = 1000`, `k2 = 200`, `sigma_p = sigma_q = (5 / 255) * 2^t` on the unit pixel scale.
    fn default() -> Self {
        let s = Sigma {
            base: 5.0 / 255.0,
            growth: 2.0,
        };
        Self {
            k1: 1000,
            k2: 200,
            sigma_p: s,
            sigma_q: SigmaQ::Fixed(s),
            resampling: Resampling::Multinomial,
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 || self.k2 > self.k1 {
            return Err(invalid("completion needs 1 <= k2 <= k1"));
        }
        let positive = |s: &Sigma| s.base > 0.0 && s.growth > 0.0;
        let q_ok = match &self.sigma_q {
            SigmaQ::Fixed(s) => positive(s),
            SigmaQ::Adaptive { initial } => *initial > 0.0,
        };
        if !positive(&self.sigma_p) || !q_ok {
            return Err(invalid("sigma values must be positive"));
        }
        Ok(())
    }
}

/// Raw image storage addressed by bank index.
pub trait ImageStore: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load(&self, index: usize) -> Result<&Image>;
}

impl ImageStore for [Image] {
    fn len(&self) -> usize {
        <[Image]>::len(self)
    }

    fn load(&self, index: usize) -> Result<&Image> {
        self.get(index)
            .ok_or_else(|| Error::Storage(format!("image {index} missing from store of {}", self.len())))
    }
}

impl ImageStore for Vec<Image> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<&Image> {
        self.as_slice().load(index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    /// Candidate indices (`>= images` denotes a mirrored image).
    pub indices: Vec<usize>,
    /// Normalized log proposal probability of each drawn candidate.
    pub log_q: Vec<f64>,
    pub sigma_q: f64,
    /// Set when adaptive tuning could not reach its effective-sample-size band.
    pub sigma_fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveSigma {
    pub sigma: f64,
    pub ess: f64,
    pub fallback: bool,
}

const ADAPTIVE_SPAN: f64 = 1_073_741_824.0; // 2^30 either side of the initial value

/// Effective sample size `(sum w)^2 / sum w^2` of `w_i = exp(-(d_i - min d) / (2 sigma^2))`.
pub fn effective_sample_size(sq_dists: &[f64], sigma: f64) -> f64 {
    let dmin = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let (s1, s2) = sq_dists.iter().fold((0.0, 0.0), |(a, b), &d| {
        let w = (-(d - dmin) / (2.0 * sigma * sigma)).exp();
        (a + w, b + w * w)
    });
    s1 * s1 / s2
}

/// Bisects `sigma` (in log space, at most 50 steps) until the proposal's effective sample
/// size lies in `[0.8 target, 1.25 target]`.
///
/// A target at or above the candidate count cannot be met for any finite sigma; the upper
/// bracket is returned with `fallback` set. The same happens when the band is out of reach.
pub fn adaptive_sigma_q(sq_dists: &[f64], target: f64, initial: f64) -> AdaptiveSigma {
    let n = sq_dists.len() as f64;
    let (lo_band, hi_band) = (0.8 * target, 1.25 * target);
    let in_band = |e: f64| e >= lo_band && e <= hi_band;
    let dmin = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = sq_dists.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if dmax - dmin <= 0.0 {
        return AdaptiveSigma {
            sigma: initial,
            ess: n,
            fallback: !in_band(n),
        };
    }
    let (mut lo, mut hi) = (initial / ADAPTIVE_SPAN, initial * ADAPTIVE_SPAN);
    if target >= n {
        return AdaptiveSigma {
            sigma: hi,
            ess: effective_sample_size(sq_dists, hi),
            fallback: true,
        };
    }
    let e0 = effective_sample_size(sq_dists, initial);
    if in_band(e0) {
        return AdaptiveSigma {
            sigma: initial,
            ess: e0,
            fallback: false,
        };
    }
    for _ in 0..50 {
        let mid = (lo * hi).sqrt();
        let e = effective_sample_size(sq_dists, mid);
        if in_band(e) {
            return AdaptiveSigma {
                sigma: mid,
                ess: e,
                fallback: false,
            };
        }
        if e < lo_band {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let top = initial * ADAPTIVE_SPAN;
    AdaptiveSigma {
        sigma: top,
        ess: effective_sample_size(sq_dists, top),
        fallback: true,
    }
}

/// Draws `k` indices proportionally to `exp(log_w)`.
pub fn resample_log(log_w: &[f64], k: usize, scheme: Resampling, rng: &mut SeededRng) -> Result<Vec<usize>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("all resampling weights are zero or non-finite".into()));
    }
    let mut cdf = Vec::with_capacity(log_w.len());
    let mut acc = 0.0;
    for &lw in log_w {
        acc += (lw - max).exp();
        cdf.push(acc);
    }
    let total = acc;
    let pick = |u: f64| cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
    Ok(match scheme {
        Resampling::Multinomial => (0..k).map(|_| pick(rng.uniform() * total)).collect(),
        Resampling::Systematic => {
            let step = total / k as f64;
            let u0 = rng.uniform() * step;
            (0..k).map(|i| pick(u0 + i as f64 * step)).collect()
        }
    })
}

fn normalize_log(log_w: &mut [f64]) {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + log_w.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    for l in log_w {
        *l -= lse;
    }
}

/// Squared distance between PCA-reconstructed observations of `source` and of every
/// candidate, `|W~^T (z - z_i)|^2`, computed through the sliced Gram matrix.
pub fn proposal_sq_distances(
    bank: &PcaBank,
    source: &Image,
    geometry: &GlimpseGeometry,
    locs: &[GlimpseLocation],
) -> Result<Vec<f64>> {
    let z = bank.encode(source)?;
    let gram = bank.sliced_gram(geometry, locs)?;
    let l = bank.latent;
    let mut d = vec![0.0; l];
    let mut gd = vec![0.0; l];
    Ok((0..bank.candidates())
        .map(|i| {
            for (dj, (a, b)) in d.iter_mut().zip(z.iter().zip(bank.code(i))) {
                *dj = a - b;
            }
            for (a, g) in gd.iter_mut().enumerate() {
                *g = dot(&gram[a * l..(a + 1) * l], &d);
            }
            dot(&d, &gd).max(0.0)
        })
        .collect())
}

/// Stage one: Gaussian proposal over bank candidates, `k1` multinomial draws.
pub fn sample_proposal(
    bank: &PcaBank,
    source: &Image,
    geometry: &GlimpseGeometry,
    locs: &[GlimpseLocation],
    params: &CompletionParams,
    rng: &mut SeededRng,
) -> Result<Proposal> {
    params.validate()?;
    let dists = proposal_sq_distances(bank, source, geometry, locs)?;
    let (sigma_q, sigma_fallback) = match params.sigma_q {
        SigmaQ::Fixed(s) => (s.at(locs.len()), false),
        SigmaQ::Adaptive { initial } => {
            let a = adaptive_sigma_q(&dists, params.k1 as f64, initial);
            (a.sigma, a.fallback)
        }
    };
    let mut log_w: Vec<f64> = dists.iter().map(|d| -d / (2.0 * sigma_q * sigma_q)).collect();
    normalize_log(&mut log_w);
    let indices = resample_log(&log_w, params.k1, params.resampling, rng)?;
    let log_q = indices.iter().map(|&i| log_w[i]).collect();
    Ok(Proposal {
        indices,
        log_q,
        sigma_q,
        sigma_fallback,
    })
}

fn load_candidate(bank: &PcaBank, store: &(impl ImageStore + ?Sized), candidate: usize) -> Result<Image> {
    if candidate < bank.images {
        Ok(store.load(candidate)?.clone())
    } else {
        Ok(store.load(candidate - bank.images)?.flipped_horizontal())
    }
}

/// Log of the exact Gaussian likelihood of the observed patches, up to a constant.
pub fn exact_log_likelihood(
    source: &Image,
    candidate: &Image,
    geometry: &GlimpseGeometry,
    locs: &[GlimpseLocation],
    sigma_p: f64,
) -> Result<f64> {
    let mut sq = 0.0;
    for &l in locs {
        let y = fovea(source, geometry, l)?;
        let yk = fovea(candidate, geometry, l)?;
        sq += y.pixels.iter().zip(&yk.pixels).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(-sq / (2.0 * sigma_p * sigma_p))
}

/// Stage two importance weights `log p - log q` for each proposed candidate, normalized.
pub fn importance_log_weights(
    bank: &PcaBank,
    store: &(impl ImageStore + ?Sized),
    source: &Image,
    geometry: &GlimpseGeometry,
    locs: &[GlimpseLocation],
    params: &CompletionParams,
    proposal: &Proposal,
) -> Result<Vec<f64>> {
    let sigma_p = params.sigma_p.at(locs.len());
    let mut log_w2 = Vec::with_capacity(proposal.indices.len());
    for (&cand, &lq) in proposal.indices.iter().zip(&proposal.log_q) {
        let img = load_candidate(bank, store, cand)?;
        log_w2.push(exact_log_likelihood(source, &img, geometry, locs, sigma_p)? - lq);
    }
    normalize_log(&mut log_w2);
    Ok(log_w2)
}

/// Candidate indices of `k2` completions of `source` given its glimpses at `locs`.
pub fn sample_candidate_indices(
    bank: &PcaBank,
    store: &(impl ImageStore + ?Sized),
    source: &Image,
    geometry: &GlimpseGeometry,
    locs: &[GlimpseLocation],
    params: &CompletionParams,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if store.len() < bank.images {
        return Err(Error::Storage(format!(
            "store holds {} images but the bank indexes {}",
            store.len(),
            bank.images
        )));
    }
    let proposal = sample_proposal(bank, source, geometry, locs, params, rng)?;
    let log_w2 = importance_log_weights(bank, store, source, geometry, locs, params, &proposal)?;
    let picks = resample_log(&log_w2, params.k2, params.resampling, rng)?;
    Ok(picks.into_iter().map(|k| proposal.indices[k]).collect())
}

/// `k2` images approximately distributed as the bank posterior given the glimpses.
pub fn sample_images(
    bank: &PcaBank,
    store: &(impl ImageStore + ?Sized),
    source: &Image,
    geometry: &GlimpseGeometry,
    locs: &[GlimpseLocation],
    params: &CompletionParams,
    rng: &mut SeededRng,
) -> Result<Vec<Image>> {
    sample_candidate_indices(bank, store, source, geometry, locs, params, rng)?
        .into_iter()
        .map(|c| load_candidate(bank, store, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::{pca_fit, RankDeficiency};

    fn bank_images(seed: u64, n: usize) -> Vec<Image> {
        let mut rng = SeededRng::new(seed);
        (0..n).map(|_| Image::from_fn(4, 4, |_, _| rng.uniform()).unwrap()).collect()
    }

    fn geo() -> GlimpseGeometry {
        GlimpseGeometry::new(2, 2).unwrap()
    }

    #[test]
    fn gram_distances_match_direct_reconstruction() {
        let images = bank_images(1, 12);
        let bank = pca_fit(&images, 5, true, RankDeficiency::Keep).unwrap();
        let locs = [GlimpseLocation::new(0, 1), GlimpseLocation::new(1, 1), GlimpseLocation::new(0, 1)];
        let src = &images[3];
        let fast = proposal_sq_distances(&bank, src, &geo(), &locs).unwrap();
        let zs = bank.encode(src).unwrap();
        let y_hat = bank.slice_reconstruct(&zs, &geo(), &locs).unwrap();
        for (i, f) in fast.iter().enumerate() {
            let yi = bank.slice_reconstruct(bank.code(i), &geo(), &locs).unwrap();
            let direct: f64 = y_hat
                .iter()
                .zip(&yi)
                .flat_map(|(a, b)| a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).powi(2)))
                .sum();
            assert!((f - direct).abs() < 1e-10, "candidate {i}: {f} vs {direct}");
        }
    }

    #[test]
    fn identical_bank_gives_uniform_proposal() {
        let img = bank_images(2, 1).remove(0);
        let bank = pca_fit(&vec![img.clone(); 6], 2, false, RankDeficiency::Keep).unwrap();
        let params = CompletionParams { k1: 6, k2: 3, ..Default::default() };
        let mut rng = SeededRng::new(3);
        let p = sample_proposal(&bank, &img, &geo(), &[GlimpseLocation::new(1, 0)], &params, &mut rng).unwrap();
        for lq in &p.log_q {
            assert!((lq - (1.0f64 / 6.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_sigma_q_is_flat() {
        let images = bank_images(4, 10);
        let bank = pca_fit(&images, 4, false, RankDeficiency::Keep).unwrap();
        let params = CompletionParams {
            k1: 10,
            k2: 5,
            sigma_q: SigmaQ::Fixed(Sigma::fixed(1e9)),
            ..Default::default()
        };
        let mut rng = SeededRng::new(5);
        let p = sample_proposal(&bank, &images[0], &geo(), &[GlimpseLocation::new(0, 0)], &params, &mut rng).unwrap();
        for lq in &p.log_q {
            assert!((lq.exp() - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn full_rank_proposal_is_exact_likelihood() {
        let images = bank_images(6, 20);
        let bank = pca_fit(&images, 16, false, RankDeficiency::Keep).unwrap();
        let src = bank_images(60, 1).remove(0);
        let locs = [GlimpseLocation::new(1, 0), GlimpseLocation::new(1, 1)];
        let sigma = 0.3;
        let dists = proposal_sq_distances(&bank, &src, &geo(), &locs).unwrap();
        let mut from_pca: Vec<f64> = dists.iter().map(|d| -d / (2.0 * sigma * sigma)).collect();
        let mut direct: Vec<f64> =
            images.iter().map(|im| exact_log_likelihood(&src, im, &geo(), &locs, sigma).unwrap()).collect();
        normalize_log(&mut from_pca);
        normalize_log(&mut direct);
        for (a, b) in from_pca.iter().zip(&direct) {
            assert!((a.exp() - b.exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn no_observations_samples_uniformly() {
        let images = bank_images(7, 5);
        let bank = pca_fit(&images, 3, false, RankDeficiency::Keep).unwrap();
        let params = CompletionParams { k1: 5, k2: 5, ..Default::default() };
        let mut rng = SeededRng::new(8);
        let mut counts = [0usize; 5];
        for _ in 0..4000 {
            for c in sample_candidate_indices(&bank, &images, &images[0], &geo(), &[], &params, &mut rng).unwrap() {
                counts[c] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 - 4000.0).abs() < 3.0 * (20000.0f64 * 0.2 * 0.8).sqrt());
        }
    }

    #[test]
    fn missing_store_entry_is_storage_error() {
        let images = bank_images(9, 6);
        let bank = pca_fit(&images, 3, false, RankDeficiency::Keep).unwrap();
        let params = CompletionParams { k1: 6, k2: 2, ..Default::default() };
        let mut rng = SeededRng::new(1);
        let err = sample_images(&bank, &images[..3], &images[0], &geo(), &[], &params, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Storage(_)));
    }

    #[test]
    fn flipped_candidates_are_mirrored_images() {
        let images = bank_images(10, 4);
        let bank = pca_fit(&images, 4, true, RankDeficiency::Keep).unwrap();
        let mirrored = load_candidate(&bank, &images, 5).unwrap();
        assert_eq!(mirrored, images[1].flipped_horizontal());
    }

    #[test]
    fn log_domain_weights_survive_large_distances() {
        let mut rng = SeededRng::new(2);
        let log_w = vec![-1e6 / 2.0, -3e5, -1e6];
        let picks = resample_log(&log_w, 100, Resampling::Multinomial, &mut rng).unwrap();
        assert!(picks.iter().all(|&i| i == 1));
        let ess = effective_sample_size(&[1e6, 0.0, 5e5], 1e-3);
        assert!(ess.is_finite() && (ess - 1.0).abs() < 1e-12);
        assert!(resample_log(&[f64::NEG_INFINITY; 2], 1, Resampling::Multinomial, &mut rng).is_err());
    }

    #[test]
    fn systematic_resampling_is_balanced() {
        let mut rng = SeededRng::new(3);
        let picks = resample_log(&[0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()], 8, Resampling::Systematic, &mut rng).unwrap();
        let zeros = picks.iter().filter(|&&i| i == 0).count();
        assert_eq!(zeros, 4);
    }

    #[test]
    fn adaptive_sigma_cases() {
        let equal = adaptive_sigma_q(&[2.0; 10], 8.0, 0.3);
        assert_eq!((equal.sigma, equal.ess), (0.3, 10.0));
        assert!(!equal.fallback);

        let clusters: Vec<f64> = (0..40).map(|i| if i < 20 { 0.1 * i as f64 / 20.0 } else { 5.0 + i as f64 / 40.0 }).collect();
        let mut last = 0.0;
        for e in -12..12 {
            let ess = effective_sample_size(&clusters, 2f64.powi(e));
            assert!(ess >= last - 1e-9, "ESS decreased at sigma 2^{e}");
            last = ess;
        }
        let tuned = adaptive_sigma_q(&clusters, 25.0, 0.01);
        assert!(!tuned.fallback);
        assert!(tuned.ess >= 20.0 && tuned.ess <= 31.25, "{tuned:?}");

        let boundary = adaptive_sigma_q(&clusters, 40.0, 0.01);
        assert!(boundary.fallback);
        assert_eq!(boundary.sigma, 0.01 * ADAPTIVE_SPAN);
    }
}
