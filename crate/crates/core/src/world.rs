//! GlyphWorld: a finite generative world over (label, image) pairs with exact
//! posterior and completion oracles by enumeration.
//!
//! Every class owns a template: a set of bright square blobs placed on a lattice of
//! square sites (glimpse-sized unless configured otherwise). Each of the `variants` images of a class jitters the blob
//! placement and adds a per-variant dither that is shared across classes. A rectangular
//! confuser region carries a fixed texture that is pixel-identical in every entry, so
//! glimpses inside it carry no information about the label.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{fovea, Categorical, DesignGrid, GlimpseGeometry, GlimpseHistory, GlimpseLocation, Image};

/// Per-pixel tolerance when matching observed patches against world images.
pub const MATCH_TOLERANCE: f64 = 1e-9;

const BACKGROUND: f64 = 0.2;
const BLOB: f64 = 0.85;

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    fn intersects(&self, x: usize, y: usize, w: usize, h: usize) -> bool {
        x < self.x + self.width && self.x < x + w && y < self.y + self.height && self.y < y + h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub classes: usize,
    pub variants: usize,
    pub height: usize,
    pub width: usize,
    pub glimpse: usize,
    pub stride: usize,
    /// Blobs per class template.
    pub blobs: usize,
    pub blob_size: usize,
    /// Pitch of the glyph-site lattice; the glimpse size when unset.
    pub site: Option<usize>,
    pub confuser: Region,
    /// Amplitude of the per-variant dither.
    pub noise: f64,
    /// Maximum blob displacement (pixels) between variants.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            variants: 4,
            height: 32,
            width: 32,
            glimpse: 8,
            stride: 4,
            blobs: 3,
            blob_size: 4,
            site: None,
            confuser: Region {
                x: 0,
                y: 0,
                width: 16,
                height: 32,
            },
            noise: 0.05,
            jitter: 1,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.classes == 0 || self.variants == 0 || self.height == 0 || self.width == 0 {
            return cfg_err("classes, variants and image dimensions must be positive".into());
        }
        if self.glimpse == 0 || self.stride == 0 || self.glimpse > self.height.min(self.width) {
            return cfg_err(format!(
                "glimpse {} / stride {} incompatible with {}x{} images",
                self.glimpse, self.stride, self.width, self.height
            ));
        }
        if (self.width - self.glimpse) % self.stride != 0 || (self.height - self.glimpse) % self.stride != 0 {
            return cfg_err("stride must tile the image exactly: (dim - glimpse) % stride == 0".into());
        }
        let site = self.site_pitch();
        if site == 0 || site > self.height.min(self.width) {
            return cfg_err(format!("site pitch {site} incompatible with {}x{} images", self.width, self.height));
        }
        if self.blob_size == 0 || self.blob_size + 2 * self.jitter > site {
            return cfg_err("blob plus jitter must fit inside one site".into());
        }
        let c = self.confuser;
        if c.width == 0 || c.height == 0 || c.x + c.width > self.width || c.y + c.height > self.height {
            return cfg_err("confuser region must be non-empty and inside the image".into());
        }
        if !(0.0..=0.1).contains(&self.noise) {
            return cfg_err("noise amplitude must lie in [0, 0.1]".into());
        }
        let sites = self.sites().len();
        if self.blobs == 0 || self.blobs > sites {
            return cfg_err(format!("{} blobs requested but only {sites} glyph sites exist", self.blobs));
        }
        if binomial(sites, self.blobs) < self.classes as f64 {
            return cfg_err(format!(
                "{sites} sites cannot give {} distinct templates of {} blobs",
                self.classes, self.blobs
            ));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<GlimpseGeometry> {
        GlimpseGeometry::new(self.glimpse, self.stride)
    }

    pub fn site_pitch(&self) -> usize {
        self.site.unwrap_or(self.glimpse)
    }

    /// Top-left corners of the lattice sites that avoid the confuser region.
    fn sites(&self) -> Vec<(usize, usize)> {
        let g = self.site_pitch();
        let mut out = Vec::new();
        for cy in 0..self.height / g {
            for cx in 0..self.width / g {
                if !self.confuser.intersects(cx * g, cy * g, g, g) {
                    out.push((cx * g, cy * g));
                }
            }
        }
        out
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldEntry {
    pub label: usize,
    pub image: Image,
    pub prob: f64,
}

/// Exhaustive joint distribution over (label, image).
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteWorld {
    classes: usize,
    grid: DesignGrid,
    entries: Vec<WorldEntry>,
}

impl FiniteWorld {
    pub fn from_entries(classes: usize, geometry: GlimpseGeometry, entries: Vec<WorldEntry>) -> Result<Self> {
        let first = entries.first().ok_or_else(|| invalid("world needs at least one entry"))?;
        let (h, w) = (first.image.height(), first.image.width());
        let grid = DesignGrid::new(h, w, geometry)?;
        if entries.len() < classes {
            return Err(invalid("fewer entries than classes"));
        }
        let mut seen = vec![false; classes];
        let mut total = 0.0;
        for e in &entries {
            if e.image.height() != h || e.image.width() != w {
                return Err(invalid("world images must share dimensions"));
            }
            if e.label >= classes {
                return Err(invalid(format!("label {} out of range", e.label)));
            }
            if !(e.prob >= 0.0) {
                return Err(invalid("negative entry probability"));
            }
            seen[e.label] = true;
            total += e.prob;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("entry probabilities sum to {total}")));
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("every class needs at least one entry"));
        }
        Ok(Self { classes, grid, entries })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn grid(&self) -> &DesignGrid {
        &self.grid
    }

    pub fn geometry(&self) -> &GlimpseGeometry {
        &self.grid.geometry
    }

    pub fn entries(&self) -> &[WorldEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prior(&self) -> Categorical {
        let mut p = vec![0.0; self.classes];
        for e in &self.entries {
            p[e.label] += e.prob;
        }
        Categorical::from_weights(p).expect("world probabilities are normalized")
    }

    fn matches_history(&self, entry: &WorldEntry, history: &GlimpseHistory) -> Result<bool> {
        for (loc, patch) in history.steps() {
            let own = fovea(&entry.image, self.geometry(), *loc)?;
            if own.pixels.len() != patch.pixels.len() {
                return Err(invalid("patch size does not match world glimpse size"));
            }
            if own
                .pixels
                .iter()
                .zip(&patch.pixels)
                .any(|(a, b)| (a - b).abs() > MATCH_TOLERANCE)
            {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Entries consistent with `history`, weights renormalized.
    pub fn exact_completion(&self, history: &GlimpseHistory) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        let mut total = 0.0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.prob > 0.0 && self.matches_history(e, history)? {
                out.push((i, e.prob));
                total += e.prob;
            }
        }
        if out.is_empty() {
            return Err(Error::InconsistentHistory);
        }
        for (_, w) in &mut out {
            *w /= total;
        }
        Ok(out)
    }

    pub fn exact_posterior(&self, history: &GlimpseHistory) -> Result<Categorical> {
        let support = self.exact_completion(history)?;
        self.label_marginal(&support)
    }

    /// Posterior after observing `image` at `locs`, matching only the masked pixels.
    pub fn posterior_of_view(&self, image: &Image, locs: &[GlimpseLocation]) -> Result<Categorical> {
        let mut pixels: Vec<usize> = Vec::new();
        for &l in locs {
            self.geometry().check(l, image.height(), image.width())?;
            pixels.extend(self.geometry().footprint(l, image.width()));
        }
        pixels.sort_unstable();
        pixels.dedup();
        let src = image.pixels();
        let mut p = vec![0.0; self.classes];
        for e in &self.entries {
            let own = e.image.pixels();
            if pixels.iter().all(|&i| (own[i] - src[i]).abs() <= MATCH_TOLERANCE) {
                p[e.label] += e.prob;
            }
        }
        Categorical::from_weights(p).map_err(|_| Error::InconsistentHistory)
    }

    pub fn label_marginal(&self, support: &[(usize, f64)]) -> Result<Categorical> {
        let mut p = vec![0.0; self.classes];
        for &(i, w) in support {
            p[self.entries[i].label] += w;
        }
        Categorical::from_weights(p)
    }
}

/// Builds GlyphWorld deterministically from `cfg`.
pub fn build_world(cfg: &WorldConfig) -> Result<FiniteWorld> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let (h, w) = (cfg.height, cfg.width);
    let sites = cfg.sites();

    let confuser_texture: Vec<f64> = (0..h * w).map(|_| 0.1 + 0.5 * rng.uniform()).collect();

    let mut templates: Vec<Vec<usize>> = Vec::with_capacity(cfg.classes);
    while templates.len() < cfg.classes {
        let mut chosen: Vec<usize> = Vec::with_capacity(cfg.blobs);
        while chosen.len() < cfg.blobs {
            let s = rng.below(sites.len());
            if !chosen.contains(&s) {
                chosen.push(s);
            }
        }
        chosen.sort_unstable();
        if !templates.contains(&chosen) {
            templates.push(chosen);
        }
    }

    let dithers: Vec<Vec<f64>> = (0..cfg.variants)
        .map(|_| (0..h * w).map(|_| cfg.noise * (2.0 * rng.uniform() - 1.0)).collect())
        .collect();

    let span = 2 * cfg.jitter + 1;
    let centre = (cfg.site_pitch() - cfg.blob_size) / 2;
    let prob = 1.0 / (cfg.classes * cfg.variants) as f64;
    let mut entries = Vec::with_capacity(cfg.classes * cfg.variants);
    for (label, template) in templates.iter().enumerate() {
        for dither in &dithers {
            let mut pixels = vec![BACKGROUND; h * w];
            for &site in template {
                let (sx, sy) = sites[site];
                let x0 = sx + centre + rng.below(span) - cfg.jitter;
                let y0 = sy + centre + rng.below(span) - cfg.jitter;
                for y in y0..y0 + cfg.blob_size {
                    for x in x0..x0 + cfg.blob_size {
                        pixels[y * w + x] = BLOB;
                    }
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    pixels[i] = if cfg.confuser.contains(x, y) {
                        confuser_texture[i]
                    } else {
                        (pixels[i] + dither[i]).clamp(0.0, 1.0)
                    };
                }
            }
            entries.push(WorldEntry {
                label,
                image: Image::new(h, w, pixels)?,
                prob,
            });
        }
    }
    FiniteWorld::from_entries(cfg.classes, cfg.geometry()?, entries)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    World,
    Train,
    Val,
    Test,
    Bank,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::World => "world",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Bank => "bank",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: u64,
    pub image: Image,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub split: Split,
    pub classes: usize,
    pub items: Vec<LabeledImage>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> Vec<Image> {
        self.items.iter().map(|i| i.image.clone()).collect()
    }

    pub fn get(&self, id: u64) -> Option<&LabeledImage> {
        self.items.iter().find(|i| i.id == id)
    }

    /// Items at index `start..`, keeping split and class count.
    pub fn tail(&self, start: usize) -> LabeledDataset {
        LabeledDataset {
            split: self.split,
            classes: self.classes,
            items: self.items[start.min(self.items.len())..].to_vec(),
        }
    }
}

/// `n` i.i.d. draws from the world's entry distribution with sequential ids.
pub fn sample_dataset(world: &FiniteWorld, n: usize, split: Split, rng: &mut SeededRng) -> LabeledDataset {
    let probs: Vec<f64> = world.entries.iter().map(|e| e.prob).collect();
    let items = (0..n)
        .map(|id| {
            let e = &world.entries[rng.categorical(&probs)];
            LabeledImage {
                id: id as u64,
                image: e.image.clone(),
                label: e.label,
            }
        })
        .collect();
    LabeledDataset {
        split,
        classes: world.classes,
        items,
    }
}

/// The world itself as a dataset, one item per entry, ids = entry indices.
pub fn world_as_dataset(world: &FiniteWorld) -> LabeledDataset {
    LabeledDataset {
        split: Split::World,
        classes: world.classes,
        items: world
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| LabeledImage {
                id: i as u64,
                image: e.image.clone(),
                label: e.label,
            })
            .collect(),
    }
}
