use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Glimpse size `g` and anchor stride `s`, both in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlimpseGeometry {
    pub size: usize,
    pub stride: usize,
}

impl GlimpseGeometry {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(invalid("glimpse size and stride must be positive"));
        }
        Ok(Self { size, stride })
    }

    /// Top-left pixel anchor of a grid location.
    #[inline]
    pub fn anchor(&self, loc: GlimpseLocation) -> (usize, usize) {
        (loc.gx * self.stride, loc.gy * self.stride)
    }

    pub fn check(&self, loc: GlimpseLocation, height: usize, width: usize) -> Result<()> {
        let (x, y) = self.anchor(loc);
        if x + self.size > width || y + self.size > height {
            return Err(Error::OutOfBounds {
                gx: loc.gx,
                gy: loc.gy,
                width,
                height,
            });
        }
        Ok(())
    }

    /// Row-major pixel indices covered by the glimpse at `loc` in an image of `width` columns.
    pub fn footprint(&self, loc: GlimpseLocation, width: usize) -> impl Iterator<Item = usize> + '_ {
        let (x0, y0) = self.anchor(loc);
        let g = self.size;
        (0..g).flat_map(move |dy| (0..g).map(move |dx| (y0 + dy) * width + x0 + dx))
    }
}

/// Grid location; the pixel anchor is `(gx * stride, gy * stride)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GlimpseLocation {
    pub gx: usize,
    pub gy: usize,
}

impl GlimpseLocation {
    pub const fn new(gx: usize, gy: usize) -> Self {
        Self { gx, gy }
    }
}

/// The design set: every grid location whose glimpse lies fully inside the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignGrid {
    pub height: usize,
    pub width: usize,
    pub geometry: GlimpseGeometry,
    pub nx: usize,
    pub ny: usize,
}

impl DesignGrid {
    pub fn new(height: usize, width: usize, geometry: GlimpseGeometry) -> Result<Self> {
        if geometry.size > height.min(width) {
            return Err(invalid(format!(
                "glimpse size {} exceeds image {}x{}",
                geometry.size, width, height
            )));
        }
        let nx = (width - geometry.size) / geometry.stride + 1;
        let ny = (height - geometry.size) / geometry.stride + 1;
        Ok(Self {
            height,
            width,
            geometry,
            nx,
            ny,
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, loc: GlimpseLocation) -> bool {
        loc.gx < self.nx && loc.gy < self.ny
    }

    /// Row-major index of a location.
    pub fn index(&self, loc: GlimpseLocation) -> Result<usize> {
        if !self.contains(loc) {
            return Err(Error::OutOfBounds {
                gx: loc.gx,
                gy: loc.gy,
                width: self.width,
                height: self.height,
            });
        }
        Ok(loc.gy * self.nx + loc.gx)
    }

    pub fn location(&self, index: usize) -> GlimpseLocation {
        debug_assert!(index < self.len());
        GlimpseLocation::new(index % self.nx, index / self.nx)
    }

    pub fn locations(&self) -> impl Iterator<Item = GlimpseLocation> + '_ {
        (0..self.len()).map(|i| self.location(i))
    }

    /// Location coordinates scaled to `[-1, 1]`; a single-cell axis maps to 0.
    pub fn normalized_coords(&self, loc: GlimpseLocation) -> (f64, f64) {
        let norm = |v: usize, n: usize| {
            if n <= 1 {
                0.0
            } else {
                2.0 * v as f64 / (n - 1) as f64 - 1.0
            }
        };
        (norm(loc.gx, self.nx), norm(loc.gy, self.ny))
    }
}

/// A `g x g` block of pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T: Scalar = f64> {
    pub size: usize,
    pub pixels: Vec<T>,
}

/// Extracts the glimpse observed at `loc`.
pub fn fovea<T: Scalar>(image: &Image<T>, geometry: &GlimpseGeometry, loc: GlimpseLocation) -> Result<Patch<T>> {
    geometry.check(loc, image.height(), image.width())?;
    let (x0, y0) = geometry.anchor(loc);
    let g = geometry.size;
    let w = image.width();
    let src = image.pixels();
    let mut pixels = Vec::with_capacity(g * g);
    for y in y0..y0 + g {
        pixels.extend_from_slice(&src[y * w + x0..y * w + x0 + g]);
    }
    Ok(Patch { size: g, pixels })
}

pub fn fovea_multi<T: Scalar>(
    image: &Image<T>,
    geometry: &GlimpseGeometry,
    locs: &[GlimpseLocation],
) -> Result<Vec<Patch<T>>> {
    locs.iter().map(|&l| fovea(image, geometry, l)).collect()
}

/// Ordered glimpse locations with the patches observed there.
#[derive(Clone, Debug, PartialEq)]
pub struct GlimpseHistory<T: Scalar = f64> {
    steps: Vec<(GlimpseLocation, Patch<T>)>,
}

impl<T: Scalar> Default for GlimpseHistory<T> {
    fn default() -> Self {
        Self { steps: Vec::new() }
    }
}

impl<T: Scalar> GlimpseHistory<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Observes `image` at each of `locs` in order.
    pub fn observe(image: &Image<T>, geometry: &GlimpseGeometry, locs: &[GlimpseLocation]) -> Result<Self> {
        let patches = fovea_multi(image, geometry, locs)?;
        Ok(Self {
            steps: locs.iter().copied().zip(patches).collect(),
        })
    }

    pub fn push(&mut self, loc: GlimpseLocation, patch: Patch<T>) {
        self.steps.push((loc, patch));
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[(GlimpseLocation, Patch<T>)] {
        &self.steps
    }

    pub fn locations(&self) -> Vec<GlimpseLocation> {
        self.steps.iter().map(|(l, _)| *l).collect()
    }

    pub fn reversed(&self) -> Self {
        Self {
            steps: self.steps.iter().rev().cloned().collect(),
        }
    }
}
