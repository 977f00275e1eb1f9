use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Grayscale image, row-major, pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T: Scalar = f64> {
    height: usize,
    width: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(invalid(format!(
                "expected {} pixels for {height}x{width}, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
            return Err(invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.pixels[y * self.width + x]
    }

    /// Left-right mirror image.
    pub fn flipped_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev().copied());
        }
        Self {
            height: self.height,
            width: self.width,
            pixels,
        }
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }
}
