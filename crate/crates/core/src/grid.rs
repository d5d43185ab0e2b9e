//! Pixel coordinates and small raster helpers shared by the extraction
//! stages.

use core::cmp::Ordering;

/// A pixel position. Ordering is row-major: by `y`, then by `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

impl Pixel {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Row-major linear index in an image of the given width.
    #[inline]
    pub fn linear(self, width: usize) -> usize {
        self.y as usize * width + self.x as usize
    }

    #[inline]
    pub fn from_linear(index: usize, width: usize) -> Self {
        Self::new((index % width) as u32, (index / width) as u32)
    }

    pub fn distance_sq(self, other: Pixel) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        dx * dx + dy * dy
    }
}

impl Ord for Pixel {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Pixel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
