//! Fundamental raster and grid types shared by every other module.
//!
//! A [`Raster`] is a dense row-major 2D array indexed by `(x, y)` with
//! `index = y * width + x`. Three sample types are used throughout:
//! `u8` EM intensity, `u32` segment labels (0 is reserved for background)
//! and `f32` heat/altitude values.

use crate::error::{Error, Result};

/// Dense row-major 2D raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Grayscale electron-microscopy intensity; darker values are membranes.
pub type EmImage = Raster<u8>;
/// Segment identifiers; label 0 means unlabeled/background and is never
/// produced by edit operators.
pub type LabelMap = Raster<u32>;
/// Gaussian-bump heat map recording previous action locations, values in [0, 1].
pub type PointMap = Raster<f32>;

impl<T: Copy> Raster<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { width, height, data: vec![fill; width * height] })
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "raster data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn in_bounds(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(self.in_bounds(x, y));
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        assert!(self.in_bounds(x, y), "pixel ({x}, {y}) outside {}x{}", self.width, self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        assert!(self.in_bounds(x, y), "pixel ({x}, {y}) outside {}x{}", self.width, self.height);
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copies the window described by `patch` into an independent raster.
    pub fn crop(&self, patch: &PatchRef) -> Result<Raster<T>> {
        if patch.size == 0 {
            return Err(Error::Dimension("patch size must be positive".into()));
        }
        let x1 = patch.origin_x + patch.size;
        let y1 = patch.origin_y + patch.size;
        if x1 > self.width || y1 > self.height {
            return Err(Error::Bounds(format!(
                "patch at ({}, {}) size {} exceeds {}x{}",
                patch.origin_x, patch.origin_y, patch.size, self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(patch.size * patch.size);
        for y in patch.origin_y..y1 {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + patch.origin_x..row + x1]);
        }
        Raster::from_vec(patch.size, patch.size, data)
    }
}

impl<T: Copy + PartialEq> Raster<T> {
    /// Number of pixels that differ between two same-sized rasters.
    pub fn count_diff(&self, other: &Raster<T>) -> usize {
        assert!(self.same_dims(other), "count_diff on mismatched rasters");
        self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count()
    }
}

impl LabelMap {
    /// Distinct nonzero labels, ascending.
    pub fn distinct_labels(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.data.iter().copied().filter(|&l| l != 0).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Replaces the window with `content`. All pixels outside the window are
    /// untouched. Content must match the patch size and carry no label 0.
    /// Label collisions with segments outside the window are the caller's
    /// responsibility (fresh labels come from a monotone per-environment
    /// counter, so write-backs cannot collide).
    pub fn blit(&mut self, patch: &PatchRef, content: &LabelMap) -> Result<()> {
        if content.width != patch.size || content.height != patch.size {
            return Err(Error::Dimension(format!(
                "blit content is {}x{}, patch size is {}",
                content.width, content.height, patch.size
            )));
        }
        let x1 = patch.origin_x + patch.size;
        let y1 = patch.origin_y + patch.size;
        if x1 > self.width || y1 > self.height {
            return Err(Error::Bounds(format!(
                "patch at ({}, {}) size {} exceeds {}x{}",
                patch.origin_x, patch.origin_y, patch.size, self.width, self.height
            )));
        }
        if content.data.iter().any(|&l| l == 0) {
            return Err(Error::Label("blit content contains reserved label 0".into()));
        }
        for (py, y) in (patch.origin_y..y1).enumerate() {
            let src = py * patch.size;
            let dst = y * self.width + patch.origin_x;
            self.data[dst..dst + patch.size].copy_from_slice(&content.data[src..src + patch.size]);
        }
        Ok(())
    }
}

/// A square window into a parent raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRef {
    pub origin_x: usize,
    pub origin_y: usize,
    pub size: usize,
}

impl PatchRef {
    pub fn new(origin_x: usize, origin_y: usize, size: usize) -> Self {
        Self { origin_x, origin_y, size }
    }

    /// Window of side `size` centered on `(cx, cy)`; the four adjacent
    /// squares of side `size / 2` around a grid point.
    pub fn centered(cx: usize, cy: usize, size: usize) -> Result<Self> {
        let half = size / 2;
        if cx < half || cy < half {
            return Err(Error::Bounds(format!(
                "patch of size {size} centered at ({cx}, {cy}) extends past the origin"
            )));
        }
        Ok(Self { origin_x: cx - half, origin_y: cy - half, size })
    }
}

/// Regular square lattice of action points.
///
/// Point `(i, j)` maps to pixel `(origin + i*cell, origin + j*cell)`;
/// flat indices are row-major (`index = i * cols + j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell: usize,
    pub origin: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, cell: usize, origin: usize) -> Self {
        Self { rows, cols, cell, origin }
    }

    /// 7x7 grid with 64 px spacing on a 512x512 sub-image.
    pub fn locator() -> Self {
        Self { rows: 7, cols: 7, cell: 64, origin: 64 }
    }

    /// 15x15 grid with 8 px spacing on a 128x128 patch.
    pub fn corrector() -> Self {
        Self { rows: 15, cols: 15, cell: 8, origin: 8 }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Maps a flat action index to its pixel.
    pub fn point_to_pixel(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.len() {
            return Err(Error::Action(format!(
                "grid index {index} outside {}x{} grid",
                self.rows, self.cols
            )));
        }
        let i = index / self.cols;
        let j = index % self.cols;
        Ok((self.origin + i * self.cell, self.origin + j * self.cell))
    }

    /// True when every grid point lies strictly inside a `width` x `height` raster.
    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.rows > 0
            && self.cols > 0
            && self.origin + (self.rows - 1) * self.cell < width
            && self.origin + (self.cols - 1) * self.cell < height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_copies_window() {
        let mut parent = LabelMap::new(512, 512, 1).unwrap();
        parent.set(64, 64, 7);
        parent.set(100, 120, 9);
        let patch = PatchRef::new(64, 64, 128);
        let cropped = parent.crop(&patch).unwrap();
        assert_eq!(cropped.width(), 128);
        assert_eq!(cropped.get(0, 0), 7);
        assert_eq!(cropped.get(36, 56), 9);
    }

    #[test]
    fn crop_is_independent_copy() {
        let parent = LabelMap::new(16, 16, 1).unwrap();
        let patch = PatchRef::new(0, 0, 8);
        let mut cropped = parent.crop(&patch).unwrap();
        cropped.set(0, 0, 99);
        assert_eq!(parent.get(0, 0), 1);
    }

    #[test]
    fn crop_out_of_bounds() {
        let parent = EmImage::new(512, 512, 0).unwrap();
        let err = parent.crop(&PatchRef::new(448, 448, 128)).unwrap_err();
        assert!(matches!(err, Error::Bounds(_)));
    }

    #[test]
    fn blit_round_trip_identity() {
        let mut parent = LabelMap::new(64, 64, 3).unwrap();
        parent.set(10, 12, 5);
        let original = parent.clone();
        let patch = PatchRef::new(8, 8, 16);
        let content = parent.crop(&patch).unwrap();
        parent.blit(&patch, &content).unwrap();
        assert_eq!(parent, original);
    }

    #[test]
    fn blit_is_local() {
        let mut parent = LabelMap::new(64, 64, 3).unwrap();
        let patch = PatchRef::new(8, 8, 16);
        let content = LabelMap::new(16, 16, 42).unwrap();
        parent.blit(&patch, &content).unwrap();
        assert_eq!(parent.get(8, 8), 42);
        assert_eq!(parent.get(23, 23), 42);
        assert_eq!(parent.get(7, 8), 3);
        assert_eq!(parent.get(24, 23), 3);
    }

    #[test]
    fn blit_rejects_zero_labels() {
        let mut parent = LabelMap::new(32, 32, 3).unwrap();
        let patch = PatchRef::new(0, 0, 8);
        let content = LabelMap::new(8, 8, 0).unwrap();
        let err = parent.blit(&patch, &content).unwrap_err();
        assert!(matches!(err, Error::Label(_)));
    }

    #[test]
    fn blit_rejects_size_mismatch() {
        let mut parent = LabelMap::new(32, 32, 3).unwrap();
        let patch = PatchRef::new(0, 0, 8);
        let content = LabelMap::new(9, 9, 1).unwrap();
        let err = parent.blit(&patch, &content).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn locator_grid_pixels() {
        let g = GridSpec::locator();
        assert_eq!(g.point_to_pixel(0).unwrap(), (64, 64));
        assert_eq!(g.point_to_pixel(48).unwrap(), (448, 448));
        assert!(g.point_to_pixel(49).is_err());
        assert!(g.fits_within(512, 512));
    }

    #[test]
    fn corrector_grid_pixels() {
        let g = GridSpec::corrector();
        // index 16 -> (i, j) = (1, 1) under row-major flattening over 15 cols.
        assert_eq!(g.point_to_pixel(16).unwrap(), (16, 16));
        // (i, j) = (1, 0) is index 15.
        assert_eq!(g.point_to_pixel(15).unwrap(), (16, 8));
        assert!(g.fits_within(128, 128));
    }

    #[test]
    fn grid_injective_and_interior() {
        for g in [GridSpec::locator(), GridSpec::corrector()] {
            let dims = if g.rows == 7 { 512 } else { 128 };
            let mut seen = std::collections::BTreeSet::new();
            for index in 0..g.len() {
                let p = g.point_to_pixel(index).unwrap();
                assert!(p.0 > 0 && p.0 < dims && p.1 > 0 && p.1 < dims);
                assert!(seen.insert(p), "duplicate pixel {p:?}");
            }
        }
    }

    #[test]
    fn centered_patch_matches_grid_geometry() {
        // 128x128 patch on a locator grid point covers its four adjacent
        // 64x64 squares.
        let g = GridSpec::locator();
        let (cx, cy) = g.point_to_pixel(0).unwrap();
        let patch = PatchRef::centered(cx, cy, 128).unwrap();
        assert_eq!((patch.origin_x, patch.origin_y), (0, 0));
        let (cx, cy) = g.point_to_pixel(48).unwrap();
        let patch = PatchRef::centered(cx, cy, 128).unwrap();
        assert_eq!((patch.origin_x, patch.origin_y), (384, 384));
        assert_eq!(patch.origin_x + patch.size, 512);
    }
}
