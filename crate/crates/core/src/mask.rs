//! Label masks produced by segmentation tools.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::anatomy::AnatomyGroup;
use crate::pgm::GrayImage;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("pixel spacing must be positive, got ({0}, {1})")]
    Spacing(f64, f64),
    #[error("label buffer has {found} pixels, expected {expected}")]
    Size { expected: usize, found: usize },
    #[error("label {0} is not in the structure map")]
    UnmappedLabel(u8),
}

/// 8-bit label raster: 0 is background, nonzero values are structure ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub width: usize,
    pub height: usize,
    /// (mm per pixel along x, mm per pixel along y)
    pub pixel_spacing: (f64, f64),
    pub labels: Vec<u8>,
    pub structure_map: BTreeMap<u8, AnatomyGroup>,
}

impl SegmentationMask {
    pub fn new(
        width: usize,
        height: usize,
        pixel_spacing: (f64, f64),
        labels: Vec<u8>,
        structure_map: BTreeMap<u8, AnatomyGroup>,
    ) -> Result<Self, MaskError> {
        let (sx, sy) = pixel_spacing;
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(MaskError::Spacing(sx, sy));
        }
        if labels.len() != width * height {
            return Err(MaskError::Size { expected: width * height, found: labels.len() });
        }
        let mut seen = [false; 256];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(l) = (1..=255u8).find(|&l| seen[l as usize] && !structure_map.contains_key(&l)) {
            return Err(MaskError::UnmappedLabel(l));
        }
        Ok(SegmentationMask { width, height, pixel_spacing, labels, structure_map })
    }

    pub fn from_image(
        img: GrayImage,
        pixel_spacing: (f64, f64),
        structure_map: BTreeMap<u8, AnatomyGroup>,
    ) -> Result<Self, MaskError> {
        Self::new(img.width, img.height, pixel_spacing, img.pixels, structure_map)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage { width: self.width, height: self.height, pixels: self.labels.clone() }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn label_for(&self, anatomy: AnatomyGroup) -> Option<u8> {
        self.structure_map.iter().find(|(_, &g)| g == anatomy).map(|(&l, _)| l)
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Same labels with a different pixel spacing.
    pub fn with_spacing(&self, spacing: (f64, f64)) -> Self {
        SegmentationMask { pixel_spacing: spacing, ..self.clone() }
    }

    /// Rotate 90° clockwise; spacing components swap.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut labels = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                // new image is h wide, w tall
                let nx = h - 1 - y;
                let ny = x;
                labels[ny * h + nx] = self.labels[y * w + x];
            }
        }
        SegmentationMask {
            width: h,
            height: w,
            pixel_spacing: (self.pixel_spacing.1, self.pixel_spacing.0),
            labels,
            structure_map: self.structure_map.clone(),
        }
    }

    /// Shift by (dx, dy) pixels; pixels moved off-canvas are dropped.
    pub fn translate(&self, dx: isize, dy: isize) -> Self {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut labels = vec![0u8; self.labels.len()];
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    labels[(ny * w + nx) as usize] = self.labels[(y * w + x) as usize];
                }
            }
        }
        SegmentationMask { labels, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv_map() -> BTreeMap<u8, AnatomyGroup> {
        [(1, AnatomyGroup::LeftVentricle)].into_iter().collect()
    }

    #[test]
    fn rejects_bad_spacing_and_unmapped_labels() {
        assert!(matches!(
            SegmentationMask::new(1, 1, (0.0, 1.0), vec![0], lv_map()),
            Err(MaskError::Spacing(..))
        ));
        assert!(matches!(
            SegmentationMask::new(2, 1, (1.0, 1.0), vec![1, 7], lv_map()),
            Err(MaskError::UnmappedLabel(7))
        ));
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let m = SegmentationMask::new(3, 2, (0.5, 0.7), vec![1, 0, 0, 1, 1, 0], lv_map()).unwrap();
        let r = m.rotate90();
        assert_eq!((r.width, r.height, r.pixel_spacing), (2, 3, (0.7, 0.5)));
        assert_eq!(r.rotate90().rotate90().rotate90(), m);
    }
}
