//! Functional-layer quantification: mask geometry, biplane method-of-disks
//! volumes, ejection fraction and EF grading.
//!
//! Geometry is computed in physical (mm) coordinates: pixel (x, y) has its
//! center at (x·sx, y·sy). With isotropic spacing this is the pixel-space
//! principal axis scaled by the spacing.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::mask::SegmentationMask;

pub const DEFAULT_N_DISKS: usize = 20;
/// Regions smaller than this give an unreliable principal axis.
pub const MIN_REGION_PIXELS: usize = 20;
const APEX_WIDTH_DISKS: usize = 20;
const WIDTH_TIE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuantError {
    #[error("region has {pixels} pixels, at least {MIN_REGION_PIXELS} are needed for a reliable axis")]
    TooSmall { pixels: usize },
    #[error("{view} view has no pixels of the target structure")]
    EmptyView { view: String },
    #[error("number of disks must be at least 1")]
    NoDisks,
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    AreaMm2,
    VolumeMl,
    EfPercent,
    DimensionMm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    pub kind: MeasurementKind,
    pub value: f64,
    pub inputs_provenance: Vec<String>,
    pub confidence: f64,
    #[serde(default)]
    pub anomalous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaMeasurement {
    pub area_mm2: f64,
    pub empty_structure: bool,
}

/// Pixel count of `label` times the pixel area.
pub fn mask_area(mask: &SegmentationMask, label: u8) -> AreaMeasurement {
    let n = if mask.structure_map.contains_key(&label) { mask.count(label) } else { 0 };
    let (sx, sy) = mask.pixel_spacing;
    AreaMeasurement { area_mm2: n as f64 * sx * sy, empty_structure: n == 0 }
}

/// Long axis of a region: endpoints in pixel coordinates, length in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongAxis {
    pub apex: (f64, f64),
    pub base_mid: (f64, f64),
    pub length_mm: f64,
}

/// Largest 4-connected component of `label`, as a membership bitmap.
/// Equal-size components resolve to the one found first in raster order.
pub fn largest_component(mask: &SegmentationMask, label: u8) -> (Vec<bool>, usize) {
    let (w, h) = (mask.width, mask.height);
    let mut comp = vec![usize::MAX; w * h];
    let mut best: Option<(usize, usize)> = None; // (component id, size)
    let mut next_id = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.labels[start] != label || comp[start] != usize::MAX {
            continue;
        }
        let id = next_id;
        next_id += 1;
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.labels[j] == label && comp[j] == usize::MAX {
                    comp[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.map_or(true, |(_, s)| size > s) {
            best = Some((id, size));
        }
    }
    match best {
        Some((id, size)) => (comp.into_iter().map(|c| c == id).collect(), size),
        None => (vec![false; w * h], 0),
    }
}

struct Region<'a> {
    mask: &'a SegmentationMask,
    member: Vec<bool>,
}

impl Region<'_> {
    fn contains(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.mask.width
            && (y as usize) < self.mask.height
            && self.member[y as usize * self.mask.width + x as usize]
    }

    /// Chord through physical point `c` along physical unit direction `v`:
    /// target samples at one-pixel steps times the projected step length.
    fn chord(&self, c: (f64, f64), v: (f64, f64)) -> f64 {
        let (sx, sy) = self.mask.pixel_spacing;
        let step = 1.0 / (v.0.abs() / sx).max(v.1.abs() / sy);
        let extent = (self.mask.width as f64 * sx).hypot(self.mask.height as f64 * sy);
        let reach = (extent / step).ceil() as isize + 1;
        let mut count = 0usize;
        for k in -reach..=reach {
            let t = k as f64 * step;
            let px = (c.0 + t * v.0) / sx;
            let py = (c.1 + t * v.1) / sy;
            if self.contains((px + 0.5).floor() as isize, (py + 0.5).floor() as isize) {
                count += 1;
            }
        }
        count as f64 * step
    }
}

fn region(mask: &SegmentationMask, label: u8) -> (Region<'_>, usize) {
    let (member, size) = largest_component(mask, label);
    (Region { mask, member }, size)
}

fn diameters_in(region: &Region<'_>, axis: &LongAxis, n: usize) -> Vec<f64> {
    let (sx, sy) = region.mask.pixel_spacing;
    let a = (axis.apex.0 * sx, axis.apex.1 * sy);
    let b = (axis.base_mid.0 * sx, axis.base_mid.1 * sy);
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    if len == 0.0 {
        return vec![0.0; n];
    }
    let u = ((b.0 - a.0) / len, (b.1 - a.1) / len);
    let v = (-u.1, u.0);
    (0..n)
        .map(|i| {
            let t = len * (i as f64 + 0.5) / n as f64;
            region.chord((a.0 + t * u.0, a.1 + t * u.1), v)
        })
        .collect()
}

fn long_axis_in(region: &Region<'_>, size: usize) -> Result<LongAxis, QuantError> {
    if size < MIN_REGION_PIXELS {
        return Err(QuantError::TooSmall { pixels: size });
    }
    let mask = region.mask;
    let (sx, sy) = mask.pixel_spacing;
    let pts: Vec<(f64, f64)> = (0..mask.width * mask.height)
        .filter(|&i| region.member[i])
        .map(|i| ((i % mask.width) as f64 * sx, (i / mask.width) as f64 * sy))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        let (dx, dy) = (x - mx, y - my);
        cxx += dx * dx;
        cyy += dy * dy;
        cxy += dx * dy;
    }
    // major-axis angle of the 2x2 covariance (the 1/n factor cancels)
    let theta = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    let u = (theta.cos(), theta.sin());
    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        let t = (x - mx) * u.0 + (y - my) * u.1;
        tmin = tmin.min(t);
        tmax = tmax.max(t);
    }
    // pixel squares extend half a pixel beyond the extreme centers
    let half = 0.5 * (u.0.abs() * sx + u.1.abs() * sy);
    let (t0, t1) = (tmin - half, tmax + half);
    let to_px = |t: f64| ((mx + t * u.0) / sx, (my + t * u.1) / sy);
    let (e0, e1) = (to_px(t0), to_px(t1));
    let length_mm = t1 - t0;

    let provisional = LongAxis { apex: e0, base_mid: e1, length_mm };
    let widths = diameters_in(region, &provisional, APEX_WIDTH_DISKS);
    let m = (APEX_WIDTH_DISKS / 10).max(1);
    let w0 = widths[..m].iter().sum::<f64>() / m as f64;
    let w1 = widths[APEX_WIDTH_DISKS - m..].iter().sum::<f64>() / m as f64;
    let e0_first = if (w0 - w1).abs() <= WIDTH_TIE {
        (e0.1, e0.0) <= (e1.1, e1.0)
    } else {
        w0 < w1
    };
    let (apex, base_mid) = if e0_first { (e0, e1) } else { (e1, e0) };
    Ok(LongAxis { apex, base_mid, length_mm })
}

/// Principal (long) axis of the largest component of `label`.
///
/// The apex is the end whose nearest 10% of disks are narrower; when both
/// ends are equally wide the apex is the end with the smaller y.
pub fn long_axis(mask: &SegmentationMask, label: u8) -> Result<LongAxis, QuantError> {
    let (r, size) = region(mask, label);
    long_axis_in(&r, size)
}

/// Chord lengths (mm) perpendicular to `axis` at the midpoints of `n`
/// equal segments, apex first.
pub fn disk_diameters(mask: &SegmentationMask, label: u8, axis: &LongAxis, n: usize) -> Result<Vec<f64>, QuantError> {
    if n == 0 {
        return Err(QuantError::NoDisks);
    }
    let (r, _) = region(mask, label);
    Ok(diameters_in(&r, axis, n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiplaneVolume {
    pub volume_ml: f64,
    pub length_mm: f64,
    pub a2c_diameters: Vec<f64>,
    pub a4c_diameters: Vec<f64>,
}

/// Simpson's biplane method of disks with possibly different target labels
/// in the two views.
pub fn biplane_volume_detailed(
    a2c: &SegmentationMask,
    a2c_label: u8,
    a4c: &SegmentationMask,
    a4c_label: u8,
    n_disks: usize,
) -> Result<BiplaneVolume, QuantError> {
    if n_disks == 0 {
        return Err(QuantError::NoDisks);
    }
    let mut axes = Vec::with_capacity(2);
    for (view, mask, label) in [("A2C", a2c, a2c_label), ("A4C", a4c, a4c_label)] {
        let (r, size) = region(mask, label);
        if size == 0 {
            return Err(QuantError::EmptyView { view: view.to_string() });
        }
        let axis = long_axis_in(&r, size)?;
        axes.push((r, axis));
    }
    let length_mm = axes[0].1.length_mm.max(axes[1].1.length_mm);
    let a2c_diameters = diameters_in(&axes[0].0, &axes[0].1, n_disks);
    let a4c_diameters = diameters_in(&axes[1].0, &axes[1].1, n_disks);
    let sum: f64 = a2c_diameters.iter().zip(&a4c_diameters).map(|(a, b)| a * b).sum();
    let volume_mm3 = PI / 4.0 * sum * (length_mm / n_disks as f64);
    Ok(BiplaneVolume { volume_ml: volume_mm3 / 1000.0, length_mm, a2c_diameters, a4c_diameters })
}

/// Biplane volume in mL.
pub fn biplane_volume(
    a2c: &SegmentationMask,
    a4c: &SegmentationMask,
    target_label: u8,
    n_disks: usize,
) -> Result<f64, QuantError> {
    biplane_volume_detailed(a2c, target_label, a4c, target_label, n_disks).map(|v| v.volume_ml)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EjectionFraction {
    pub ef_percent: f64,
    /// ESV exceeded EDV: almost always a segmentation failure.
    pub anomalous: bool,
}

pub fn ejection_fraction(edv_ml: f64, esv_ml: f64) -> Result<EjectionFraction, QuantError> {
    if !(edv_ml > 0.0) || !edv_ml.is_finite() {
        return Err(QuantError::Domain(format!("EDV must be positive, got {edv_ml}")));
    }
    if !(esv_ml >= 0.0) || !esv_ml.is_finite() {
        return Err(QuantError::Domain(format!("ESV must be non-negative, got {esv_ml}")));
    }
    let ef = (edv_ml - esv_ml) / edv_ml * 100.0;
    Ok(EjectionFraction { ef_percent: ef.max(-100.0), anomalous: esv_ml > edv_ml })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EfGrade {
    /// EF < 40
    ConsiderablyReduced,
    /// 40 ≤ EF < 50
    MildlyReduced,
    /// EF ≥ 50
    Normal,
}

impl EfGrade {
    /// Hypothesis order used by the EF grading task.
    pub const ALL: [EfGrade; 3] = [EfGrade::Normal, EfGrade::MildlyReduced, EfGrade::ConsiderablyReduced];

    pub fn name(self) -> &'static str {
        match self {
            EfGrade::Normal => "Normal",
            EfGrade::MildlyReduced => "MildlyReduced",
            EfGrade::ConsiderablyReduced => "ConsiderablyReduced",
        }
    }

    /// "mildly reduced" style phrase.
    pub fn phrase(self) -> &'static str {
        match self {
            EfGrade::Normal => "normal",
            EfGrade::MildlyReduced => "mildly reduced",
            EfGrade::ConsiderablyReduced => "considerably reduced",
        }
    }

    pub fn from_name(s: &str) -> Option<EfGrade> {
        let norm: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        EfGrade::ALL.into_iter().find(|g| g.name().to_lowercase() == norm)
    }
}

impl std::fmt::Display for EfGrade {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradingResult {
    pub grade: EfGrade,
    pub ef_percent: f64,
}

pub fn grade_ef(ef_percent: f64) -> Result<GradingResult, QuantError> {
    if !ef_percent.is_finite() {
        return Err(QuantError::Domain(format!("EF must be finite, got {ef_percent}")));
    }
    let grade = if ef_percent >= 50.0 {
        EfGrade::Normal
    } else if ef_percent >= 40.0 {
        EfGrade::MildlyReduced
    } else {
        EfGrade::ConsiderablyReduced
    };
    Ok(GradingResult { grade, ef_percent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::AnatomyGroup;
    use std::collections::BTreeMap;

    fn lv() -> BTreeMap<u8, AnatomyGroup> {
        [(1, AnatomyGroup::LeftVentricle)].into_iter().collect()
    }

    fn rect(w: usize, h: usize, rw: usize, rh: usize, x0: usize, y0: usize, spacing: f64) -> SegmentationMask {
        let mut labels = vec![0u8; w * h];
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                labels[y * w + x] = 1;
            }
        }
        SegmentationMask::new(w, h, (spacing, spacing), labels, lv()).unwrap()
    }

    #[test]
    fn area_examples() {
        let full = SegmentationMask::new(10, 10, (1.0, 1.0), vec![1; 100], lv()).unwrap();
        assert_eq!(mask_area(&full, 1).area_mm2, 100.0);
        assert_eq!(mask_area(&full.with_spacing((0.5, 0.5)), 1).area_mm2, 25.0);
        let empty = SegmentationMask::new(10, 10, (1.0, 1.0), vec![0; 100], lv()).unwrap();
        let a = mask_area(&empty, 1);
        assert_eq!(a.area_mm2, 0.0);
        assert!(a.empty_structure);
    }

    #[test]
    fn rectangle_axis_vertical_then_horizontal() {
        let m = rect(80, 100, 20, 60, 30, 20, 1.0);
        let ax = long_axis(&m, 1).unwrap();
        assert!((ax.length_mm - 60.0).abs() <= 1.0, "{}", ax.length_mm);
        assert!((ax.apex.0 - ax.base_mid.0).abs() < 1e-6, "axis should be vertical: {ax:?}");
        assert!(ax.apex.1 < ax.base_mid.1, "tie rule puts apex at smaller y");

        let r = m.rotate90();
        let ax = long_axis(&r, 1).unwrap();
        assert!((ax.length_mm - 60.0).abs() <= 1.0);
        assert!((ax.apex.1 - ax.base_mid.1).abs() < 1e-6, "axis should be horizontal: {ax:?}");
    }

    #[test]
    fn disk_length_is_diameter() {
        let (w, r) = (64usize, 15.0f64);
        let c = (w as f64 - 1.0) / 2.0;
        let labels = (0..w * w)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                u8::from((x - c).hypot(y - c) <= r)
            })
            .collect();
        let m = SegmentationMask::new(w, w, (1.0, 1.0), labels, lv()).unwrap();
        let ax = long_axis(&m, 1).unwrap();
        assert!((ax.length_mm - 2.0 * r).abs() <= 1.5, "{}", ax.length_mm);
    }

    #[test]
    fn rectangle_diameters() {
        let m = rect(80, 100, 20, 60, 30, 20, 1.0);
        let ax = long_axis(&m, 1).unwrap();
        let d = disk_diameters(&m, 1, &ax, 20).unwrap();
        assert_eq!(d.len(), 20);
        for x in &d {
            assert!((x - 20.0).abs() <= 1.0, "{d:?}");
        }
        let one = disk_diameters(&m, 1, &ax, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0] - 20.0).abs() <= 1.0);
        assert!(matches!(disk_diameters(&m, 1, &ax, 0), Err(QuantError::NoDisks)));
    }

    #[test]
    fn region_on_one_half_has_trailing_zeros() {
        let m = rect(80, 140, 20, 60, 30, 10, 1.0);
        // axis twice as long as the region, starting at the region top
        let axis = LongAxis { apex: (39.5, 9.5), base_mid: (39.5, 129.5), length_mm: 120.0 };
        let d = disk_diameters(&m, 1, &axis, 10).unwrap();
        assert!(d[..5].iter().all(|&x| x > 0.0), "{d:?}");
        assert!(d[5..].iter().all(|&x| x == 0.0), "{d:?}");
    }

    #[test]
    fn small_region_rejected() {
        let m = rect(10, 10, 4, 4, 0, 0, 1.0);
        assert_eq!(long_axis(&m, 1), Err(QuantError::TooSmall { pixels: 16 }));
    }

    #[test]
    fn cylinder_volume_within_two_percent() {
        let m = rect(80, 100, 20, 60, 30, 20, 1.0);
        let v = biplane_volume(&m, &m, 1, 20).unwrap();
        let oracle = PI / 4.0 * 20.0 * 20.0 * 60.0 / 1000.0;
        assert!((v - oracle).abs() / oracle < 0.02, "{v} vs {oracle}");
    }

    #[test]
    fn empty_view_named() {
        let m = rect(80, 100, 20, 60, 30, 20, 1.0);
        let empty = SegmentationMask::new(80, 100, (1.0, 1.0), vec![0; 8000], lv()).unwrap();
        assert_eq!(
            biplane_volume(&m, &empty, 1, 20),
            Err(QuantError::EmptyView { view: "A4C".into() })
        );
    }

    #[test]
    fn ef_examples() {
        assert_eq!(ejection_fraction(100.0, 50.0).unwrap().ef_percent, 50.0);
        assert_eq!(ejection_fraction(80.0, 80.0).unwrap().ef_percent, 0.0);
        assert!((ejection_fraction(120.0, 79.8).unwrap().ef_percent - 33.5).abs() < 1e-9);
        let neg = ejection_fraction(50.0, 60.0).unwrap();
        assert!(neg.anomalous && neg.ef_percent < 0.0);
        assert!(ejection_fraction(0.0, 1.0).is_err());
        assert!(ejection_fraction(-5.0, 1.0).is_err());
    }

    #[test]
    fn grade_boundaries() {
        assert_eq!(grade_ef(33.5).unwrap().grade, EfGrade::ConsiderablyReduced);
        assert_eq!(grade_ef(50.0).unwrap().grade, EfGrade::Normal);
        assert_eq!(grade_ef(40.0).unwrap().grade, EfGrade::MildlyReduced);
        assert_eq!(grade_ef(39.999).unwrap().grade, EfGrade::ConsiderablyReduced);
        assert_eq!(grade_ef(49.999_999).unwrap().grade, EfGrade::MildlyReduced);
        assert!(grade_ef(f64::NAN).is_err());
    }

    #[test]
    fn grade_names_parse() {
        for g in EfGrade::ALL {
            assert_eq!(EfGrade::from_name(g.name()), Some(g));
            assert_eq!(EfGrade::from_name(g.phrase()), Some(g));
        }
    }
}
