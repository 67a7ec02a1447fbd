use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{label_components, Mask};

pub const RAILWAY: u8 = 1;
pub const NON_RAILWAY: u8 = 0;

/// Per-class pixel counts. Addition merges counts from several images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;
    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "masks {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Counts for `class_id` (1 = railway, 0 = non-railway); a pixel belongs
/// to class 0 where the mask is 0.
pub fn confusion_counts(pred: &Mask, gt: &Mask, class_id: u8) -> Result<ConfusionCounts> {
    check_dims(pred, gt)?;
    if class_id > 1 {
        return Err(Error::InvalidParameter(format!("class_id must be 0 or 1, got {class_id}")));
    }
    // counts[p][g] for the railway class.
    let mut counts = [[0u64; 2]; 2];
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        counts[p as usize][g as usize] += 1;
    }
    let (c, o) = (class_id as usize, 1 - class_id as usize);
    Ok(ConfusionCounts {
        tp: counts[c][c],
        fp: counts[c][o],
        fn_: counts[o][c],
        tn: counts[o][o],
    })
}

/// `tp / (tp + fp + fn)`, or 1.0 when the class is neither present nor predicted.
pub fn iou(counts: &ConfusionCounts) -> f64 {
    let denom = counts.tp + counts.fp + counts.fn_;
    if denom == 0 {
        1.0
    } else {
        counts.tp as f64 / denom as f64
    }
}

pub fn miou(per_class_ious: &[f64]) -> Result<f64> {
    if per_class_ious.is_empty() {
        return Err(Error::InvalidParameter("miou of an empty sequence".into()));
    }
    Ok(per_class_ious.iter().sum::<f64>() / per_class_ious.len() as f64)
}

pub fn pixel_accuracy(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_dims(pred, gt)?;
    let total = pred.as_slice().len();
    if total == 0 {
        return Err(Error::InvalidParameter("pixel accuracy of an empty mask".into()));
    }
    let correct = pred
        .as_slice()
        .iter()
        .zip(gt.as_slice())
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / total as f64)
}

/// Pixel accuracy from railway-class counts: `(tp + tn) / total`.
pub fn accuracy_from_counts(counts: &ConfusionCounts) -> f64 {
    match counts.total() {
        0 => 1.0,
        t => (counts.tp + counts.tn) as f64 / t as f64,
    }
}

/// Two-class (non-railway, railway) mIoU of one mask pair.
pub fn binary_miou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let rail = confusion_counts(pred, gt, RAILWAY)?;
    miou(&[iou(&swap_classes(&rail)), iou(&rail)])
}

/// The same counts seen from the other class.
pub fn swap_classes(c: &ConfusionCounts) -> ConfusionCounts {
    ConfusionCounts {
        tp: c.tn,
        fp: c.fn_,
        fn_: c.fp,
        tn: c.tp,
    }
}

/// A connected intrusion into the railway area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// Half-open `[x_min, y_min, x_max, y_max]`.
    pub bbox: [usize; 4],
    pub area: usize,
    /// `(x, y)` mean of pixel indices.
    pub centroid: [f64; 2],
}

/// 8-connected components of `railway_roi AND NOT pred_railway` with at
/// least `min_area` pixels, largest first; ties go to the top-left bbox
/// corner (row, then column).
pub fn obstacle_regions(pred_railway: &Mask, railway_roi: &Mask, min_area: usize) -> Result<Vec<Region>> {
    check_dims(pred_railway, railway_roi)?;
    let hole = railway_roi.and_not(pred_railway)?;
    let (labels, n) = label_components(&hole);
    let w = hole.width();
    let mut acc = vec![(usize::MAX, usize::MAX, 0usize, 0usize, 0usize, 0u64, 0u64); n as usize];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let a = &mut acc[l as usize - 1];
        a.0 = a.0.min(x);
        a.1 = a.1.min(y);
        a.2 = a.2.max(x + 1);
        a.3 = a.3.max(y + 1);
        a.4 += 1;
        a.5 += x as u64;
        a.6 += y as u64;
    }
    let mut regions: Vec<Region> = acc
        .into_iter()
        .filter(|a| a.4 >= min_area.max(1))
        .map(|(x0, y0, x1, y1, area, sx, sy)| Region {
            bbox: [x0, y0, x1, y1],
            area,
            centroid: [sx as f64 / area as f64, sy as f64 / area as f64],
        })
        .collect();
    regions.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.bbox[1].cmp(&b.bbox[1]))
            .then(a.bbox[0].cmp(&b.bbox[0]))
    });
    Ok(regions)
}
