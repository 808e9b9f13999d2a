//! Per-class Dice and IoU.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::volume::{LabeledVolume, Role};

/// Default class ids and their organelle names, in report order.
pub const ORGANELLES: [(u64, &str); 5] = [
    (1, "Mito"),
    (2, "Nucleus"),
    (3, "ER"),
    (4, "Endo"),
    (5, "Golgi"),
];

pub fn class_name(class: u64) -> String {
    ORGANELLES
        .iter()
        .find(|(id, _)| *id == class)
        .map(|(_, name)| name.to_string())
        .unwrap_or_else(|| format!("class{class}"))
}

/// Set cardinalities of a prediction/ground-truth mask pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Overlap {
    pub intersection: u64,
    pub pred: u64,
    pub gt: u64,
}

impl Overlap {
    pub fn union(&self) -> u64 {
        self.pred + self.gt - self.intersection
    }

    /// `2|A∩B| / (|A| + |B|)`; two empty masks agree perfectly.
    pub fn dice(&self) -> f64 {
        let denom = self.pred + self.gt;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }

    /// `|A∩B| / |A∪B|`; two empty masks agree perfectly.
    pub fn iou(&self) -> f64 {
        let union = self.union();
        if union == 0 {
            1.0
        } else {
            self.intersection as f64 / union as f64
        }
    }
}

/// Overlap of the nonzero voxels of two volumes.
pub fn mask_overlap(pred: &LabeledVolume, gt: &LabeledVolume) -> Result<Overlap> {
    pred.require_same_dims(gt.dims())?;
    let mut o = Overlap::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p != 0, g != 0);
        o.pred += u64::from(p);
        o.gt += u64::from(g);
        o.intersection += u64::from(p && g);
    }
    Ok(o)
}

pub fn dice(pred: &LabeledVolume, gt: &LabeledVolume) -> Result<f64> {
    Ok(mask_overlap(pred, gt)?.dice())
}

pub fn iou(pred: &LabeledVolume, gt: &LabeledVolume) -> Result<f64> {
    Ok(mask_overlap(pred, gt)?.iou())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Unweighted mean over the listed classes.
    #[default]
    Macro,
    /// Mean weighted by ground-truth voxel count per class.
    VoxelWeighted,
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Macro => "macro",
            Averaging::VoxelWeighted => "voxel",
        })
    }
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "voxel" | "voxel_weighted" => Ok(Averaging::VoxelWeighted),
            _ => Err(Error::InvalidParameter(format!(
                "averaging must be macro or voxel, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class: u64,
    pub name: String,
    pub overlap: Overlap,
    pub dice: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// In the order the classes were requested.
    pub per_class: Vec<ClassScore>,
    pub average_dice: f64,
    pub average_iou: f64,
    pub averaging: Averaging,
}

impl MetricsReport {
    /// Plain-text table: one row per class followed by the average.
    pub fn to_table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|c| c.name.len())
            .chain(["Average".len(), "class".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}", "class", "Dice", "IoU");
        for c in &self.per_class {
            let _ = writeln!(out, "{:<width$}  {:>6.3}  {:>6.3}", c.name, c.dice, c.iou);
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.3}  {:>6.3}",
            "Average", self.average_dice, self.average_iou
        );
        out
    }
}

/// Dice and IoU of `pred == c` against `gt == c` for each class `c`, plus
/// their average. Voxels of unlisted classes are ignored.
pub fn per_class_report(
    pred: &LabeledVolume,
    gt: &LabeledVolume,
    classes: &[u64],
    averaging: Averaging,
) -> Result<MetricsReport> {
    pred.require_same_dims(gt.dims())?;
    if classes.is_empty() {
        return Err(Error::InvalidParameter("no classes to evaluate".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| c == 0) {
        return Err(Error::InvalidParameter(format!(
            "class {c} is background and cannot be evaluated"
        )));
    }
    let slot: HashMap<u64, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    if slot.len() != classes.len() {
        return Err(Error::InvalidParameter("duplicate class ids".into()));
    }

    let mut counts = vec![Overlap::default(); classes.len()];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if let Some(&i) = slot.get(&p) {
            counts[i].pred += 1;
            if p == g {
                counts[i].intersection += 1;
            }
        }
        if let Some(&i) = slot.get(&g) {
            counts[i].gt += 1;
        }
    }

    let per_class: Vec<ClassScore> = classes
        .iter()
        .zip(&counts)
        .map(|(&class, &overlap)| ClassScore {
            class,
            name: class_name(class),
            overlap,
            dice: overlap.dice(),
            iou: overlap.iou(),
        })
        .collect();

    let total_gt: u64 = counts.iter().map(|o| o.gt).sum();
    let weights: Vec<f64> = match averaging {
        Averaging::VoxelWeighted if total_gt > 0 => counts
            .iter()
            .map(|o| o.gt as f64 / total_gt as f64)
            .collect(),
        _ => vec![1.0 / classes.len() as f64; classes.len()],
    };
    let average_dice = per_class.iter().zip(&weights).map(|(c, w)| c.dice * w).sum();
    let average_iou = per_class.iter().zip(&weights).map(|(c, w)| c.iou * w).sum();

    Ok(MetricsReport {
        per_class,
        average_dice,
        average_iou,
        averaging,
    })
}

/// Replaces every instance id by its semantic class.
pub fn instances_to_class_masks(
    instances: &LabeledVolume,
    instance_class: &BTreeMap<u64, u64>,
) -> Result<LabeledVolume> {
    let data = instances
        .data()
        .iter()
        .map(|&id| match id {
            0 => Ok(0),
            _ => instance_class
                .get(&id)
                .copied()
                .ok_or(Error::UnmappedInstance(id)),
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledVolume::from_vec(instances.dims(), instances.voxel_size(), Role::Semantic, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin(data: Vec<u64>) -> LabeledVolume {
        LabeledVolume::from_shape([1, 1, data.len()], Role::Binary, data).unwrap()
    }

    fn sem(data: Vec<u64>) -> LabeledVolume {
        LabeledVolume::from_shape([1, 1, data.len()], Role::Semantic, data).unwrap()
    }

    #[test]
    fn dice_iou_examples() {
        let a = bin(vec![1, 1, 0, 1]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);

        let (a, b) = (bin(vec![1, 1, 0, 0]), bin(vec![0, 0, 1, 1]));
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);

        // |A| = |B| = 4, |A∩B| = 2
        let a = bin(vec![1, 1, 1, 1, 0, 0]);
        let b = bin(vec![0, 0, 1, 1, 1, 1]);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0);

        let e = bin(vec![0, 0]);
        assert_eq!((dice(&e, &e).unwrap(), iou(&e, &e).unwrap()), (1.0, 1.0));
        assert!(dice(&a, &e).is_err());
    }

    #[test]
    fn report_perfect_and_one_wrong() {
        let classes = [1, 2, 3, 4, 5];
        let gt = sem(vec![1, 2, 3, 4, 5, 0, 1, 2]);
        let r = per_class_report(&gt, &gt, &classes, Averaging::Macro).unwrap();
        assert!(r.per_class.iter().all(|c| c.dice == 1.0 && c.iou == 1.0));
        assert_eq!((r.average_dice, r.average_iou), (1.0, 1.0));

        // class 3 predicted as background
        let pred = sem(vec![1, 2, 0, 4, 5, 0, 1, 2]);
        let r = per_class_report(&pred, &gt, &classes, Averaging::Macro).unwrap();
        assert_eq!(r.per_class[2].dice, 0.0);
        assert!((r.average_dice - 0.8).abs() < 1e-12);
        let names: Vec<&str> = r.per_class.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["Mito", "Nucleus", "ER", "Endo", "Golgi"]);
    }

    #[test]
    fn absent_class_scores_one() {
        let gt = sem(vec![1, 1, 0]);
        let r = per_class_report(&gt, &gt, &[1, 7], Averaging::Macro).unwrap();
        assert_eq!(r.per_class[1].dice, 1.0);
        assert_eq!(r.per_class[1].name, "class7");
    }

    #[test]
    fn voxel_weighted_average() {
        let gt = sem(vec![1, 1, 1, 2]);
        let pred = sem(vec![1, 1, 1, 0]);
        let r = per_class_report(&pred, &gt, &[1, 2], Averaging::VoxelWeighted).unwrap();
        assert!((r.average_dice - 0.75).abs() < 1e-12);
        let r = per_class_report(&pred, &gt, &[1, 2], Averaging::Macro).unwrap();
        assert!((r.average_dice - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_rejects_bad_classes() {
        let gt = sem(vec![1]);
        assert!(per_class_report(&gt, &gt, &[], Averaging::Macro).is_err());
        assert!(per_class_report(&gt, &gt, &[0], Averaging::Macro).is_err());
        assert!(per_class_report(&gt, &gt, &[1, 1], Averaging::Macro).is_err());
    }

    #[test]
    fn table_lists_average_last() {
        let gt = sem(vec![1, 2]);
        let t = per_class_report(&gt, &gt, &[1, 2], Averaging::Macro)
            .unwrap()
            .to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("Mito"));
        assert!(lines[3].starts_with("Average"));
    }

    #[test]
    fn class_masks() {
        let inst = LabeledVolume::from_shape([1, 1, 3], Role::Instance, vec![1, 0, 2]).unwrap();
        let map = BTreeMap::from([(1, 1), (2, 1)]);
        assert_eq!(instances_to_class_masks(&inst, &map).unwrap().data(), &[1, 0, 1]);
        let empty = LabeledVolume::from_shape([1, 1, 2], Role::Instance, vec![0, 0]).unwrap();
        assert_eq!(
            instances_to_class_masks(&empty, &BTreeMap::new()).unwrap().data(),
            &[0, 0]
        );
        assert!(matches!(
            instances_to_class_masks(&inst, &BTreeMap::from([(1, 1)])),
            Err(Error::UnmappedInstance(2))
        ));
    }
}
