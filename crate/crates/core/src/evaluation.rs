//! Pixel accuracy and Dice between predicted and ground-truth masks.
//!
//! Dataset reports carry both aggregations: accuracy as a mean over images
//! and pooled over all pixels, Dice pooled over all pixels and as a mean of
//! per-image scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::ClassId;
use crate::segmentation::ClassMask;

/// `counts[gt][pred]` pixel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_masks(pred: &ClassMask, gt: &ClassMask) -> Result<Self> {
        check_pair(pred, gt)?;
        let n = gt.label_map().len();
        let mut m = Self::new(n);
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            m.counts[g as usize * n + p as usize] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: ClassId, pred: ClassId) -> u64 {
        self.counts[gt as usize * self.classes + pred as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, c: ClassId) -> u64 {
        self.get(c, c)
    }

    pub fn gt_count(&self, c: ClassId) -> u64 {
        let row = c as usize * self.classes;
        self.counts[row..row + self.classes].iter().sum()
    }

    pub fn pred_count(&self, c: ClassId) -> u64 {
        (0..self.classes)
            .map(|g| self.counts[g * self.classes + c as usize])
            .sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes as ClassId).map(|c| self.true_positives(c)).sum();
        correct as f64 / self.total() as f64
    }

    /// `2 TP / (|pred| + |gt|)`, 1.0 when the class is in neither mask.
    pub fn dice(&self, c: ClassId) -> f64 {
        let denom = self.gt_count(c) + self.pred_count(c);
        if denom == 0 {
            1.0
        } else {
            2.0 * self.true_positives(c) as f64 / denom as f64
        }
    }

    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

fn check_pair(pred: &ClassMask, gt: &ClassMask) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::invalid(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    if pred.label_map() != gt.label_map() {
        return Err(Error::invalid("masks use different label maps"));
    }
    Ok(())
}

pub fn pixel_accuracy(pred: &ClassMask, gt: &ClassMask) -> Result<f64> {
    check_pair(pred, gt)?;
    let agree = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(a, b)| a == b)
        .count();
    Ok(agree as f64 / gt.data().len() as f64)
}

pub fn dice(pred: &ClassMask, gt: &ClassMask, class_id: ClassId) -> Result<f64> {
    check_pair(pred, gt)?;
    gt.label_map().check(class_id)?;
    Ok(ConfusionMatrix::from_masks(pred, gt)?.dice(class_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class_id: ClassId,
    pub name: String,
    /// Dice over the pixels of all images together.
    pub pooled_dice: f64,
    /// Mean of per-image Dice scores.
    pub mean_image_dice: f64,
    pub gt_pixels: u64,
    pub pred_pixels: u64,
    pub present_in_gt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub image_count: usize,
    pub per_image_accuracy: Vec<f64>,
    /// Mean of per-image accuracies.
    pub macro_pixel_accuracy: f64,
    pub pooled_pixel_accuracy: f64,
    pub per_class: Vec<ClassEval>,
    /// Mean pooled Dice over classes present in the ground truth.
    pub macro_dice: f64,
    /// Mean pooled Dice over every class in the label map.
    pub macro_dice_all_classes: f64,
}

pub fn evaluate_dataset(pairs: &[(&ClassMask, &ClassMask)]) -> Result<EvalReport> {
    let Some(first) = pairs.first() else {
        return Err(Error::Empty("evaluation pairs"));
    };
    let label_map = first.1.label_map().clone();
    for (p, g) in pairs {
        if g.label_map() != &label_map || p.label_map() != &label_map {
            return Err(Error::invalid("evaluation pairs use different label maps"));
        }
    }
    let matrices: Vec<ConfusionMatrix> = pairs
        .par_iter()
        .map(|(p, g)| ConfusionMatrix::from_masks(p, g))
        .collect::<Result<_>>()?;
    let n_classes = label_map.len();
    let mut pooled = ConfusionMatrix::new(n_classes);
    for m in &matrices {
        pooled.merge(m);
    }
    let per_image_accuracy: Vec<f64> = matrices.iter().map(ConfusionMatrix::accuracy).collect();
    let macro_pixel_accuracy = per_image_accuracy.iter().sum::<f64>() / pairs.len() as f64;

    let per_class: Vec<ClassEval> = label_map
        .classes()
        .iter()
        .map(|tc| {
            let c = tc.id;
            let mean_image_dice =
                matrices.iter().map(|m| m.dice(c)).sum::<f64>() / matrices.len() as f64;
            ClassEval {
                class_id: c,
                name: tc.name.clone(),
                pooled_dice: pooled.dice(c),
                mean_image_dice,
                gt_pixels: pooled.gt_count(c),
                pred_pixels: pooled.pred_count(c),
                present_in_gt: pooled.gt_count(c) > 0,
            }
        })
        .collect();
    let present: Vec<f64> = per_class
        .iter()
        .filter(|c| c.present_in_gt)
        .map(|c| c.pooled_dice)
        .collect();
    let macro_dice = present.iter().sum::<f64>() / present.len() as f64;
    let macro_dice_all_classes =
        per_class.iter().map(|c| c.pooled_dice).sum::<f64>() / n_classes as f64;

    Ok(EvalReport {
        image_count: pairs.len(),
        per_image_accuracy,
        macro_pixel_accuracy,
        pooled_pixel_accuracy: pooled.accuracy(),
        per_class,
        macro_dice,
        macro_dice_all_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::TissueLabelMap;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, data: &[ClassId], n: usize) -> ClassMask {
        ClassMask::new(w, h, data.to_vec(), TissueLabelMap::numbered(n).unwrap()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let gt = mask(2, 2, &[0, 1, 2, 0], 3);
        assert_eq!(pixel_accuracy(&gt, &gt).unwrap(), 1.0);
        let shifted = mask(2, 2, &[1, 2, 0, 1], 3);
        assert_eq!(pixel_accuracy(&shifted, &gt).unwrap(), 0.0);
        let three = mask(2, 2, &[0, 1, 2, 2], 3);
        assert_eq!(pixel_accuracy(&three, &gt).unwrap(), 0.75);
        assert!(pixel_accuracy(&mask(4, 1, &[0; 4], 3), &gt).is_err());
        assert!(pixel_accuracy(&mask(2, 2, &[0; 4], 4), &gt).is_err());
    }

    #[test]
    fn dice_examples() {
        let gt = mask(2, 2, &[0, 1, 1, 0], 3);
        assert_eq!(dice(&gt, &gt, 1).unwrap(), 1.0);
        assert_eq!(dice(&gt, &gt, 2).unwrap(), 1.0);
        let disjoint = mask(2, 2, &[1, 0, 0, 1], 3);
        assert_eq!(dice(&disjoint, &gt, 1).unwrap(), 0.0);
        // |A| = 4, |B| = 6, |A n B| = 3
        let a = mask(10, 1, &[1, 1, 1, 1, 0, 0, 0, 0, 0, 0], 2);
        let b = mask(10, 1, &[1, 1, 1, 0, 1, 1, 1, 0, 0, 0], 2);
        assert!((dice(&a, &b, 1).unwrap() - 0.6).abs() < 1e-15);
        assert!(dice(&a, &b, 2).is_err());
    }

    #[test]
    fn dataset_examples() {
        let gt = mask(2, 2, &[0, 1, 1, 0], 2);
        let r = evaluate_dataset(&[(&gt, &gt)]).unwrap();
        assert_eq!(r.macro_pixel_accuracy, 1.0);
        assert_eq!(r.macro_dice, 1.0);
        assert!(r.per_class.iter().all(|c| c.pooled_dice == 1.0));

        let half = mask(2, 2, &[0, 1, 0, 1], 2);
        let r = evaluate_dataset(&[(&gt, &gt), (&half, &gt)]).unwrap();
        assert_eq!(r.per_image_accuracy, vec![1.0, 0.5]);
        assert_eq!(r.macro_pixel_accuracy, 0.75);

        assert!(evaluate_dataset(&[]).is_err());
    }

    #[test]
    fn pooled_dice_differs_from_mean_dice() {
        // image 1: TP 1, FN 1 -> 2/3; image 2: TP 1 -> 1; pooled TP 2, FN 1 -> 4/5
        let gt1 = mask(2, 1, &[0, 0], 2);
        let pr1 = mask(2, 1, &[0, 1], 2);
        let gt2 = mask(2, 1, &[0, 1], 2);
        let r = evaluate_dataset(&[(&pr1, &gt1), (&gt2, &gt2)]).unwrap();
        let c0 = &r.per_class[0];
        assert!((c0.pooled_dice - 0.8).abs() < 1e-15);
        assert!((c0.mean_image_dice - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn macro_dice_skips_absent_classes() {
        let gt = mask(2, 1, &[0, 0], 3);
        let pr = mask(2, 1, &[0, 1], 3);
        let r = evaluate_dataset(&[(&pr, &gt)]).unwrap();
        // class 0: 2/3, class 1: 0 (predicted, absent from gt), class 2: 1
        assert!((r.macro_dice - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_dice_all_classes - (2.0 / 3.0 + 0.0 + 1.0) / 3.0).abs() < 1e-15);
        assert!(!r.per_class[1].present_in_gt);
    }

    fn mask_pair() -> impl Strategy<Value = (Vec<ClassId>, Vec<ClassId>, usize)> {
        (1usize..40, 1usize..5).prop_flat_map(|(n, w)| {
            (
                prop::collection::vec(0u16..4, n * w),
                prop::collection::vec(0u16..4, n * w),
                Just(w),
            )
        })
    }

    proptest! {
        #[test]
        fn metric_identities((p, g, w) in mask_pair(), perm in Just([2u16, 0, 3, 1]).prop_shuffle()) {
            let h = p.len() / w;
            let pm = mask(w, h, &p, 4);
            let gm = mask(w, h, &g, 4);
            let m = ConfusionMatrix::from_masks(&pm, &gm).unwrap();
            let acc = pixel_accuracy(&pm, &gm).unwrap();
            let tp: u64 = (0..4).map(|c| m.true_positives(c)).sum();
            prop_assert_eq!(acc, tp as f64 / p.len() as f64);
            prop_assert!((0.0..=1.0).contains(&acc));

            let pp: Vec<ClassId> = p.iter().map(|&c| perm[c as usize]).collect();
            let gp: Vec<ClassId> = g.iter().map(|&c| perm[c as usize]).collect();
            let (ppm, gpm) = (mask(w, h, &pp, 4), mask(w, h, &gp, 4));
            prop_assert_eq!(pixel_accuracy(&ppm, &gpm).unwrap(), acc);
            for c in 0..4u16 {
                let d = dice(&pm, &gm, c).unwrap();
                prop_assert_eq!(d, dice(&gm, &pm, c).unwrap());
                prop_assert!((0.0..=1.0).contains(&d));
                prop_assert_eq!(dice(&ppm, &gpm, perm[c as usize]).unwrap(), d);
            }
        }
    }
}
