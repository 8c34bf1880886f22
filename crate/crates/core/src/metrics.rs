//! Per-class precision, recall and COCO-style average precision computed
//! from evaluation records.
//!
//! Metric matching is redone here at the requested IoU threshold: walking
//! predictions by descending confidence, a same-class pair counts as a true
//! positive the first time its ground truth is claimed. Classification
//! pairs carry no IoU and pass every threshold.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassHierarchy, ClassId};
use crate::record::EvaluationRecord;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

/// IoU thresholds 0.50:0.05:0.95.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// `None` when there are no predictions.
    pub precision: Option<f64>,
    /// `None` when there is no ground truth.
    pub recall: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassSummary {
    pub class_id: ClassId,
    pub name: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub ap: Option<f64>,
    pub object_count: usize,
}

type GtKey = (i64, i64);

fn ground_truth_of(records: &[EvaluationRecord], class: ClassId) -> HashSet<GtKey> {
    records
        .iter()
        .filter(|r| r.gt_class == class)
        .filter_map(|r| r.gt_id.map(|g| (r.image_id, g)))
        .collect()
}

/// Predictions of `class` in ranking order: confidence descending, ties by
/// image then prediction id.
fn ranked_predictions(records: &[EvaluationRecord], class: ClassId) -> Vec<&EvaluationRecord> {
    let mut preds: Vec<&EvaluationRecord> = records
        .iter()
        .filter(|r| r.pred_class == class && r.pred_id.is_some())
        .collect();
    preds.sort_by(|a, b| {
        let ca = a.confidence.unwrap_or(0.0);
        let cb = b.confidence.unwrap_or(0.0);
        cb.total_cmp(&ca)
            .then(a.image_id.cmp(&b.image_id))
            .then(a.pred_id.cmp(&b.pred_id))
    });
    preds
}

/// True/false flag per ranked prediction at one IoU threshold.
fn claim(ranked: &[&EvaluationRecord], class: ClassId, iou_threshold: f64) -> Vec<bool> {
    let mut claimed: HashSet<GtKey> = HashSet::new();
    ranked
        .iter()
        .map(|r| {
            let same_class_pair = r.gt_class == class && r.gt_id.is_some();
            let overlaps = r.iou.is_none_or(|v| v >= iou_threshold);
            same_class_pair && overlaps && claimed.insert((r.image_id, r.gt_id.unwrap()))
        })
        .collect()
}

pub fn precision_recall(
    records: &[EvaluationRecord],
    class: ClassId,
    iou_threshold: f64,
    confidence_threshold: f64,
) -> PrecisionRecall {
    let gts = ground_truth_of(records, class);
    let ranked: Vec<&EvaluationRecord> = ranked_predictions(records, class)
        .into_iter()
        .filter(|r| r.confidence.unwrap_or(0.0) >= confidence_threshold)
        .collect();
    let flags = claim(&ranked, class, iou_threshold);
    let tp = flags.iter().filter(|&&f| f).count();
    let fp = flags.len() - tp;
    PrecisionRecall {
        precision: (!flags.is_empty()).then(|| tp as f64 / flags.len() as f64),
        recall: (!gts.is_empty()).then(|| tp as f64 / gts.len() as f64),
        true_positives: tp,
        false_positives: fp,
        false_negatives: gts.len() - tp,
    }
}

/// 101-point interpolated AP at one IoU threshold.
fn average_precision_at(flags: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &f in flags {
        if f {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// COCO-style AP averaged over IoU 0.50:0.95; `None` without ground truth.
pub fn average_precision(records: &[EvaluationRecord], class: ClassId) -> Option<f64> {
    let num_gt = ground_truth_of(records, class).len();
    if num_gt == 0 {
        return None;
    }
    let ranked = ranked_predictions(records, class);
    let thresholds = coco_iou_thresholds();
    let total: f64 = thresholds
        .iter()
        .map(|&t| average_precision_at(&claim(&ranked, class, t), num_gt))
        .sum();
    Some(total / thresholds.len() as f64)
}

/// Unweighted mean over the classes whose AP is defined.
pub fn mean_average_precision(records: &[EvaluationRecord], classes: &[ClassId]) -> Option<f64> {
    let aps: Vec<f64> = classes
        .par_iter()
        .filter_map(|&c| average_precision(records, c))
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Summaries for every leaf class of the hierarchy.
pub fn class_summaries(
    records: &[EvaluationRecord],
    hierarchy: &ClassHierarchy,
    iou_threshold: f64,
    confidence_threshold: f64,
) -> Vec<ClassSummary> {
    let mut leaves = hierarchy.leaves();
    leaves.sort();
    let mut by_class: BTreeMap<ClassId, Vec<EvaluationRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.gt_class).or_default().push(r.clone());
        if r.pred_class != r.gt_class {
            by_class.entry(r.pred_class).or_default().push(r.clone());
        }
    }
    leaves
        .par_iter()
        .map(|&c| {
            let recs = by_class.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            let pr = precision_recall(recs, c, iou_threshold, confidence_threshold);
            ClassSummary {
                class_id: c,
                name: hierarchy.name(c),
                precision: pr.precision,
                recall: pr.recall,
                ap: average_precision(recs, c),
                object_count: ground_truth_of(recs, c).len(),
            }
        })
        .collect()
}

pub fn summary_map(summaries: &[ClassSummary]) -> Option<f64> {
    let aps: Vec<f64> = summaries.iter().filter_map(|s| s.ap).collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(summaries: &[ClassSummary], mut out: W) -> std::io::Result<()> {
    writeln!(out, "class_id,name,precision,recall,ap,objects")?;
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.class_id,
            csv_field(&s.name),
            opt(s.precision),
            opt(s.recall),
            opt(s.ap),
            s.object_count
        )?;
    }
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn pair(img: i64, gt: i64, pred: i64, class: i64, iou: f64, conf: f64) -> EvaluationRecord {
        EvaluationRecord {
            image_id: img,
            gt_id: Some(gt),
            pred_id: Some(pred),
            gt_class: ClassId(class),
            pred_class: ClassId(class),
            confidence: Some(conf),
            gt_size: None,
            pred_size: None,
            gt_aspect: None,
            pred_aspect: None,
            size_ratio: None,
            shift: None,
            iou: Some(iou),
            gt_box: None,
            pred_box: None,
        }
    }

    pub fn false_positive(img: i64, pred: i64, class: i64, conf: f64) -> EvaluationRecord {
        EvaluationRecord {
            gt_id: None,
            gt_class: ClassId(0),
            iou: None,
            ..pair(img, 0, pred, class, 0.0, conf)
        }
    }

    pub fn missed(img: i64, gt: i64, class: i64) -> EvaluationRecord {
        EvaluationRecord {
            pred_id: None,
            pred_class: ClassId(0),
            confidence: None,
            iou: None,
            ..pair(img, gt, 0, class, 0.0, 0.0)
        }
    }

    /// Independent PR-curve oracle: interpolated precision at recall r is
    /// the maximum precision over all ranks reaching recall >= r.
    pub fn oracle_ap(flags_per_threshold: &[Vec<bool>], num_gt: usize) -> f64 {
        let mut total = 0.0;
        for flags in flags_per_threshold {
            let mut points = Vec::new();
            for k in 1..=flags.len() {
                let tp = flags[..k].iter().filter(|&&f| f).count() as f64;
                points.push((tp / num_gt as f64, tp / k as f64));
            }
            let mut s = 0.0;
            for i in 0..=100 {
                let r = i as f64 / 100.0;
                s += points
                    .iter()
                    .filter(|(rec, _)| *rec >= r)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
            }
            total += s / 101.0;
        }
        total / flags_per_threshold.len() as f64
    }

    #[test]
    fn perfect_single_detection() {
        let recs = vec![pair(1, 1, 1, 1, 0.96, 0.9)];
        let pr = precision_recall(&recs, ClassId(1), 0.5, 0.5);
        assert_eq!((pr.precision, pr.recall), (Some(1.0), Some(1.0)));
        assert_eq!(average_precision(&recs, ClassId(1)), Some(1.0));
        // IoU 0.9 misses the 0.95 threshold only
        let loose = vec![pair(1, 1, 1, 1, 0.9, 0.9)];
        assert!((average_precision(&loose, ClassId(1)).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn no_predictions() {
        let recs = vec![missed(1, 1, 1)];
        let pr = precision_recall(&recs, ClassId(1), 0.5, 0.5);
        assert_eq!((pr.precision, pr.recall), (None, Some(0.0)));
        let pr = precision_recall(&recs, ClassId(7), 0.5, 0.5);
        assert_eq!((pr.precision, pr.recall), (None, None));
        assert_eq!(average_precision(&recs, ClassId(7)), None);
    }

    #[test]
    fn duplicate_pair_becomes_false_positive() {
        let recs = vec![
            pair(1, 1, 1, 1, 0.8, 0.9),
            pair(1, 1, 2, 1, 0.6, 0.7),
            pair(1, 2, 3, 1, 0.7, 0.8),
        ];
        let pr = precision_recall(&recs, ClassId(1), 0.5, 0.5);
        assert_eq!((pr.true_positives, pr.false_positives), (2, 1));
        assert_eq!(pr.precision, Some(2.0 / 3.0));
        assert_eq!(pr.recall, Some(1.0));
    }

    #[test]
    fn wrong_class_everywhere_gives_zero_ap() {
        let mut r = pair(1, 1, 1, 1, 0.9, 0.9);
        r.pred_class = ClassId(2);
        let recs = vec![r];
        assert_eq!(average_precision(&recs, ClassId(1)), Some(0.0));
    }

    #[test]
    fn ranked_tp_fp_tp_matches_oracle() {
        let recs = vec![
            pair(1, 1, 1, 1, 0.95, 0.9),
            false_positive(1, 2, 1, 0.8),
            pair(1, 2, 3, 1, 0.95, 0.7),
        ];
        let flags = vec![vec![true, false, true]; 10];
        let expected = oracle_ap(&flags, 2);
        // by hand: 51 recall points at precision 1, 50 at 2/3
        assert!((expected - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
        let got = average_precision(&recs, ClassId(1)).unwrap();
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn raising_confidence_never_raises_recall() {
        let recs = vec![
            pair(1, 1, 1, 1, 0.8, 0.9),
            pair(1, 2, 2, 1, 0.7, 0.4),
            pair(2, 3, 3, 1, 0.9, 0.6),
            missed(2, 4, 1),
        ];
        let mut last = f64::INFINITY;
        for k in 0..=10 {
            let r = precision_recall(&recs, ClassId(1), 0.5, k as f64 / 10.0).recall.unwrap();
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn empty_class_does_not_change_map() {
        let recs = vec![pair(1, 1, 1, 1, 0.9, 0.9), pair(1, 2, 2, 2, 0.6, 0.9)];
        let a = mean_average_precision(&recs, &[ClassId(1), ClassId(2)]);
        let b = mean_average_precision(&recs, &[ClassId(1), ClassId(2), ClassId(9)]);
        assert_eq!(a, b);
    }
}
