//! Greedy prediction-to-ground-truth matching.
//!
//! Predictions of an image are visited in descending confidence. Each one is
//! paired with the ground truth that maximizes the award
//!
//! ```text
//! a_ij = l1 * c_ij + l2 * p_ij + (1 - l1 - l2) * u_i,   u_i = exp(-n_i)
//! ```
//!
//! where `c_ij` is label agreement, `p_ij` the IoU (which must reach
//! `alpha`) and `n_i` the number of predictions already assigned to
//! ground truth `i`. A ground truth may collect several predictions; each
//! prediction is assigned at most once.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Dataset, GroundTruthObject, PredictedObject, Task};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, Geometry};
use crate::record::EvaluationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingConfig {
    /// Weight of label consistency.
    pub lambda1: f64,
    /// Weight of position consistency (IoU).
    pub lambda2: f64,
    /// Minimum IoU for a pair.
    pub alpha: f64,
    /// Crowd ground truth takes part in matching when set.
    #[serde(default)]
    pub include_crowd: bool,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            lambda1: 0.5,
            lambda2: 0.25,
            alpha: 0.1,
            include_crowd: false,
        }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda1 >= 0.0
            && self.lambda2 >= 0.0
            && self.lambda1 + self.lambda2 <= 1.0
            && (0.0..1.0).contains(&self.alpha);
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "invalid matching config: lambda1={}, lambda2={}, alpha={} \
                 (need lambda1, lambda2 >= 0, lambda1 + lambda2 <= 1, 0 <= alpha < 1)",
                self.lambda1, self.lambda2, self.alpha
            )))
        }
    }

    pub fn uniqueness_weight(&self) -> f64 {
        1.0 - self.lambda1 - self.lambda2
    }

    pub fn award(&self, label: f64, position: f64, uniqueness: f64) -> AwardBreakdown {
        AwardBreakdown {
            label_consistency: label,
            position_consistency: position,
            uniqueness,
            total: self.lambda1 * label
                + self.lambda2 * position
                + self.uniqueness_weight() * uniqueness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AwardBreakdown {
    pub label_consistency: f64,
    pub position_consistency: f64,
    pub uniqueness: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchedPair {
    pub pred_id: i64,
    pub gt_id: i64,
    pub iou: f64,
    pub award: AwardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchResult {
    /// In the order predictions were processed.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<i64>,
    pub unmatched_ground_truth: Vec<i64>,
}

/// Processing order: descending confidence, ties by ascending id.
pub fn confidence_order(preds: &[&PredictedObject]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then(preds[a].id.cmp(&preds[b].id))
    });
    order
}

/// Matches the objects of one image.
pub fn match_image(
    gts: &[&GroundTruthObject],
    preds: &[&PredictedObject],
    cfg: &MatchingConfig,
    use_masks: bool,
) -> Result<MatchResult> {
    cfg.validate()?;
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&i| gts[i].id);

    let overlaps = overlap_matrix(gts, preds, use_masks)?;
    let mut assigned = vec![0u32; gts.len()];
    let mut result = MatchResult::default();

    for j in confidence_order(preds) {
        let pred = preds[j];
        let mut best: Option<(usize, AwardBreakdown)> = None;
        for &i in &gt_order {
            let p = overlaps[j][i];
            if p < cfg.alpha {
                continue;
            }
            let label = if gts[i].class == pred.class { 1.0 } else { 0.0 };
            let uniqueness = (-(assigned[i] as f64)).exp();
            let award = cfg.award(label, p, uniqueness);
            if best.is_none_or(|(_, b)| award.total > b.total) {
                best = Some((i, award));
            }
        }
        match best {
            Some((i, award)) => {
                assigned[i] += 1;
                result.pairs.push(MatchedPair {
                    pred_id: pred.id,
                    gt_id: gts[i].id,
                    iou: overlaps[j][i],
                    award,
                });
            }
            None => result.unmatched_predictions.push(pred.id),
        }
    }
    result.unmatched_ground_truth = gt_order
        .iter()
        .filter(|&&i| assigned[i] == 0)
        .map(|&i| gts[i].id)
        .collect();
    Ok(result)
}

fn overlap_matrix(
    gts: &[&GroundTruthObject],
    preds: &[&PredictedObject],
    use_masks: bool,
) -> Result<Vec<Vec<f64>>> {
    preds
        .iter()
        .map(|p| {
            let pb = geometry_box(p.bbox.as_ref(), "prediction", p.id)?;
            gts.iter()
                .map(|g| {
                    let gb = geometry_box(g.bbox.as_ref(), "ground truth", g.id)?;
                    iou(
                        Geometry { bbox: pb, mask: p.mask.as_ref() },
                        Geometry { bbox: gb, mask: g.mask.as_ref() },
                        use_masks,
                    )
                })
                .collect()
        })
        .collect()
}

fn geometry_box<'a>(b: Option<&'a BBox>, what: &str, id: i64) -> Result<&'a BBox> {
    b.ok_or_else(|| Error::validation(format!("{what} {id} has no geometry")))
}

struct ImageObjects<'a> {
    image_id: i64,
    gts: Vec<&'a GroundTruthObject>,
    preds: Vec<&'a PredictedObject>,
}

fn group_by_image<'a>(dataset: &'a Dataset, include_crowd: bool) -> Vec<ImageObjects<'a>> {
    let mut groups: BTreeMap<i64, ImageObjects<'a>> = dataset
        .images
        .iter()
        .map(|img| {
            (
                img.id,
                ImageObjects {
                    image_id: img.id,
                    gts: Vec::new(),
                    preds: Vec::new(),
                },
            )
        })
        .collect();
    for g in &dataset.ground_truth {
        if g.is_crowd && !include_crowd {
            continue;
        }
        if let Some(group) = groups.get_mut(&g.image_id) {
            group.gts.push(g);
        }
    }
    for p in &dataset.predictions {
        if let Some(group) = groups.get_mut(&p.image_id) {
            group.preds.push(p);
        }
    }
    groups.into_values().collect()
}

/// Matches every image and flattens the results into evaluation records,
/// ordered by image id.
pub fn match_dataset(dataset: &Dataset, cfg: &MatchingConfig) -> Result<Vec<EvaluationRecord>> {
    match_dataset_with(dataset, cfg, true)
}

pub fn match_dataset_with(
    dataset: &Dataset,
    cfg: &MatchingConfig,
    parallel: bool,
) -> Result<Vec<EvaluationRecord>> {
    cfg.validate()?;
    let groups = group_by_image(dataset, cfg.include_crowd);
    let background = dataset.hierarchy.background();
    let task = dataset.task;
    let run = |g: &ImageObjects<'_>| image_records(g, cfg, task, background);
    let per_image: Vec<Vec<EvaluationRecord>> = if parallel {
        groups.par_iter().map(run).collect::<Result<_>>()?
    } else {
        groups.iter().map(run).collect::<Result<_>>()?
    };
    Ok(per_image.into_iter().flatten().collect())
}

fn image_records(
    group: &ImageObjects<'_>,
    cfg: &MatchingConfig,
    task: Task,
    background: ClassId,
) -> Result<Vec<EvaluationRecord>> {
    if task == Task::Classification {
        return Ok(classification_records(group, background));
    }
    let result = match_image(&group.gts, &group.preds, cfg, task == Task::Segmentation)?;
    let gt_by_id: BTreeMap<i64, &GroundTruthObject> =
        group.gts.iter().map(|g| (g.id, *g)).collect();
    let pred_by_id: BTreeMap<i64, &PredictedObject> =
        group.preds.iter().map(|p| (p.id, *p)).collect();

    let mut out = Vec::with_capacity(result.pairs.len() + result.unmatched_predictions.len());
    for pair in &result.pairs {
        out.push(EvaluationRecord::pair(
            gt_by_id[&pair.gt_id],
            pred_by_id[&pair.pred_id],
            Some(pair.iou),
        ));
    }
    for id in &result.unmatched_predictions {
        out.push(EvaluationRecord::false_positive(pred_by_id[id], background));
    }
    for id in &result.unmatched_ground_truth {
        out.push(EvaluationRecord::missed(gt_by_id[id], background));
    }
    Ok(out)
}

/// Classification pairing is given by the sample: ground truth in id order
/// meets predictions in confidence order.
fn classification_records(group: &ImageObjects<'_>, background: ClassId) -> Vec<EvaluationRecord> {
    let mut gts = group.gts.clone();
    gts.sort_by_key(|g| g.id);
    let order = confidence_order(&group.preds);
    let mut out = Vec::new();
    for k in 0..gts.len().max(order.len()) {
        match (gts.get(k), order.get(k).map(|&j| group.preds[j])) {
            (Some(g), Some(p)) => out.push(EvaluationRecord::pair(g, p, None)),
            (Some(g), None) => out.push(EvaluationRecord::missed(g, background)),
            (None, Some(p)) => out.push(EvaluationRecord::false_positive(p, background)),
            (None, None) => {}
        }
    }
    debug_assert!(out.iter().all(|r| r.image_id == group.image_id));
    out
}
