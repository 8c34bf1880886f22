//! Browser bindings for a few engine operations. Every export takes and
//! returns JSON text; the plain `*_json` functions do the work and are usable
//! outside the browser.

use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use unieval::data::{compute_attributes, GroundTruthObject, PredictedObject};
use unieval::grid::{assign_to_grid, normalize_points};
use unieval::matcher::match_image;
use unieval::matrix::{direction_of_shift, size_sector_of_ratio, DEFAULT_DIRECTION_TOLERANCE, DEFAULT_SIZE_TOLERANCE};
use unieval::subsets::discretize;
use unieval::{BBox, ClassId, EvaluationRecord, MatchingConfig};

#[derive(Deserialize)]
struct BoxIn {
    id: i64,
    class: i64,
    bbox: [f64; 4],
    #[serde(default)]
    score: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct MatchRequest {
    gts: Vec<BoxIn>,
    preds: Vec<BoxIn>,
    #[serde(default)]
    lambda1: Option<f64>,
    #[serde(default)]
    lambda2: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    size_tolerance: Option<f64>,
    #[serde(default)]
    direction_tolerance: Option<f64>,
}

fn parse<T: for<'de> Deserialize<'de>>(input: &str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| format!("bad request: {e}"))
}

fn bbox(b: [f64; 4]) -> Result<(BBox, unieval::data::ObjectAttributes), String> {
    let bb = BBox::new(b[0], b[1], b[2], b[3]);
    let attrs = compute_attributes(&bb, None).map_err(|e| e.to_string())?;
    Ok((bb, attrs))
}

/// Matches the boxes of one image. Pairs come back in processing order with
/// their award terms, size sector and shift direction.
pub fn match_boxes_json(input: &str) -> Result<String, String> {
    let req: MatchRequest = parse(input)?;
    let defaults = MatchingConfig::default();
    let cfg = MatchingConfig {
        lambda1: req.lambda1.unwrap_or(defaults.lambda1),
        lambda2: req.lambda2.unwrap_or(defaults.lambda2),
        alpha: req.alpha.unwrap_or(defaults.alpha),
        include_crowd: false,
    };
    let gts = req
        .gts
        .iter()
        .map(|g| {
            let (bb, attrs) = bbox(g.bbox)?;
            Ok(GroundTruthObject {
                id: g.id,
                image_id: 0,
                class: ClassId(g.class),
                bbox: Some(bb),
                mask: None,
                is_crowd: false,
                attributes: Some(attrs),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let preds = req
        .preds
        .iter()
        .map(|p| {
            let (bb, attrs) = bbox(p.bbox)?;
            Ok(PredictedObject {
                id: p.id,
                image_id: 0,
                class: ClassId(p.class),
                bbox: Some(bb),
                mask: None,
                confidence: p.score,
                attributes: Some(attrs),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let g_refs: Vec<&GroundTruthObject> = gts.iter().collect();
    let p_refs: Vec<&PredictedObject> = preds.iter().collect();
    let result = match_image(&g_refs, &p_refs, &cfg, false).map_err(|e| e.to_string())?;

    let size_tol = req.size_tolerance.unwrap_or(DEFAULT_SIZE_TOLERANCE);
    let dir_tol = req.direction_tolerance.unwrap_or(DEFAULT_DIRECTION_TOLERANCE);
    let pairs: Vec<Value> = result
        .pairs
        .iter()
        .map(|pair| {
            let g = gts.iter().find(|g| g.id == pair.gt_id).expect("matched gt");
            let p = preds.iter().find(|p| p.id == pair.pred_id).expect("matched pred");
            let rec = EvaluationRecord::pair(g, p, Some(pair.iou));
            let sector = rec.size_ratio.map(|r| size_sector_of_ratio(r, size_tol));
            let direction = rec.shift.map(|[dx, dy]| direction_of_shift(dx, dy, dir_tol).name());
            json!({
                "predId": pair.pred_id,
                "gtId": pair.gt_id,
                "iou": pair.iou,
                "award": pair.award,
                "sizeSector": sector,
                "direction": direction,
            })
        })
        .collect();
    Ok(json!({
        "config": cfg,
        "pairs": pairs,
        "unmatchedPredictions": result.unmatched_predictions,
        "unmatchedGroundTruth": result.unmatched_ground_truth,
    })
    .to_string())
}

/// Places 2-D points (any range) on the smallest square grid, minimizing
/// squared distance after min-max scaling.
pub fn grid_layout_json(input: &str) -> Result<String, String> {
    let points: Vec<[f64; 2]> = parse(input)?;
    let keys: Vec<String> = (0..points.len()).map(|i| i.to_string()).collect();
    let scaled = normalize_points(&points);
    let grid = assign_to_grid(&scaled, &keys).map_err(|e| e.to_string())?;
    Ok(json!({
        "rows": grid.grid_rows,
        "cols": grid.grid_cols,
        "cost": grid.cost,
        "points": scaled,
        "cells": grid.placements.iter().map(|p| [p.row, p.col]).collect::<Vec<_>>(),
    })
    .to_string())
}

/// Equal-frequency intervals of a list of numbers, with the interval of every
/// value.
pub fn discretize_json(input: &str, intervals: usize) -> Result<String, String> {
    let values: Vec<f64> = parse(input)?;
    let d = discretize(&values, intervals).map_err(|e| e.to_string())?;
    let mut counts = vec![0usize; d.intervals()];
    let assigned: Vec<usize> = values.iter().map(|&v| d.interval_of(v)).collect();
    for &i in &assigned {
        counts[i] += 1;
    }
    Ok(json!({
        "boundaries": d.boundaries,
        "degenerate": d.degenerate,
        "counts": counts,
        "intervals": assigned,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn match_boxes(input: &str) -> Result<String, JsError> {
    match_boxes_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn grid_layout(input: &str) -> Result<String, JsError> {
    grid_layout_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn discretize_values(input: &str, intervals: usize) -> Result<String, JsError> {
    discretize_json(input, intervals).map_err(|e| JsError::new(&e))
}
