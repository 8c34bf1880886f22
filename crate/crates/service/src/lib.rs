//! HTTP API over loaded evaluation datasets: summaries, matrices,
//! distribution queries, subset tables, grid layouts and image crops.

pub mod config;
pub mod crop;
pub mod error;
pub mod state;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use unieval::grid::{layout, selection_features, ProjectionMethod};
use unieval::metrics::summary_map;
use unieval::prob::{resolve_all, RawPredicate};
use unieval::subsets::{min_support, parse_rank_keys, rank_subsets, validate_beta};
use unieval::{build_matrix, BBox, ClassId, EvaluationRecord, MatrixSpec};

pub use config::ServiceConfig;
pub use error::ServiceError;
pub use state::{AppState, LoadedDataset};

type ApiResult<T> = Result<T, ServiceError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/datasets", get(list_datasets))
        .route("/api/datasets/{id}/summary", get(summary))
        .route("/api/datasets/{id}/matrix", post(matrix))
        .route("/api/datasets/{id}/query", post(query))
        .route("/api/datasets/{id}/subsets", get(subsets))
        .route("/api/datasets/{id}/grid", post(grid))
        .route("/api/images/{image_id}/crop", get(crop_image))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&state.config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({"datasets": state.ids()}))
}

async fn summary(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let ds = state.get(&id)?;
    let summaries = ds.summaries();
    Ok(Json(json!({
        "id": ds.id,
        "task": ds.meta.task,
        "counts": {
            "images": ds.meta.images.len(),
            "groundTruth": ds.meta.ground_truth_count,
            "predictions": ds.meta.prediction_count,
            "records": ds.store.len(),
        },
        "classes": summaries,
        "map": summary_map(summaries),
        "hierarchy": ds.meta.hierarchy.nodes(),
        "background": ds.meta.hierarchy.background(),
    })))
}

async fn matrix(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let ds = state.get(&id)?;
    let mut spec: MatrixSpec = parse_body(&body)?;
    spec.size_tolerance.get_or_insert(state.config.size_tolerance);
    spec.direction_tolerance.get_or_insert(state.config.direction_tolerance);
    let m = build_matrix(ds.store.records(), ds.store.hierarchy(), &spec, ds.meta.task.has_geometry())?;
    Ok(Json(serde_json::to_value(m).map_err(|e| ServiceError::Internal(e.to_string()))?))
}

async fn query(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let ds = state.get(&id)?;
    let q = parse_body(&body)?;
    Ok(Json(ds.store.evaluate(&q)?))
}

#[derive(Debug, Deserialize)]
struct SubsetParams {
    class: Option<String>,
    beta: Option<f64>,
    sort: Option<String>,
}

fn resolve_class(ds: &LoadedDataset, raw: &str) -> ApiResult<ClassId> {
    let h = ds.store.hierarchy();
    h.by_name(raw)
        .or_else(|| raw.parse().ok().map(ClassId).filter(|c| h.contains(*c)))
        .ok_or_else(|| ServiceError::BadRequest(format!("unknown class '{raw}'")))
}

async fn subsets(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<SubsetParams>,
) -> ApiResult<Json<Value>> {
    let ds = state.get(&id)?;
    let raw = params
        .class
        .ok_or_else(|| ServiceError::BadRequest("the class parameter is required".to_string()))?;
    let class = resolve_class(&ds, &raw)?;
    let beta = params.beta.unwrap_or(state.config.beta);
    validate_beta(beta)?;
    let keys = parse_rank_keys(params.sort.as_deref().unwrap_or("recall:asc"))?;
    let ds2 = ds.clone();
    let (spec, mined) = tokio::task::spawn_blocking(move || -> ApiResult<_> {
        Ok((ds2.discretization(beta)?, ds2.subsets(class, beta)?))
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let ranked = rank_subsets(mined.as_ref().clone(), &keys)?;
    let class_records = unieval::subsets::class_records(ds.store.records(), class).len();
    let rows: Vec<Value> = ranked
        .iter()
        .map(|s| {
            let mut v = serde_json::to_value(s).unwrap();
            v["label"] = Value::from(s.label());
            v["conditions"] = serde_json::to_value(s.to_conditions()).unwrap();
            v
        })
        .collect();
    Ok(Json(json!({
        "class": class,
        "className": ds.store.hierarchy().name(class),
        "beta": beta,
        "d": spec.d,
        "classRecords": class_records,
        "minSupport": if class_records > 0 { min_support(beta, class_records) } else { 0 },
        "boundaries": spec.boundaries,
        "rows": rows,
    })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, rename_all = "camelCase")]
struct GridRequest {
    /// Object keys (`pred:<id>` / `gt:<id>`).
    objects: Option<Vec<String>>,
    #[serde(rename = "where")]
    conditions: Option<Vec<RawPredicate>>,
    seed: Option<u64>,
    method: ProjectionMethod,
    pad: Option<f64>,
}

fn union_box(a: Option<BBox>, b: Option<BBox>) -> Option<BBox> {
    match (a, b) {
        (Some(a), Some(b)) => {
            let x = a.x.min(b.x);
            let y = a.y.min(b.y);
            Some(BBox::new(x, y, a.right().max(b.right()) - x, a.bottom().max(b.bottom()) - y))
        }
        (a, b) => a.or(b),
    }
}

fn overlay(r: &EvaluationRecord, ds: &LoadedDataset) -> Value {
    let h = ds.store.hierarchy();
    let mut o = serde_json::Map::new();
    if r.gt_id.is_some() {
        o.insert(
            "gt".into(),
            json!({"id": r.gt_id, "bbox": r.gt_box, "class": r.gt_class, "name": h.name(r.gt_class)}),
        );
    }
    if r.pred_id.is_some() {
        o.insert(
            "pred".into(),
            json!({"id": r.pred_id, "bbox": r.pred_box, "class": r.pred_class,
                   "name": h.name(r.pred_class), "confidence": r.confidence}),
        );
    }
    Value::Object(o)
}

async fn grid(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let ds = state.get(&id)?;
    let req: GridRequest = parse_body(&body)?;
    let conds = resolve_all(req.conditions.as_deref().unwrap_or(&[]), ds.store.hierarchy())?;
    let wanted: Option<HashSet<&str>> = req.objects.as_ref().map(|o| o.iter().map(String::as_str).collect());
    let selected: Vec<EvaluationRecord> = ds
        .store
        .records()
        .iter()
        .filter(|r| conds.iter().all(|p| p.matches(r, ds.store.hierarchy())))
        .filter(|r| wanted.as_ref().is_none_or(|w| w.contains(r.object_key().as_str())))
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(ServiceError::BadRequest("selection is empty".to_string()));
    }
    let cap = state.config.max_grid_objects;
    if selected.len() > cap {
        return Err(ServiceError::BadRequest(format!(
            "selection has {} objects, the limit is {cap}",
            selected.len()
        )));
    }
    let seed = req.seed.unwrap_or(state.config.default_seed);
    let pad = req.pad.unwrap_or(state.config.crop_pad);
    let ds2 = ds.clone();
    let selected = Arc::new(selected);
    let sel = selected.clone();
    let assignment = tokio::task::spawn_blocking(move || {
        let refs: Vec<&EvaluationRecord> = sel.iter().collect();
        let features = selection_features(&refs, &ds2.meta.images, ds2.meta.features.as_ref());
        let keys: Vec<String> = sel.iter().map(EvaluationRecord::object_key).collect();
        layout(&features, &keys, seed, req.method.projector().as_ref())
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;

    let placements: Vec<Value> = assignment
        .placements
        .iter()
        .zip(selected.iter())
        .map(|(p, r)| {
            let image = ds.meta.images.iter().find(|i| i.id == r.image_id);
            let region = union_box(r.gt_box, r.pred_box).or_else(|| {
                image.filter(|i| i.width > 0 && i.height > 0)
                    .map(|i| BBox::new(0.0, 0.0, f64::from(i.width), f64::from(i.height)))
            });
            let crop_url = region.map(|b| {
                format!(
                    "/api/images/{}/crop?x={}&y={}&w={}&h={}&pad={}&dataset={}",
                    r.image_id, b.x, b.y, b.w, b.h, pad, ds.id
                )
            });
            json!({
                "objectKey": p.object_key,
                "row": p.row,
                "col": p.col,
                "imageId": r.image_id,
                "cropUrl": crop_url,
                "overlay": overlay(r, &ds),
            })
        })
        .collect();
    Ok(Json(json!({
        "gridRows": assignment.grid_rows,
        "gridCols": assignment.grid_cols,
        "cost": assignment.cost,
        "seed": seed,
        "placements": placements,
    })))
}

#[derive(Debug, Deserialize)]
struct CropParams {
    x: Option<f64>,
    y: Option<f64>,
    w: Option<f64>,
    h: Option<f64>,
    pad: Option<f64>,
    dataset: Option<String>,
}

fn image_path(state: &AppState, image_id: i64, dataset: Option<&str>) -> ApiResult<PathBuf> {
    let candidates = match dataset {
        Some(id) => vec![state.get(id)?],
        None => state.all(),
    };
    let file = candidates
        .iter()
        .find_map(|ds| ds.meta.images.iter().find(|i| i.id == image_id))
        .map(|i| i.file_name.clone())
        .filter(|f| !f.is_empty())
        .ok_or_else(|| ServiceError::NotFound(format!("unknown image {image_id}")))?;
    Ok(match &state.config.image_root {
        Some(root) => root.join(file),
        None => PathBuf::from(file),
    })
}

async fn crop_image(
    State(state): State<Arc<AppState>>,
    Path(image_id): Path<i64>,
    Query(params): Query<CropParams>,
) -> ApiResult<Response> {
    let path = image_path(&state, image_id, params.dataset.as_deref())?;
    let pad = params.pad.unwrap_or(state.config.crop_pad);
    let crop = tokio::task::spawn_blocking(move || {
        let (x, y) = (params.x.unwrap_or(0.0), params.y.unwrap_or(0.0));
        match (params.w, params.h) {
            (Some(w), Some(h)) => crop::crop_file(&path, x, y, w, h, pad),
            // whole image
            _ => crop::crop_file(&path, 0.0, 0.0, f64::from(u32::MAX), f64::from(u32::MAX), 0.0),
        }
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, crop.content_type)], crop.bytes).into_response())
}
