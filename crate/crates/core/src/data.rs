//! Dataset model and COCO-format ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{BBox, Rle};

/// Class identifier. The background class is an ordinary id reserved by the
/// hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub i64);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[serde(rename = "cls")]
    Classification,
    #[serde(rename = "det")]
    Detection,
    #[serde(rename = "seg")]
    Segmentation,
}

impl Task {
    pub fn has_geometry(self) -> bool {
        self != Task::Classification
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Task::Classification),
            "det" => Ok(Task::Detection),
            "seg" => Ok(Task::Segmentation),
            other => Err(Error::validation(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassNode {
    pub id: ClassId,
    pub name: String,
    pub parent: Option<ClassId>,
}

/// Forest of classes plus the reserved background id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHierarchy {
    nodes: Vec<ClassNode>,
    background: ClassId,
    #[serde(skip)]
    index: HashMap<ClassId, usize>,
}

impl ClassHierarchy {
    pub fn new(nodes: Vec<ClassNode>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::validation(format!("duplicate class id {}", n.id)));
            }
        }
        for n in &nodes {
            if let Some(p) = n.parent {
                if !index.contains_key(&p) {
                    return Err(Error::Reference {
                        kind: "parent class",
                        id: p.0,
                    });
                }
            }
        }
        // walk up from every node; a path longer than the node count is a cycle
        for n in &nodes {
            let mut cur = n.parent;
            let mut steps = 0;
            while let Some(p) = cur {
                steps += 1;
                if steps > nodes.len() {
                    return Err(Error::validation(format!(
                        "class hierarchy has a cycle through {}",
                        n.id
                    )));
                }
                cur = nodes[index[&p]].parent;
            }
        }
        let background = if index.contains_key(&ClassId(0)) {
            ClassId(nodes.iter().map(|n| n.id.0).min().unwrap_or(0) - 1)
        } else {
            ClassId(0)
        };
        Ok(ClassHierarchy {
            nodes,
            background,
            index,
        })
    }

    /// Flat hierarchy from bare ids, names are the ids.
    pub fn flat(ids: impl IntoIterator<Item = ClassId>) -> Self {
        let ids: BTreeSet<ClassId> = ids.into_iter().collect();
        let nodes = ids
            .into_iter()
            .map(|id| ClassNode {
                id,
                name: id.to_string(),
                parent: None,
            })
            .collect();
        ClassHierarchy::new(nodes).expect("flat hierarchy is always valid")
    }

    pub(crate) fn reindex(&mut self) {
        self.index = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, i))
            .collect();
    }

    pub fn background(&self) -> ClassId {
        self.background
    }

    pub fn nodes(&self) -> &[ClassNode] {
        &self.nodes
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn node(&self, id: ClassId) -> Option<&ClassNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn name(&self, id: ClassId) -> String {
        if id == self.background {
            return "background".to_string();
        }
        self.node(id)
            .map(|n| n.name.clone())
            .unwrap_or_else(|| id.to_string())
    }

    /// Resolves a class by exact name (or "background").
    pub fn by_name(&self, name: &str) -> Option<ClassId> {
        if name == "background" {
            return Some(self.background);
        }
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn roots(&self) -> Vec<ClassId> {
        self.nodes
            .iter()
            .filter(|n| n.parent.is_none())
            .map(|n| n.id)
            .collect()
    }

    pub fn children(&self, id: ClassId) -> Vec<ClassId> {
        self.nodes
            .iter()
            .filter(|n| n.parent == Some(id))
            .map(|n| n.id)
            .collect()
    }

    pub fn is_leaf(&self, id: ClassId) -> bool {
        !self.nodes.iter().any(|n| n.parent == Some(id))
    }

    pub fn leaves(&self) -> Vec<ClassId> {
        let parents: BTreeSet<ClassId> = self.nodes.iter().filter_map(|n| n.parent).collect();
        self.nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| !parents.contains(id))
            .collect()
    }

    /// Leaf classes at or below `id`.
    pub fn leaf_descendants(&self, id: ClassId) -> Vec<ClassId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(c) = stack.pop() {
            let kids = self.children(c);
            if kids.is_empty() {
                out.push(c);
            } else {
                stack.extend(kids.into_iter().rev());
            }
        }
        out
    }

    pub fn is_descendant(&self, id: ClassId, ancestor: ClassId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.node(c).and_then(|n| n.parent);
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: i64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

/// Derived per-object geometry attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectAttributes {
    pub size: f64,
    pub aspect_ratio: f64,
    pub center_x: f64,
    pub center_y: f64,
}

/// Size is the mask pixel count when a mask is given, otherwise the box area.
pub fn compute_attributes(bbox: &BBox, mask: Option<&Rle>) -> Result<ObjectAttributes> {
    bbox.validate()?;
    let size = match mask {
        Some(m) => m.area() as f64,
        None => bbox.area(),
    };
    if size <= 0.0 {
        return Err(Error::validation("object has zero area"));
    }
    let (cx, cy) = bbox.center();
    Ok(ObjectAttributes {
        size,
        aspect_ratio: bbox.w.min(bbox.h) / bbox.w.max(bbox.h),
        center_x: cx,
        center_y: cy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: i64,
    pub image_id: i64,
    pub class: ClassId,
    pub bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Rle>,
    pub is_crowd: bool,
    pub attributes: Option<ObjectAttributes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedObject {
    pub id: i64,
    pub image_id: i64,
    pub class: ClassId,
    pub bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Rle>,
    pub confidence: f64,
    pub attributes: Option<ObjectAttributes>,
}

/// Optional per-object feature vectors keyed `pred:<id>` / `gt:<id>`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureTable {
    vectors: BTreeMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut dims = vectors.values().map(Vec::len);
        if let Some(first) = dims.next() {
            if dims.any(|d| d != first) {
                return Err(Error::validation("feature vectors differ in dimension"));
            }
        }
        Ok(FeatureTable { vectors })
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let map: BTreeMap<String, Vec<f64>> =
            serde_json::from_slice(bytes).map_err(|e| Error::from_json(e, bytes))?;
        FeatureTable::new(map)
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn dimension(&self) -> Option<usize> {
        self.vectors.values().next().map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// A validated, immutable evaluation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: Task,
    pub hierarchy: ClassHierarchy,
    pub images: Vec<ImageRecord>,
    pub ground_truth: Vec<GroundTruthObject>,
    pub predictions: Vec<PredictedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureTable>,
}

impl Dataset {
    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.images.len(),
            self.ground_truth.len(),
            self.predictions.len(),
        )
    }

    pub fn empty(task: Task) -> Self {
        Dataset {
            task,
            hierarchy: ClassHierarchy::flat([]),
            images: Vec::new(),
            ground_truth: Vec::new(),
            predictions: Vec::new(),
            features: None,
        }
    }

    pub fn image(&self, id: i64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Serialized form used for the cached dataset file.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("dataset serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut ds: Dataset =
            serde_json::from_slice(bytes).map_err(|e| Error::from_json(e, bytes))?;
        ds.hierarchy.reindex();
        Ok(ds)
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Forces a task; `None` infers it from the files.
    pub task: Option<Task>,
    pub features: Option<std::path::PathBuf>,
}

#[derive(Deserialize)]
struct CocoGroundTruth {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: i64,
    #[serde(default)]
    width: u32,
    #[serde(default)]
    height: u32,
    #[serde(default)]
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: i64,
    image_id: i64,
    category_id: i64,
    #[serde(default)]
    bbox: Option<Vec<f64>>,
    #[serde(default)]
    segmentation: Option<Value>,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: i64,
    name: String,
    #[serde(default)]
    supercategory: Option<String>,
    #[serde(default)]
    parent_id: Option<i64>,
}

#[derive(Deserialize)]
struct CocoResult {
    #[serde(default)]
    id: Option<i64>,
    image_id: i64,
    category_id: i64,
    #[serde(default)]
    bbox: Option<Vec<f64>>,
    #[serde(default)]
    segmentation: Option<Value>,
    score: f64,
}

pub fn ingest_dataset(
    ground_truth_file: &Path,
    predictions_file: &Path,
    options: &IngestOptions,
) -> Result<Dataset> {
    let gt = std::fs::read(ground_truth_file)?;
    let pred = std::fs::read(predictions_file)?;
    let features = match &options.features {
        Some(p) => Some(FeatureTable::from_json(&std::fs::read(p)?)?),
        None => None,
    };
    let mut ds = ingest_bytes(&gt, &pred, options.task)?;
    ds.features = features;
    Ok(ds)
}

/// Parses and validates COCO ground truth plus COCO results.
pub fn ingest_bytes(gt_bytes: &[u8], pred_bytes: &[u8], task: Option<Task>) -> Result<Dataset> {
    let gt: CocoGroundTruth =
        serde_json::from_slice(gt_bytes).map_err(|e| Error::from_json(e, gt_bytes))?;
    let preds: Vec<CocoResult> =
        serde_json::from_slice(pred_bytes).map_err(|e| Error::from_json(e, pred_bytes))?;

    let hierarchy = build_hierarchy(&gt.categories)?;

    let gt_has_boxes = gt.annotations.iter().any(|a| a.bbox.is_some());
    let pred_has_boxes = preds.iter().any(|p| p.bbox.is_some());
    let pred_has_masks = preds.iter().any(|p| p.segmentation.is_some());
    let inferred = if !gt_has_boxes && !pred_has_boxes {
        Task::Classification
    } else if pred_has_masks {
        Task::Segmentation
    } else {
        Task::Detection
    };
    let no_objects = gt.annotations.is_empty() && preds.is_empty();
    let task = match task {
        None => inferred,
        Some(t) if no_objects => t,
        Some(Task::Classification) if inferred != Task::Classification => {
            return Err(Error::validation(
                "task 'cls' requested but the files contain bounding boxes",
            ))
        }
        Some(t @ (Task::Detection | Task::Segmentation)) if inferred == Task::Classification => {
            return Err(Error::validation(format!(
                "task '{}' requested but the files contain no bounding boxes",
                task_flag(t)
            )))
        }
        Some(Task::Segmentation) if !pred_has_masks && !preds.is_empty() => {
            return Err(Error::validation(
                "task 'seg' requested but predictions carry no segmentation",
            ))
        }
        Some(t) => t,
    };

    let mut images = Vec::with_capacity(gt.images.len());
    let mut image_dims = HashMap::new();
    for img in gt.images {
        if task.has_geometry() && (img.width == 0 || img.height == 0) {
            return Err(Error::validation(format!(
                "image {} must have positive width and height",
                img.id
            )));
        }
        if image_dims.insert(img.id, (img.width, img.height)).is_some() {
            return Err(Error::validation(format!("duplicate image id {}", img.id)));
        }
        images.push(ImageRecord {
            id: img.id,
            width: img.width,
            height: img.height,
            file_name: img.file_name,
        });
    }

    let use_masks = task == Task::Segmentation;
    let mut seen_gt = BTreeSet::new();
    let mut ground_truth = Vec::with_capacity(gt.annotations.len());
    for ann in gt.annotations {
        if !seen_gt.insert(ann.id) {
            return Err(Error::validation(format!("duplicate annotation id {}", ann.id)));
        }
        let dims = *image_dims.get(&ann.image_id).ok_or(Error::Reference {
            kind: "image",
            id: ann.image_id,
        })?;
        let class = ClassId(ann.category_id);
        if !hierarchy.contains(class) {
            return Err(Error::Reference {
                kind: "category",
                id: ann.category_id,
            });
        }
        let (bbox, mask, attributes) =
            object_geometry(task, ann.bbox.as_deref(), ann.segmentation.as_ref(), dims, use_masks)?;
        ground_truth.push(GroundTruthObject {
            id: ann.id,
            image_id: ann.image_id,
            class,
            bbox,
            mask,
            is_crowd: ann.iscrowd != 0,
            attributes,
        });
    }

    let mut predictions = Vec::with_capacity(preds.len());
    let mut seen_pred = BTreeSet::new();
    for (i, p) in preds.into_iter().enumerate() {
        let id = p.id.unwrap_or(i as i64 + 1);
        if !seen_pred.insert(id) {
            return Err(Error::validation(format!("duplicate prediction id {id}")));
        }
        let dims = *image_dims.get(&p.image_id).ok_or(Error::Reference {
            kind: "image",
            id: p.image_id,
        })?;
        let class = ClassId(p.category_id);
        if !hierarchy.contains(class) {
            return Err(Error::Reference {
                kind: "category",
                id: p.category_id,
            });
        }
        if !(0.0..=1.0).contains(&p.score) {
            return Err(Error::validation(format!(
                "prediction {id} has score {} outside [0, 1]",
                p.score
            )));
        }
        let (bbox, mask, attributes) =
            object_geometry(task, p.bbox.as_deref(), p.segmentation.as_ref(), dims, use_masks)?;
        predictions.push(PredictedObject {
            id,
            image_id: p.image_id,
            class,
            bbox,
            mask,
            confidence: p.score,
            attributes,
        });
    }

    Ok(Dataset {
        task,
        hierarchy,
        images,
        ground_truth,
        predictions,
        features: None,
    })
}

pub fn task_flag(t: Task) -> &'static str {
    match t {
        Task::Classification => "cls",
        Task::Detection => "det",
        Task::Segmentation => "seg",
    }
}

type ObjectGeometry = (Option<BBox>, Option<Rle>, Option<ObjectAttributes>);

fn object_geometry(
    task: Task,
    bbox: Option<&[f64]>,
    segmentation: Option<&Value>,
    (width, height): (u32, u32),
    use_masks: bool,
) -> Result<ObjectGeometry> {
    if !task.has_geometry() {
        return Ok((None, None, None));
    }
    let mask = match (use_masks, segmentation) {
        (true, Some(seg)) => Some(parse_segmentation(seg, height, width)?),
        _ => None,
    };
    let bbox = match (bbox, &mask) {
        (Some(b), _) => BBox::from_slice(b)?,
        (None, Some(m)) => m
            .bbox()
            .ok_or_else(|| Error::validation("empty mask without bbox"))?,
        (None, None) => return Err(Error::validation("object is missing its bbox")),
    };
    let attrs = compute_attributes(&bbox, mask.as_ref())?;
    Ok((Some(bbox), mask, Some(attrs)))
}

fn parse_segmentation(seg: &Value, height: u32, width: u32) -> Result<Rle> {
    match seg {
        Value::Array(polys) => {
            let polys = polys
                .iter()
                .map(|p| {
                    serde_json::from_value::<Vec<f64>>(p.clone())
                        .map_err(|_| Error::validation("polygon must be a list of numbers"))
                })
                .collect::<Result<Vec<_>>>()?;
            Rle::from_polygons(&polys, height, width)
        }
        Value::Object(obj) => {
            let size: Vec<u32> = obj
                .get("size")
                .and_then(|s| serde_json::from_value(s.clone()).ok())
                .ok_or_else(|| Error::validation("rle needs a size"))?;
            if size != [height, width] {
                return Err(Error::validation(format!(
                    "mask size {size:?} differs from image size [{height}, {width}]"
                )));
            }
            match obj.get("counts") {
                Some(Value::String(s)) => Rle::from_coco_string(height, width, s),
                Some(c @ Value::Array(_)) => {
                    let counts: Vec<u32> = serde_json::from_value(c.clone())
                        .map_err(|_| Error::validation("rle counts must be integers"))?;
                    Rle::new(height, width, counts)
                }
                _ => Err(Error::validation("rle needs counts")),
            }
        }
        _ => Err(Error::validation("unsupported segmentation format")),
    }
}

fn build_hierarchy(categories: &[CocoCategory]) -> Result<ClassHierarchy> {
    let mut nodes: Vec<ClassNode> = Vec::new();
    let explicit = categories.iter().any(|c| c.parent_id.is_some());
    if explicit {
        for c in categories {
            nodes.push(ClassNode {
                id: ClassId(c.id),
                name: c.name.clone(),
                parent: c.parent_id.map(ClassId),
            });
        }
        return ClassHierarchy::new(nodes);
    }
    // supercategory names become synthetic parent nodes after the largest id
    let mut next_id = categories.iter().map(|c| c.id).max().unwrap_or(0) + 1;
    let mut supers: Vec<(String, ClassId)> = Vec::new();
    for c in categories {
        let parent = match &c.supercategory {
            Some(s) if !s.is_empty() && s != &c.name => {
                let id = match supers.iter().find(|(n, _)| n == s) {
                    Some((_, id)) => *id,
                    None => {
                        let id = ClassId(next_id);
                        next_id += 1;
                        supers.push((s.clone(), id));
                        id
                    }
                };
                Some(id)
            }
            _ => None,
        };
        nodes.push(ClassNode {
            id: ClassId(c.id),
            name: c.name.clone(),
            parent,
        });
    }
    for (name, id) in supers {
        nodes.push(ClassNode {
            id,
            name: format!("{name} (group)"),
            parent: None,
        });
    }
    ClassHierarchy::new(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const GT: &str = r#"{
        "images": [
            {"id": 1, "width": 100, "height": 80, "file_name": "a.png"},
            {"id": 2, "width": 60, "height": 60, "file_name": "b.png"}
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [10, 10, 20, 20], "iscrowd": 0},
            {"id": 2, "image_id": 1, "category_id": 2, "bbox": [50, 20, 30, 10], "iscrowd": 0},
            {"id": 3, "image_id": 2, "category_id": 1, "bbox": [5, 5, 10, 40], "iscrowd": 0}
        ],
        "categories": [
            {"id": 1, "name": "cat", "supercategory": "animal"},
            {"id": 2, "name": "car", "supercategory": "vehicle"}
        ]
    }"#;

    const PRED: &str = r#"[
        {"image_id": 1, "category_id": 1, "bbox": [11, 10, 20, 20], "score": 0.9},
        {"image_id": 2, "category_id": 2, "bbox": [40, 40, 10, 10], "score": 0.4}
    ]"#;

    #[test]
    fn ingests_fixture_counts() {
        let ds = ingest_bytes(GT.as_bytes(), PRED.as_bytes(), None).unwrap();
        // counting oracle: 2 image entries, 3 annotations, 2 results
        let v: Value = serde_json::from_str(GT).unwrap();
        let p: Value = serde_json::from_str(PRED).unwrap();
        let expected = (
            v["images"].as_array().unwrap().len(),
            v["annotations"].as_array().unwrap().len(),
            p.as_array().unwrap().len(),
        );
        assert_eq!(ds.counts(), expected);
        assert_eq!(ds.counts(), (2, 3, 2));
        assert_eq!(ds.task, Task::Detection);
        assert!(ds.ground_truth.iter().all(|g| g.attributes.is_some()));
    }

    #[test]
    fn ingest_is_idempotent() {
        let a = ingest_bytes(GT.as_bytes(), PRED.as_bytes(), None).unwrap();
        let b = ingest_bytes(GT.as_bytes(), PRED.as_bytes(), None).unwrap();
        assert_eq!(a, b);
        let back = Dataset::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn empty_predictions_are_fine() {
        let ds = ingest_bytes(GT.as_bytes(), b"[]", None).unwrap();
        assert_eq!(ds.counts(), (2, 3, 0));
    }

    #[test]
    fn unknown_category_is_a_reference_error() {
        let pred = r#"[{"image_id": 1, "category_id": 999, "bbox": [0, 0, 5, 5], "score": 0.5}]"#;
        match ingest_bytes(GT.as_bytes(), pred.as_bytes(), None) {
            Err(Error::Reference { id, .. }) => assert_eq!(id, 999),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_box_is_a_validation_error() {
        let pred = r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, -5, 5], "score": 0.5}]"#;
        assert!(matches!(
            ingest_bytes(GT.as_bytes(), pred.as_bytes(), None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_json_reports_offset() {
        let bad = b"[{\"image_id\": 1,, }]";
        match ingest_bytes(GT.as_bytes(), bad, None) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn task_flag_must_match_schema() {
        assert!(matches!(
            ingest_bytes(GT.as_bytes(), PRED.as_bytes(), Some(Task::Classification)),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            ingest_bytes(GT.as_bytes(), PRED.as_bytes(), Some(Task::Segmentation)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn classification_schema_has_no_geometry() {
        let gt = r#"{"images": [{"id": 1}, {"id": 2}],
            "annotations": [{"id": 1, "image_id": 1, "category_id": 1},
                            {"id": 2, "image_id": 2, "category_id": 2}],
            "categories": [{"id": 1, "name": "cat"}, {"id": 2, "name": "dog"}]}"#;
        let pred = r#"[{"image_id": 1, "category_id": 1, "score": 0.8},
                       {"image_id": 2, "category_id": 1, "score": 0.6}]"#;
        let ds = ingest_bytes(gt.as_bytes(), pred.as_bytes(), None).unwrap();
        assert_eq!(ds.task, Task::Classification);
        assert!(ds.predictions.iter().all(|p| p.bbox.is_none() && p.attributes.is_none()));
    }

    #[test]
    fn supercategories_become_parents() {
        let ds = ingest_bytes(GT.as_bytes(), PRED.as_bytes(), None).unwrap();
        let h = &ds.hierarchy;
        assert_eq!(h.roots().len(), 2);
        let animal = h.node(ClassId(1)).unwrap().parent.unwrap();
        assert_eq!(h.leaf_descendants(animal), vec![ClassId(1)]);
        assert!(!h.contains(h.background()));
        assert_eq!(h.background(), ClassId(0));
    }

    #[test]
    fn cyclic_hierarchy_is_rejected() {
        let nodes = vec![
            ClassNode { id: ClassId(1), name: "a".into(), parent: Some(ClassId(2)) },
            ClassNode { id: ClassId(2), name: "b".into(), parent: Some(ClassId(1)) },
        ];
        assert!(ClassHierarchy::new(nodes).is_err());
    }

    #[test]
    fn attribute_examples() {
        let a = compute_attributes(&BBox::new(0.0, 0.0, 10.0, 10.0), None).unwrap();
        assert_eq!((a.size, a.aspect_ratio, a.center_x, a.center_y), (100.0, 1.0, 5.0, 5.0));
        let a = compute_attributes(&BBox::new(0.0, 0.0, 20.0, 5.0), None).unwrap();
        assert_eq!(a.aspect_ratio, 0.25);
        // 10 set pixels in a 4x4 mask: count them directly from the dense form
        let dense: Vec<bool> = (0..16).map(|i| i < 10).collect();
        let expected = dense.iter().filter(|&&b| b).count() as f64;
        let mask = Rle::from_dense(&dense, 4, 4).unwrap();
        let a = compute_attributes(&BBox::new(0.0, 0.0, 4.0, 4.0), Some(&mask)).unwrap();
        assert_eq!(a.size, expected);
        assert_eq!(a.size, 10.0);
        assert!(compute_attributes(&BBox::new(0.0, 0.0, 0.0, 4.0), None).is_err());
    }

    #[test]
    fn segmentation_masks_set_size() {
        let gt = r#"{"images": [{"id": 1, "width": 10, "height": 10, "file_name": "x.png"}],
            "annotations": [{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4],
                             "segmentation": {"size": [10, 10], "counts": [0, 3, 97]}}],
            "categories": [{"id": 1, "name": "cat"}]}"#;
        let pred = r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4], "score": 0.5,
                        "segmentation": [[0, 0, 2, 0, 2, 2, 0, 2]]}]"#;
        let ds = ingest_bytes(gt.as_bytes(), pred.as_bytes(), None).unwrap();
        assert_eq!(ds.task, Task::Segmentation);
        assert_eq!(ds.ground_truth[0].attributes.unwrap().size, 3.0);
        assert_eq!(ds.predictions[0].attributes.unwrap().size, 4.0);
    }
}
