//! Evaluation records and the cached match file.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ClassHierarchy, ClassId, Dataset, FeatureTable, GroundTruthObject, ImageRecord, PredictedObject, Task};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::matcher::MatchingConfig;

/// One matched pair, unmatched prediction (ground-truth side is background)
/// or unmatched ground truth (prediction side is background).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationRecord {
    pub image_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_id: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_id: Option<i64>,
    pub gt_class: ClassId,
    pub pred_class: ClassId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_aspect: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_aspect: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_ratio: Option<f64>,
    /// Center displacement in units of the ground-truth width/height;
    /// positive y points down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_box: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_box: Option<BBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Pair,
    FalsePositive,
    Missed,
}

impl EvaluationRecord {
    fn blank(image_id: i64, gt_class: ClassId, pred_class: ClassId) -> Self {
        EvaluationRecord {
            image_id,
            gt_id: None,
            pred_id: None,
            gt_class,
            pred_class,
            confidence: None,
            gt_size: None,
            pred_size: None,
            gt_aspect: None,
            pred_aspect: None,
            size_ratio: None,
            shift: None,
            iou: None,
            gt_box: None,
            pred_box: None,
        }
    }

    fn fill_gt(&mut self, g: &GroundTruthObject) {
        self.gt_id = Some(g.id);
        if let Some(a) = g.attributes {
            self.gt_size = Some(a.size);
            self.gt_aspect = Some(a.aspect_ratio);
        }
        self.gt_box = g.bbox;
    }

    fn fill_pred(&mut self, p: &PredictedObject) {
        self.pred_id = Some(p.id);
        self.confidence = Some(p.confidence);
        if let Some(a) = p.attributes {
            self.pred_size = Some(a.size);
            self.pred_aspect = Some(a.aspect_ratio);
        }
        self.pred_box = p.bbox;
    }

    pub fn pair(g: &GroundTruthObject, p: &PredictedObject, iou: Option<f64>) -> Self {
        let mut r = EvaluationRecord::blank(g.image_id, g.class, p.class);
        r.fill_gt(g);
        r.fill_pred(p);
        r.iou = iou;
        if let (Some(ga), Some(pa), Some(gb)) = (g.attributes, p.attributes, g.bbox) {
            r.size_ratio = Some(pa.size / ga.size);
            r.shift = Some([
                (pa.center_x - ga.center_x) / gb.w,
                (pa.center_y - ga.center_y) / gb.h,
            ]);
        }
        r
    }

    pub fn false_positive(p: &PredictedObject, background: ClassId) -> Self {
        let mut r = EvaluationRecord::blank(p.image_id, background, p.class);
        r.fill_pred(p);
        r
    }

    pub fn missed(g: &GroundTruthObject, background: ClassId) -> Self {
        let mut r = EvaluationRecord::blank(g.image_id, g.class, background);
        r.fill_gt(g);
        r
    }

    pub fn kind(&self) -> RecordKind {
        match (self.gt_id.is_some(), self.pred_id.is_some()) {
            (true, true) => RecordKind::Pair,
            (false, _) => RecordKind::FalsePositive,
            (true, false) => RecordKind::Missed,
        }
    }

    /// Pair with geometry on both sides (detection or segmentation).
    pub fn has_pair_geometry(&self) -> bool {
        self.size_ratio.is_some() && self.shift.is_some()
    }

    /// Feature-table key of the object this record stands for.
    pub fn object_key(&self) -> String {
        match (self.pred_id, self.gt_id) {
            (Some(p), _) => format!("pred:{p}"),
            (None, Some(g)) => format!("gt:{g}"),
            (None, None) => format!("image:{}", self.image_id),
        }
    }
}

/// Everything the downstream commands need besides the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordsMeta {
    pub task: Task,
    pub hierarchy: ClassHierarchy,
    pub images: Vec<ImageRecord>,
    pub matching: MatchingConfig,
    pub ground_truth_count: usize,
    pub prediction_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureTable>,
}

impl RecordsMeta {
    pub fn from_dataset(ds: &Dataset, matching: MatchingConfig) -> Self {
        RecordsMeta {
            task: ds.task,
            hierarchy: ds.hierarchy.clone(),
            images: ds.images.clone(),
            matching,
            ground_truth_count: ds.ground_truth.len(),
            prediction_count: ds.predictions.len(),
            features: ds.features.clone(),
        }
    }

    /// Fallback when no sidecar exists: flat hierarchy over the classes
    /// seen, images known only by id.
    pub fn infer(records: &[EvaluationRecord]) -> Self {
        let mut classes: Vec<ClassId> = Vec::new();
        let mut images: Vec<i64> = records.iter().map(|r| r.image_id).collect();
        images.sort_unstable();
        images.dedup();
        for r in records {
            if r.gt_id.is_some() {
                classes.push(r.gt_class);
            }
            if r.pred_id.is_some() {
                classes.push(r.pred_class);
            }
        }
        let hierarchy = ClassHierarchy::flat(classes);
        let task = if records.iter().any(|r| r.gt_box.is_some() || r.pred_box.is_some()) {
            Task::Detection
        } else {
            Task::Classification
        };
        let mut gt_ids: Vec<i64> = records.iter().filter_map(|r| r.gt_id).collect();
        gt_ids.sort_unstable();
        gt_ids.dedup();
        RecordsMeta {
            task,
            hierarchy,
            images: images
                .into_iter()
                .map(|id| ImageRecord {
                    id,
                    width: 0,
                    height: 0,
                    file_name: String::new(),
                })
                .collect(),
            matching: MatchingConfig::default(),
            ground_truth_count: gt_ids.len(),
            prediction_count: records.iter().filter(|r| r.pred_id.is_some()).count(),
            features: None,
        }
    }
}

/// Records plus metadata; the interchange artifact between commands.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub meta: RecordsMeta,
    pub records: Vec<EvaluationRecord>,
}

pub fn meta_path(records_path: &Path) -> PathBuf {
    let mut s = records_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

impl RecordSet {
    pub fn write_ndjson<W: Write>(records: &[EvaluationRecord], mut out: W) -> Result<()> {
        for r in records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Vec<EvaluationRecord>> {
        let mut out = Vec::new();
        let mut offset = 0usize;
        for line in input.lines() {
            let line = line?;
            let len = line.len() + 1;
            if !line.trim().is_empty() {
                let rec = serde_json::from_str(&line).map_err(|e| match Error::from_json(e, line.as_bytes()) {
                    Error::Parse { offset: o, message } => Error::Parse {
                        offset: offset + o,
                        message,
                    },
                    other => other,
                })?;
                out.push(rec);
            }
            offset += len;
        }
        Ok(out)
    }

    /// Writes `path` (records) and `path.meta.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        RecordSet::write_ndjson(&self.records, &mut w)?;
        w.flush()?;
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::from)?;
        std::fs::write(meta_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let records = RecordSet::read_ndjson(std::io::BufReader::new(file))?;
        let mp = meta_path(path);
        let meta = if mp.exists() {
            let bytes = std::fs::read(&mp)?;
            let mut meta: RecordsMeta =
                serde_json::from_slice(&bytes).map_err(|e| Error::from_json(e, &bytes))?;
            meta.hierarchy.reindex();
            meta
        } else {
            RecordsMeta::infer(&records)
        };
        Ok(RecordSet { meta, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest_bytes;
    use crate::matcher::match_dataset;

    const GT: &str = r#"{
        "images": [
            {"id": 1, "width": 100, "height": 100, "file_name": "a.png"},
            {"id": 2, "width": 100, "height": 100, "file_name": "b.png"}
        ],
        "annotations": [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [10, 10, 20, 20]},
            {"id": 2, "image_id": 2, "category_id": 1, "bbox": [60, 60, 20, 20]}
        ],
        "categories": [{"id": 1, "name": "cat"}]
    }"#;
    const PRED: &str = r#"[
        {"image_id": 1, "category_id": 1, "bbox": [12, 10, 20, 20], "score": 0.9},
        {"image_id": 2, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.3}
    ]"#;

    #[test]
    fn record_counts_for_two_images() {
        let ds = ingest_bytes(GT.as_bytes(), PRED.as_bytes(), None).unwrap();
        let recs = match_dataset(&ds, &MatchingConfig::default()).unwrap();
        // image 1: one pair; image 2: one background FP and one missed gt
        let kinds: Vec<RecordKind> = recs.iter().map(|r| r.kind()).collect();
        assert_eq!(
            kinds,
            vec![RecordKind::Pair, RecordKind::FalsePositive, RecordKind::Missed]
        );
        let pair = &recs[0];
        assert_eq!(pair.size_ratio, Some(1.0));
        assert_eq!(pair.shift, Some([0.1, 0.0]));
        let fp = &recs[1];
        assert_eq!(fp.gt_class, ds.hierarchy.background());
        assert!(fp.gt_size.is_none() && fp.gt_box.is_none());
    }

    #[test]
    fn empty_dataset_has_no_records() {
        let ds = Dataset::empty(Task::Detection);
        assert!(match_dataset(&ds, &MatchingConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn classification_records_pair_by_sample() {
        let gt = r#"{"images": [{"id": 1}, {"id": 2}, {"id": 3}],
            "annotations": [{"id": 1, "image_id": 1, "category_id": 1},
                            {"id": 2, "image_id": 2, "category_id": 2},
                            {"id": 3, "image_id": 3, "category_id": 2}],
            "categories": [{"id": 1, "name": "cat"}, {"id": 2, "name": "dog"}]}"#;
        let pred = r#"[{"image_id": 1, "category_id": 1, "score": 0.8},
                       {"image_id": 2, "category_id": 1, "score": 0.6},
                       {"image_id": 3, "category_id": 2, "score": 0.7}]"#;
        let ds = ingest_bytes(gt.as_bytes(), pred.as_bytes(), None).unwrap();
        let recs = match_dataset(&ds, &MatchingConfig::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.kind() == RecordKind::Pair && r.iou.is_none()));
        assert_eq!(recs[1].gt_class, ClassId(2));
        assert_eq!(recs[1].pred_class, ClassId(1));
    }

    #[test]
    fn ndjson_roundtrip_and_sidecar() {
        let ds = ingest_bytes(GT.as_bytes(), PRED.as_bytes(), None).unwrap();
        let records = match_dataset(&ds, &MatchingConfig::default()).unwrap();
        let set = RecordSet {
            meta: RecordsMeta::from_dataset(&ds, MatchingConfig::default()),
            records,
        };
        let dir = std::env::temp_dir().join(format!("unieval-rec-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("records.ndjson");
        set.save(&path).unwrap();
        let back = RecordSet::load(&path).unwrap();
        assert_eq!(back, set);
        std::fs::remove_file(meta_path(&path)).unwrap();
        let inferred = RecordSet::load(&path).unwrap();
        assert_eq!(inferred.records, set.records);
        assert_eq!(inferred.meta.ground_truth_count, 2);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
