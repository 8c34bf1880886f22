//! Seeded synthetic detection datasets in COCO format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{ingest_bytes, Dataset, Task};
use crate::error::Result;

const NAMES: [(&str, &str); 9] = [
    ("cat", "animal"),
    ("dog", "animal"),
    ("horse", "animal"),
    ("car", "vehicle"),
    ("bus", "vehicle"),
    ("truck", "vehicle"),
    ("chair", "furniture"),
    ("sofa", "furniture"),
    ("table", "furniture"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthConfig {
    pub images: usize,
    pub classes: usize,
    pub max_objects: usize,
    /// Probability that a ground-truth object gets a prediction.
    pub recall: f64,
    /// Probability that a prediction keeps the right class.
    pub label_accuracy: f64,
    /// Expected spurious predictions per image.
    pub clutter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            images: 50,
            classes: 6,
            max_objects: 6,
            recall: 0.8,
            label_accuracy: 0.85,
            clutter: 0.6,
            seed: 1,
        }
    }
}

fn class_name(i: usize) -> (String, String) {
    match NAMES.get(i) {
        Some((n, s)) => (n.to_string(), s.to_string()),
        None => (format!("class{}", i + 1), format!("group{}", i / 3 + 1)),
    }
}

/// Ground-truth and prediction JSON documents.
pub fn synth_coco(cfg: &SynthConfig) -> (Value, Value) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = cfg.classes.max(1);
    let categories: Vec<Value> = (0..classes)
        .map(|i| {
            let (name, group) = class_name(i);
            json!({"id": i + 1, "name": name, "supercategory": group})
        })
        .collect();
    let (w, h) = (640.0f64, 480.0f64);
    let mut images = Vec::with_capacity(cfg.images);
    let mut annotations = Vec::new();
    let mut results = Vec::new();
    let mut pred_id = 0i64;
    for img in 1..=cfg.images as i64 {
        images.push(json!({"id": img, "width": w as u32, "height": h as u32, "file_name": format!("{img:06}.png")}));
        let k = rng.random_range(0..=cfg.max_objects);
        for _ in 0..k {
            let bw = rng.random_range(8.0..w / 2.0f64).round();
            let bh = (bw * rng.random_range(0.3..1.8f64)).round().clamp(4.0, h - 1.0);
            let x = rng.random_range(0.0..(w - bw)).round();
            let y = rng.random_range(0.0..(h - bh)).round();
            let class = rng.random_range(1..=classes) as i64;
            let id = annotations.len() as i64 + 1;
            annotations.push(json!({"id": id, "image_id": img, "category_id": class,
                "bbox": [x, y, bw, bh], "area": bw * bh, "iscrowd": 0}));
            if rng.random_bool(cfg.recall.clamp(0.0, 1.0)) {
                let jitter = |rng: &mut ChaCha8Rng, v: f64, s: f64| v + rng.random_range(-0.08..0.08) * s;
                let pw = (bw * rng.random_range(0.88..1.14f64)).clamp(2.0, w);
                let ph = (bh * rng.random_range(0.88..1.14f64)).clamp(2.0, h);
                let px = jitter(&mut rng, x, bw).clamp(0.0, w - pw);
                let py = jitter(&mut rng, y, bh).clamp(0.0, h - ph);
                let label = if rng.random_bool(cfg.label_accuracy.clamp(0.0, 1.0)) {
                    class
                } else {
                    rng.random_range(1..=classes) as i64
                };
                pred_id += 1;
                let score: f64 = rng.random_range(0.35..1.0);
                results.push(json!({"id": pred_id, "image_id": img, "category_id": label,
                    "bbox": [px, py, pw, ph], "score": (score * 1000.0).round() / 1000.0}));
            }
        }
        let extra = (cfg.clutter * 2.0 * rng.random::<f64>()).floor() as usize;
        for _ in 0..extra {
            let bw = rng.random_range(8.0..w / 3.0f64).round();
            let bh = rng.random_range(8.0..h / 3.0f64).round();
            pred_id += 1;
            let score: f64 = rng.random_range(0.05..0.7);
            results.push(json!({"id": pred_id, "image_id": img,
                "category_id": rng.random_range(1..=classes) as i64,
                "bbox": [rng.random_range(0.0..(w - bw)).round(), rng.random_range(0.0..(h - bh)).round(), bw, bh],
                "score": (score * 1000.0).round() / 1000.0}));
        }
    }
    let gt = json!({"images": images, "annotations": annotations, "categories": categories});
    (gt, Value::Array(results))
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    let (gt, pred) = synth_coco(cfg);
    ingest_bytes(gt.to_string().as_bytes(), pred.to_string().as_bytes(), Some(Task::Detection))
}
