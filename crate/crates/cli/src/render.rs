//! Placeholder images for synthetic datasets: a flat background with one
//! filled rectangle per ground-truth object.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde_json::Value;

const PALETTE: [[u8; 3]; 9] = [
    [230, 159, 0],
    [86, 180, 233],
    [0, 158, 115],
    [240, 228, 66],
    [0, 114, 178],
    [213, 94, 0],
    [204, 121, 167],
    [120, 120, 120],
    [40, 40, 40],
];

pub fn render_images(gt: &Value, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let empty = Vec::new();
    let annotations = gt["annotations"].as_array().unwrap_or(&empty);
    for img in gt["images"].as_array().unwrap_or(&empty) {
        let id = img["id"].as_i64().unwrap_or(0);
        let w = img["width"].as_u64().unwrap_or(1) as u32;
        let h = img["height"].as_u64().unwrap_or(1) as u32;
        let mut canvas = RgbImage::from_pixel(w, h, Rgb([245, 245, 240]));
        for ann in annotations.iter().filter(|a| a["image_id"].as_i64() == Some(id)) {
            let b: Vec<f64> = ann["bbox"]
                .as_array()
                .map(|v| v.iter().filter_map(Value::as_f64).collect())
                .unwrap_or_default();
            if b.len() != 4 {
                continue;
            }
            let class = ann["category_id"].as_u64().unwrap_or(0) as usize;
            let color = Rgb(PALETTE[class % PALETTE.len()]);
            let (x0, y0) = (b[0].max(0.0) as u32, b[1].max(0.0) as u32);
            let x1 = ((b[0] + b[2]) as u32).min(w);
            let y1 = ((b[1] + b[3]) as u32).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    canvas.put_pixel(x, y, color);
                }
            }
        }
        let name = img["file_name"].as_str().unwrap_or("image.png");
        canvas
            .save(dir.join(name))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    Ok(())
}
