use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, ImageReader};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Box grown by `pad` times its size on every side, clamped to the image.
/// `None` for degenerate boxes or boxes entirely outside the image.
pub fn padded_rect(x: f64, y: f64, w: f64, h: f64, pad: f64, width: u32, height: u32) -> Option<PixelRect> {
    if ![x, y, w, h, pad].iter().all(|v| v.is_finite()) || w <= 0.0 || h <= 0.0 || pad < 0.0 {
        return None;
    }
    let x0 = (x - pad * w).floor().clamp(0.0, f64::from(width));
    let y0 = (y - pad * h).floor().clamp(0.0, f64::from(height));
    let x1 = (x + w + pad * w).ceil().clamp(0.0, f64::from(width));
    let y1 = (y + h + pad * h).ceil().clamp(0.0, f64::from(height));
    (x1 > x0 && y1 > y0).then(|| PixelRect {
        x: x0 as u32,
        y: y0 as u32,
        w: (x1 - x0) as u32,
        h: (y1 - y0) as u32,
    })
}

pub struct Crop {
    pub bytes: Vec<u8>,
    pub content_type: &'static str,
    pub rect: PixelRect,
}

/// Crops the image at `path` and re-encodes it in its own format.
pub fn crop_file(path: &Path, x: f64, y: f64, w: f64, h: f64, pad: f64) -> Result<Crop, ServiceError> {
    if !path.is_file() {
        return Err(ServiceError::NotFound(format!("image file {} not found", path.display())));
    }
    let reader = ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let format = reader
        .format()
        .ok_or_else(|| ServiceError::Internal(format!("unknown image format for {}", path.display())))?;
    let img = reader
        .decode()
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let rect = padded_rect(x, y, w, h, pad, img.width(), img.height())
        .ok_or_else(|| ServiceError::BadRequest("degenerate crop".to_string()))?;
    let cropped = img.crop_imm(rect.x, rect.y, rect.w, rect.h);
    let mut bytes = Vec::new();
    let encodable = match format {
        ImageFormat::Jpeg => image::DynamicImage::ImageRgb8(cropped.to_rgb8()),
        _ => cropped,
    };
    encodable
        .write_to(&mut Cursor::new(&mut bytes), format)
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok(Crop {
        bytes,
        content_type: format.to_mime_type(),
        rect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_and_clamping() {
        let r = padded_rect(10.0, 10.0, 20.0, 20.0, 0.15, 100, 80).unwrap();
        assert_eq!(r, PixelRect { x: 7, y: 7, w: 26, h: 26 });
        let edge = padded_rect(90.0, 70.0, 10.0, 10.0, 0.5, 100, 80).unwrap();
        assert_eq!(edge, PixelRect { x: 85, y: 65, w: 15, h: 15 });
        assert_eq!(padded_rect(0.0, 0.0, 100.0, 80.0, 0.0, 100, 80).unwrap(), PixelRect { x: 0, y: 0, w: 100, h: 80 });
        assert!(padded_rect(0.0, 0.0, 0.0, 10.0, 0.1, 100, 80).is_none());
        assert!(padded_rect(200.0, 0.0, 10.0, 10.0, 0.0, 100, 80).is_none());
    }
}
