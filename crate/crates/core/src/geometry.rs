//! Boxes, run-length masks and overlap measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [x, y, w, h] => Ok(BBox::new(*x, *y, *w, *h)),
            _ => Err(Error::validation(format!(
                "bbox must have 4 numbers, got {}",
                v.len()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("bbox contains non-finite values"));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::validation(format!(
                "bbox dimensions must be positive, got {}x{}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Clamps the box to `[0, width) x [0, height)`. Returns `None` when
    /// nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

/// Column-major run-length encoded binary mask, COCO layout: runs alternate
/// starting with background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != height as u64 * width as u64 {
            return Err(Error::validation(format!(
                "rle covers {total} pixels but mask is {height}x{width}"
            )));
        }
        Ok(Rle {
            height,
            width,
            counts,
        })
    }

    /// Decodes the compressed string form used by COCO tooling.
    pub fn from_coco_string(height: u32, width: u32, s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<i64> = Vec::new();
        let mut p = 0;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0;
            loop {
                if p >= bytes.len() {
                    return Err(Error::validation("truncated compressed rle"));
                }
                let c = bytes[p] as i64 - 48;
                x |= (c & 0x1f) << (5 * k);
                let more = c & 0x20 != 0;
                p += 1;
                k += 1;
                if !more {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            if counts.len() > 2 {
                x += counts[counts.len() - 2];
            }
            counts.push(x);
        }
        let counts = counts
            .into_iter()
            .map(|c| u32::try_from(c).map_err(|_| Error::validation("negative rle run")))
            .collect::<Result<Vec<_>>>()?;
        Rle::new(height, width, counts)
    }

    /// Rasterizes a box: a pixel is set when its center lies inside.
    pub fn from_bbox(b: &BBox, height: u32, width: u32) -> Rle {
        let r0 = pixel_start(b.y, height);
        let r1 = pixel_start(b.bottom(), height);
        let c0 = pixel_start(b.x, width);
        let c1 = pixel_start(b.right(), width);
        let mut builder = RunBuilder::default();
        for c in 0..width {
            if c >= c0 && c < c1 && r1 > r0 {
                builder.push(false, r0);
                builder.push(true, r1 - r0);
                builder.push(false, height - r1);
            } else {
                builder.push(false, height);
            }
        }
        builder.finish(height, width)
    }

    /// Rasterizes polygons (flat `[x0, y0, x1, y1, ...]` lists) with the
    /// even-odd rule at pixel centers.
    pub fn from_polygons(polygons: &[Vec<f64>], height: u32, width: u32) -> Result<Rle> {
        let mut edges = Vec::new();
        for poly in polygons {
            if poly.len() < 6 || poly.len() % 2 != 0 {
                return Err(Error::validation("polygon needs at least 3 points"));
            }
            let n = poly.len() / 2;
            for i in 0..n {
                let (x0, y0) = (poly[2 * i], poly[2 * i + 1]);
                let j = (i + 1) % n;
                let (x1, y1) = (poly[2 * j], poly[2 * j + 1]);
                edges.push((x0, y0, x1, y1));
            }
        }
        let mut builder = RunBuilder::default();
        let mut crossings = Vec::new();
        for c in 0..width {
            let cx = c as f64 + 0.5;
            crossings.clear();
            for &(x0, y0, x1, y1) in &edges {
                if (x0 <= cx) != (x1 <= cx) {
                    crossings.push(y0 + (cx - x0) * (y1 - y0) / (x1 - x0));
                }
            }
            crossings.sort_by(f64::total_cmp);
            let mut row = 0u32;
            for pair in crossings.chunks_exact(2) {
                let start = pixel_start(pair[0], height).max(row);
                let end = pixel_start(pair[1], height).max(start);
                builder.push(false, start - row);
                builder.push(true, end - start);
                row = end;
            }
            builder.push(false, height - row);
        }
        Ok(builder.finish(height, width))
    }

    pub fn from_dense(mask: &[bool], height: u32, width: u32) -> Result<Rle> {
        if mask.len() != (height as usize) * (width as usize) {
            return Err(Error::validation("dense mask has wrong length"));
        }
        let mut builder = RunBuilder::default();
        for &v in mask {
            builder.push(v, 1);
        }
        Ok(builder.finish(height, width))
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn intersection_area(&self, other: &Rle) -> Result<u64> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::validation("masks have different dimensions"));
        }
        let mut a = Runs::new(&self.counts);
        let mut b = Runs::new(&other.counts);
        let mut acc = 0u64;
        while let (Some((va, ra)), Some((vb, rb))) = (a.peek(), b.peek()) {
            let step = ra.min(rb);
            if va && vb {
                acc += step as u64;
            }
            a.consume(step);
            b.consume(step);
        }
        Ok(acc)
    }

    /// Tight bounding box of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        let h = self.height as u64;
        let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
        let mut pos = 0u64;
        for (i, &run) in self.counts.iter().enumerate() {
            let run = run as u64;
            if i % 2 == 1 && run > 0 {
                let first = pos;
                let last = pos + run - 1;
                let (c_first, c_last) = (first / h, last / h);
                x0 = x0.min(c_first);
                x1 = x1.max(c_last + 1);
                if c_first == c_last {
                    y0 = y0.min(first % h);
                    y1 = y1.max(last % h + 1);
                } else {
                    y0 = 0;
                    y1 = h;
                }
            }
            pos += run;
        }
        (x1 > 0).then(|| {
            BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64)
        })
    }
}

fn pixel_start(coord: f64, limit: u32) -> u32 {
    // first pixel index whose center is >= coord
    let v = (coord - 0.5).ceil();
    v.clamp(0.0, limit as f64) as u32
}

#[derive(Default)]
struct RunBuilder {
    counts: Vec<u32>,
    current: bool,
}

impl RunBuilder {
    fn push(&mut self, value: bool, len: u32) {
        if len == 0 {
            return;
        }
        if self.counts.is_empty() {
            if value {
                self.counts.push(0);
            }
            self.counts.push(len);
            self.current = value;
        } else if value == self.current {
            *self.counts.last_mut().unwrap() += len;
        } else {
            self.counts.push(len);
            self.current = value;
        }
    }

    fn finish(self, height: u32, width: u32) -> Rle {
        let mut counts = self.counts;
        if counts.is_empty() && height as u64 * width as u64 == 0 {
            counts.push(0);
        }
        Rle {
            height,
            width,
            counts,
        }
    }
}

struct Runs<'a> {
    counts: &'a [u32],
    idx: usize,
    left: u32,
}

impl<'a> Runs<'a> {
    fn new(counts: &'a [u32]) -> Self {
        let mut r = Runs {
            counts,
            idx: 0,
            left: counts.first().copied().unwrap_or(0),
        };
        r.skip_empty();
        r
    }

    fn skip_empty(&mut self) {
        while self.left == 0 && self.idx + 1 < self.counts.len() {
            self.idx += 1;
            self.left = self.counts[self.idx];
        }
        if self.left == 0 {
            self.idx = self.counts.len();
        }
    }

    fn peek(&self) -> Option<(bool, u32)> {
        (self.idx < self.counts.len()).then_some((self.idx % 2 == 1, self.left))
    }

    fn consume(&mut self, n: u32) {
        self.left -= n;
        self.skip_empty();
    }
}

/// Box plus optional mask, the unit compared by [`iou`].
#[derive(Debug, Clone, Copy)]
pub struct Geometry<'a> {
    pub bbox: &'a BBox,
    pub mask: Option<&'a Rle>,
}

impl<'a> Geometry<'a> {
    pub fn boxed(bbox: &'a BBox) -> Self {
        Geometry { bbox, mask: None }
    }
}

/// Intersection over union. With `use_masks` and at least one mask present,
/// overlap is measured on pixels (a mask-less side is rasterized from its
/// box); otherwise box areas are used.
pub fn iou(a: Geometry<'_>, b: Geometry<'_>, use_masks: bool) -> Result<f64> {
    if use_masks && (a.mask.is_some() || b.mask.is_some()) {
        let template = a.mask.or(b.mask).unwrap();
        let (h, w) = (template.height, template.width);
        let ra = a
            .mask
            .cloned()
            .unwrap_or_else(|| Rle::from_bbox(a.bbox, h, w));
        let rb = b
            .mask
            .cloned()
            .unwrap_or_else(|| Rle::from_bbox(b.bbox, h, w));
        let (aa, ab) = (ra.area(), rb.area());
        if aa == 0 || ab == 0 {
            return Err(Error::validation("zero-area mask"));
        }
        let inter = ra.intersection_area(&rb)?;
        return Ok(inter as f64 / (aa + ab - inter) as f64);
    }
    box_iou(a.bbox, b.bbox)
}

pub fn box_iou(a: &BBox, b: &BBox) -> Result<f64> {
    let (aa, ab) = (a.area(), b.area());
    if !(aa > 0.0 && ab > 0.0) {
        return Err(Error::validation("zero-area box"));
    }
    let inter = a.intersection_area(b);
    Ok(inter / (aa + ab - inter))
}
