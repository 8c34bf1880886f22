//! Class-by-class matrices in confusion, size and direction modes.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{ClassHierarchy, ClassId};
use crate::error::{Error, Result};
use crate::metrics::csv_field;
use crate::ordering::{order_leaves, row_dissimilarity, Linkage};
use crate::prob::{resolve_all, Predicate, RawPredicate};
use crate::record::EvaluationRecord;

pub const DEFAULT_SIZE_TOLERANCE: f64 = 0.1;
pub const DEFAULT_DIRECTION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixMode {
    Confusion,
    Size,
    Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    Row,
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeSector {
    Smaller,
    Precise,
    Larger,
}

impl SizeSector {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Compass bins in image space (y grows downward) plus `Center`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
    #[serde(rename = "center")]
    Center,
}

impl Direction {
    pub const ALL: [Direction; 9] = [
        Direction::N,
        Direction::NE,
        Direction::E,
        Direction::SE,
        Direction::S,
        Direction::SW,
        Direction::W,
        Direction::NW,
        Direction::Center,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::N => "N",
            Direction::NE => "NE",
            Direction::E => "E",
            Direction::SE => "SE",
            Direction::S => "S",
            Direction::SW => "SW",
            Direction::W => "W",
            Direction::NW => "NW",
            Direction::Center => "center",
        }
    }
}

/// `None` for records without pair geometry.
pub fn size_sector(record: &EvaluationRecord, tolerance: f64) -> Option<SizeSector> {
    if !record.has_pair_geometry() {
        return None;
    }
    Some(size_sector_of_ratio(record.size_ratio?, tolerance))
}

pub fn size_sector_of_ratio(ratio: f64, tolerance: f64) -> SizeSector {
    if ratio < 1.0 - tolerance {
        SizeSector::Smaller
    } else if ratio > 1.0 + tolerance {
        SizeSector::Larger
    } else {
        SizeSector::Precise
    }
}

pub fn direction_bin(record: &EvaluationRecord, tolerance: f64) -> Option<Direction> {
    if !record.has_pair_geometry() {
        return None;
    }
    let [dx, dy] = record.shift?;
    Some(direction_of_shift(dx, dy, tolerance))
}

pub fn direction_of_shift(dx: f64, dy: f64, tolerance: f64) -> Direction {
    if dx.hypot(dy) <= tolerance {
        return Direction::Center;
    }
    // counter-clockwise from east with y pointing up
    let angle = (-dy).atan2(dx).to_degrees();
    let sector = ((angle / 45.0).round() as i64).rem_euclid(8);
    [
        Direction::E,
        Direction::NE,
        Direction::N,
        Direction::NW,
        Direction::W,
        Direction::SW,
        Direction::S,
        Direction::SE,
    ][sector as usize]
}

/// Wire form of a matrix request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatrixSpec {
    pub mode: MatrixMode,
    /// Class id or name whose children form the axes; absent for the roots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtree_root: Option<Value>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default, alias = "where")]
    pub conditions: Vec<RawPredicate>,
    /// Use every leaf below the root as an axis entry instead of its
    /// children.
    #[serde(default)]
    pub leaves: bool,
    #[serde(default = "default_true")]
    pub reorder: bool,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction_tolerance: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl MatrixSpec {
    pub fn new(mode: MatrixMode) -> Self {
        MatrixSpec {
            mode,
            subtree_root: None,
            normalization: Normalization::None,
            conditions: Vec::new(),
            leaves: false,
            reorder: true,
            linkage: Linkage::Average,
            size_tolerance: None,
            direction_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AxisEntry {
    pub id: ClassId,
    pub name: String,
    pub leaf: bool,
    pub background: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub r: usize,
    pub c: usize,
    pub count: u64,
    /// Count after normalization (equals `count` without normalization).
    pub value: f64,
    pub empty: bool,
    /// smaller, precise, larger
    pub size: [u64; 3],
    /// N, NE, E, SE, S, SW, W, NW, center
    pub dir: [u64; 9],
}

impl MatrixCell {
    pub fn geometry_pairs(&self) -> u64 {
        self.size.iter().sum()
    }
}

/// Matrix over canonical axes; `order` is the display permutation of row
/// (and column) indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub mode: MatrixMode,
    pub normalization: Normalization,
    pub rows: Vec<AxisEntry>,
    pub cols: Vec<AxisEntry>,
    pub cells: Vec<MatrixCell>,
    pub order: Vec<usize>,
    pub total: u64,
}

impl Matrix {
    pub fn cell(&self, r: usize, c: usize) -> &MatrixCell {
        &self.cells[r * self.cols.len() + c]
    }

    pub fn count(&self, gt: ClassId, pred: ClassId) -> Option<u64> {
        let r = self.rows.iter().position(|a| a.id == gt)?;
        let c = self.cols.iter().position(|a| a.id == pred)?;
        Some(self.cell(r, c).count)
    }

    pub fn row_index(&self, id: ClassId) -> Option<usize> {
        self.rows.iter().position(|a| a.id == id)
    }

    /// Confusion matrix as CSV in display order (normalized values when a
    /// normalization is set).
    pub fn write_confusion_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "gt\\pred")?;
        for &c in &self.order {
            write!(out, ",{}", csv_field(&self.cols[c].name))?;
        }
        writeln!(out)?;
        for &r in &self.order {
            write!(out, "{}", csv_field(&self.rows[r].name))?;
            for &c in &self.order {
                let cell = self.cell(r, c);
                match self.normalization {
                    Normalization::None => write!(out, ",{}", cell.count)?,
                    _ => write!(out, ",{:.6}", cell.value)?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// One line per non-empty cell with its size and direction breakdowns.
    pub fn write_long_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "gt,pred,count,value,smaller,precise,larger")?;
        for d in Direction::ALL {
            write!(out, ",{}", d.name())?;
        }
        writeln!(out)?;
        for &r in &self.order {
            for &c in &self.order {
                let cell = self.cell(r, c);
                if cell.empty {
                    continue;
                }
                write!(
                    out,
                    "{},{},{},{:.6},{},{},{}",
                    csv_field(&self.rows[r].name),
                    csv_field(&self.cols[c].name),
                    cell.count,
                    cell.value,
                    cell.size[0],
                    cell.size[1],
                    cell.size[2]
                )?;
                for v in cell.dir {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

fn resolve_class(v: &Value, h: &ClassHierarchy) -> Result<ClassId> {
    let id = match v {
        Value::Number(n) => n.as_i64().map(ClassId),
        Value::String(s) => h.by_name(s).or_else(|| s.parse().ok().map(ClassId)),
        _ => None,
    };
    match id {
        Some(id) if h.contains(id) => Ok(id),
        _ => Err(Error::query(format!("unknown class {v}"))),
    }
}

/// Builds the matrix for `spec`. `with_background` adds the background row
/// and column (detection and segmentation).
pub fn build_matrix(
    records: &[EvaluationRecord],
    hierarchy: &ClassHierarchy,
    spec: &MatrixSpec,
    with_background: bool,
) -> Result<Matrix> {
    let root = match &spec.subtree_root {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s == "all" => None,
        Some(v) => Some(resolve_class(v, hierarchy)?),
    };
    let mut classes: Vec<ClassId> = match (root, spec.leaves) {
        (None, false) => hierarchy.roots(),
        (None, true) => hierarchy.leaves(),
        (Some(r), true) => hierarchy.leaf_descendants(r),
        (Some(r), false) => {
            let kids = hierarchy.children(r);
            if kids.is_empty() {
                vec![r]
            } else {
                kids
            }
        }
    };
    classes.sort();
    let conditions: Vec<Predicate> = resolve_all(&spec.conditions, hierarchy)?;
    let size_tol = spec.size_tolerance.unwrap_or(DEFAULT_SIZE_TOLERANCE);
    let dir_tol = spec.direction_tolerance.unwrap_or(DEFAULT_DIRECTION_TOLERANCE);

    let mut axis: Vec<AxisEntry> = classes
        .iter()
        .map(|&id| AxisEntry {
            id,
            name: hierarchy.name(id),
            leaf: hierarchy.is_leaf(id),
            background: false,
        })
        .collect();
    let mut slot: HashMap<ClassId, usize> = HashMap::new();
    for (i, &c) in classes.iter().enumerate() {
        for leaf in hierarchy.leaf_descendants(c) {
            slot.insert(leaf, i);
        }
        slot.insert(c, i);
    }
    if with_background {
        let bg = hierarchy.background();
        slot.insert(bg, axis.len());
        axis.push(AxisEntry {
            id: bg,
            name: "background".to_string(),
            leaf: true,
            background: true,
        });
    }
    let n = axis.len();
    let mut cells: Vec<MatrixCell> = (0..n * n)
        .map(|k| MatrixCell {
            r: k / n,
            c: k % n,
            count: 0,
            value: 0.0,
            empty: true,
            size: [0; 3],
            dir: [0; 9],
        })
        .collect();
    let mut total = 0;
    for rec in records {
        let (Some(&r), Some(&c)) = (slot.get(&rec.gt_class), slot.get(&rec.pred_class)) else {
            continue;
        };
        if !conditions.iter().all(|p| p.matches(rec, hierarchy)) {
            continue;
        }
        let cell = &mut cells[r * n + c];
        cell.count += 1;
        total += 1;
        if let Some(s) = size_sector(rec, size_tol) {
            cell.size[s.index()] += 1;
        }
        if let Some(d) = direction_bin(rec, dir_tol) {
            cell.dir[d.index()] += 1;
        }
    }
    for cell in &mut cells {
        cell.empty = cell.count == 0;
        cell.value = cell.count as f64;
    }
    normalize(&mut cells, n, spec.normalization);

    let class_count = classes.len();
    let mut order: Vec<usize> = if spec.reorder && class_count > 1 {
        let profiles: Vec<Vec<f64>> = (0..class_count)
            .map(|r| (0..n).map(|c| cells[r * n + c].count as f64).collect())
            .collect();
        order_leaves(&row_dissimilarity(&profiles), spec.linkage)
    } else {
        (0..class_count).collect()
    };
    if with_background {
        order.push(n - 1);
    }

    Ok(Matrix {
        mode: spec.mode,
        normalization: if spec.mode == MatrixMode::Confusion {
            spec.normalization
        } else {
            Normalization::None
        },
        cols: axis.clone(),
        rows: axis,
        cells,
        order,
        total,
    })
}

fn normalize(cells: &mut [MatrixCell], n: usize, how: Normalization) {
    let sums: Vec<u64> = match how {
        Normalization::None => return,
        Normalization::Row => (0..n)
            .map(|r| (0..n).map(|c| cells[r * n + c].count).sum())
            .collect(),
        Normalization::Column => (0..n)
            .map(|c| (0..n).map(|r| cells[r * n + c].count).sum())
            .collect(),
    };
    for cell in cells.iter_mut() {
        let s = if how == Normalization::Row { sums[cell.r] } else { sums[cell.c] };
        cell.value = if s == 0 { 0.0 } else { cell.count as f64 / s as f64 };
    }
}
