//! Grid layout of selected objects: 2-D projection, then an exact linear
//! assignment of points to the cells of a near-square grid.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{FeatureTable, ImageRecord};
use crate::error::{Error, Result};
use crate::record::EvaluationRecord;

pub const DEFAULT_MAX_OBJECTS: usize = 2500;

pub trait Projector {
    /// Maps equal-length feature vectors to 2-D points. Must be
    /// deterministic for a given seed.
    fn project(&self, features: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; 2]>>;
}

/// Projection onto the two leading principal axes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pca;

/// Exact t-SNE started from the principal-axis layout.
#[derive(Debug, Clone, Copy)]
pub struct Tsne {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for Tsne {
    fn default() -> Self {
        Tsne {
            perplexity: 30.0,
            iterations: 300,
            learning_rate: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    #[default]
    Pca,
    Tsne,
}

impl ProjectionMethod {
    pub fn projector(self) -> Box<dyn Projector + Send + Sync> {
        match self {
            ProjectionMethod::Pca => Box::new(Pca),
            ProjectionMethod::Tsne => Box::new(Tsne::default()),
        }
    }
}

fn check_features(features: &[Vec<f64>]) -> Result<usize> {
    let first = features.first().ok_or(Error::EmptySelection)?;
    let dim = first.len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::validation("feature vectors differ in dimension"));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation("feature values must be finite"));
    }
    Ok(dim)
}

impl Projector for Pca {
    fn project(&self, features: &[Vec<f64>], _seed: u64) -> Result<Vec<[f64; 2]>> {
        let dim = check_features(features)?;
        let n = features.len();
        if n == 1 || dim == 0 {
            return Ok(vec![[0.0, 0.0]; n]);
        }
        let mut mean = vec![0.0; dim];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n as f64;
            }
        }
        let centered = DMatrix::from_fn(n, dim, |i, j| features[i][j] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64);
        let eig = SymmetricEigen::new(cov);
        let mut axes: Vec<usize> = (0..dim).collect();
        axes.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut out = vec![[0.0; 2]; n];
        for (k, &axis) in axes.iter().take(2).enumerate() {
            let mut v: Vec<f64> = eig.eigenvectors.column(axis).iter().copied().collect();
            // sign convention: largest-magnitude component positive
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            for (i, p) in out.iter_mut().enumerate() {
                p[k] = (0..dim).map(|j| centered[(i, j)] * v[j]).sum();
            }
        }
        Ok(out)
    }
}

impl Projector for Tsne {
    fn project(&self, features: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; 2]>> {
        let init = Pca.project(features, seed)?;
        let n = features.len();
        if n < 3 {
            return Ok(init);
        }
        let p = joint_affinities(features, self.perplexity.min((n - 1) as f64 / 3.0).max(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spread = init
            .iter()
            .map(|q| q[0] * q[0] + q[1] * q[1])
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        let mut y: Vec<[f64; 2]> = init
            .iter()
            .map(|q| {
                [
                    q[0] / spread * 1e-2 + rng.random_range(-1e-4..1e-4),
                    q[1] / spread * 1e-2 + rng.random_range(-1e-4..1e-4),
                ]
            })
            .collect();
        let mut velocity = vec![[0.0; 2]; n];
        let mut gains = vec![[1.0; 2]; n];
        let mut grad = vec![[0.0; 2]; n];
        let mut q = vec![0.0; n * n];
        for iter in 0..self.iterations {
            let exaggeration = if iter < 100 { 12.0 } else { 1.0 };
            let momentum = if iter < 100 { 0.5 } else { 0.8 };
            let mut z = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    let w = 1.0 / (1.0 + dx * dx + dy * dy);
                    q[i * n + j] = w;
                    q[j * n + i] = w;
                    z += 2.0 * w;
                }
            }
            let z = z.max(1e-300);
            for i in 0..n {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = q[i * n + j];
                    let m = (exaggeration * p[i * n + j] - w / z) * w;
                    g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                    g[1] += 4.0 * m * (y[i][1] - y[j][1]);
                }
                grad[i] = g;
            }
            for i in 0..n {
                for k in 0..2 {
                    let same_sign = (grad[i][k] > 0.0) == (velocity[i][k] > 0.0);
                    gains[i][k] = if same_sign { (gains[i][k] * 0.8f64).max(0.01) } else { gains[i][k] + 0.2 };
                    velocity[i][k] = momentum * velocity[i][k] - self.learning_rate * gains[i][k] * grad[i][k];
                    y[i][k] += velocity[i][k];
                }
            }
        }
        Ok(y)
    }
}

/// Symmetrized Gaussian affinities with per-point bandwidth found by
/// bisection on the perplexity.
fn joint_affinities(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i * n + j] = v;
            d2[j * n + i] = v;
        }
    }
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
        let row = &d2[i * n..(i + 1) * n];
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for (j, &d) in row.iter().enumerate() {
                if j != i {
                    let w = (-d * beta).exp();
                    sum += w;
                    weighted += d * w;
                }
            }
            if sum <= 0.0 {
                hi = beta;
                beta = (lo + hi) / 2.0;
                continue;
            }
            let entropy = sum.ln() + beta * weighted / sum;
            if (entropy - target).abs() < 1e-5 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { (lo + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (lo + hi) / 2.0;
            }
        }
        let mut sum = 0.0;
        for (j, &d) in row.iter().enumerate() {
            if j != i {
                let w = (-d * beta).exp();
                p[i * n + j] = w;
                sum += w;
            }
        }
        for j in 0..n {
            p[i * n + j] = if sum > 0.0 { p[i * n + j] / sum } else { 1.0 / (n - 1) as f64 * f64::from(j != i) };
        }
    }
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    joint
}

/// Stand-in features when no table is supplied: normalized size, aspect
/// ratio, confidence and normalized center.
pub fn fallback_features(records: &[&EvaluationRecord], images: &[ImageRecord]) -> Vec<Vec<f64>> {
    let max_size = records
        .iter()
        .filter_map(|r| r.pred_size.or(r.gt_size))
        .fold(0.0f64, f64::max);
    records
        .iter()
        .map(|r| {
            let size = r.pred_size.or(r.gt_size).unwrap_or(0.0);
            let image = images.iter().find(|i| i.id == r.image_id);
            let (cx, cy) = match (r.pred_box.or(r.gt_box), image) {
                (Some(b), Some(img)) => {
                    let (cx, cy) = b.center();
                    (cx / f64::from(img.width.max(1)), cy / f64::from(img.height.max(1)))
                }
                _ => (0.5, 0.5),
            };
            let area = match image {
                Some(img) => f64::from(img.width) * f64::from(img.height),
                None => max_size,
            };
            vec![
                if area > 0.0 { size / area } else { 0.0 },
                r.pred_aspect.or(r.gt_aspect).unwrap_or(1.0),
                r.confidence.unwrap_or(1.0),
                cx,
                cy,
            ]
        })
        .collect()
}

/// Features for the selected records: table rows when every object has one,
/// otherwise the fallback vectors.
pub fn selection_features(
    records: &[&EvaluationRecord],
    images: &[ImageRecord],
    table: Option<&FeatureTable>,
) -> Vec<Vec<f64>> {
    if let Some(t) = table {
        let rows: Option<Vec<Vec<f64>>> = records
            .iter()
            .map(|r| {
                t.get(&r.object_key())
                    .or_else(|| r.gt_id.and_then(|g| t.get(&format!("gt:{g}"))))
                    .map(<[f64]>::to_vec)
            })
            .collect();
        if let Some(rows) = rows {
            return rows;
        }
    }
    fallback_features(records, images)
}

/// Per-axis min-max scaling into [0,1]²; a flat axis maps to 0.5.
pub fn normalize_points(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = points.to_vec();
    for k in 0..2 {
        let lo = points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        for p in &mut out {
            p[k] = if hi > lo { (p[k] - lo) / (hi - lo) } else { 0.5 };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Placement {
    pub object_key: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridAssignment {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub placements: Vec<Placement>,
    pub cost: f64,
}

impl GridAssignment {
    pub fn layout_json(&self) -> Value {
        json!({
            "rows": self.grid_rows,
            "cols": self.grid_cols,
            "cells": self.placements,
        })
    }
}

pub fn grid_side(n: usize) -> usize {
    let mut s = (n as f64).sqrt() as usize;
    while s * s < n {
        s += 1;
    }
    while s > 0 && (s - 1) * (s - 1) >= n {
        s -= 1;
    }
    s
}

pub fn cell_center(row: usize, col: usize, side: usize) -> [f64; 2] {
    [(col as f64 + 0.5) / side as f64, (row as f64 + 0.5) / side as f64]
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Minimum-cost assignment of `n` rows to distinct columns out of `m >= n`
/// (shortest augmenting paths with dual potentials). Returns the column of
/// every row.
pub fn solve_assignment(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    assert!(n <= m, "more rows than columns");
    // 1-based with a virtual column 0, as in the classic formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let ui0 = u[i0];
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if owner[j] > 0 {
            col_of[owner[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Tentative distance label of a cell in the augmenting-path search.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Label {
    key: f64,
    col: usize,
}

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    // reversed for a min-heap
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.col.cmp(&self.col))
    }
}

const NONE: usize = usize::MAX;

/// Optimal assignment of points in [0,1]² to the cells of a `side`-sided
/// grid, padded to a square problem with zero-cost dummy rows. An
/// epsilon-scaling auction first brings the cell potentials close to
/// optimal; shortest augmenting paths then finish from there, so the result
/// is exact.
fn solve_grid(points: &[[f64; 2]], side: usize) -> Vec<usize> {
    let n = points.len();
    let m = side * side;
    if m == 1 {
        return vec![0; n];
    }
    let centers: Vec<[f64; 2]> = (0..m).map(|c| cell_center(c / side, c % side, side)).collect();
    // rows n.. are dummies
    let cost = |r: usize, j: usize| if r < n { sq_dist(points[r], centers[j]) } else { 0.0 };
    // cheapest cell of row r under potentials v, its value and the runner-up
    let best_two = |r: usize, v: &[f64]| {
        let (mut j1, mut w1, mut w2) = (NONE, f64::INFINITY, f64::INFINITY);
        for j in 0..m {
            let w = cost(r, j) - v[j];
            if w < w1 {
                w2 = w1;
                (j1, w1) = (j, w);
            } else if w < w2 {
                w2 = w;
            }
        }
        (j1, w1, w2)
    };

    let mut v = vec![0.0f64; m];
    let mut col_of = vec![NONE; m];
    let mut owner = vec![NONE; m];
    let mut eps = 0.1;
    loop {
        col_of.fill(NONE);
        owner.fill(NONE);
        let mut queue: std::collections::VecDeque<usize> = (0..m).collect();
        while let Some(r) = queue.pop_front() {
            let (j, w1, w2) = best_two(r, &v);
            v[j] -= w2 - w1 + eps;
            let prev = owner[j];
            if prev != NONE {
                col_of[prev] = NONE;
                queue.push_back(prev);
            }
            owner[j] = r;
            col_of[r] = j;
        }
        if eps <= 1e-6 {
            break;
        }
        eps = (eps * 0.2).max(1e-6);
    }

    // exact stage: row potentials from the cell potentials, keep tight matches
    let mut u = vec![0.0f64; m];
    let mut cheapest = vec![NONE; m];
    for r in 0..m {
        let (j, w, _) = best_two(r, &v);
        u[r] = w;
        cheapest[r] = j;
        let a = col_of[r];
        if cost(r, a) - v[a] != w {
            owner[a] = NONE;
            col_of[r] = NONE;
        }
    }
    let mut free = Vec::new();
    for r in 0..m {
        if col_of[r] == NONE {
            let j = cheapest[r];
            if owner[j] == NONE {
                owner[j] = r;
                col_of[r] = j;
            } else {
                free.push(r);
            }
        }
    }

    // rows at the same point differ only by a constant, so within one search
    // a row is skipped when another row of its group already spread with a
    // smaller offset
    let mut group = vec![0usize; m];
    let mut order: Vec<usize> = (0..n).collect();
    let point_key = |r: usize| (points[r][0].to_bits(), points[r][1].to_bits());
    order.sort_by_key(|&r| point_key(r));
    let mut groups = 0;
    for (k, &r) in order.iter().enumerate() {
        if k > 0 && point_key(order[k - 1]) != point_key(r) {
            groups += 1;
        }
        group[r] = groups;
    }
    groups += 1;
    for g in group.iter_mut().skip(n) {
        *g = groups;
    }
    let mut best_offset = vec![f64::INFINITY; groups + 1];
    let mut seen_groups: Vec<usize> = Vec::new();

    let mut dist = vec![f64::INFINITY; m];
    let mut pred = vec![NONE; m];
    let mut done = vec![false; m];
    let mut finished: Vec<usize> = Vec::new();
    let mut heap = std::collections::BinaryHeap::new();
    for i in free {
        dist.fill(f64::INFINITY);
        done.fill(false);
        finished.clear();
        for &g in &seen_groups {
            best_offset[g] = f64::INFINITY;
        }
        seen_groups.clear();
        heap.clear();
        let mut spread = |r: usize,
                          base: f64,
                          dist: &mut [f64],
                          done: &[bool],
                          heap: &mut std::collections::BinaryHeap<Label>| {
            let g = group[r];
            if base - u[r] >= best_offset[g] {
                return;
            }
            if best_offset[g].is_infinite() {
                seen_groups.push(g);
            }
            best_offset[g] = base - u[r];
            for j in 0..m {
                if done[j] {
                    continue;
                }
                let nd = base + (cost(r, j) - u[r] - v[j]).max(0.0);
                if nd < dist[j] {
                    dist[j] = nd;
                    pred[j] = r;
                    heap.push(Label { key: nd, col: j });
                }
            }
        };
        spread(i, 0.0, &mut dist, &done, &mut heap);
        let (sink, reach) = loop {
            let Label { key, col: j } = heap.pop().expect("a free cell is always reachable");
            if done[j] || key > dist[j] {
                continue;
            }
            done[j] = true;
            finished.push(j);
            let r = owner[j];
            if r == NONE {
                break (j, key);
            }
            spread(r, key, &mut dist, &done, &mut heap);
        };
        u[i] += reach;
        for &j in &finished {
            v[j] += dist[j] - reach;
            if j != sink {
                u[owner[j]] += reach - dist[j];
            }
        }
        let mut j = sink;
        loop {
            let r = pred[j];
            let prev = col_of[r];
            col_of[r] = j;
            owner[j] = r;
            if r == i {
                break;
            }
            j = prev;
        }
    }
    col_of.truncate(n);
    col_of
}

/// Places `points` (already in [0,1]²) into a `ceil(sqrt(n))`-sided grid
/// minimizing the summed squared distance to cell centers.
pub fn assign_to_grid(points: &[[f64; 2]], keys: &[String]) -> Result<GridAssignment> {
    if points.is_empty() {
        return Err(Error::EmptySelection);
    }
    if keys.len() != points.len() {
        return Err(Error::validation("one key per point required"));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::validation("grid points must be finite"));
    }
    let side = grid_side(points.len());
    let centers: Vec<[f64; 2]> = (0..side * side).map(|c| cell_center(c / side, c % side, side)).collect();
    let cols = solve_grid(points, side);
    let cost = cols.iter().enumerate().map(|(i, &c)| sq_dist(points[i], centers[c])).sum();
    Ok(GridAssignment {
        grid_rows: side,
        grid_cols: side,
        placements: cols
            .iter()
            .zip(keys)
            .map(|(&c, k)| Placement {
                object_key: k.clone(),
                row: c / side,
                col: c % side,
            })
            .collect(),
        cost,
    })
}

/// Projection, normalization and assignment in one step.
pub fn layout(
    features: &[Vec<f64>],
    keys: &[String],
    seed: u64,
    projector: &dyn Projector,
) -> Result<GridAssignment> {
    let points = projector.project(features, seed)?;
    assign_to_grid(&normalize_points(&points), keys)
}
