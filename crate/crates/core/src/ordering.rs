//! Agglomerative clustering and exact optimal leaf ordering of its
//! dendrogram (dynamic program over pairs of outermost leaves).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

/// Binary merge tree over `n` leaves. Nodes `0..n` are leaves, node
/// `n + k` is the k-th merge.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<(usize, usize)>,
}

impl Dendrogram {
    pub fn root(&self) -> usize {
        if self.merges.is_empty() {
            0
        } else {
            self.leaves + self.merges.len() - 1
        }
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        (node >= self.leaves).then(|| self.merges[node - self.leaves])
    }

    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            match self.children(v) {
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
                None => out.push(v),
            }
        }
        out
    }

    /// Left-to-right leaf order without any flips.
    pub fn natural_order(&self) -> Vec<usize> {
        if self.leaves == 0 {
            return Vec::new();
        }
        self.leaves_under(self.root())
    }
}

/// `1 - cosine similarity` between row profiles. Two all-zero rows are
/// identical; a zero row is maximally far from any other row.
pub fn row_dissimilarity(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let n = rows.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = match (norms[i] > 0.0, norms[j] > 0.0) {
                (true, true) => {
                    let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                    (1.0 - dot / (norms[i] * norms[j])).max(0.0)
                }
                (false, false) => 0.0,
                _ => 1.0,
            };
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Agglomerative clustering with Lance-Williams updates. Ties merge the
/// lowest-indexed pair.
pub fn cluster(d: &[Vec<f64>], linkage: Linkage) -> Dendrogram {
    let n = d.len();
    let mut active: Vec<usize> = (0..n).collect();
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut dist: Vec<Vec<f64>> = d.to_vec();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                if dist[a][b] < best.0 {
                    best = (dist[a][b], a, b);
                }
            }
        }
        let (_, a, b) = best;
        merges.push((node_of[a], node_of[b]));
        for &c in &active {
            if c == a || c == b {
                continue;
            }
            let v = match linkage {
                Linkage::Single => dist[a][c].min(dist[b][c]),
                Linkage::Complete => dist[a][c].max(dist[b][c]),
                Linkage::Average => {
                    (size[a] as f64 * dist[a][c] + size[b] as f64 * dist[b][c])
                        / (size[a] + size[b]) as f64
                }
            };
            dist[a][c] = v;
            dist[c][a] = v;
        }
        size[a] += size[b];
        node_of[a] = n + merges.len() - 1;
        active.retain(|&c| c != b);
    }
    Dendrogram { leaves: n, merges }
}

/// Sum of dissimilarities between neighbours in `order`.
pub fn ordering_cost(order: &[usize], d: &[Vec<f64>]) -> f64 {
    order.windows(2).map(|w| d[w[0]][w[1]]).sum()
}

/// Leaf order consistent with the dendrogram that minimizes the sum of
/// adjacent dissimilarities.
pub fn optimal_leaf_order(tree: &Dendrogram, d: &[Vec<f64>]) -> Vec<usize> {
    let n = tree.leaves;
    if n <= 2 {
        return (0..n).collect();
    }
    let total_nodes = n + tree.merges.len();
    let mut under: Vec<Vec<usize>> = Vec::with_capacity(total_nodes);
    for v in 0..total_nodes {
        under.push(match tree.children(v) {
            None => vec![v],
            Some((a, b)) => {
                let mut l = under[a].clone();
                l.extend_from_slice(&under[b]);
                l
            }
        });
    }
    // in_left[v][leaf]: the leaf sits under the first child of v
    let mut in_left = vec![vec![false; n]; total_nodes];
    for v in n..total_nodes {
        let (a, _) = tree.children(v).unwrap();
        for &leaf in &under[a] {
            in_left[v][leaf] = true;
        }
    }
    // best[i][j]: cheapest ordering of lca(i, j) starting at i, ending at j
    let mut best = vec![vec![f64::INFINITY; n]; n];
    let mut via = vec![vec![(usize::MAX, usize::MAX); n]; n];
    for (i, row) in best.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    let partners = |node: usize, leaf: usize| -> &[usize] {
        match tree.children(node) {
            None => &under[node],
            Some((a, b)) => {
                if in_left[node][leaf] {
                    &under[b]
                } else {
                    &under[a]
                }
            }
        }
    };
    // m and j can bound the ordering of `node`
    let endpoints = |node: usize, m: usize, j: usize| -> bool {
        if node < n {
            m == j
        } else {
            in_left[node][m] != in_left[node][j]
        }
    };
    for v in n..total_nodes {
        let (w, x) = tree.children(v).unwrap();
        for (left, right) in [(w, x), (x, w)] {
            for &i in &under[left] {
                // reach[m] = min over k of best[i][k] + d[k][m]
                let mut reach: Vec<(f64, usize)> = Vec::with_capacity(under[right].len());
                for &m in &under[right] {
                    let mut r = (f64::INFINITY, usize::MAX);
                    for &k in partners(left, i) {
                        let c = best[i][k] + d[k][m];
                        if c < r.0 {
                            r = (c, k);
                        }
                    }
                    reach.push(r);
                }
                for &j in &under[right] {
                    let mut r = (f64::INFINITY, usize::MAX, usize::MAX);
                    for (idx, &m) in under[right].iter().enumerate() {
                        if !endpoints(right, m, j) {
                            continue;
                        }
                        let c = reach[idx].0 + best[m][j];
                        if c < r.0 {
                            r = (c, reach[idx].1, m);
                        }
                    }
                    best[i][j] = r.0;
                    via[i][j] = (r.1, r.2);
                }
            }
        }
    }
    let root = tree.root();
    let (w, x) = tree.children(root).unwrap();
    let mut start = (f64::INFINITY, 0, 0);
    for &i in &under[w] {
        for &j in &under[x] {
            if best[i][j] < start.0 {
                start = (best[i][j], i, j);
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    unroll(start.1, start.2, &via, &mut out);
    out
}

fn unroll(i: usize, j: usize, via: &[Vec<(usize, usize)>], out: &mut Vec<usize>) {
    if i == j {
        out.push(i);
        return;
    }
    let (k, m) = via[i][j];
    unroll(i, k, via, out);
    unroll(m, j, via, out);
}

/// Clusters the rows of `d` and returns the optimal leaf ordering.
pub fn order_leaves(d: &[Vec<f64>], linkage: Linkage) -> Vec<usize> {
    let tree = cluster(d, linkage);
    optimal_leaf_order(&tree, d)
}
