//! Candidate problematic subsets: equal-frequency discretization of
//! continuous attributes, frequent-itemset search above a minimum support,
//! and weighted multi-attribute ranking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{ClassHierarchy, ClassId};
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision, csv_field, precision_recall, DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_IOU_THRESHOLD,
};
use crate::prob::RawPredicate;
use crate::record::EvaluationRecord;

pub const DEFAULT_BETA: f64 = 0.1;

/// Interval boundaries of one attribute. Interval `i` is
/// `(boundaries[i-1], boundaries[i]]`, open-ended at both extremes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub boundaries: Vec<f64>,
    pub requested: usize,
    /// Fewer intervals than requested (too few distinct values).
    pub degenerate: bool,
}

impl Discretization {
    pub fn interval_of(&self, v: f64) -> usize {
        self.boundaries.partition_point(|&b| b < v)
    }

    pub fn intervals(&self) -> usize {
        self.boundaries.len() + 1
    }

    pub fn bounds(&self, i: usize) -> (Option<f64>, Option<f64>) {
        let lo = i.checked_sub(1).map(|k| self.boundaries[k]);
        (lo, self.boundaries.get(i).copied())
    }
}

/// Equal-frequency split of `values` into `d` intervals at the empirical
/// quantiles `k/d`. Runs of equal values stay together in the lower
/// interval.
pub fn discretize(values: &[f64], d: usize) -> Result<Discretization> {
    if values.is_empty() {
        return Err(Error::validation("cannot discretize an empty attribute"));
    }
    if d == 0 {
        return Err(Error::validation("interval count must be at least 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("attribute values must be finite"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let max = s[n - 1];
    let mut boundaries: Vec<f64> = Vec::with_capacity(d.saturating_sub(1));
    for k in 1..d {
        // round(k * n / d) in integers
        let idx = (2 * k * n + d) / (2 * d);
        if idx == 0 || idx >= n {
            continue;
        }
        let (lower, upper) = (s[idx - 1], s[idx]);
        let b = if lower < upper {
            let mid = lower + (upper - lower) / 2.0;
            if mid < upper {
                mid
            } else {
                lower
            }
        } else {
            lower
        };
        if b >= max || boundaries.last().is_some_and(|&last| b <= last) {
            continue;
        }
        boundaries.push(b);
    }
    Ok(Discretization {
        degenerate: boundaries.len() + 1 < d,
        boundaries,
        requested: d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SubsetAttribute {
    GtSize,
    GtAspect,
    Confidence,
    PredSize,
    /// Ground-truth objects in the record's image.
    Density,
    PredClass,
}

impl SubsetAttribute {
    pub const DEFAULT: [SubsetAttribute; 6] = [
        SubsetAttribute::GtSize,
        SubsetAttribute::GtAspect,
        SubsetAttribute::Confidence,
        SubsetAttribute::PredSize,
        SubsetAttribute::Density,
        SubsetAttribute::PredClass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubsetAttribute::GtSize => "gtSize",
            SubsetAttribute::GtAspect => "gtAspect",
            SubsetAttribute::Confidence => "confidence",
            SubsetAttribute::PredSize => "predSize",
            SubsetAttribute::Density => "density",
            SubsetAttribute::PredClass => "predClass",
        }
    }

    pub fn is_discrete(self) -> bool {
        self == SubsetAttribute::PredClass
    }

    fn real_of(self, r: &EvaluationRecord, density: &HashMap<i64, usize>) -> Option<f64> {
        match self {
            SubsetAttribute::GtSize => r.gt_size,
            SubsetAttribute::GtAspect => r.gt_aspect,
            SubsetAttribute::Confidence => r.confidence,
            SubsetAttribute::PredSize => r.pred_size,
            SubsetAttribute::Density => Some(density.get(&r.image_id).copied().unwrap_or(0) as f64),
            SubsetAttribute::PredClass => None,
        }
    }

    /// Query variable that expresses this attribute, if any.
    fn variable(self) -> Option<&'static str> {
        match self {
            SubsetAttribute::GtSize => Some("Size_X"),
            SubsetAttribute::GtAspect => Some("AspectRatio_X"),
            SubsetAttribute::Confidence => Some("Confidence_Y"),
            SubsetAttribute::PredSize => Some("Size_Y"),
            SubsetAttribute::PredClass => Some("Label_Y"),
            SubsetAttribute::Density => None,
        }
    }
}

impl fmt::Display for SubsetAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Interval count per attribute derived from the minimum-support fraction.
pub fn intervals_for_beta(beta: f64) -> usize {
    ((1.0 / beta).round() as usize).max(1)
}

/// `ceil(beta * population)`, immune to representation error in `beta`.
pub fn min_support(beta: f64, population: usize) -> usize {
    let raw = beta * population as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).max(1)
}

pub fn validate_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("beta must be in (0, 1], got {beta}")))
    }
}

/// Discretization of every mined continuous attribute, fitted on the whole
/// record population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationSpec {
    pub beta: f64,
    pub d: usize,
    pub attributes: Vec<SubsetAttribute>,
    pub boundaries: BTreeMap<SubsetAttribute, Discretization>,
    #[serde(skip)]
    density: HashMap<i64, usize>,
}

/// Distinct ground-truth objects per image.
pub fn image_density(records: &[EvaluationRecord]) -> HashMap<i64, usize> {
    let mut seen: HashSet<(i64, i64)> = HashSet::new();
    let mut out: HashMap<i64, usize> = HashMap::new();
    for r in records {
        out.entry(r.image_id).or_insert(0);
        if let Some(g) = r.gt_id {
            if seen.insert((r.image_id, g)) {
                *out.get_mut(&r.image_id).unwrap() += 1;
            }
        }
    }
    out
}

impl DiscretizationSpec {
    pub fn fit(records: &[EvaluationRecord], beta: f64, attributes: &[SubsetAttribute]) -> Result<Self> {
        validate_beta(beta)?;
        let d = intervals_for_beta(beta);
        let density = image_density(records);
        let mut boundaries = BTreeMap::new();
        for &a in attributes {
            if a.is_discrete() {
                continue;
            }
            let values: Vec<f64> = records.iter().filter_map(|r| a.real_of(r, &density)).collect();
            if values.is_empty() {
                continue;
            }
            boundaries.insert(a, discretize(&values, d)?);
        }
        Ok(DiscretizationSpec {
            beta,
            d,
            attributes: attributes.to_vec(),
            boundaries,
            density,
        })
    }

    /// Items of one record: `(attribute, value)` with the interval index or
    /// class id as value.
    fn items(&self, r: &EvaluationRecord) -> Vec<Item> {
        let mut out = Vec::with_capacity(self.attributes.len());
        for &a in &self.attributes {
            if a == SubsetAttribute::PredClass {
                if r.pred_id.is_some() {
                    out.push(Item { attribute: a, value: r.pred_class.0 });
                }
                continue;
            }
            if let (Some(v), Some(disc)) = (a.real_of(r, &self.density), self.boundaries.get(&a)) {
                out.push(Item { attribute: a, value: disc.interval_of(v) as i64 });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Item {
    pub attribute: SubsetAttribute,
    pub value: i64,
}

/// Frequent conjunction with the indices of the records it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct Itemset {
    pub items: Vec<Item>,
    pub rows: Vec<u32>,
}

/// All itemsets (one item per attribute at most) covering at least
/// `min_support` transactions, including the empty itemset. Depth-first
/// search over vertical row lists; an itemset is extended only while it
/// stays frequent.
pub fn frequent_itemsets(transactions: &[Vec<Item>], min_support: usize) -> Vec<Itemset> {
    let mut out = Vec::new();
    if transactions.len() < min_support {
        return out;
    }
    out.push(Itemset {
        items: Vec::new(),
        rows: (0..transactions.len() as u32).collect(),
    });
    let mut vertical: BTreeMap<Item, Vec<u32>> = BTreeMap::new();
    for (t, items) in transactions.iter().enumerate() {
        for &it in items {
            vertical.entry(it).or_default().push(t as u32);
        }
    }
    let singles: Vec<(Item, Vec<u32>)> = vertical
        .into_iter()
        .filter(|(_, rows)| rows.len() >= min_support)
        .collect();
    extend(&[], &singles, min_support, &mut out);
    out
}

fn extend(prefix: &[Item], candidates: &[(Item, Vec<u32>)], min_support: usize, out: &mut Vec<Itemset>) {
    for (i, (item, rows)) in candidates.iter().enumerate() {
        let mut items = prefix.to_vec();
        items.push(*item);
        out.push(Itemset {
            items: items.clone(),
            rows: rows.clone(),
        });
        let next: Vec<(Item, Vec<u32>)> = candidates[i + 1..]
            .iter()
            .filter(|(other, _)| other.attribute != item.attribute)
            .filter_map(|(other, other_rows)| {
                let joint = intersect(rows, other_rows);
                (joint.len() >= min_support).then_some((*other, joint))
            })
            .collect();
        if !next.is_empty() {
            extend(&items, &next, min_support, out);
        }
    }
}

fn intersect(a: &[u32], b: &[u32]) -> Vec<u32> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubsetPredicate {
    pub attribute: SubsetAttribute,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<usize>,
    /// Exclusive lower bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    /// Inclusive upper bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassId>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubsetMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub ap: Option<f64>,
    pub mean_size: Option<f64>,
    pub mean_aspect: Option<f64>,
    pub mean_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubsetDescriptor {
    pub class_id: ClassId,
    pub predicates: Vec<SubsetPredicate>,
    pub support: usize,
    pub metrics: SubsetMetrics,
}

impl SubsetDescriptor {
    pub fn label(&self) -> String {
        if self.predicates.is_empty() {
            return "(all)".to_string();
        }
        self.predicates
            .iter()
            .map(|p| p.label.as_str())
            .collect::<Vec<_>>()
            .join(" & ")
    }

    /// Distribution-query conditions selecting this subset (the density
    /// attribute has no query variable and is left out).
    pub fn to_conditions(&self) -> Vec<RawPredicate> {
        let mut out = Vec::new();
        for p in &self.predicates {
            let Some(var) = p.attribute.variable() else { continue };
            if let Some(c) = p.class {
                out.push(RawPredicate::new(var, "=", Value::from(c.0)));
                continue;
            }
            if let Some(lo) = p.lo {
                out.push(RawPredicate::new(var, ">", Value::from(lo)));
            }
            if let Some(hi) = p.hi {
                out.push(RawPredicate::new(var, "<=", Value::from(hi)));
            }
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn subset_metrics(records: &[&EvaluationRecord], class: ClassId) -> SubsetMetrics {
    let owned: Vec<EvaluationRecord> = records.iter().map(|r| (*r).clone()).collect();
    let pr = precision_recall(&owned, class, DEFAULT_IOU_THRESHOLD, DEFAULT_CONFIDENCE_THRESHOLD);
    SubsetMetrics {
        precision: pr.precision,
        recall: pr.recall,
        ap: average_precision(&owned, class),
        mean_size: mean(records.iter().filter_map(|r| r.gt_size.or(r.pred_size))),
        mean_aspect: mean(records.iter().filter_map(|r| r.gt_aspect.or(r.pred_aspect))),
        mean_confidence: mean(records.iter().filter_map(|r| r.confidence)),
    }
}

/// Records that involve `class` on either side.
pub fn class_records(records: &[EvaluationRecord], class: ClassId) -> Vec<&EvaluationRecord> {
    records
        .iter()
        .filter(|r| r.gt_class == class || r.pred_class == class)
        .collect()
}

/// Removes items that hold for every transaction: they select the whole
/// class and would only duplicate the empty itemset.
pub fn drop_universal_items(mut transactions: Vec<Vec<Item>>) -> Vec<Vec<Item>> {
    let mut counts: HashMap<Item, usize> = HashMap::new();
    for t in &transactions {
        for &it in t {
            *counts.entry(it).or_insert(0) += 1;
        }
    }
    let n = transactions.len();
    for t in &mut transactions {
        t.retain(|it| counts[it] < n);
    }
    transactions
}

/// Mines the subsets of `class` meeting the minimum support `beta * S_c`.
pub fn mine_subsets(
    records: &[EvaluationRecord],
    class: ClassId,
    spec: &DiscretizationSpec,
    hierarchy: &ClassHierarchy,
) -> Result<Vec<SubsetDescriptor>> {
    let members = class_records(records, class);
    if members.is_empty() {
        return Ok(Vec::new());
    }
    let transactions = drop_universal_items(members.iter().map(|r| spec.items(r)).collect());
    let min_sup = min_support(spec.beta, members.len());
    let mut sets = frequent_itemsets(&transactions, min_sup);
    sets.sort_by(|a, b| a.items.len().cmp(&b.items.len()).then(a.items.cmp(&b.items)));
    Ok(sets
        .into_iter()
        .map(|set| {
            let covered: Vec<&EvaluationRecord> =
                set.rows.iter().map(|&i| members[i as usize]).collect();
            SubsetDescriptor {
                class_id: class,
                predicates: set.items.iter().map(|it| describe(it, spec, hierarchy)).collect(),
                support: covered.len(),
                metrics: subset_metrics(&covered, class),
            }
        })
        .collect())
}

fn describe(item: &Item, spec: &DiscretizationSpec, h: &ClassHierarchy) -> SubsetPredicate {
    let a = item.attribute;
    if a.is_discrete() {
        let c = ClassId(item.value);
        return SubsetPredicate {
            attribute: a,
            interval: None,
            lo: None,
            hi: None,
            class: Some(c),
            label: format!("{a}={}", h.name(c)),
        };
    }
    let i = item.value as usize;
    let (lo, hi) = spec.boundaries[&a].bounds(i);
    let lo_s = lo.map(fmt_num).unwrap_or_else(|| "-inf".into());
    let hi_s = hi.map(fmt_num).unwrap_or_else(|| "inf".into());
    SubsetPredicate {
        attribute: a,
        interval: Some(i),
        lo,
        hi,
        class: None,
        label: format!("{a} in ({lo_s}, {hi_s}]"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankKey {
    pub attribute: String,
    pub weight: f64,
    pub order: SortOrder,
}

impl RankKey {
    pub fn new(attribute: &str, weight: f64, order: SortOrder) -> Self {
        RankKey {
            attribute: attribute.to_string(),
            weight,
            order,
        }
    }
}

/// Parses `attr[:asc|desc[:weight]]` entries separated by commas.
pub fn parse_rank_keys(s: &str) -> Result<Vec<RankKey>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|part| {
            let mut it = part.trim().split(':');
            let attribute = it.next().unwrap().to_string();
            let order = match it.next() {
                None | Some("asc") => SortOrder::Asc,
                Some("desc") => SortOrder::Desc,
                Some(o) => return Err(Error::query(format!("unknown sort order '{o}'"))),
            };
            let weight = match it.next() {
                None => 1.0,
                Some(w) => w
                    .parse()
                    .map_err(|_| Error::query(format!("bad weight '{w}'")))?,
            };
            Ok(RankKey { attribute, weight, order })
        })
        .collect()
}

fn attribute_value(s: &SubsetDescriptor, attribute: &str) -> Result<Option<f64>> {
    let m = &s.metrics;
    Ok(match attribute {
        "precision" => m.precision,
        "recall" => m.recall,
        "ap" => m.ap,
        "support" => Some(s.support as f64),
        "meanSize" | "gtSize" | "size" => m.mean_size,
        "meanAspect" | "gtAspect" | "aspect" => m.mean_aspect,
        "meanConfidence" | "confidence" => m.mean_confidence,
        other => return Err(Error::query(format!("unknown ranking attribute '{other}'"))),
    })
}

/// Orders subsets by the weighted sum of min-max normalized attributes
/// (descending keys negated first); lower scores first. Ties fall back to
/// larger support, then the predicate text. Undefined values rank last.
pub fn rank_subsets(subsets: Vec<SubsetDescriptor>, keys: &[RankKey]) -> Result<Vec<SubsetDescriptor>> {
    if keys.is_empty() {
        return Err(Error::query("at least one ranking key is required"));
    }
    if let Some(k) = keys.iter().find(|k| !(k.weight >= 0.0)) {
        return Err(Error::query(format!("weight of '{}' must be >= 0", k.attribute)));
    }
    let mut scores = vec![0.0; subsets.len()];
    for key in keys {
        let values: Vec<Option<f64>> = subsets
            .iter()
            .map(|s| {
                attribute_value(s, &key.attribute)
                    .map(|v| v.map(|x| if key.order == SortOrder::Desc { -x } else { x }))
            })
            .collect::<Result<_>>()?;
        let defined = values.iter().flatten();
        let lo = defined.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = defined.copied().fold(f64::NEG_INFINITY, f64::max);
        for (score, v) in scores.iter_mut().zip(&values) {
            let norm = match v {
                Some(x) if hi > lo => (x - lo) / (hi - lo),
                Some(_) => 0.0,
                None => 1.0,
            };
            *score += key.weight * norm;
        }
    }
    let labels: Vec<String> = subsets.iter().map(SubsetDescriptor::label).collect();
    let mut idx: Vec<usize> = (0..subsets.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(subsets[b].support.cmp(&subsets[a].support))
            .then(labels[a].cmp(&labels[b]))
    });
    let mut slots: Vec<Option<SubsetDescriptor>> = subsets.into_iter().map(Some).collect();
    Ok(idx.into_iter().map(|i| slots[i].take().unwrap()).collect())
}

pub fn write_subsets_csv<W: Write>(subsets: &[SubsetDescriptor], mut out: W) -> std::io::Result<()> {
    writeln!(out, "subset,support,precision,recall,ap,mean_size,mean_aspect,mean_confidence")?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for s in subsets {
        let m = &s.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_field(&s.label()),
            s.support,
            f(m.precision),
            f(m.recall),
            f(m.ap),
            f(m.mean_size),
            f(m.mean_aspect),
            f(m.mean_confidence)
        )?;
    }
    Ok(())
}
