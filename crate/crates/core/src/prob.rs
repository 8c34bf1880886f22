//! Empirical joint distribution over evaluation records.
//!
//! Every query is exact counting over the record store. A query only sees
//! records on which all of its variables are defined; background records
//! therefore drop out of queries on ground-truth geometry, missed objects
//! drop out of queries on confidence, and so on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{ClassHierarchy, ClassId};
use crate::error::{Error, Result};
use crate::record::EvaluationRecord;
use crate::subsets::discretize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variable {
    LabelX,
    LabelY,
    ConfidenceY,
    SizeX,
    SizeY,
    AspectRatioX,
    AspectRatioY,
    SizeRatio,
    Iou,
    ShiftX,
    ShiftY,
}

impl Variable {
    pub const ALL: [Variable; 11] = [
        Variable::LabelX,
        Variable::LabelY,
        Variable::ConfidenceY,
        Variable::SizeX,
        Variable::SizeY,
        Variable::AspectRatioX,
        Variable::AspectRatioY,
        Variable::SizeRatio,
        Variable::Iou,
        Variable::ShiftX,
        Variable::ShiftY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::LabelX => "Label_X",
            Variable::LabelY => "Label_Y",
            Variable::ConfidenceY => "Confidence_Y",
            Variable::SizeX => "Size_X",
            Variable::SizeY => "Size_Y",
            Variable::AspectRatioX => "AspectRatio_X",
            Variable::AspectRatioY => "AspectRatio_Y",
            Variable::SizeRatio => "SizeRatio",
            Variable::Iou => "IoU",
            Variable::ShiftX => "Shift_X",
            Variable::ShiftY => "Shift_Y",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::query(format!("unknown variable '{name}'")))
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, Variable::LabelX | Variable::LabelY)
    }

    pub fn class_of(self, r: &EvaluationRecord) -> Option<ClassId> {
        match self {
            Variable::LabelX => Some(r.gt_class),
            Variable::LabelY => Some(r.pred_class),
            _ => None,
        }
    }

    pub fn real_of(self, r: &EvaluationRecord) -> Option<f64> {
        match self {
            Variable::LabelX | Variable::LabelY => None,
            Variable::ConfidenceY => r.confidence,
            Variable::SizeX => r.gt_size,
            Variable::SizeY => r.pred_size,
            Variable::AspectRatioX => r.gt_aspect,
            Variable::AspectRatioY => r.pred_aspect,
            Variable::SizeRatio => r.size_ratio,
            Variable::Iou => r.iou,
            Variable::ShiftX => r.shift.map(|s| s[0]),
            Variable::ShiftY => r.shift.map(|s| s[1]),
        }
    }

    pub fn is_defined(self, r: &EvaluationRecord) -> bool {
        self.is_discrete() || self.real_of(r).is_some()
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A resolved condition on one variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    /// Class equals one of the listed ids or descends from one of them.
    ClassIn { var: Variable, classes: Vec<ClassId>, negate: bool },
    Less { var: Variable, value: f64, inclusive: bool },
    Greater { var: Variable, value: f64, inclusive: bool },
    /// Half-open `[lo, hi)`.
    Range { var: Variable, lo: f64, hi: f64 },
}

impl Predicate {
    pub fn variable(&self) -> Variable {
        match self {
            Predicate::ClassIn { var, .. }
            | Predicate::Less { var, .. }
            | Predicate::Greater { var, .. }
            | Predicate::Range { var, .. } => *var,
        }
    }

    pub fn matches(&self, r: &EvaluationRecord, h: &ClassHierarchy) -> bool {
        match self {
            Predicate::ClassIn { var, classes, negate } => {
                let c = var.class_of(r).expect("discrete variable");
                let hit = classes.iter().any(|&k| c == k || h.is_descendant(c, k));
                hit != *negate
            }
            Predicate::Less { var, value, inclusive } => var
                .real_of(r)
                .is_some_and(|v| if *inclusive { v <= *value } else { v < *value }),
            Predicate::Greater { var, value, inclusive } => var
                .real_of(r)
                .is_some_and(|v| if *inclusive { v >= *value } else { v > *value }),
            Predicate::Range { var, lo, hi } => {
                var.real_of(r).is_some_and(|v| v >= *lo && v < *hi)
            }
        }
    }
}

/// Wire form of a condition: `{"var": "Confidence_Y", "op": ">", "value": 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPredicate {
    pub var: String,
    pub op: String,
    pub value: Value,
}

/// Wire form of a kept variable: a bare name, or a name with explicit
/// `edges` or a number of equal-frequency `bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawKeep {
    Name(String),
    Binned {
        var: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        edges: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bins: Option<usize>,
    },
}

/// `{"keep": [...], "where": [...]}`
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<Vec<RawKeep>>,
    #[serde(default, rename = "where")]
    pub conditions: Vec<RawPredicate>,
    /// Optional conditioning event; when present the result is
    /// `P(where | given)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub given: Option<Vec<RawPredicate>>,
}

fn class_value(v: &Value, h: &ClassHierarchy) -> Result<ClassId> {
    match v {
        Value::Number(n) => {
            let id = ClassId(
                n.as_i64()
                    .ok_or_else(|| Error::query(format!("class id must be an integer, got {n}")))?,
            );
            if id == h.background() || h.contains(id) {
                Ok(id)
            } else {
                Err(Error::query(format!("unknown class {id}")))
            }
        }
        Value::String(s) => h
            .by_name(s)
            .ok_or_else(|| Error::query(format!("unknown class '{s}'"))),
        other => Err(Error::query(format!("invalid class value {other}"))),
    }
}

fn real_value(v: &Value) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::query(format!("expected a number, got {v}")))
}

impl RawPredicate {
    pub fn new(var: &str, op: &str, value: Value) -> Self {
        RawPredicate {
            var: var.to_string(),
            op: op.to_string(),
            value,
        }
    }

    pub fn resolve(&self, h: &ClassHierarchy) -> Result<Predicate> {
        let var = Variable::parse(&self.var)?;
        if var.is_discrete() {
            let (classes, negate) = match self.op.as_str() {
                "=" | "==" => (vec![class_value(&self.value, h)?], false),
                "!=" => (vec![class_value(&self.value, h)?], true),
                "in" => {
                    let items = self
                        .value
                        .as_array()
                        .ok_or_else(|| Error::query("'in' needs a list"))?;
                    let classes = items
                        .iter()
                        .map(|v| class_value(v, h))
                        .collect::<Result<Vec<_>>>()?;
                    (classes, false)
                }
                op => {
                    return Err(Error::query(format!(
                        "operator '{op}' is not valid for discrete variable {var}"
                    )))
                }
            };
            return Ok(Predicate::ClassIn { var, classes, negate });
        }
        match self.op.as_str() {
            "<" => Ok(Predicate::Less { var, value: real_value(&self.value)?, inclusive: false }),
            "<=" => Ok(Predicate::Less { var, value: real_value(&self.value)?, inclusive: true }),
            ">" => Ok(Predicate::Greater { var, value: real_value(&self.value)?, inclusive: false }),
            ">=" => Ok(Predicate::Greater { var, value: real_value(&self.value)?, inclusive: true }),
            "between" => {
                let pair = self
                    .value
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| Error::query("'between' needs [lo, hi]"))?;
                let (lo, hi) = (real_value(&pair[0])?, real_value(&pair[1])?);
                Ok(Predicate::Range { var, lo, hi })
            }
            op => Err(Error::query(format!(
                "operator '{op}' is not valid for continuous variable {var}"
            ))),
        }
    }
}

pub fn resolve_all(raw: &[RawPredicate], h: &ClassHierarchy) -> Result<Vec<Predicate>> {
    raw.iter().map(|p| p.resolve(h)).collect()
}

/// Exact relative frequency `hits / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frequency {
    pub hits: u64,
    pub total: u64,
}

impl Frequency {
    pub fn value(&self) -> f64 {
        self.hits as f64 / self.total as f64
    }

    /// Exact rational product.
    pub fn times(&self, other: &Frequency) -> (u128, u128) {
        (
            self.hits as u128 * other.hits as u128,
            self.total as u128 * other.total as u128,
        )
    }

    pub fn same_ratio(&self, (hits, total): (u128, u128)) -> bool {
        self.hits as u128 * total == hits * self.total as u128
    }
}

/// Empirical CDF of one continuous variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Ecdf { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Number of values `< x` (or `<= x` when inclusive).
    pub fn count_below(&self, x: f64, inclusive: bool) -> usize {
        if inclusive {
            self.sorted.partition_point(|&v| v <= x)
        } else {
            self.sorted.partition_point(|&v| v < x)
        }
    }

    /// `F(x) = P(v <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.count_below(x, true) as f64 / self.sorted.len() as f64
    }

    pub fn frequency(&self, p: &Predicate) -> Option<Frequency> {
        let n = self.sorted.len();
        let hits = match *p {
            Predicate::Less { value, inclusive, .. } => self.count_below(value, inclusive),
            Predicate::Greater { value, inclusive, .. } => n - self.count_below(value, !inclusive),
            Predicate::Range { lo, hi, .. } => {
                self.count_below(hi, false).saturating_sub(self.count_below(lo, false))
            }
            Predicate::ClassIn { .. } => return None,
        };
        Some(Frequency {
            hits: hits as u64,
            total: n as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Binning {
    pub edges: Vec<f64>,
    /// Bins are `(lo, hi]` when set, `[lo, hi)` otherwise.
    pub closed_right: bool,
}

impl Binning {
    pub fn index(&self, v: f64) -> usize {
        if self.closed_right {
            self.edges.partition_point(|&e| e < v)
        } else {
            self.edges.partition_point(|&e| e <= v)
        }
    }

    pub fn label(&self, i: usize) -> String {
        let lo = if i == 0 { "-inf".to_string() } else { self.edges[i - 1].to_string() };
        let hi = if i == self.edges.len() { "inf".to_string() } else { self.edges[i].to_string() };
        if self.closed_right {
            format!("({lo}, {hi}]")
        } else {
            format!("[{lo}, {hi})")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KeepSpec {
    Discrete(Variable),
    Binned(Variable, Binning),
}

impl KeepSpec {
    pub fn variable(&self) -> Variable {
        match self {
            KeepSpec::Discrete(v) | KeepSpec::Binned(v, _) => *v,
        }
    }

    fn key(&self, r: &EvaluationRecord) -> Option<CellKey> {
        match self {
            KeepSpec::Discrete(v) => v.class_of(r).map(CellKey::Class),
            KeepSpec::Binned(v, b) => v.real_of(r).map(|x| CellKey::Bin(b.index(x))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellKey {
    Class(ClassId),
    Bin(usize),
}

/// Joint frequency table over the kept variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    pub keep: Vec<KeepSpec>,
    pub counts: BTreeMap<Vec<CellKey>, u64>,
    pub total: u64,
}

impl MarginalTable {
    pub fn probability(&self, key: &[CellKey]) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(key).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn sum(&self) -> f64 {
        self.counts.values().map(|&c| c as f64 / self.total as f64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Keeps only rows whose value on `axis` passes `allow`, renormalizing.
    pub fn condition(&self, axis: usize, allow: impl Fn(&CellKey) -> bool) -> MarginalTable {
        let counts: BTreeMap<Vec<CellKey>, u64> = self
            .counts
            .iter()
            .filter(|(k, _)| allow(&k[axis]))
            .map(|(k, &c)| (k.clone(), c))
            .collect();
        let total = counts.values().sum();
        MarginalTable {
            keep: self.keep.clone(),
            counts,
            total,
        }
    }

    /// Sums out every axis not listed in `axes`.
    pub fn marginalize(&self, axes: &[usize]) -> MarginalTable {
        let mut counts = BTreeMap::new();
        for (k, &c) in &self.counts {
            let sub: Vec<CellKey> = axes.iter().map(|&a| k[a]).collect();
            *counts.entry(sub).or_insert(0) += c;
        }
        MarginalTable {
            keep: axes.iter().map(|&a| self.keep[a].clone()).collect(),
            counts,
            total: self.total,
        }
    }

    pub fn to_json(&self, h: &ClassHierarchy) -> Value {
        let labels = |k: &[CellKey]| -> Vec<Value> {
            k.iter()
                .zip(&self.keep)
                .map(|(key, spec)| match (key, spec) {
                    (CellKey::Class(c), _) => Value::from(h.name(*c)),
                    (CellKey::Bin(i), KeepSpec::Binned(_, b)) => Value::from(b.label(*i)),
                    (CellKey::Bin(i), _) => Value::from(*i),
                })
                .collect()
        };
        let index = |k: &[CellKey]| -> Vec<Value> {
            k.iter()
                .map(|key| match key {
                    CellKey::Class(c) => Value::from(c.0),
                    CellKey::Bin(i) => Value::from(*i),
                })
                .collect()
        };
        let entries: Vec<Value> = self
            .counts
            .iter()
            .map(|(k, &c)| {
                serde_json::json!({
                    "values": labels(k),
                    "index": index(k),
                    "count": c,
                    "probability": c as f64 / self.total as f64,
                })
            })
            .collect();
        let mut bins = serde_json::Map::new();
        for spec in &self.keep {
            if let KeepSpec::Binned(v, b) = spec {
                bins.insert(v.name().to_string(), serde_json::to_value(b).unwrap());
            }
        }
        serde_json::json!({
            "variables": self.keep.iter().map(|k| k.variable().name()).collect::<Vec<_>>(),
            "total": self.total,
            "entries": entries,
            "bins": bins,
        })
    }
}

/// Immutable record store answering distribution queries.
#[derive(Debug, Clone)]
pub struct RecordStore {
    records: Arc<[EvaluationRecord]>,
    hierarchy: Arc<ClassHierarchy>,
}

impl RecordStore {
    pub fn new(records: Vec<EvaluationRecord>, hierarchy: ClassHierarchy) -> Self {
        RecordStore {
            records: records.into(),
            hierarchy: Arc::new(hierarchy),
        }
    }

    pub fn records(&self) -> &[EvaluationRecord] {
        &self.records
    }

    pub fn hierarchy(&self) -> &ClassHierarchy {
        &self.hierarchy
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn supported<'a>(
        &'a self,
        vars: &'a BTreeSet<Variable>,
    ) -> impl Iterator<Item = &'a EvaluationRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| vars.iter().all(|v| v.is_defined(r)))
    }

    fn all_match(&self, preds: &[Predicate], r: &EvaluationRecord) -> bool {
        preds.iter().all(|p| p.matches(r, &self.hierarchy))
    }

    /// Frequency of `conds` among records on which every variable of
    /// `conds` and `support` is defined.
    pub fn frequency_within(&self, conds: &[Predicate], support: &[Variable]) -> Frequency {
        let vars: BTreeSet<Variable> = conds
            .iter()
            .map(Predicate::variable)
            .chain(support.iter().copied())
            .collect();
        let mut f = Frequency { hits: 0, total: 0 };
        for r in self.supported(&vars) {
            f.total += 1;
            if self.all_match(conds, r) {
                f.hits += 1;
            }
        }
        f
    }

    pub fn frequency(&self, conds: &[Predicate]) -> Result<Frequency> {
        if self.records.is_empty() {
            return Err(Error::query("record store is empty"));
        }
        let f = self.frequency_within(conds, &[]);
        if f.total == 0 {
            // no record carries the conditioned variables: the event is empty
            return Ok(Frequency { hits: 0, total: 1 });
        }
        Ok(f)
    }

    pub fn probability(&self, conds: &[Predicate]) -> Result<f64> {
        self.frequency(conds).map(|f| f.value())
    }

    /// `P(event | given)` over the records defining every involved variable.
    pub fn conditional_frequency(&self, event: &[Predicate], given: &[Predicate]) -> Result<Frequency> {
        let vars: BTreeSet<Variable> = event
            .iter()
            .chain(given)
            .map(Predicate::variable)
            .collect();
        let mut f = Frequency { hits: 0, total: 0 };
        for r in self.supported(&vars) {
            if self.all_match(given, r) {
                f.total += 1;
                if self.all_match(event, r) {
                    f.hits += 1;
                }
            }
        }
        if f.total == 0 {
            return Err(Error::UndefinedConditional);
        }
        Ok(f)
    }

    pub fn conditional_probability(&self, event: &[Predicate], given: &[Predicate]) -> Result<f64> {
        self.conditional_frequency(event, given).map(|f| f.value())
    }

    /// The store restricted to records satisfying `conds`.
    pub fn condition(&self, conds: &[Predicate]) -> RecordStore {
        let records: Vec<EvaluationRecord> = self
            .records
            .iter()
            .filter(|r| self.all_match(conds, r))
            .cloned()
            .collect();
        RecordStore {
            records: records.into(),
            hierarchy: Arc::clone(&self.hierarchy),
        }
    }

    pub fn ecdf(&self, var: Variable, conds: &[Predicate]) -> Ecdf {
        let values = self
            .records
            .iter()
            .filter(|r| self.all_match(conds, r))
            .filter_map(|r| var.real_of(r))
            .collect();
        Ecdf::new(values)
    }

    pub fn resolve_keep(&self, raw: &[RawKeep]) -> Result<Vec<KeepSpec>> {
        raw.iter()
            .map(|k| match k {
                RawKeep::Name(name) => {
                    let v = Variable::parse(name)?;
                    if v.is_discrete() {
                        Ok(KeepSpec::Discrete(v))
                    } else {
                        Err(Error::query(format!(
                            "continuous variable {v} needs 'edges' or 'bins'"
                        )))
                    }
                }
                RawKeep::Binned { var, edges, bins } => {
                    let v = Variable::parse(var)?;
                    if v.is_discrete() {
                        return Ok(KeepSpec::Discrete(v));
                    }
                    match (edges, bins) {
                        (Some(e), None) => {
                            if e.windows(2).any(|w| w[0] >= w[1]) {
                                return Err(Error::query("bin edges must be strictly increasing"));
                            }
                            Ok(KeepSpec::Binned(
                                v,
                                Binning { edges: e.clone(), closed_right: false },
                            ))
                        }
                        (None, Some(n)) if *n >= 1 => {
                            let values: Vec<f64> =
                                self.records.iter().filter_map(|r| v.real_of(r)).collect();
                            let edges = if values.is_empty() {
                                Vec::new()
                            } else {
                                discretize(&values, *n)?.boundaries
                            };
                            Ok(KeepSpec::Binned(v, Binning { edges, closed_right: true }))
                        }
                        _ => Err(Error::query(format!(
                            "{v} needs exactly one of 'edges' or a positive 'bins'"
                        ))),
                    }
                }
            })
            .collect()
    }

    pub fn marginal_table(&self, keep: &[KeepSpec], conds: &[Predicate]) -> MarginalTable {
        let vars: BTreeSet<Variable> = keep
            .iter()
            .map(KeepSpec::variable)
            .chain(conds.iter().map(Predicate::variable))
            .collect();
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for r in self.supported(&vars) {
            if !self.all_match(conds, r) {
                continue;
            }
            let key: Option<Vec<CellKey>> = keep.iter().map(|k| k.key(r)).collect();
            if let Some(key) = key {
                *counts.entry(key).or_insert(0) += 1;
                total += 1;
            }
        }
        MarginalTable {
            keep: keep.to_vec(),
            counts,
            total,
        }
    }

    /// Evaluates a wire query: a marginal table when `keep` is present,
    /// otherwise a probability (conditional when `given` is present).
    pub fn evaluate(&self, q: &DistributionQuery) -> Result<Value> {
        let conds = resolve_all(&q.conditions, &self.hierarchy)?;
        if let Some(keep) = &q.keep {
            let mut conds = conds;
            if let Some(given) = &q.given {
                conds.extend(resolve_all(given, &self.hierarchy)?);
            }
            let keep = self.resolve_keep(keep)?;
            let table = self.marginal_table(&keep, &conds);
            if keep.is_empty() {
                // everything summed out: the total mass of the conditioned table
                if table.is_empty() {
                    return Err(Error::UndefinedConditional);
                }
                return Ok(serde_json::json!({
                    "probability": table.sum(),
                    "hits": table.total,
                    "total": table.total,
                }));
            }
            return Ok(table.to_json(&self.hierarchy));
        }
        let f = match &q.given {
            Some(given) => {
                let given = resolve_all(given, &self.hierarchy)?;
                self.conditional_frequency(&conds, &given)?
            }
            None => self.frequency(&conds)?,
        };
        Ok(serde_json::json!({
            "probability": f.value(),
            "hits": f.hits,
            "total": f.total,
        }))
    }
}
