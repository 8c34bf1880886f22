//! Acceptance criteria, one line per criterion. Runs without the libtest
//! harness so the lines show up in plain `cargo test` output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unieval::data::{compute_attributes, ClassNode, GroundTruthObject, PredictedObject};
use unieval::grid::{assign_to_grid, grid_side, layout, Pca};
use unieval::matcher::{match_dataset_with, match_image, MatchResult};
use unieval::metrics::average_precision;
use unieval::prob::{CellKey, KeepSpec, Binning, Predicate, Variable};
use unieval::subsets::{
    discretize, intervals_for_beta, mine_subsets, DiscretizationSpec, SubsetAttribute, DEFAULT_BETA,
};
use unieval::synth::{synth_dataset, SynthConfig};
use unieval::{
    build_matrix, BBox, ClassHierarchy, ClassId, Dataset, EvaluationRecord, MatchingConfig, MatrixMode,
    MatrixSpec, RecordStore,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------------------
// shared helpers

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gt(id: i64, image: i64, class: i64, b: [f64; 4]) -> GroundTruthObject {
    let bbox = BBox::new(b[0], b[1], b[2], b[3]);
    GroundTruthObject {
        id,
        image_id: image,
        class: ClassId(class),
        bbox: Some(bbox),
        mask: None,
        is_crowd: false,
        attributes: compute_attributes(&bbox, None).ok(),
    }
}

fn pred(id: i64, image: i64, class: i64, b: [f64; 4], confidence: f64) -> PredictedObject {
    let bbox = BBox::new(b[0], b[1], b[2], b[3]);
    PredictedObject {
        id,
        image_id: image,
        class: ClassId(class),
        bbox: Some(bbox),
        mask: None,
        confidence,
        attributes: compute_attributes(&bbox, None).ok(),
    }
}

/// Box IoU written out from the corner coordinates.
fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn blank(image: i64, gt_class: i64, pred_class: i64) -> EvaluationRecord {
    EvaluationRecord {
        image_id: image,
        gt_id: None,
        pred_id: None,
        gt_class: ClassId(gt_class),
        pred_class: ClassId(pred_class),
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

fn tp(image: i64, gt_id: i64, pred_id: i64, class: i64, iou: f64, conf: f64) -> EvaluationRecord {
    EvaluationRecord {
        gt_id: Some(gt_id),
        pred_id: Some(pred_id),
        iou: Some(iou),
        confidence: Some(conf),
        ..blank(image, class, class)
    }
}

fn fp(image: i64, pred_id: i64, class: i64, conf: f64) -> EvaluationRecord {
    EvaluationRecord {
        pred_id: Some(pred_id),
        confidence: Some(conf),
        ..blank(image, 0, class)
    }
}

fn missed(image: i64, gt_id: i64, class: i64) -> EvaluationRecord {
    EvaluationRecord {
        gt_id: Some(gt_id),
        ..blank(image, class, 0)
    }
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_unieval"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o.stdout)
}

fn fuzz_config(images: usize, seed: u64) -> SynthConfig {
    // at most 9 matched-object predictions plus one clutter box per image
    SynthConfig {
        images,
        classes: 8,
        max_objects: 9,
        clutter: 0.6,
        seed,
        ..SynthConfig::default()
    }
}

fn fuzz_corpus() -> &'static Dataset {
    static CORPUS: OnceLock<Dataset> = OnceLock::new();
    CORPUS.get_or_init(|| synth_dataset(&fuzz_config(10_000, 2024)).expect("synthetic corpus"))
}

fn per_image(ds: &Dataset) -> BTreeMap<i64, (Vec<&GroundTruthObject>, Vec<&PredictedObject>)> {
    let mut out: BTreeMap<i64, (Vec<&GroundTruthObject>, Vec<&PredictedObject>)> = BTreeMap::new();
    for g in &ds.ground_truth {
        out.entry(g.image_id).or_default().0.push(g);
    }
    for p in &ds.predictions {
        out.entry(p.image_id).or_default().1.push(p);
    }
    out
}

// ---------------------------------------------------------------------------
// matching

fn matching_defaults() -> Outcome {
    let start = Instant::now();
    let cfg = MatchingConfig::default();
    ensure!(
        (cfg.lambda1, cfg.lambda2, cfg.alpha) == (0.5, 0.25, 0.1),
        "defaults are {cfg:?}"
    );
    let g1 = gt(1, 1, 1, [0.0, 0.0, 10.0, 10.0]);
    let g2 = gt(2, 1, 1, [12.0, 0.0, 10.0, 10.0]);
    let p2 = pred(2, 1, 1, [12.0, 1.0, 10.0, 10.0], 0.9);
    let p1 = pred(1, 1, 1, [7.0, 0.0, 10.0, 10.0], 0.8);
    let r = match_image(&[&g1, &g2], &[&p1, &p2], &cfg, false).map_err(|e| e.to_string())?;
    let pairs: BTreeSet<(i64, i64)> = r.pairs.iter().map(|p| (p.pred_id, p.gt_id)).collect();
    ensure!(
        pairs == BTreeSet::from([(1, 1), (2, 2)]),
        "pairs {pairs:?}"
    );
    ensure!(r.unmatched_predictions.is_empty() && r.unmatched_ground_truth.is_empty(), "{r:?}");
    // P1 prefers the free G1 (3/17 overlap) over the taken G2 (1/3 overlap)
    let to_g1 = 0.5 + 0.25 * (30.0 / 170.0) + 0.25;
    let to_g2 = 0.5 + 0.25 * (50.0 / 150.0) + 0.25 * (-1.0f64).exp();
    let p1_award = r.pairs.iter().find(|p| p.pred_id == 1).unwrap().award.total;
    ensure!((p1_award - to_g1).abs() < 1e-12 && to_g1 > to_g2, "award {p1_award}");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = repo_root().join("fixtures/tiny");
    cli(
        dir.path(),
        &[
            "ingest",
            fixtures.join("gt.json").to_str().unwrap(),
            fixtures.join("pred.json").to_str().unwrap(),
        ],
    )?;
    let out = String::from_utf8(cli(dir.path(), &["match", "dataset.bin"])?).unwrap();
    ensure!(out.contains("lambda1=0.5 lambda2=0.25 alpha=0.1"), "header: {out}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("pairs {{P1-G1, P2-G2}}, award {p1_award:.4}, {elapsed:.2?}"))
}

/// Recomputes every award from scratch at each greedy step.
fn greedy_oracle(
    gts: &[GroundTruthObject],
    preds: &[PredictedObject],
    cfg: &MatchingConfig,
) -> (Vec<(i64, i64)>, BTreeSet<i64>, BTreeSet<i64>) {
    let mut order: Vec<&PredictedObject> = preds.iter().collect();
    order.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap().then(a.id.cmp(&b.id)));
    let mut by_id: Vec<&GroundTruthObject> = gts.iter().collect();
    by_id.sort_by_key(|g| g.id);
    let mut pairs: Vec<(i64, i64)> = Vec::new();
    let mut lonely = BTreeSet::new();
    for p in order {
        let mut best: Option<(i64, f64)> = None;
        for g in &by_id {
            let iou = oracle_iou(p.bbox.as_ref().unwrap(), g.bbox.as_ref().unwrap());
            if iou < cfg.alpha {
                continue;
            }
            let n = pairs.iter().filter(|(_, gg)| *gg == g.id).count() as f64;
            let label = if g.class == p.class { 1.0 } else { 0.0 };
            let award =
                cfg.lambda1 * label + cfg.lambda2 * iou + (1.0 - cfg.lambda1 - cfg.lambda2) * (-n).exp();
            if best.is_none_or(|(_, b)| award > b) {
                best = Some((g.id, award));
            }
        }
        match best {
            Some((g, _)) => pairs.push((p.id, g)),
            None => {
                lonely.insert(p.id);
            }
        }
    }
    let used: BTreeSet<i64> = pairs.iter().map(|(_, g)| *g).collect();
    let unmatched = gts.iter().map(|g| g.id).filter(|g| !used.contains(g)).collect();
    (pairs, lonely, unmatched)
}

fn greedy_oracle_equivalence() -> Outcome {
    let mut rng = rng(11);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let l1 = rng.random_range(0.0..=1.0f64);
        let l2 = rng.random_range(0.0..=1.0 - l1);
        let alpha = [0.0, 0.1, 0.1, 0.3, 0.5][rng.random_range(0..5)];
        let cfg = MatchingConfig { lambda1: l1, lambda2: l2, alpha, include_crowd: false };
        let rand_box = |rng: &mut ChaCha8Rng| {
            [
                f64::from(rng.random_range(0..20u8)),
                f64::from(rng.random_range(0..20u8)),
                f64::from(rng.random_range(2..14u8)),
                f64::from(rng.random_range(2..14u8)),
            ]
        };
        let ng = rng.random_range(0..=4);
        let np = rng.random_range(0..=4);
        let gts: Vec<GroundTruthObject> = (0..ng)
            .map(|i| gt(i + 1, 1, rng.random_range(1..=2), rand_box(&mut rng)))
            .collect();
        let preds: Vec<PredictedObject> = (0..np)
            .map(|i| {
                let conf = [0.3, 0.5, 0.5, 0.9][rng.random_range(0..4)];
                pred(i + 1, 1, rng.random_range(1..=2), rand_box(&mut rng), conf)
            })
            .collect();
        let g_refs: Vec<&GroundTruthObject> = gts.iter().collect();
        let p_refs: Vec<&PredictedObject> = preds.iter().collect();
        let got = match_image(&g_refs, &p_refs, &cfg, false).map_err(|e| e.to_string())?;
        let (pairs, lonely, unmatched) = greedy_oracle(&gts, &preds, &cfg);
        let got_pairs: Vec<(i64, i64)> = got.pairs.iter().map(|p| (p.pred_id, p.gt_id)).collect();
        let got_lonely: BTreeSet<i64> = got.unmatched_predictions.iter().copied().collect();
        let got_unmatched: BTreeSet<i64> = got.unmatched_ground_truth.iter().copied().collect();
        if got_pairs != pairs || got_lonely != lonely || got_unmatched != unmatched {
            mismatches += 1;
        }
    }
    ensure!(mismatches == 0, "{mismatches} of 1000 instances differ");
    Ok("1000 instances, 0 mismatches".to_string())
}

fn check_match_result(
    gts: &[&GroundTruthObject],
    preds: &[&PredictedObject],
    r: &MatchResult,
    cfg: &MatchingConfig,
) -> Result<(), String> {
    let mut seen: HashMap<i64, usize> = HashMap::new();
    for id in r.pairs.iter().map(|p| p.pred_id).chain(r.unmatched_predictions.iter().copied()) {
        *seen.entry(id).or_insert(0) += 1;
    }
    ensure!(
        seen.len() == preds.len() && seen.values().all(|&c| c == 1),
        "prediction used more than once or dropped"
    );
    let gt_of: HashMap<i64, &GroundTruthObject> = gts.iter().map(|g| (g.id, *g)).collect();
    let pred_of: HashMap<i64, &PredictedObject> = preds.iter().map(|p| (p.id, *p)).collect();
    let mut taken: HashMap<i64, u32> = HashMap::new();
    for pair in &r.pairs {
        let g = gt_of[&pair.gt_id];
        let p = pred_of[&pair.pred_id];
        let iou = oracle_iou(g.bbox.as_ref().unwrap(), p.bbox.as_ref().unwrap());
        ensure!(pair.iou >= cfg.alpha, "pair below alpha: {}", pair.iou);
        ensure!((pair.iou - iou).abs() <= 1e-12, "iou {} vs {iou}", pair.iou);
        let n = taken.entry(pair.gt_id).or_insert(0);
        let label = if g.class == p.class { 1.0 } else { 0.0 };
        let want = cfg.lambda1 * label
            + cfg.lambda2 * iou
            + (1.0 - cfg.lambda1 - cfg.lambda2) * (-f64::from(*n)).exp();
        *n += 1;
        ensure!((pair.award.total - want).abs() <= 1e-12, "award {} vs {want}", pair.award.total);
    }
    let unmatched: BTreeSet<i64> = gts.iter().map(|g| g.id).filter(|g| !taken.contains_key(g)).collect();
    let reported: BTreeSet<i64> = r.unmatched_ground_truth.iter().copied().collect();
    ensure!(unmatched == reported, "unmatched ground truth differs");
    Ok(())
}

fn matching_constraints_on_fuzz_corpus() -> Outcome {
    let ds = fuzz_corpus();
    let cfg = MatchingConfig::default();
    let mut pairs = 0;
    let mut matched_gts = 0;
    let mut images = 0;
    for (image, (gts, preds)) in per_image(ds) {
        let r = match_image(&gts, &preds, &cfg, false).map_err(|e| e.to_string())?;
        check_match_result(&gts, &preds, &r, &cfg).map_err(|e| format!("image {image}: {e}"))?;
        pairs += r.pairs.len();
        matched_gts += gts.len() - r.unmatched_ground_truth.len();
        images += 1;
    }
    let records = match_dataset_with(ds, &cfg, false).map_err(|e| e.to_string())?;
    let expected = ds.predictions.len() + ds.ground_truth.len() - matched_gts;
    ensure!(records.len() == expected, "{} records, expected {expected}", records.len());
    ensure!(ds.images.len() == 10_000, "corpus has {} images", ds.images.len());
    Ok(format!("{} images ({images} with objects), {pairs} pairs, 0 violations", ds.images.len()))
}

fn linear_scaling() -> Outcome {
    let small = fuzz_corpus();
    let large = synth_dataset(&fuzz_config(20_000, 2025)).map_err(|e| e.to_string())?;
    for ds in [small, &large] {
        let (g, p) = per_image(ds).values().fold((0, 0), |(g, p), (a, b)| (g.max(a.len()), p.max(b.len())));
        ensure!(g <= 10 && p <= 10, "per-image sizes {g}/{p} exceed 10");
    }
    let cfg = MatchingConfig::default();
    let time = |ds: &Dataset| -> Result<Duration, String> {
        let mut best = Duration::MAX;
        for _ in 0..3 {
            let t = Instant::now();
            let r = match_dataset_with(ds, &cfg, false).map_err(|e| e.to_string())?;
            best = best.min(t.elapsed());
            std::hint::black_box(r);
        }
        Ok(best)
    };
    let t1 = time(small)?;
    let t2 = time(&large)?;
    let ratio = t2.as_secs_f64() / t1.as_secs_f64();
    ensure!(t1 < Duration::from_secs(10), "10k images took {t1:?}");
    ensure!(ratio <= 2.5, "doubling took {ratio:.2}x ({t1:?} -> {t2:?})");
    Ok(format!("10k images {t1:.2?}, 20k images {t2:.2?}, ratio {ratio:.2}"))
}

// ---------------------------------------------------------------------------
// probability engine and matrices

fn hierarchy() -> ClassHierarchy {
    let node = |id: i64, name: &str, parent: Option<i64>| ClassNode {
        id: ClassId(id),
        name: name.to_string(),
        parent: parent.map(ClassId),
    };
    ClassHierarchy::new(vec![
        node(10, "animal", None),
        node(20, "vehicle", None),
        node(1, "cat", Some(10)),
        node(2, "dog", Some(10)),
        node(3, "car", Some(20)),
        node(4, "bus", Some(20)),
        node(5, "bird", None),
    ])
    .unwrap()
}

const LEAVES: [i64; 5] = [1, 2, 3, 4, 5];

fn random_records(rng: &mut ChaCha8Rng, n: usize) -> Vec<EvaluationRecord> {
    let class = |rng: &mut ChaCha8Rng| LEAVES[rng.random_range(0..LEAVES.len())];
    (0..n as i64)
        .map(|i| {
            let image = rng.random_range(1..6);
            let conf = (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0;
            let gt_size = f64::from(rng.random_range(1..50u8));
            let pred_size = f64::from(rng.random_range(1..50u8));
            match rng.random_range(0..4) {
                0 => EvaluationRecord { gt_size: Some(gt_size), ..missed(image, i, class(rng)) },
                1 => EvaluationRecord { pred_size: Some(pred_size), ..fp(image, i, class(rng), conf) },
                _ => EvaluationRecord {
                    gt_class: ClassId(class(rng)),
                    gt_size: Some(gt_size),
                    pred_size: Some(pred_size),
                    ..tp(image, i, i, class(rng), 0.7, conf)
                },
            }
        })
        .collect()
}

fn class_in(var: Variable, classes: Vec<ClassId>) -> Predicate {
    Predicate::ClassIn { var, classes, negate: false }
}

fn probability_axioms() -> Outcome {
    let mut rng = rng(5);
    let h = hierarchy();
    let conf_bins = KeepSpec::Binned(Variable::ConfidenceY, Binning { edges: vec![0.25, 0.5, 0.75], closed_right: false });
    let size_bins = KeepSpec::Binned(Variable::SizeX, Binning { edges: vec![10.0, 30.0], closed_right: false });
    let pool = [
        KeepSpec::Discrete(Variable::LabelX),
        KeepSpec::Discrete(Variable::LabelY),
        conf_bins.clone(),
        size_bins,
    ];
    let mut tables = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..80);
        let records = random_records(&mut rng, n);
        let store = RecordStore::new(records.clone(), h.clone());

        for _ in 0..4 {
            let mut keep: Vec<KeepSpec> = pool.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
            if keep.is_empty() {
                keep.push(pool[rng.random_range(0..pool.len())].clone());
            }
            let t = store.marginal_table(&keep, &[]);
            if t.total > 0 {
                let s: f64 = t.counts.keys().map(|k| t.probability(k)).sum();
                ensure!((s - 1.0).abs() <= 1e-12, "table sums to {s}");
                tables += 1;
            }
        }

        // chain rule, with P(B) on the support of both events
        let threshold = rng.random_range(0.0..1.0f64);
        let a = vec![Predicate::Greater { var: Variable::ConfidenceY, value: threshold, inclusive: false }];
        let c = ClassId(LEAVES[rng.random_range(0..LEAVES.len())]);
        let b = vec![class_in(Variable::LabelX, vec![c])];
        let joint = store.frequency(&[a.clone(), b.clone()].concat()).map_err(|e| e.to_string())?;
        let defined: Vec<&EvaluationRecord> = records.iter().filter(|r| r.confidence.is_some()).collect();
        let hits = defined.iter().filter(|r| r.gt_class == c && r.confidence.unwrap() > threshold).count() as u64;
        if defined.is_empty() {
            ensure!(joint.hits == 0, "joint on an empty support");
            continue;
        }
        ensure!(
            (joint.hits, joint.total) == (hits, defined.len() as u64),
            "joint {joint:?} vs counted {hits}/{}",
            defined.len()
        );
        let pb = store.frequency_within(&b, &[Variable::ConfidenceY]);
        match store.conditional_frequency(&a, &b) {
            Ok(cond) => ensure!(joint.same_ratio(cond.times(&pb)), "chain rule fails: {joint:?} {cond:?} {pb:?}"),
            Err(_) => ensure!(joint.hits == 0 && pb.hits == 0, "undefined conditional with mass"),
        }

        // condition on Label_X, sum out confidence, in both orders
        let full = store.marginal_table(
            &[KeepSpec::Discrete(Variable::LabelX), KeepSpec::Discrete(Variable::LabelY), conf_bins.clone()],
            &[],
        );
        let allowed: BTreeSet<ClassId> = LEAVES.iter().map(|&l| ClassId(l)).filter(|_| rng.random_bool(0.5)).collect();
        let allow = |k: &CellKey| matches!(k, CellKey::Class(c) if allowed.contains(c));
        let one = full.condition(0, allow).marginalize(&[0, 1]);
        let two = full.marginalize(&[0, 1]).condition(0, allow);
        ensure!(one.counts == two.counts && one.total == two.total, "condition/marginalize do not commute");
        let two_keep = [KeepSpec::Discrete(Variable::LabelX), KeepSpec::Discrete(Variable::LabelY)];
        let direct = store.marginal_table(&two_keep, &[class_in(Variable::LabelX, allowed.iter().copied().collect())]);
        let via = store.marginal_table(&two_keep, &[]).condition(0, allow);
        ensure!(direct.counts == via.counts && direct.total == via.total, "store and table conditioning differ");
    }
    Ok(format!("500 stores, {tables} tables sum to 1, chain rule and commutation exact"))
}

fn confusion_equivalence() -> Outcome {
    let mut rng = rng(6);
    let h = hierarchy();
    let bg = h.background();
    let mut fixtures: Vec<Vec<EvaluationRecord>> = (0..300)
        .map(|_| {
            let n = rng.random_range(1..60);
            random_records(&mut rng, n)
        })
        .collect();
    for r in fixtures.iter_mut().flatten() {
        if r.gt_id.is_none() {
            r.gt_class = bg;
        }
        if r.pred_id.is_none() {
            r.pred_class = bg;
        }
    }
    for records in &fixtures {
        let store = RecordStore::new(records.clone(), h.clone());
        let table = store.marginal_table(
            &[KeepSpec::Discrete(Variable::LabelX), KeepSpec::Discrete(Variable::LabelY)],
            &[],
        );
        let mut spec = MatrixSpec::new(MatrixMode::Confusion);
        spec.leaves = true;
        spec.reorder = false;
        let leaves = build_matrix(records, &h, &spec, true).map_err(|e| e.to_string())?;
        ensure!(leaves.total == table.total, "totals {} vs {}", leaves.total, table.total);
        let mut axis: Vec<ClassId> = LEAVES.iter().map(|&l| ClassId(l)).collect();
        axis.push(bg);
        for &g in &axis {
            for &p in &axis {
                let key = vec![CellKey::Class(g), CellKey::Class(p)];
                let count = leaves.count(g, p).ok_or(format!("no cell {g}/{p}"))?;
                let want = table.counts.get(&key).copied().unwrap_or(0);
                ensure!(count == want, "cell {g}/{p}: {count} vs {want}");
                let freq = count as f64 / leaves.total as f64;
                ensure!((freq - table.probability(&key)).abs() <= 1e-12, "frequency differs");
            }
        }
        spec.leaves = false;
        let tops = build_matrix(records, &h, &spec, true).map_err(|e| e.to_string())?;
        let ids: Vec<ClassId> = tops.rows.iter().map(|e| e.id).collect();
        for &g in &ids {
            for &p in &ids {
                let sum: u64 = h
                    .leaf_descendants(g)
                    .iter()
                    .flat_map(|&a| h.leaf_descendants(p).into_iter().map(move |b| (a, b)))
                    .map(|(a, b)| leaves.count(a, b).unwrap_or(0))
                    .sum();
                let got = tops.count(g, p).ok_or(format!("no cell {g}/{p}"))?;
                ensure!(got == sum, "super-class cell {g}/{p}: {got} vs leaf sum {sum}");
            }
        }
    }
    Ok(format!("{} fixtures, leaf and super-class cells agree", fixtures.len()))
}

fn size_direction_partitions() -> Outcome {
    let ds = fuzz_corpus();
    let records = match_dataset_with(ds, &MatchingConfig::default(), true).map_err(|e| e.to_string())?;
    let mut spec = MatrixSpec::new(MatrixMode::Size);
    spec.leaves = true;
    spec.reorder = false;
    let m = build_matrix(&records, &ds.hierarchy, &spec, true).map_err(|e| e.to_string())?;
    let index = |axis: &[unieval::matrix::AxisEntry]| -> HashMap<ClassId, usize> {
        axis.iter().enumerate().map(|(i, e)| (e.id, i)).collect()
    };
    let (rows, cols) = (index(&m.rows), index(&m.cols));
    let mut pairs: HashMap<(usize, usize), u64> = HashMap::new();
    let mut sectors: HashMap<(usize, usize), [u64; 3]> = HashMap::new();
    let mut centered: HashMap<(usize, usize), u64> = HashMap::new();
    for r in &records {
        let (Some(gs), Some(ps), Some([dx, dy])) = (r.gt_size, r.pred_size, r.shift) else { continue };
        if r.gt_id.is_none() || r.pred_id.is_none() {
            continue;
        }
        let slot = (rows[&r.gt_class], cols[&r.pred_class]);
        *pairs.entry(slot).or_insert(0) += 1;
        let ratio = ps / gs;
        let s = if ratio < 0.9 { 0 } else if ratio > 1.1 { 2 } else { 1 };
        sectors.entry(slot).or_insert([0; 3])[s] += 1;
        if (dx * dx + dy * dy).sqrt() <= 0.05 {
            *centered.entry(slot).or_insert(0) += 1;
        }
    }
    let mut violations = 0;
    for cell in &m.cells {
        let slot = (cell.r, cell.c);
        let want = pairs.get(&slot).copied().unwrap_or(0);
        let size_sum: u64 = cell.size.iter().sum();
        let dir_sum: u64 = cell.dir.iter().sum();
        let center = cell.dir[unieval::matrix::Direction::Center.index()];
        if size_sum != want
            || dir_sum != want
            || cell.size != sectors.get(&slot).copied().unwrap_or([0; 3])
            || center != centered.get(&slot).copied().unwrap_or(0)
        {
            violations += 1;
        }
    }
    ensure!(violations == 0, "{violations} cells violate the partition");
    let total: u64 = pairs.values().sum();
    Ok(format!("{} cells, {total} geometry pairs, 0 violations", m.cells.len()))
}

// ---------------------------------------------------------------------------
// subsets

const MINED: [SubsetAttribute; 3] = [SubsetAttribute::GtSize, SubsetAttribute::GtAspect, SubsetAttribute::Confidence];

fn attr_value(a: SubsetAttribute, r: &EvaluationRecord) -> Option<f64> {
    match a {
        SubsetAttribute::GtSize => r.gt_size,
        SubsetAttribute::GtAspect => r.gt_aspect,
        SubsetAttribute::Confidence => r.confidence,
        _ => unreachable!(),
    }
}

fn subset_records(rng: &mut ChaCha8Rng) -> Vec<EvaluationRecord> {
    let n = rng.random_range(4..60);
    let coarse = rng.random_bool(0.3);
    let value = |rng: &mut ChaCha8Rng, hi: f64| {
        if coarse {
            f64::from(rng.random_range(1..4u8)) * hi / 4.0
        } else {
            rng.random_range(0.01..hi)
        }
    };
    (0..n as i64)
        .map(|i| {
            let class = if rng.random_bool(0.8) { 1 } else { 2 };
            let size = value(rng, 100.0);
            let aspect = value(rng, 1.0);
            let conf = value(rng, 1.0);
            match rng.random_range(0..4) {
                0 => EvaluationRecord { gt_size: Some(size), gt_aspect: Some(aspect), ..missed(1, i, class) },
                1 => fp(1, i, class, conf),
                _ => EvaluationRecord { gt_size: Some(size), gt_aspect: Some(aspect), ..tp(1, i, i, class, 0.8, conf) },
            }
        })
        .collect()
}

fn subset_mining() -> Outcome {
    ensure!(DEFAULT_BETA == 0.1 && intervals_for_beta(DEFAULT_BETA) == 10, "default beta/d");
    let mut rng = rng(8);
    let h = ClassHierarchy::flat([ClassId(1), ClassId(2)]);
    // beta as exact fractions p/q
    let betas = [(1u64, 4u64), (1, 3), (1, 2), (3, 10), (1, 1)];
    let mut compared = 0;
    for _ in 0..200 {
        let records = subset_records(&mut rng);
        let (p, q) = betas[rng.random_range(0..betas.len())];
        let beta = p as f64 / q as f64;
        let spec = DiscretizationSpec::fit(&records, beta, &MINED).map_err(|e| e.to_string())?;
        ensure!(spec.d <= 4, "d = {}", spec.d);
        let mined = mine_subsets(&records, ClassId(1), &spec, &h).map_err(|e| e.to_string())?;

        let members: Vec<&EvaluationRecord> =
            records.iter().filter(|r| r.gt_class == ClassId(1) || r.pred_class == ClassId(1)).collect();
        let s = members.len() as u64;
        let min_sup = (p * s).div_ceil(q).max(1);
        let attrs: Vec<(SubsetAttribute, Vec<f64>)> = MINED
            .iter()
            .filter_map(|a| spec.boundaries.get(a).map(|d| (*a, d.boundaries.clone())))
            .collect();
        let interval = |b: &[f64], v: f64| b.iter().filter(|&&x| x < v).count();
        let items: Vec<Vec<Option<usize>>> = members
            .iter()
            .map(|r| attrs.iter().map(|(a, b)| attr_value(*a, r).map(|v| interval(b, v))).collect())
            .collect();
        let covers = |choice: &[Option<usize>], row: &[Option<usize>]| {
            choice.iter().zip(row).all(|(c, v)| c.is_none() || c == v)
        };
        // every combination of "any" or one interval per attribute
        let mut brute: BTreeMap<Vec<(SubsetAttribute, usize)>, usize> = BTreeMap::new();
        let radix: Vec<usize> = attrs.iter().map(|(_, b)| b.len() + 2).collect();
        let combos: usize = radix.iter().product();
        for mut code in 0..combos {
            let choice: Vec<Option<usize>> = radix
                .iter()
                .map(|&k| {
                    let digit = code % k;
                    code /= k;
                    digit.checked_sub(1)
                })
                .collect();
            let universal = choice.iter().enumerate().any(|(j, c)| {
                c.is_some() && items.iter().all(|row| row[j] == *c)
            });
            if universal {
                continue;
            }
            let support = items.iter().filter(|row| covers(&choice, row)).count();
            if support as u64 >= min_sup {
                let key = choice
                    .iter()
                    .enumerate()
                    .filter_map(|(j, c)| c.map(|i| (attrs[j].0, i)))
                    .collect();
                brute.insert(key, support);
            }
        }
        let got: BTreeMap<Vec<(SubsetAttribute, usize)>, usize> = mined
            .iter()
            .map(|d| {
                let key = d.predicates.iter().map(|p| (p.attribute, p.interval.unwrap())).collect();
                (key, d.support)
            })
            .collect();
        ensure!(got.len() == mined.len(), "duplicate subsets");
        ensure!(got == brute, "mined {got:?} vs brute force {brute:?}");
        ensure!(mined.iter().all(|d| d.support as u64 >= min_sup), "support below minimum");
        compared += brute.len();
    }

    for _ in 0..200 {
        let n: u32 = rng.random_range(1..300);
        let d = rng.random_range(1..15);
        let mut values: Vec<f64> = (0..n).map(|i| f64::from(i) * 1.5 + 3.0).collect();
        values.shuffle(&mut rng);
        let disc = discretize(&values, d).map_err(|e| e.to_string())?;
        let mut counts = vec![0usize; disc.boundaries.len() + 1];
        for &v in &values {
            counts[disc.boundaries.iter().filter(|&&b| b < v).count()] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        ensure!(hi - lo <= 1, "n={n} d={d}: counts {counts:?}");
        ensure!((n as usize) < d || counts.len() == d, "n={n} d={d}: {} intervals", counts.len());
    }
    Ok(format!("200 fixtures, {compared} subsets equal brute force; 200 balance checks"))
}

// ---------------------------------------------------------------------------
// grid

fn exhaustive(points: &[[f64; 2]], side: usize) -> f64 {
    fn go(i: usize, points: &[[f64; 2]], side: usize, used: &mut [bool]) -> f64 {
        if i == points.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..side * side {
            if used[c] {
                continue;
            }
            let cx = ((c % side) as f64 + 0.5) / side as f64;
            let cy = ((c / side) as f64 + 0.5) / side as f64;
            let d = (points[i][0] - cx).powi(2) + (points[i][1] - cy).powi(2);
            used[c] = true;
            best = best.min(d + go(i + 1, points, side, used));
            used[c] = false;
        }
        best
    }
    go(0, points, side, &mut vec![false; side * side])
}

fn grid_layout() -> Outcome {
    let mut rng = rng(9);
    for trial in 0..200 {
        let n = rng.random_range(1..=6);
        let points: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let keys: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let g = assign_to_grid(&points, &keys).map_err(|e| e.to_string())?;
        let side = (1..).find(|s| s * s >= n).unwrap();
        ensure!(g.grid_rows == side && grid_side(n) == side, "trial {trial}: side {}", g.grid_rows);
        let best = exhaustive(&points, side);
        ensure!((g.cost - best).abs() <= 1e-9, "trial {trial}: cost {} vs optimum {best}", g.cost);
    }

    let mut timed = Duration::ZERO;
    for n in [1usize, 2, 7, 50, 500, 2500] {
        let features: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let keys: Vec<String> = (0..n).map(|i| format!("pred:{i}")).collect();
        let t = Instant::now();
        let a = layout(&features, &keys, 17, &Pca).map_err(|e| e.to_string())?;
        let elapsed = t.elapsed();
        let b = layout(&features, &keys, 17, &Pca).map_err(|e| e.to_string())?;
        ensure!(a == b, "n={n}: layout not deterministic");
        let side = a.grid_rows;
        let cells: BTreeSet<(usize, usize)> = a.placements.iter().map(|p| (p.row, p.col)).collect();
        ensure!(cells.len() == n, "n={n}: placement not injective");
        ensure!(cells.iter().all(|&(r, c)| r < side && c < side), "n={n}: cell outside grid");
        if n == 2500 {
            timed = elapsed;
        }
    }
    ensure!(timed < Duration::from_secs(3), "2500 objects took {timed:?}");
    Ok(format!("200 exhaustive trials optimal; 2500 objects laid out in {timed:.2?}"))
}

// ---------------------------------------------------------------------------
// AP

fn ap_oracle() -> Outcome {
    let c = ClassId(1);
    let fixtures: Vec<(&str, Vec<EvaluationRecord>, f64)> = vec![
        ("single hit", vec![tp(1, 1, 1, 1, 1.0, 0.9)], 1.0),
        ("miss then hit", vec![fp(1, 1, 1, 0.9), tp(1, 1, 2, 1, 1.0, 0.8)], 0.5),
        (
            "hit, miss, hit over two objects",
            vec![tp(1, 1, 1, 1, 1.0, 0.9), fp(1, 2, 1, 0.8), tp(1, 2, 3, 1, 1.0, 0.7)],
            (51.0 + 50.0 * 2.0 / 3.0) / 101.0,
        ),
        (
            "three objects, one late hit",
            vec![
                tp(1, 1, 1, 1, 1.0, 0.9),
                tp(1, 2, 2, 1, 1.0, 0.8),
                fp(1, 3, 1, 0.7),
                tp(2, 3, 4, 1, 1.0, 0.6),
            ],
            (67.0 + 34.0 * 0.75) / 101.0,
        ),
        (
            "overlap-dependent hits",
            vec![tp(1, 1, 1, 1, 0.82, 0.9), tp(1, 2, 2, 1, 0.57, 0.6), missed(2, 3, 2)],
            // 0.50, 0.55: both hit; 0.60..0.80: first only; above: none
            (2.0 * 1.0 + 5.0 * 51.0 / 101.0) / 10.0,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (name, records, want) in &fixtures {
        let got = average_precision(records, c).ok_or(format!("{name}: no AP"))?;
        ensure!((got - want).abs() <= 1e-9, "{name}: {got} vs {want}");
        worst = worst.max((got - want).abs());
    }
    Ok(format!("5 fixtures, max error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// CLI pipeline

fn pipeline_outputs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mini = repo_root().join("data/mini");
    let gt = mini.join("gt.json");
    let pred = mini.join("pred.json");
    let steps: Vec<Vec<&str>> = vec![
        vec!["ingest", gt.to_str().unwrap(), pred.to_str().unwrap()],
        vec!["match", "dataset.bin"],
        vec!["eval", "records.ndjson"],
        vec!["eval", "records.ndjson", "--format", "json"],
        vec!["subsets", "records.ndjson", "--class", "1", "--format", "csv"],
        vec!["subsets", "records.ndjson", "--class", "2", "--beta", "0.2", "--sort", "ap:asc,support:desc"],
        vec!["matrix", "records.ndjson"],
        vec!["matrix", "records.ndjson", "--mode", "size", "--leaves", "--format", "json"],
        vec!["matrix", "records.ndjson", "--mode", "direction", "--normalize", "row"],
    ];
    let mut out = Vec::new();
    for args in &steps {
        out.push((args.join(" "), cli(dir, args)?));
    }
    for f in ["dataset.bin", "records.ndjson", "records.ndjson.meta.json"] {
        out.push((f.to_string(), std::fs::read(dir.join(f)).map_err(|e| e.to_string())?));
    }
    Ok(out)
}

fn cli_pipeline_reproducible() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline_outputs(a.path())?;
    let second = pipeline_outputs(b.path())?;
    let mut bytes = 0;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure!(x == y, "'{name}' differs between runs");
        ensure!(!x.is_empty(), "'{name}' is empty");
        bytes += x.len();
    }
    Ok(format!("{} outputs, {bytes} bytes identical", first.len()))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("matching defaults and figure fixture", matching_defaults),
        ("greedy oracle equivalence", greedy_oracle_equivalence),
        ("matching constraints on fuzz corpus", matching_constraints_on_fuzz_corpus),
        ("linear scaling", linear_scaling),
        ("probability axioms", probability_axioms),
        ("confusion equivalence", confusion_equivalence),
        ("size/direction partitions", size_direction_partitions),
        ("subset mining vs brute force", subset_mining),
        ("grid assignment", grid_layout),
        ("AP oracle", ap_oracle),
        ("CLI pipeline reproducibility", cli_pipeline_reproducible),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                Err(format!("panicked: {}", msg.unwrap_or_default()))
            });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
