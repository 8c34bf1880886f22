mod render;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;
use unieval::data::task_flag;
use unieval::grid::{layout, selection_features, ProjectionMethod};
use unieval::metrics::{class_summaries, summary_map, write_summary_csv};
use unieval::prob::{resolve_all, DistributionQuery, RawPredicate};
use unieval::subsets::{parse_rank_keys, rank_subsets, write_subsets_csv, DiscretizationSpec, SubsetAttribute};
use unieval::synth::{synth_coco, SynthConfig};
use unieval::{
    build_matrix, ingest_dataset, Dataset, IngestOptions, MatchingConfig, MatrixMode, MatrixSpec, Normalization,
    RecordSet, RecordStore, RecordsMeta, Task,
};
use unieval_service::{AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "unieval", version, about = "Unified evaluation of classification, detection and segmentation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Cls,
    Det,
    Seg,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Cls => Task::Classification,
            TaskArg::Det => Task::Detection,
            TaskArg::Seg => Task::Segmentation,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Confusion,
    Size,
    Direction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormalizeArg {
    None,
    Row,
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate COCO ground truth and predictions and cache the dataset.
    Ingest {
        gt: PathBuf,
        pred: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// JSON object mapping "pred:<id>" / "gt:<id>" to feature vectors.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value = "dataset.bin")]
        out: PathBuf,
    },
    /// Match predictions to ground truth and write evaluation records.
    Match {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.25)]
        lambda2: f64,
        #[arg(long)]
        include_crowd: bool,
        #[arg(long, default_value = "records.ndjson")]
        out: PathBuf,
    },
    /// Per-class precision, recall and AP plus mAP.
    Eval {
        records: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        confidence_threshold: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Mine and rank candidate problematic subsets of one class.
    Subsets {
        records: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        /// Ranking keys, e.g. "precision:asc:1,gtAspect:desc:1".
        #[arg(long, default_value = "recall:asc")]
        sort: String,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Confusion, size or direction matrix.
    Matrix {
        records: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Confusion)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = NormalizeArg::None)]
        normalize: NormalizeArg,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Class (id or name) whose children form the axes.
        #[arg(long)]
        subtree: Option<String>,
        /// Use leaf classes instead of the top level.
        #[arg(long)]
        leaves: bool,
        /// Keep canonical order instead of the optimal leaf ordering.
        #[arg(long)]
        no_reorder: bool,
        /// JSON list of predicates restricting the records.
        #[arg(long = "where")]
        conditions: Option<String>,
    },
    /// Evaluate a distribution query given as JSON.
    Query { records: PathBuf, query: String },
    /// Grid layout of the selected records as JSON.
    Grid {
        records: PathBuf,
        #[arg(long = "where")]
        conditions: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tsne: bool,
    },
    /// Serve the HTTP API over one or more record files.
    Serve {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        /// Image root directory.
        #[arg(long)]
        images: Option<PathBuf>,
        /// TOML or JSON service configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a seeded synthetic detection dataset.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        images: usize,
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also render placeholder PNG images.
        #[arg(long)]
        render: bool,
    },
}

#[derive(Debug)]
enum CliError {
    /// Bad input or arguments (exit 2).
    Usage(String),
    /// Failure while doing the work (exit 1).
    Runtime(String),
}

impl From<unieval::Error> for CliError {
    fn from(e: unieval::Error) -> Self {
        match e {
            unieval::Error::Io(e) => CliError::Runtime(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{}: no such file", path.display())))
    }
}

fn load_records(path: &Path) -> CliResult<RecordSet> {
    require_file(path)?;
    Ok(RecordSet::load(path)?)
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid {what}: {e}")))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> CliResult {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match command {
        Command::Ingest { gt, pred, task, features, out: path } => {
            require_file(&gt)?;
            require_file(&pred)?;
            if let Some(f) = &features {
                require_file(f)?;
            }
            let opts = IngestOptions { task: task.map(Task::from), features };
            let ds = ingest_dataset(&gt, &pred, &opts)?;
            std::fs::write(&path, ds.to_bytes())?;
            let (images, gts, preds) = ds.counts();
            writeln!(out, "{images} images, {gts} gts, {preds} preds")?;
            writeln!(out, "task {}; dataset written to {}", task_flag(ds.task), path.display())?;
        }
        Command::Match { dataset, alpha, lambda1, lambda2, include_crowd, out: path } => {
            require_file(&dataset)?;
            let ds = Dataset::from_bytes(&std::fs::read(&dataset)?)?;
            let cfg = MatchingConfig { lambda1, lambda2, alpha, include_crowd };
            cfg.validate()?;
            writeln!(out, "matching with lambda1={lambda1} lambda2={lambda2} alpha={alpha}")?;
            let records = unieval::match_dataset(&ds, &cfg)?;
            let set = RecordSet { meta: RecordsMeta::from_dataset(&ds, cfg), records };
            set.save(&path)?;
            writeln!(out, "{} records written to {}", set.records.len(), path.display())?;
        }
        Command::Eval { records, iou_threshold, confidence_threshold, format } => {
            let set = load_records(&records)?;
            let summaries = class_summaries(&set.records, &set.meta.hierarchy, iou_threshold, confidence_threshold);
            let map = summary_map(&summaries);
            match format {
                Format::Csv => write_summary_csv(&summaries, &mut out)?,
                Format::Json => {
                    let v = serde_json::json!({"classes": summaries, "map": map});
                    writeln!(out, "{}", serde_json::to_string_pretty(&v).unwrap())?;
                }
                Format::Table => {
                    writeln!(out, "{:<24} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "ap", "objects")?;
                    for s in &summaries {
                        writeln!(
                            out,
                            "{:<24} {:>9} {:>9} {:>9} {:>8}",
                            s.name,
                            opt(s.precision),
                            opt(s.recall),
                            opt(s.ap),
                            s.object_count
                        )?;
                    }
                    writeln!(out, "mAP {}", opt(map))?;
                }
            }
        }
        Command::Subsets { records, class, beta, sort, limit, format } => {
            let set = load_records(&records)?;
            let h = &set.meta.hierarchy;
            let class_id = h
                .by_name(&class)
                .or_else(|| class.parse().ok().map(unieval::ClassId).filter(|c| h.contains(*c)))
                .ok_or_else(|| CliError::Usage(format!("unknown class '{class}'")))?;
            let keys = parse_rank_keys(&sort)?;
            let spec = DiscretizationSpec::fit(&set.records, beta, &SubsetAttribute::DEFAULT)?;
            let mined = unieval::subsets::mine_subsets(&set.records, class_id, &spec, h)?;
            let mut ranked = rank_subsets(mined, &keys)?;
            if let Some(n) = limit {
                ranked.truncate(n);
            }
            match format {
                Format::Csv => write_subsets_csv(&ranked, &mut out)?,
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&ranked).unwrap())?,
                Format::Table => {
                    writeln!(out, "{:<60} {:>7} {:>9} {:>9} {:>9}", "subset", "support", "precision", "recall", "ap")?;
                    for s in &ranked {
                        let m = &s.metrics;
                        writeln!(
                            out,
                            "{:<60} {:>7} {:>9} {:>9} {:>9}",
                            s.label(),
                            s.support,
                            opt(m.precision),
                            opt(m.recall),
                            opt(m.ap)
                        )?;
                    }
                }
            }
        }
        Command::Matrix { records, mode, normalize, format, subtree, leaves, no_reorder, conditions } => {
            let set = load_records(&records)?;
            let mut spec = MatrixSpec::new(match mode {
                ModeArg::Confusion => MatrixMode::Confusion,
                ModeArg::Size => MatrixMode::Size,
                ModeArg::Direction => MatrixMode::Direction,
            });
            spec.normalization = match normalize {
                NormalizeArg::None => Normalization::None,
                NormalizeArg::Row => Normalization::Row,
                NormalizeArg::Column => Normalization::Column,
            };
            spec.subtree_root = subtree.map(|s| match s.parse::<i64>() {
                Ok(n) => Value::from(n),
                Err(_) => Value::from(s),
            });
            spec.leaves = leaves;
            spec.reorder = !no_reorder;
            if let Some(c) = conditions {
                spec.conditions = parse_json("--where", &c)?;
            }
            let m = build_matrix(&set.records, &set.meta.hierarchy, &spec, set.meta.task.has_geometry())?;
            match (format, mode) {
                (Format::Json, _) => writeln!(out, "{}", serde_json::to_string_pretty(&m).unwrap())?,
                (_, ModeArg::Confusion) => m.write_confusion_csv(&mut out)?,
                _ => m.write_long_csv(&mut out)?,
            }
        }
        Command::Query { records, query } => {
            let set = load_records(&records)?;
            let q: DistributionQuery = parse_json("query", &query)?;
            let store = RecordStore::new(set.records, set.meta.hierarchy);
            writeln!(out, "{}", serde_json::to_string_pretty(&store.evaluate(&q)?).unwrap())?;
        }
        Command::Grid { records, conditions, seed, tsne } => {
            let set = load_records(&records)?;
            let raw: Vec<RawPredicate> = match conditions {
                Some(c) => parse_json("--where", &c)?,
                None => Vec::new(),
            };
            let conds = resolve_all(&raw, &set.meta.hierarchy)?;
            let selected: Vec<&unieval::EvaluationRecord> = set
                .records
                .iter()
                .filter(|r| conds.iter().all(|p| p.matches(r, &set.meta.hierarchy)))
                .collect();
            let features = selection_features(&selected, &set.meta.images, set.meta.features.as_ref());
            let keys: Vec<String> = selected.iter().map(|r| r.object_key()).collect();
            let method = if tsne { ProjectionMethod::Tsne } else { ProjectionMethod::Pca };
            let g = layout(&features, &keys, seed, method.projector().as_ref())?;
            writeln!(out, "{}", serde_json::to_string_pretty(&g).unwrap())?;
        }
        Command::Serve { records, port, host, images, config } => {
            if let Some(c) = &config {
                require_file(c)?;
            }
            let mut cfg = ServiceConfig::load(config.as_deref()).map_err(|e| CliError::Usage(e.to_string()))?;
            if port.is_some() || host.is_some() {
                let (default_host, default_port) = cfg.bind.rsplit_once(':').unwrap_or(("127.0.0.1", "8080"));
                cfg.bind = format!(
                    "{}:{}",
                    host.as_deref().unwrap_or(default_host),
                    port.map(|p| p.to_string()).unwrap_or_else(|| default_port.to_string())
                );
            }
            if images.is_some() {
                cfg.image_root = images;
            }
            let state = Arc::new(AppState::new(cfg));
            for path in &records {
                let set = load_records(path)?;
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .map(|s| s.trim_end_matches(".ndjson").to_string())
                    .unwrap_or_else(|| "dataset".to_string());
                writeln!(out, "loaded {} records as '{id}'", set.records.len())?;
                state.insert_records(&id, set);
            }
            out.flush()?;
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(unieval_service::serve(state))?;
        }
        Command::Synth { out_dir, images, classes, seed, render } => {
            let cfg = SynthConfig { images, classes, seed, ..SynthConfig::default() };
            let (gt, pred) = synth_coco(&cfg);
            std::fs::create_dir_all(&out_dir)?;
            write_json(&out_dir.join("gt.json"), &gt)?;
            write_json(&out_dir.join("pred.json"), &pred)?;
            if render {
                render::render_images(&gt, &out_dir.join("images"))?;
            }
            writeln!(
                out,
                "{} images, {} gts, {} preds written to {}",
                images,
                gt["annotations"].as_array().map_or(0, Vec::len),
                pred.as_array().map_or(0, Vec::len),
                out_dir.display()
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> CliResult {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, v).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}
