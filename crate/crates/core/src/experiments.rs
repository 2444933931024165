//! Experiment plumbing: flat `key = value` configuration, dataset files with a
//! checksum manifest, self-describing run directories, seed sweeps, result
//! tables and the oracle comparison report.
//!
//! # Run directory
//!
//! | file | content |
//! |------|---------|
//! | `config.txt` | fully resolved configuration; reproduces the run |
//! | `metrics.csv` | one row per epoch, flushed as it completes |
//! | `checkpoint.mgt` | selected parameters (`clf/*`, `ext/*`) plus metadata |
//! | `final.txt` | test metrics of the selected epoch; written last |
//! | `fallbacks.csv` | meta steps that fell back to a plain step |
//! | `timing.txt` | wall-clock measurements (not deterministic) |
//!
//! # Dataset directory
//!
//! `train.graphs`, `val.graphs`, `test.graphs` in the text format of
//! [`crate::graph::write_graphs`], and `manifest.txt` with the generating
//! spec, split sizes and a SHA-256 per file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use crate::datasets::{self, DatasetName, DatasetSpec, Splits};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::graph::{read_graphs, write_graphs, Graph};
use crate::metrics::{MeanStd, MetricsReport};
use crate::model::{GmtModel, ModelConfig, SeededRng, SparsitySchedule, Variant};
use crate::nn::{save_tensor_file, ParameterStore, TensorFile};
use crate::submt;
use crate::trainer::{self, EpochRecord, MetaConfig, Mode, RunRecord, PREC_K};

pub const OUTPUT_ROOT_ENV: &str = "METAGMT_OUTPUT_ROOT";
pub const WORKERS_ENV: &str = "METAGMT_WORKERS";

/// Every accepted configuration key, in snapshot order, with its meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("name", "run or sweep directory name (derived from dataset, method and seed if empty)"),
    ("output_dir", "root for run and sweep directories"),
    ("dataset", "ba2motifs | spmotif | mutag"),
    ("data_dir", "directory written by gen-data; empty means generate in memory"),
    ("data_seed", "generator and split seed"),
    ("num_graphs", "graphs to generate (BA-2Motifs 1000, SP-Motif 9000)"),
    ("bias", "SP-Motif base/label alignment probability b"),
    ("split", "train,val,test fractions"),
    ("feature_dim", "constant node feature width of synthetic data"),
    ("ba_base_nodes", "Barabasi-Albert base size of BA-2Motifs"),
    ("tu_dir", "MUTAG TU-format directory"),
    ("truth_path", "MUTAG per-edge ground-truth file"),
    ("mode", "gmt | metagmt"),
    ("variant", "lin | sam"),
    ("sam_samples", "masks averaged by the SAM variant"),
    ("hidden_dim", "GIN width"),
    ("gnn_layers", "GIN layers"),
    ("dropout", "classifier dropout"),
    ("extractor_dropout", "extractor dropout"),
    ("use_edge_attention", "weight messages by attention in the prediction pass"),
    ("gin_eps", "GIN self-term epsilon"),
    ("instance_norm", "per-graph instance normalization in GIN and extractor hidden layers"),
    ("epochs", "training epochs"),
    ("batch_size", "graphs per batch"),
    ("lr", "Adam learning rate of the outer/GMT step"),
    ("pretrain_lr", "Adam learning rate of classifier pretraining"),
    ("pretrain_epochs", "classifier-only epochs before training"),
    ("lambda_pred", "prediction loss weight"),
    ("lambda_info", "information loss weight"),
    ("r_initial", "initial sparsity target"),
    ("r_final", "sparsity target floor"),
    ("r_decay", "sparsity decrement per interval"),
    ("r_interval", "epochs per sparsity decrement"),
    ("inner_steps", "inner SGD steps N_inner"),
    ("inner_lr", "inner learning rate alpha"),
    ("hops", "neighbourhood radius k of the sampled subgraph"),
    ("outer_include_info", "add lambda_info * info to the outer loss"),
    ("first_order", "drop second-order terms of the meta-gradient"),
    ("seed", "training seed of a single run"),
    ("seeds", "seed list of a sweep, e.g. 0-9 or 0,3,7"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub data_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub schedule: SparsitySchedule,
    pub meta: MetaConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_dataset(DatasetName::Ba2Motifs)
    }
}

/// Raw `key = value` pairs, validated against [`KEYS`].
pub type Pairs = BTreeMap<String, String>;

/// Parses `key = value` lines; `#` starts a comment. Unknown and repeated
/// keys are errors naming the line.
pub fn parse_pairs(text: &str, origin: &Path) -> Result<Pairs> {
    let mut out = Pairs::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::ingestion(origin, i + 1, format!("expected key = value, got '{line}'")));
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.iter().any(|(key, _)| *key == k) {
            return Err(Error::ingestion(origin, i + 1, format!("unknown key '{k}'")));
        }
        if out.insert(k.to_owned(), v.to_owned()).is_some() {
            return Err(Error::ingestion(origin, i + 1, format!("key '{k}' given twice")));
        }
    }
    Ok(out)
}

/// Parses `key=value` override strings.
pub fn parse_overrides<S: AsRef<str>>(items: &[S]) -> Result<Pairs> {
    let mut out = Pairs::new();
    for item in items {
        let item = item.as_ref();
        let Some((k, v)) = item.split_once('=') else {
            return Err(Error::config(format!("override '{item}' is not key=value")));
        };
        let k = k.trim();
        if !KEYS.iter().any(|(key, _)| *key == k) {
            return Err(Error::config(format!("unknown key '{k}'")));
        }
        out.insert(k.to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("key '{key}': cannot parse '{v}'")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("key '{key}': expected true or false, got '{v}'"))),
    }
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// `0-9`, `0,3,7` or a mix such as `0-2,5`.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (value("seeds", a.trim())?, value("seeds", b.trim())?);
                if a > b {
                    return Err(Error::config(format!("seed range '{part}' is descending")));
                }
                out.extend(a..=b);
            }
            None => out.push(value("seeds", part)?),
        }
    }
    let distinct: BTreeSet<u64> = out.iter().copied().collect();
    if out.is_empty() || distinct.len() != out.len() {
        return Err(Error::config(format!("seed list '{v}' is empty or repeats a seed")));
    }
    Ok(out)
}

fn seeds_text(seeds: &[u64]) -> String {
    let contiguous = seeds.windows(2).all(|w| w[1] == w[0] + 1);
    match (seeds.first(), seeds.last()) {
        (Some(a), Some(b)) if contiguous && seeds.len() > 1 => format!("{a}-{b}"),
        _ => seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    }
}

impl ExperimentConfig {
    /// Defaults for `name`, including its dataset-specific training settings.
    pub fn for_dataset(name: DatasetName) -> Self {
        let mut dataset = DatasetSpec::ba2motifs(0);
        let mut model = ModelConfig::default();
        let mut schedule = SparsitySchedule::default();
        let mut meta = MetaConfig::default();
        match name {
            DatasetName::Ba2Motifs => {}
            DatasetName::Mutag => {
                dataset = DatasetSpec {
                    tu_dir: None,
                    ..DatasetSpec::mutag("", 0)
                };
                model.use_edge_attention = false;
            }
            DatasetName::SpMotif => {
                dataset = DatasetSpec::spmotif(0.5, 0);
                model.num_classes = 3;
                schedule.r_final = 0.7;
                meta.outer_lr = 3e-3;
                meta.pretrain_lr = 3e-3;
            }
        }
        ExperimentConfig {
            name: None,
            output_dir: PathBuf::from("runs"),
            dataset,
            data_dir: None,
            model,
            schedule,
            meta,
            seeds: (0..10).collect(),
        }
    }

    pub fn from_pairs(pairs: &Pairs) -> Result<Self> {
        let dataset: DatasetName = match pairs.get("dataset") {
            Some(v) => v.parse()?,
            None => DatasetName::Ba2Motifs,
        };
        let mut c = Self::for_dataset(dataset);
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text, origin)?)
    }

    /// Reads a config file and applies `overrides` on top.
    pub fn load(path: &Path, overrides: &Pairs) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::ingestion(path, 0, e.to_string()))?;
        let mut pairs = parse_pairs(&text, path)?;
        pairs.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        Self::from_pairs(&pairs)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "name" => self.name = (!v.is_empty()).then(|| v.to_owned()),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "dataset" => self.dataset.name = v.parse()?,
            "data_dir" => self.data_dir = optional_path(v),
            "data_seed" => self.dataset.seed = value(key, v)?,
            "num_graphs" => self.dataset.num_graphs = value(key, v)?,
            "bias" => self.dataset.bias = value(key, v)?,
            "split" => {
                let parts: Vec<f64> = v.split(',').map(|p| value(key, p.trim())).collect::<Result<_>>()?;
                self.dataset.split = parts
                    .try_into()
                    .map_err(|_| Error::config("key 'split': expected three fractions"))?;
            }
            "feature_dim" => self.dataset.feature_dim = value(key, v)?,
            "ba_base_nodes" => self.dataset.ba_base_nodes = value(key, v)?,
            "tu_dir" => self.dataset.tu_dir = optional_path(v),
            "truth_path" => self.dataset.truth_path = optional_path(v),
            "mode" => self.meta.mode = v.parse()?,
            "variant" => self.model.variant = v.parse()?,
            "sam_samples" => self.model.sam_samples = value(key, v)?,
            "hidden_dim" => self.model.hidden_dim = value(key, v)?,
            "gnn_layers" => self.model.gnn_layers = value(key, v)?,
            "dropout" => self.model.dropout = value(key, v)?,
            "extractor_dropout" => self.model.extractor_dropout = value(key, v)?,
            "use_edge_attention" => self.model.use_edge_attention = flag(key, v)?,
            "gin_eps" => self.model.gin_eps = value(key, v)?,
            "instance_norm" => self.model.instance_norm = flag(key, v)?,
            "epochs" => self.meta.epochs = value(key, v)?,
            "batch_size" => self.meta.batch_size = value(key, v)?,
            "lr" => self.meta.outer_lr = value(key, v)?,
            "pretrain_lr" => self.meta.pretrain_lr = value(key, v)?,
            "pretrain_epochs" => self.meta.pretrain_epochs = value(key, v)?,
            "lambda_pred" => self.meta.lambda_pred = value(key, v)?,
            "lambda_info" => self.meta.lambda_info = value(key, v)?,
            "r_initial" => self.schedule.r_initial = value(key, v)?,
            "r_final" => self.schedule.r_final = value(key, v)?,
            "r_decay" => self.schedule.decay = value(key, v)?,
            "r_interval" => self.schedule.interval = value(key, v)?,
            "inner_steps" => self.meta.inner_steps = value(key, v)?,
            "inner_lr" => self.meta.inner_lr = value(key, v)?,
            "hops" => self.meta.hops = value(key, v)?,
            "outer_include_info" => self.meta.outer_include_info = flag(key, v)?,
            "first_order" => self.meta.first_order = flag(key, v)?,
            "seed" => self.meta.seed = value(key, v)?,
            "seeds" => self.seeds = parse_seeds(v)?,
            _ => return Err(Error::config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let d = &self.dataset;
        match key {
            "name" => self.name.clone().unwrap_or_default(),
            "output_dir" => self.output_dir.display().to_string(),
            "dataset" => d.name.to_string(),
            "data_dir" => path(&self.data_dir),
            "data_seed" => d.seed.to_string(),
            "num_graphs" => d.num_graphs.to_string(),
            "bias" => d.bias.to_string(),
            "split" => d.split.map(|f| f.to_string()).join(","),
            "feature_dim" => d.feature_dim.to_string(),
            "ba_base_nodes" => d.ba_base_nodes.to_string(),
            "tu_dir" => path(&d.tu_dir),
            "truth_path" => path(&d.truth_path),
            "mode" => self.meta.mode.to_string(),
            "variant" => self.model.variant.to_string(),
            "sam_samples" => self.model.sam_samples.to_string(),
            "hidden_dim" => self.model.hidden_dim.to_string(),
            "gnn_layers" => self.model.gnn_layers.to_string(),
            "dropout" => self.model.dropout.to_string(),
            "extractor_dropout" => self.model.extractor_dropout.to_string(),
            "use_edge_attention" => self.model.use_edge_attention.to_string(),
            "gin_eps" => self.model.gin_eps.to_string(),
            "instance_norm" => self.model.instance_norm.to_string(),
            "epochs" => self.meta.epochs.to_string(),
            "batch_size" => self.meta.batch_size.to_string(),
            "lr" => self.meta.outer_lr.to_string(),
            "pretrain_lr" => self.meta.pretrain_lr.to_string(),
            "pretrain_epochs" => self.meta.pretrain_epochs.to_string(),
            "lambda_pred" => self.meta.lambda_pred.to_string(),
            "lambda_info" => self.meta.lambda_info.to_string(),
            "r_initial" => self.schedule.r_initial.to_string(),
            "r_final" => self.schedule.r_final.to_string(),
            "r_decay" => self.schedule.decay.to_string(),
            "r_interval" => self.schedule.interval.to_string(),
            "inner_steps" => self.meta.inner_steps.to_string(),
            "inner_lr" => self.meta.inner_lr.to_string(),
            "hops" => self.meta.hops.to_string(),
            "outer_include_info" => self.meta.outer_include_info.to_string(),
            "first_order" => self.meta.first_order.to_string(),
            "seed" => self.meta.seed.to_string(),
            "seeds" => seeds_text(&self.seeds),
            _ => unreachable!("every key in KEYS is handled"),
        }
    }

    /// Every key with its resolved value, one per line in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dir.is_none() {
            self.dataset.validate()?;
        }
        self.model.validate()?;
        self.schedule.validate()?;
        self.meta.validate()?;
        Ok(())
    }

    /// `GMT-LIN`, `MetaGMT-SAM`, ...
    pub fn method_label(&self) -> String {
        method_label(self.meta.mode, self.model.variant)
    }

    /// `BA-2Motifs`, `MUTAG`, `SP-Motif b=0.5`.
    pub fn dataset_label(&self) -> String {
        dataset_label(self.dataset.name, self.dataset.bias)
    }

    fn base_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let bias = match self.dataset.name {
                DatasetName::SpMotif => format!("-b{}", self.dataset.bias),
                _ => String::new(),
            };
            format!("{}{bias}-{}", self.dataset.name, self.method_label().to_ascii_lowercase())
        })
    }

    /// Directory name of a single run.
    pub fn run_name(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => format!("{}-seed{}", self.base_name(), self.meta.seed),
        }
    }

    /// Directory name of a sweep.
    pub fn sweep_name(&self) -> String {
        self.base_name()
    }

    /// `output_dir`, unless the environment overrides the root.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    /// Loads `data_dir` (verifying its manifest) or generates the dataset.
    pub fn load_splits(&self) -> Result<Splits> {
        match &self.data_dir {
            Some(dir) => read_dataset(dir),
            None => datasets::generate(&self.dataset),
        }
    }
}

pub fn method_label(mode: Mode, variant: Variant) -> String {
    let m = match mode {
        Mode::Gmt => "GMT",
        Mode::MetaGmt => "MetaGMT",
    };
    format!("{m}-{}", variant.to_string().to_ascii_uppercase())
}

pub fn dataset_label(name: DatasetName, bias: f64) -> String {
    match name {
        DatasetName::Ba2Motifs => "BA-2Motifs".into(),
        DatasetName::Mutag => "MUTAG".into(),
        DatasetName::SpMotif => format!("SP-Motif b={bias}"),
    }
}

// ---------------------------------------------------------------- datasets

const SPLIT_FILES: [&str; 3] = ["train.graphs", "val.graphs", "test.graphs"];
pub const MANIFEST: &str = "manifest.txt";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::ingestion(path, 0, e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_key_values(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k} = {v}");
    }
    write_atomic(path, out.as_bytes())
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::ingestion(path, 0, e.to_string()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ingestion(path, i + 1, "expected key = value"))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

/// Writes the three splits and a manifest. The same spec always produces
/// byte-identical files.
pub fn gen_data(spec: &DatasetSpec, out_dir: &Path) -> Result<Vec<(String, String)>> {
    let splits = datasets::generate(spec)?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = vec![
        ("dataset".to_owned(), spec.name.to_string()),
        ("seed".to_owned(), spec.seed.to_string()),
        ("bias".to_owned(), spec.bias.to_string()),
        ("num_graphs".to_owned(), spec.num_graphs.to_string()),
        ("split".to_owned(), spec.split.map(|f| f.to_string()).join(",")),
        ("feature_dim".to_owned(), splits.feature_dim().to_string()),
        ("num_classes".to_owned(), splits.num_classes().to_string()),
    ];
    let parts: [&[Graph]; 3] = [&splits.train, &splits.val, &splits.test];
    for (file, graphs) in SPLIT_FILES.iter().zip(parts) {
        let path = out_dir.join(file);
        let mut w = BufWriter::new(File::create(&path)?);
        write_graphs(&mut w, graphs)?;
        w.flush()?;
        let stem = file.trim_end_matches(".graphs");
        manifest.push((format!("{stem}_graphs"), graphs.len().to_string()));
        manifest.push((format!("sha256.{stem}"), sha256_file(&path)?));
    }
    write_key_values(&out_dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Reads a gen-data directory, rejecting files whose checksum disagrees with
/// the manifest.
pub fn read_dataset(dir: &Path) -> Result<Splits> {
    let manifest_path = dir.join(MANIFEST);
    let manifest = read_key_values(&manifest_path)?;
    let mut parts = Vec::with_capacity(3);
    for file in SPLIT_FILES {
        let path = dir.join(file);
        let stem = file.trim_end_matches(".graphs");
        let expected = manifest
            .get(&format!("sha256.{stem}"))
            .ok_or_else(|| Error::format(&manifest_path, format!("no checksum for {file}")))?;
        if &sha256_file(&path)? != expected {
            return Err(Error::format(&path, "checksum differs from manifest"));
        }
        let f = BufReader::new(File::open(&path)?);
        parts.push(read_graphs(f, &path)?);
    }
    let test = parts.pop().expect("three parts");
    let val = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok(Splits { train, val, test })
}

// -------------------------------------------------------------------- runs

pub const FINAL: &str = "final.txt";
pub const METRICS: &str = "metrics.csv";
pub const CONFIG: &str = "config.txt";
pub const CHECKPOINT: &str = "checkpoint.mgt";

/// Test metrics of a finished run, as stored in `final.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalRecord {
    pub method: String,
    pub dataset: String,
    pub report: MetricsReport,
    pub best_epoch: usize,
}

impl FinalRecord {
    fn entries(&self) -> Vec<(String, String)> {
        let r = &self.report;
        vec![
            ("method".into(), self.method.clone()),
            ("dataset".into(), self.dataset.clone()),
            ("seed".into(), r.seed.to_string()),
            ("best_epoch".into(), self.best_epoch.to_string()),
            ("x_roc".into(), r.x_roc.to_string()),
            ("x_prec_at_k".into(), r.x_prec_at_k.to_string()),
            ("k".into(), r.k.to_string()),
            ("clf_acc".into(), r.clf_acc.to_string()),
            ("n_graphs".into(), r.n_graphs.to_string()),
        ]
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = read_key_values(path)?;
        let get = |k: &str| -> Result<&String> {
            kv.get(k).ok_or_else(|| Error::format(path, format!("missing '{k}'")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::format(path, format!("bad number for '{k}'")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::format(path, format!("bad integer for '{k}'")))
        };
        Ok(FinalRecord {
            method: get("method")?.clone(),
            dataset: get("dataset")?.clone(),
            best_epoch: int("best_epoch")? as usize,
            report: MetricsReport {
                x_roc: num("x_roc")?,
                x_prec_at_k: num("x_prec_at_k")?,
                k: int("k")? as usize,
                clf_acc: num("clf_acc")?,
                n_graphs: int("n_graphs")? as usize,
                seed: int("seed")?,
            },
        })
    }
}

fn checkpoint_file(cfg: &ExperimentConfig, record: &RunRecord) -> TensorFile {
    let mut tensors = ParameterStore::new();
    let model = &record.checkpoint;
    for (prefix, store) in [("clf", &model.classifier), ("ext", &model.extractor)] {
        for (name, m) in store.iter() {
            tensors
                .insert(format!("{prefix}/{name}"), m.clone())
                .expect("prefixed names are unique");
        }
    }
    let best = record.best();
    let mut metadata = vec![
        ("epoch".to_owned(), best.epoch.to_string()),
        ("r".to_owned(), best.r.to_string()),
    ];
    metadata.extend(
        cfg.to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (format!("config.{k}"), v.to_owned())),
    );
    metadata.push(("config.num_classes".into(), model.config.num_classes.to_string()));
    metadata.push(("config.feature_dim".into(), model.config.feature_dim.to_string()));
    TensorFile { metadata, tensors }
}

/// Rebuilds the model stored by a run's checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(GmtModel, usize, f64)> {
    let file = crate::nn::load_tensor_file(path)?;
    let meta: BTreeMap<&str, &str> = file.metadata.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    let get = |k: &str| -> Result<&str> {
        meta.get(k).copied().ok_or_else(|| Error::format(path, format!("missing metadata '{k}'")))
    };
    let mut pairs = Pairs::new();
    for (k, _) in KEYS {
        pairs.insert((*k).to_owned(), get(&format!("config.{k}"))?.to_owned());
    }
    // The dataset need not exist where the checkpoint is read.
    pairs.insert("data_dir".into(), "checkpoint".into());
    let cfg = ExperimentConfig::from_pairs(&pairs)?;
    let mut model_cfg = cfg.model;
    model_cfg.num_classes = value("num_classes", get("config.num_classes")?)?;
    model_cfg.feature_dim = value("feature_dim", get("config.feature_dim")?)?;
    let mut classifier = ParameterStore::new();
    let mut extractor = ParameterStore::new();
    for (name, m) in file.tensors.iter() {
        let (store, rest) = match name.split_once('/') {
            Some(("clf", rest)) => (&mut classifier, rest),
            Some(("ext", rest)) => (&mut extractor, rest),
            _ => return Err(Error::format(path, format!("unexpected tensor '{name}'"))),
        };
        store.insert(rest, m.clone())?;
    }
    let epoch = value("epoch", get("epoch")?)?;
    let r = value("r", get("r")?)?;
    Ok((
        GmtModel {
            config: model_cfg,
            classifier,
            extractor,
        },
        epoch,
        r,
    ))
}

/// Trains `cfg` on `splits`, writing every run artifact into `dir`.
pub fn run_in_dir(cfg: &ExperimentConfig, splits: &Splits, dir: &Path) -> Result<RunRecord> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG), cfg.to_text())?;
    let _ = fs::remove_file(dir.join(FINAL));
    let mut csv = File::create(dir.join(METRICS))?;
    writeln!(csv, "{}", EpochRecord::CSV_HEADER)?;
    let record = trainer::train(splits, &cfg.model, &cfg.schedule, &cfg.meta, |row: &EpochRecord| {
        writeln!(csv, "{}", row.csv_row())?;
        csv.flush()?;
        Ok(())
    })?;

    save_tensor_file(&dir.join(CHECKPOINT), &checkpoint_file(cfg, &record))?;

    let mut fallbacks = String::from("epoch,batch\n");
    for f in &record.fallbacks {
        let _ = writeln!(fallbacks, "{},{}", f.epoch, f.batch);
    }
    fs::write(dir.join("fallbacks.csv"), fallbacks)?;

    let t = &record.timing;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let total: f64 = record.epoch_seconds.iter().sum();
    write_key_values(
        &dir.join("timing.txt"),
        &[
            ("total_seconds".into(), total.to_string()),
            ("gmt_steps".into(), t.gmt_steps.to_string()),
            ("mean_gmt_step_seconds".into(), opt(t.mean_gmt())),
            ("meta_steps".into(), t.meta_steps.to_string()),
            ("mean_meta_step_seconds".into(), opt(t.mean_meta())),
            (
                "epoch_seconds".into(),
                record.epoch_seconds.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(","),
            ),
        ],
    )?;

    let fin = FinalRecord {
        method: cfg.method_label(),
        dataset: cfg.dataset_label(),
        report: record.final_metrics.clone(),
        best_epoch: record.best_epoch,
    };
    write_key_values(&dir.join(FINAL), &fin.entries())?;
    Ok(record)
}

/// Single run under `<output root>/<run name>`.
pub fn run(cfg: &ExperimentConfig) -> Result<(PathBuf, RunRecord)> {
    cfg.validate()?;
    let dir = cfg.output_root().join(cfg.run_name());
    let splits = cfg.load_splits()?;
    let record = run_in_dir(cfg, &splits, &dir)?;
    Ok((dir, record))
}

// ------------------------------------------------------------------ sweeps

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub dir: PathBuf,
    pub completed: Vec<FinalRecord>,
    /// Seeds skipped because a finished run already existed.
    pub reused: Vec<u64>,
    pub failed: Vec<(u64, String)>,
}

/// Worker count from the environment, else 1.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = value(WORKERS_ENV, v.trim())?;
            if n == 0 {
                return Err(Error::config(format!("{WORKERS_ENV} must be at least 1")));
            }
            Ok(n)
        }
        _ => Ok(1),
    }
}

pub fn seed_dir(sweep_dir: &Path, seed: u64) -> PathBuf {
    sweep_dir.join(format!("seed-{seed}"))
}

/// Runs every seed not yet finished under `<output root>/<sweep name>`, then
/// writes per-seed and aggregated tables over the completed seeds.
pub fn sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepSummary> {
    cfg.validate()?;
    if cfg.seeds.is_empty() {
        return Err(Error::config("a sweep needs at least one seed"));
    }
    let dir = cfg.output_root().join(cfg.sweep_name());
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG), cfg.to_text())?;

    let todo: Vec<u64> = cfg
        .seeds
        .iter()
        .copied()
        .filter(|&s| !seed_dir(&dir, s).join(FINAL).exists())
        .collect();
    let reused: Vec<u64> = cfg.seeds.iter().copied().filter(|s| !todo.contains(s)).collect();
    let failed = Mutex::new(Vec::new());
    if !todo.is_empty() {
        let splits = cfg.load_splits()?;
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers.max(1).min(todo.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&seed) = todo.get(i) else { break };
                    let mut c = cfg.clone();
                    c.meta.seed = seed;
                    c.name = None;
                    log::info!("sweep {}: seed {seed}", dir.display());
                    if let Err(e) = run_in_dir(&c, &splits, &seed_dir(&dir, seed)) {
                        log::error!("seed {seed} failed: {e}");
                        failed.lock().expect("no poisoned lock").push((seed, e.to_string()));
                    }
                });
            }
        });
    }
    let mut failed = failed.into_inner().expect("no poisoned lock");
    failed.sort_by_key(|f| f.0);

    let mut completed = Vec::new();
    for &s in &cfg.seeds {
        let path = seed_dir(&dir, s).join(FINAL);
        if path.exists() {
            completed.push(FinalRecord::read(&path)?);
        }
    }
    write_sweep_tables(&dir, &completed, &failed)?;
    Ok(SweepSummary {
        dir,
        completed,
        reused,
        failed,
    })
}

fn write_sweep_tables(dir: &Path, completed: &[FinalRecord], failed: &[(u64, String)]) -> Result<()> {
    let mut seeds = String::from("seed,best_epoch,x_roc,x_prec_at_k,clf_acc\n");
    for f in completed {
        let r = &f.report;
        let _ = writeln!(seeds, "{},{},{},{},{}", r.seed, f.best_epoch, r.x_roc, r.x_prec_at_k, r.clf_acc);
    }
    fs::write(dir.join("seeds.csv"), seeds)?;

    let mut fails = String::new();
    for (s, e) in failed {
        let _ = writeln!(fails, "{s}\t{e}");
    }
    fs::write(dir.join("failures.txt"), fails)?;

    let reports: Vec<MetricsReport> = completed.iter().map(|f| f.report.clone()).collect();
    let agg = crate::metrics::aggregate_seeds(&reports);
    let (method, dataset) = completed
        .first()
        .map(|f| (f.method.clone(), f.dataset.clone()))
        .unwrap_or_default();
    let mut csv = String::from("method,dataset,metric,mean_pct,std_pct,n\n");
    let mut md = format!("# {method} on {dataset}\n\n| metric | value | seeds |\n|---|---|---|\n");
    for (name, ms) in [("X-ROC", agg.x_roc), (&*format!("X-Prec@{PREC_K}"), agg.x_prec), ("Clf-Acc", agg.clf_acc)] {
        let _ = writeln!(csv, "{method},{dataset},{name},{},{},{}", pct(ms.mean), pct(ms.std), ms.n);
        let _ = writeln!(md, "| {name} | {} | {} |", cell_text(&ms), ms.n);
    }
    if completed.len() == 1 {
        md.push_str("\nOne completed seed: the standard deviation is reported as 0.\n");
    }
    if !failed.is_empty() {
        let list: Vec<String> = failed.iter().map(|f| f.0.to_string()).collect();
        let _ = writeln!(md, "\nAggregated over completed seeds only; failed seeds: {}.", list.join(", "));
    }
    fs::write(dir.join("summary.csv"), csv)?;
    fs::write(dir.join("summary.md"), md)?;
    Ok(())
}

fn pct(v: f64) -> String {
    if v.is_finite() {
        format!("{:.2}", v * 100.0)
    } else {
        String::new()
    }
}

const ABSENT: &str = "n/a";

fn cell_text(ms: &MeanStd) -> String {
    if ms.n == 0 || !ms.mean.is_finite() {
        ABSENT.into()
    } else {
        ms.percent_cell()
    }
}

// ----------------------------------------------------------------- reports

/// Collects `final.txt` records from run directories and sweep directories
/// (their `seed-*` children).
pub fn collect_finals(dirs: &[PathBuf]) -> Result<Vec<FinalRecord>> {
    let mut out = Vec::new();
    for d in dirs {
        if d.join(FINAL).exists() {
            out.push(FinalRecord::read(&d.join(FINAL))?);
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(d)
            .map_err(|e| Error::ingestion(d, 0, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(FINAL).exists())
            .collect();
        children.sort();
        if children.is_empty() {
            log::warn!("{} holds no finished runs", d.display());
        }
        for c in children {
            out.push(FinalRecord::read(&c.join(FINAL))?);
        }
    }
    Ok(out)
}

/// One results table: rows are methods, columns datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub metric: String,
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `cells[row][col]`; `None` when no run covers the pair.
    pub cells: Vec<Vec<Option<MeanStd>>>,
}

fn method_rank(m: &str) -> (usize, String) {
    let order = ["GMT-LIN", "GMT-SAM", "MetaGMT-LIN", "MetaGMT-SAM"];
    (order.iter().position(|o| *o == m).unwrap_or(order.len()), m.to_owned())
}

fn dataset_rank(d: &str) -> (usize, String) {
    let order = ["BA-2Motifs", "MUTAG"];
    (order.iter().position(|o| *o == d).unwrap_or(order.len()), d.to_owned())
}

pub fn build_tables(finals: &[FinalRecord]) -> Vec<Table> {
    let mut methods: Vec<String> = finals.iter().map(|f| f.method.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    methods.sort_by_key(|m| method_rank(m));
    let mut datasets: Vec<String> = finals.iter().map(|f| f.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    datasets.sort_by_key(|d| dataset_rank(d));
    let metrics: [(String, fn(&MetricsReport) -> f64); 3] = [
        ("X-ROC".into(), |r| r.x_roc),
        (format!("X-Prec@{PREC_K}"), |r| r.x_prec_at_k),
        ("Clf-Acc".into(), |r| r.clf_acc),
    ];
    metrics
        .iter()
        .map(|(name, get)| Table {
            metric: name.clone(),
            methods: methods.clone(),
            datasets: datasets.clone(),
            cells: methods
                .iter()
                .map(|m| {
                    datasets
                        .iter()
                        .map(|d| {
                            let vals: Vec<f64> = finals
                                .iter()
                                .filter(|f| &f.method == m && &f.dataset == d)
                                .map(|f| get(&f.report))
                                .filter(|v| v.is_finite())
                                .collect();
                            (!vals.is_empty()).then(|| MeanStd::of(&vals))
                        })
                        .collect()
                })
                .collect(),
        })
        .collect()
}

pub fn tables_markdown(tables: &[Table]) -> String {
    let mut md = String::new();
    for t in tables {
        let _ = writeln!(md, "## {}\n", t.metric);
        let _ = writeln!(md, "| Method | {} |", t.datasets.join(" | "));
        let _ = writeln!(md, "|---|{}", "---|".repeat(t.datasets.len()));
        for (m, row) in t.methods.iter().zip(&t.cells) {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.as_ref().map_or_else(|| ABSENT.to_owned(), cell_text))
                .collect();
            let _ = writeln!(md, "| {m} | {} |", cells.join(" | "));
        }
        md.push('\n');
    }
    md
}

/// Long format: one line per table cell, empty fields for absent cells.
pub fn tables_csv(tables: &[Table]) -> String {
    let mut csv = String::from("metric,method,dataset,mean_pct,std_pct,n\n");
    for t in tables {
        for (m, row) in t.methods.iter().zip(&t.cells) {
            for (d, c) in t.datasets.iter().zip(row) {
                match c {
                    Some(ms) => {
                        let _ = writeln!(csv, "{},{m},{d},{},{},{}", t.metric, pct(ms.mean), pct(ms.std), ms.n);
                    }
                    None => {
                        let _ = writeln!(csv, "{},{m},{d},,,0", t.metric);
                    }
                }
            }
        }
    }
    csv
}

/// Writes `report.md` and `report.csv` into `out_dir`.
pub fn report(dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<Table>> {
    let finals = collect_finals(dirs)?;
    if finals.is_empty() {
        return Err(Error::config("no finished runs found in the given directories"));
    }
    let tables = build_tables(&finals);
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.md"), tables_markdown(&tables))?;
    fs::write(out_dir.join("report.csv"), tables_csv(&tables))?;
    Ok(tables)
}

// ------------------------------------------------------ verification suites

/// Runs the finite-difference suites.
pub fn gradcheck(seed: u64) -> Result<Vec<gradcheck::CheckResult>> {
    gradcheck::full_suite(seed)
}

/// One line of the oracle comparison report.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    /// `linear`, `mc`, `sam`, `sam_all_ones` or `sam_slope`.
    pub kind: &'static str,
    pub instance: usize,
    pub edges: usize,
    pub k: usize,
    pub exact: f64,
    pub estimate: f64,
    pub gap: f64,
    pub std_error: f64,
    /// Linear (unsampled) approximation of the same quantity; SAM rows only.
    pub lin: Option<f64>,
}

impl OracleRow {
    pub const CSV_HEADER: &'static str = "kind,instance,edges,k,exact,estimate,gap,std_error,lin,lin_gap";

    pub fn csv_row(&self) -> String {
        let (lin, lin_gap) = match self.lin {
            Some(l) => (l.to_string(), (l - self.exact).abs().to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{lin},{lin_gap}",
            self.kind, self.instance, self.edges, self.k, self.exact, self.estimate, self.gap, self.std_error
        )
    }
}

/// Sample counts of the SAM scaling rows.
pub const SAM_KS: [usize; 4] = [64, 256, 1024, 4096];

/// Tiny instances: linear set functions against their closed form, the
/// Monte-Carlo estimator at K=4096, and SAM against the exact multilinear
/// value of a small model's masked class probability.
pub fn oracle_check(seed: u64, instances: usize, sam_reps: usize) -> Result<Vec<OracleRow>> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for i in 0..instances {
        let m = rng.gen_range(1..=10);
        let c: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let f = |s: u64| (0..m).filter(|e| s >> e & 1 == 1).map(|e| c[e]).sum::<f64>();
        let exact = submt::exact_submt(&f, &p)?;
        let closed: f64 = c.iter().zip(&p).map(|(a, b)| a * b).sum();
        rows.push(OracleRow {
            kind: "linear",
            instance: i,
            edges: m,
            k: 0,
            exact,
            estimate: closed,
            gap: (exact - closed).abs(),
            std_error: 0.0,
            lin: None,
        });
        let table: Vec<f64> = (0..1u64 << m).map(|_| rng.gen::<f64>()).collect();
        let g = |s: u64| table[s as usize];
        let exact = submt::exact_submt(&g, &p)?;
        let est = submt::mc_submt(&g, &p, 4096, &mut rng)?;
        rows.push(OracleRow {
            kind: "mc",
            instance: i,
            edges: m,
            k: 4096,
            exact,
            estimate: est.mean,
            gap: (est.mean - exact).abs(),
            std_error: est.std_error,
            lin: None,
        });
    }

    let graph = gradcheck::toy_graph(6, 3, seed)?;
    let cfg = ModelConfig {
        hidden_dim: 8,
        feature_dim: 3,
        num_classes: 2,
        ..ModelConfig::default()
    };
    let model = GmtModel::new(cfg, &mut rng)?;
    let pairs = graph.canonical_edges();
    let mut att = vec![0.0; graph.edge_count()];
    for &e in &pairs {
        let p = rng.gen_range(0.2..0.8);
        att[e] = p;
        att[graph.reverse_index()[e]] = p;
    }
    let points = submt::sam_gap_scaling(&model, &graph, &att, &SAM_KS, sam_reps, &mut rng)?;
    let lin = submt::compare_sam_to_submt(&model, &graph, &att, 1, &mut rng)?.lin;
    for pt in &points {
        rows.push(OracleRow {
            kind: "sam",
            instance: 0,
            edges: pairs.len(),
            k: pt.k,
            exact: pt.exact,
            estimate: pt.mean_sam,
            gap: pt.rms_gap,
            std_error: 0.0,
            lin: Some(lin),
        });
    }
    let ones = vec![1.0; graph.edge_count()];
    let c = submt::compare_sam_to_submt(&model, &graph, &ones, 4, &mut rng)?;
    rows.push(OracleRow {
        kind: "sam_all_ones",
        instance: 0,
        edges: pairs.len(),
        k: 4,
        exact: c.exact,
        estimate: c.sam,
        gap: c.sam_gap(),
        std_error: 0.0,
        lin: Some(c.lin),
    });
    let slope = submt::loglog_slope(&points.iter().map(|p| (p.k as f64, p.rms_gap)).collect::<Vec<_>>())?;
    rows.push(OracleRow {
        kind: "sam_slope",
        instance: 0,
        edges: pairs.len(),
        k: 0,
        exact: -0.5,
        estimate: slope,
        gap: (slope + 0.5).abs(),
        std_error: 0.0,
        lin: None,
    });
    Ok(rows)
}

/// Tolerance of exact comparisons in the oracle report.
pub const ORACLE_EXACT_TOL: f64 = 1e-12;
/// Allowed distance of the fitted SAM slope from -1/2.
pub const SLOPE_TOL: f64 = 0.15;
/// Monte-Carlo rows may sit this many standard errors from the exact value.
pub const MC_SIGMAS: f64 = 3.0;
/// Fraction of Monte-Carlo rows that must sit within [`MC_SIGMAS`].
pub const MC_COVERAGE: f64 = 0.99;

/// Violated expectations of an oracle report; empty when it verifies.
pub fn oracle_failures(rows: &[OracleRow]) -> Vec<String> {
    let mut out = Vec::new();
    for r in rows {
        let exact_kind = r.kind == "linear" || r.kind == "sam_all_ones";
        if exact_kind && !(r.gap <= ORACLE_EXACT_TOL) {
            out.push(format!("{} instance {}: gap {:e}", r.kind, r.instance, r.gap));
        }
        if r.kind == "sam_slope" && !(r.gap <= SLOPE_TOL) {
            out.push(format!("SAM gap slope {:.3} is not -0.5 ± {SLOPE_TOL}", r.estimate));
        }
    }
    let mc: Vec<&OracleRow> = rows.iter().filter(|r| r.kind == "mc").collect();
    let inside = mc.iter().filter(|r| r.gap <= MC_SIGMAS * r.std_error).count();
    if !mc.is_empty() && (inside as f64) < MC_COVERAGE * mc.len() as f64 {
        out.push(format!("only {inside}/{} Monte-Carlo rows within {MC_SIGMAS} standard errors", mc.len()));
    }
    let sam: Vec<f64> = rows.iter().filter(|r| r.kind == "sam").map(|r| r.gap).collect();
    if sam.len() >= 2 && sam.last() >= sam.first() {
        out.push("SAM gap does not shrink with K".into());
    }
    out
}

pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = format!("{}\n", OracleRow::CSV_HEADER);
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}
