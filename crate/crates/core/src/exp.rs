//! Experiment protocols: design sweeps, overall performance, learning curves,
//! ablations and corpus statistics, with CSV and Markdown reports.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    ablate, build_aspect_dataset, curve_indices, group_rare_labels, make_folds, snapshot_id,
    AspectDataset, DatasetError, Fold, InputFormat, LabelTaxonomy, DEFAULT_MIN_ASPECTS,
    DEFAULT_RARE_THRESHOLD,
};
use crate::embed::{EmbedError, EmbeddingTable};
use crate::eval::{confusion, weighted_prf, wilcoxon_signed_rank, EvalError, MetricsReport};
use crate::extract::{AspectKind, AspectSet};
use crate::nn::{
    encode_dataset, evaluate_model, train, Backbone, EmbeddingSource, Fusion, Model, ModelConfig,
    NnError, Sample, TrainOptions,
};

pub const DEFAULT_DESK_SCALE: usize = 2000;
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum ExpError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("no dataset for target {0}")]
    MissingDataset(AspectKind),
    #[error("fold {fold} of {target} has an empty test set")]
    EmptyFold { target: AspectKind, fold: usize },
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "rq1-input")]
    Rq1Input,
    #[serde(rename = "rq1-embedding")]
    Rq1Embedding,
    #[serde(rename = "rq1-architecture")]
    Rq1Architecture,
    #[serde(rename = "rq1-network")]
    Rq1Network,
    #[serde(rename = "rq2-overall")]
    Rq2Overall,
    #[serde(rename = "rq3-curve")]
    Rq3Curve,
    #[serde(rename = "rq4-ablation")]
    Rq4Ablation,
    #[serde(rename = "corpus-stats")]
    CorpusStats,
}

impl Protocol {
    pub const ALL: [Protocol; 8] = [
        Protocol::Rq1Input,
        Protocol::Rq1Embedding,
        Protocol::Rq1Architecture,
        Protocol::Rq1Network,
        Protocol::Rq2Overall,
        Protocol::Rq3Curve,
        Protocol::Rq4Ablation,
        Protocol::CorpusStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Rq1Input => "rq1-input",
            Protocol::Rq1Embedding => "rq1-embedding",
            Protocol::Rq1Architecture => "rq1-architecture",
            Protocol::Rq1Network => "rq1-network",
            Protocol::Rq2Overall => "rq2-overall",
            Protocol::Rq3Curve => "rq3-curve",
            Protocol::Rq4Ablation => "rq4-ablation",
            Protocol::CorpusStats => "corpus-stats",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(
            self,
            Protocol::Rq1Input | Protocol::Rq1Embedding | Protocol::Rq1Architecture | Protocol::Rq1Network
        )
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| ExpError::Argument(format!("unknown protocol {s:?}")))
    }
}

/// Everything that determines an experiment's numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub targets: Vec<AspectKind>,
    pub seed: u64,
    pub folds: usize,
    /// Run only the first n folds of the k-fold plan.
    pub run_folds: Option<usize>,
    /// Cap on instances per target dataset; None uses everything.
    pub desk_scale: Option<usize>,
    pub min_aspects: usize,
    pub rare_threshold: f64,
    pub backbone: Backbone,
    pub fusion: Fusion,
    pub input_format: InputFormat,
    pub embedding_source: EmbeddingSource,
    pub embed_dim: usize,
    pub window_sizes: Vec<usize>,
    pub filters: usize,
    pub lstm_cells: usize,
    /// None picks the format's default.
    pub max_len: Option<usize>,
    pub train: TrainOptions,
    pub tenths: Vec<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let base = ModelConfig::new(AspectKind::VulnerabilityType, 2, crate::embed::DEFAULT_DIM);
        Self {
            protocol: Protocol::Rq2Overall,
            targets: AspectKind::TARGETS.to_vec(),
            seed: 1,
            folds: 10,
            run_folds: None,
            desk_scale: Some(DEFAULT_DESK_SCALE),
            min_aspects: DEFAULT_MIN_ASPECTS,
            rare_threshold: DEFAULT_RARE_THRESHOLD,
            backbone: base.backbone,
            fusion: base.fusion,
            input_format: base.input_format,
            embedding_source: base.embedding_source,
            embed_dim: base.embed_dim,
            window_sizes: base.window_sizes,
            filters: base.filters,
            lstm_cells: base.lstm_cells,
            max_len: None,
            train: TrainOptions::default(),
            tenths: (1..=10).collect(),
        }
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| e.to_string()))
        .collect()
}

fn parse_opt(v: &str) -> Result<Option<usize>, String> {
    match v {
        "full" | "all" | "none" => Ok(None),
        _ => v.parse().map(Some).map_err(|e| format!("{v:?}: {e}")),
    }
}

impl ExperimentSpec {
    /// Key = value lines; `#` starts a comment. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, ExpError> {
        let mut spec = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ExpError::Config { line: i + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim().replace('-', "_"), v.trim());
            if !seen.insert(k.clone()) {
                return Err(err(format!("duplicate key {k}")));
            }
            spec.set(&k, v).map_err(err)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExpError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExpError::Argument(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one field from its config-file spelling.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let num = |v: &str| v.parse::<usize>().map_err(|e| format!("{key}: {v:?}: {e}"));
        match key {
            "protocol" => self.protocol = v.parse().map_err(|e: ExpError| e.to_string())?,
            "targets" => self.targets = parse_list(v)?,
            "seed" => self.seed = v.parse().map_err(|e| format!("seed: {e}"))?,
            "folds" => self.folds = num(v)?,
            "run_folds" => self.run_folds = parse_opt(v)?,
            "desk_scale" => self.desk_scale = parse_opt(v)?,
            "min_aspects" => self.min_aspects = num(v)?,
            "rare_threshold" => self.rare_threshold = v.parse().map_err(|e| format!("{key}: {e}"))?,
            "backbone" => self.backbone = v.parse().map_err(|e: NnError| e.to_string())?,
            "fusion" => self.fusion = v.parse().map_err(|e: NnError| e.to_string())?,
            "input_format" => self.input_format = v.parse().map_err(|e: DatasetError| e.to_string())?,
            "embedding_source" => {
                self.embedding_source = v.parse().map_err(|e: NnError| e.to_string())?
            }
            "embed_dim" => self.embed_dim = num(v)?,
            "window_sizes" => self.window_sizes = parse_list(v)?,
            "filters" => self.filters = num(v)?,
            "lstm_cells" => self.lstm_cells = num(v)?,
            "max_len" => self.max_len = parse_opt(v)?,
            "batch_size" => self.train.batch_size = num(v)?,
            "iterations" => self.train.iterations = num(v)?,
            "lr" => self.train.lr = v.parse().map_err(|e| format!("{key}: {e}"))?,
            "eval_every" => self.train.eval_every = num(v)?,
            "tenths" => self.tenths = parse_list(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// The canonical config text; parsing it gives back the same spec.
    pub fn to_config(&self) -> String {
        let opt = |o: Option<usize>| o.map_or("full".to_string(), |n| n.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("protocol", self.protocol.to_string());
        kv("targets", join(&self.targets));
        kv("seed", self.seed.to_string());
        kv("folds", self.folds.to_string());
        kv("run_folds", opt(self.run_folds));
        kv("desk_scale", opt(self.desk_scale));
        kv("min_aspects", self.min_aspects.to_string());
        kv("rare_threshold", self.rare_threshold.to_string());
        kv("backbone", self.backbone.to_string());
        kv("fusion", self.fusion.to_string());
        kv("input_format", self.input_format.to_string());
        kv("embedding_source", self.embedding_source.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("window_sizes", join(&self.window_sizes));
        kv("filters", self.filters.to_string());
        kv("lstm_cells", self.lstm_cells.to_string());
        kv("max_len", opt(self.max_len));
        kv("batch_size", self.train.batch_size.to_string());
        kv("iterations", self.train.iterations.to_string());
        kv("lr", self.train.lr.to_string());
        kv("eval_every", self.train.eval_every.to_string());
        kv("tenths", join(&self.tenths));
        s
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self.to_config().as_bytes())
    }

    pub fn validate(&self) -> Result<(), ExpError> {
        let bad = |m: String| Err(ExpError::Argument(m));
        if self.targets.is_empty() {
            return bad("no targets".into());
        }
        if let Some(t) = self.targets.iter().find(|t| !AspectKind::TARGETS.contains(t)) {
            return bad(format!("{t} is not a prediction target"));
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.run_folds == Some(0) {
            return bad("run_folds must be positive".into());
        }
        if self.desk_scale == Some(0) {
            return bad("desk_scale must be positive".into());
        }
        if let Some(t) = self.tenths.iter().find(|t| !(1..=10).contains(*t)) {
            return bad(format!("tenths {t} outside [1, 10]"));
        }
        if self.train.batch_size == 0 || self.train.eval_every == 0 {
            return bad("batch_size and eval_every must be positive".into());
        }
        self.model_config(AspectKind::VulnerabilityType, 2)?;
        Ok(())
    }

    /// The default model for `target` under this spec.
    pub fn model_config(&self, target: AspectKind, num_classes: usize) -> Result<ModelConfig, ExpError> {
        let mut c = ModelConfig::new(target, num_classes, self.embed_dim).with_format(self.input_format);
        c.backbone = self.backbone;
        c.fusion = self.fusion;
        c.embedding_source = self.embedding_source;
        c.window_sizes = self.window_sizes.clone();
        c.filters = self.filters;
        c.lstm_cells = self.lstm_cells;
        if let Some(m) = self.max_len {
            c.max_len = m;
        }
        c.seed = self.seed;
        c.validate()?;
        Ok(c)
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// One (target, variant, fold) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: Protocol,
    pub target: AspectKind,
    pub variant: String,
    pub fold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub seconds: f64,
    pub seed: u64,
    pub spec: String,
    pub snapshot: String,
    pub n_train: usize,
    pub n_test: usize,
}

/// A variant compared against the sweep default over matching folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub target: AspectKind,
    pub variant: String,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub target: AspectKind,
    pub ablated: AspectKind,
    pub instances: usize,
    pub dropped: usize,
    pub base_f1: f64,
    pub ablated_f1: f64,
    /// base − ablated; positive means the aspect helped.
    pub drop: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub significance: Vec<Significance>,
    pub ablation: Vec<AblationDelta>,
}

/// Datasets and embeddings shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub datasets: BTreeMap<AspectKind, AspectDataset>,
    pub domain: EmbeddingTable,
    pub external: EmbeddingTable,
    pub snapshot: String,
}

impl ExperimentData {
    pub fn new(
        sets: &[AspectSet],
        spec: &ExperimentSpec,
        domain: EmbeddingTable,
        external: EmbeddingTable,
    ) -> Result<Self, ExpError> {
        Ok(Self {
            datasets: build_datasets(sets, spec)?,
            domain,
            external,
            snapshot: snapshot_id(sets),
        })
    }

    pub fn dataset(&self, target: AspectKind) -> Result<&AspectDataset, ExpError> {
        self.datasets.get(&target).ok_or(ExpError::MissingDataset(target))
    }

    pub fn table(&self, source: EmbeddingSource) -> &EmbeddingTable {
        match source {
            EmbeddingSource::Cve => &self.domain,
            EmbeddingSource::External => &self.external,
        }
    }
}

/// Per-target datasets: rare labels grouped into Others, then capped at
/// `desk_scale` instances.
pub fn build_datasets(
    sets: &[AspectSet],
    spec: &ExperimentSpec,
) -> Result<BTreeMap<AspectKind, AspectDataset>, ExpError> {
    let mut out = BTreeMap::new();
    for &target in &spec.targets {
        let tax = LabelTaxonomy::builtin(target);
        let mut ds = build_aspect_dataset(sets, target, &tax, spec.min_aspects)?;
        let grouped = group_rare_labels(&ds.taxonomy, &ds.class_counts(), spec.rare_threshold)?;
        ds.relabel(grouped);
        if let Some(cap) = spec.desk_scale {
            ds = ds.subsample(cap, spec.seed);
        }
        out.insert(target, ds);
    }
    Ok(out)
}

/// Trains on `train_idx`, selects on `fold.validation`, and scores `fold.test`.
pub fn evaluate_fold(
    config: &ModelConfig,
    samples: &[Sample<f32>],
    fold: &Fold,
    train_idx: &[usize],
    opts: &TrainOptions,
    fold_id: usize,
) -> Result<(MetricsReport, f64), ExpError> {
    if fold.test.is_empty() {
        return Err(ExpError::EmptyFold {
            target: config.target_kind,
            fold: fold_id,
        });
    }
    let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let start = Instant::now();
    let mut model = Model::<f32>::new(config.clone())?;
    train(&mut model, &pick(train_idx), &pick(&fold.validation), opts)?;
    let test = pick(&fold.test);
    let pred = evaluate_model(&model, &test)?;
    let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
    let mut report = weighted_prf(&confusion(&truth, &pred, config.num_classes)?);
    report.fold = Some(fold_id);
    report.config_fingerprint = config.fingerprint();
    Ok((report, start.elapsed().as_secs_f64()))
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    data: &'a ExperimentData,
    fingerprint: String,
}

impl<'a> Runner<'a> {
    fn new(spec: &'a ExperimentSpec, data: &'a ExperimentData) -> Result<Self, ExpError> {
        spec.validate()?;
        for &t in &spec.targets {
            data.dataset(t)?;
        }
        Ok(Self {
            spec,
            data,
            fingerprint: spec.fingerprint(),
        })
    }

    fn fold_ids(&self) -> usize {
        self.spec.run_folds.unwrap_or(self.spec.folds).min(self.spec.folds)
    }

    fn row(&self, target: AspectKind, variant: &str, fold: usize, m: &MetricsReport, secs: f64, n_train: usize) -> ResultRow {
        ResultRow {
            protocol: self.spec.protocol,
            target,
            variant: variant.to_string(),
            fold,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            seconds: secs,
            seed: self.spec.seed,
            spec: self.fingerprint.clone(),
            snapshot: self.data.snapshot.clone(),
            n_train,
            n_test: m.support as usize,
        }
    }

    /// Cross-validates `config` on `ds`. `tenths` shrinks each training split.
    fn cross_validate(
        &self,
        ds: &AspectDataset,
        config: &ModelConfig,
        variant: &str,
        tenths: Option<usize>,
    ) -> Result<Vec<ResultRow>, ExpError> {
        let table = self.data.table(config.embedding_source);
        let samples = encode_dataset(ds, config, table, self.spec.seed)?;
        let plan = make_folds(ds.len(), self.spec.folds, self.spec.seed)?;
        let mut rows = Vec::new();
        for (f, fold) in plan.folds.iter().enumerate().take(self.fold_ids()) {
            let train_idx: Vec<usize> = match tenths {
                None => fold.train.clone(),
                Some(t) => curve_indices(fold.train.len(), t, self.spec.seed)?
                    .into_iter()
                    .map(|p| fold.train[p])
                    .collect(),
            };
            if train_idx.is_empty() {
                return Err(ExpError::Argument(format!(
                    "{variant}: fold {f} of {} has no training data",
                    ds.target_kind
                )));
            }
            let (m, secs) = evaluate_fold(config, &samples, fold, &train_idx, &self.spec.train_options(), f)?;
            rows.push(self.row(ds.target_kind, variant, f, &m, secs, train_idx.len()));
        }
        Ok(rows)
    }

    fn default_config(&self, ds: &AspectDataset) -> Result<ModelConfig, ExpError> {
        self.spec.model_config(ds.target_kind, ds.taxonomy.len())
    }
}

/// Variants of one design dimension, the spec's own setting first.
fn sweep_variants(spec: &ExperimentSpec, base: &ModelConfig) -> Result<Vec<(String, ModelConfig)>, ExpError> {
    let mut out: Vec<(String, ModelConfig)> = Vec::new();
    let mut push = |label: String, c: ModelConfig| {
        if !out.iter().any(|(l, _)| *l == label) {
            out.push((label, c));
        }
    };
    match spec.protocol {
        Protocol::Rq1Input => {
            let mut formats = vec![spec.input_format];
            formats.extend(InputFormat::ALL);
            for f in formats {
                let mut c = base.clone().with_format(f);
                if let Some(m) = spec.max_len {
                    c.max_len = m;
                }
                push(f.to_string(), c);
            }
        }
        Protocol::Rq1Embedding => {
            for s in [spec.embedding_source, EmbeddingSource::Cve, EmbeddingSource::External] {
                push(s.to_string(), ModelConfig { embedding_source: s, ..base.clone() });
            }
        }
        Protocol::Rq1Architecture => {
            for f in [spec.fusion, Fusion::Early, Fusion::Late] {
                push(format!("{f} fusion"), ModelConfig { fusion: f, ..base.clone() });
            }
        }
        Protocol::Rq1Network => {
            let mut all = vec![spec.backbone];
            all.extend(Backbone::ALL);
            for b in all {
                push(b.to_string(), ModelConfig { backbone: b, ..base.clone() });
            }
        }
        p => return Err(ExpError::Argument(format!("{p} is not a design sweep"))),
    }
    for (_, c) in &out {
        c.validate()?;
    }
    Ok(out)
}

/// Varies one design dimension with the rest at the spec's values, and
/// tests each variant against the first with a paired Wilcoxon over folds.
pub fn run_design_sweep(spec: &ExperimentSpec, data: &ExperimentData) -> Result<ExperimentOutput, ExpError> {
    let runner = Runner::new(spec, data)?;
    let mut out = ExperimentOutput::default();
    for &target in &spec.targets {
        let ds = data.dataset(target)?;
        let variants = sweep_variants(spec, &runner.default_config(ds)?)?;
        let mut groups = Vec::new();
        for (label, config) in &variants {
            let rows = runner.cross_validate(ds, config, label, None)?;
            groups.push(rows);
        }
        for g in &groups[1..] {
            let pairs: Vec<(f64, f64)> = groups[0].iter().zip(g).map(|(a, b)| (b.f1, a.f1)).collect();
            let w = wilcoxon_signed_rank(&pairs)?;
            out.significance.push(Significance {
                target,
                variant: g[0].variant.clone(),
                p_value: w.p_value,
                significant: w.p_value < SIGNIFICANCE,
            });
        }
        out.rows.extend(groups.into_iter().flatten());
    }
    Ok(out)
}

/// The spec's configuration, cross-validated on every target.
pub fn run_overall(spec: &ExperimentSpec, data: &ExperimentData) -> Result<ExperimentOutput, ExpError> {
    let runner = Runner::new(spec, data)?;
    let mut out = ExperimentOutput::default();
    for &target in &spec.targets {
        let ds = data.dataset(target)?;
        out.rows.extend(runner.cross_validate(ds, &runner.default_config(ds)?, "default", None)?);
    }
    Ok(out)
}

pub fn curve_variant(tenths: usize) -> String {
    format!("{tenths}/10")
}

/// Trains on nested tenths of each training split; the test fold is fixed.
pub fn run_curve(spec: &ExperimentSpec, data: &ExperimentData) -> Result<ExperimentOutput, ExpError> {
    let runner = Runner::new(spec, data)?;
    let mut out = ExperimentOutput::default();
    for &target in &spec.targets {
        let ds = data.dataset(target)?;
        let config = runner.default_config(ds)?;
        for &t in &spec.tenths {
            out.rows.extend(runner.cross_validate(ds, &config, &curve_variant(t), Some(t))?);
        }
    }
    Ok(out)
}

fn mean_f1(rows: &[ResultRow]) -> f64 {
    rows.iter().map(|r| r.f1).sum::<f64>() / rows.len().max(1) as f64
}

/// Removes each non-target aspect in turn and reports the F1 drop against
/// the unablated run.
pub fn run_ablation(spec: &ExperimentSpec, data: &ExperimentData) -> Result<ExperimentOutput, ExpError> {
    run_ablation_of(spec, data, &AspectKind::ALL)
}

/// [`run_ablation`] restricted to the kinds in `kinds`.
pub fn run_ablation_of(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    kinds: &[AspectKind],
) -> Result<ExperimentOutput, ExpError> {
    let runner = Runner::new(spec, data)?;
    let mut out = ExperimentOutput::default();
    for &target in &spec.targets {
        let ds = data.dataset(target)?;
        let config = runner.default_config(ds)?;
        let base = runner.cross_validate(ds, &config, "base", None)?;
        let base_f1 = mean_f1(&base);
        out.rows.extend(base);
        for &kind in kinds.iter().filter(|&&k| k != target) {
            let (abl, dropped) = ablate(ds, kind)?;
            let rows = runner.cross_validate(&abl, &config, &format!("-{kind}"), None)?;
            let f1 = mean_f1(&rows);
            out.ablation.push(AblationDelta {
                target,
                ablated: kind,
                instances: abl.len(),
                dropped,
                base_f1,
                ablated_f1: f1,
                drop: base_f1 - f1,
            });
            out.rows.extend(rows);
        }
    }
    Ok(out)
}

/// Dispatches on `spec.protocol`. Corpus statistics need the aspect sets and
/// go through [`corpus_stats`] instead.
pub fn run(spec: &ExperimentSpec, data: &ExperimentData) -> Result<ExperimentOutput, ExpError> {
    match spec.protocol {
        p if p.is_sweep() => run_design_sweep(spec, data),
        Protocol::Rq2Overall => run_overall(spec, data),
        Protocol::Rq3Curve => run_curve(spec, data),
        Protocol::Rq4Ablation => run_ablation(spec, data),
        _ => Err(ExpError::Argument("corpus-stats runs on aspect sets, not datasets".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    /// Sets containing each kind, in [`AspectKind::ALL`] order.
    pub present: [usize; 6],
    /// `missing[j]` = sets lacking exactly j aspects.
    pub missing: [usize; 7],
}

pub fn corpus_stats(sets: &[AspectSet]) -> CorpusStats {
    let mut present = [0; 6];
    let mut missing = [0; 7];
    for s in sets {
        for k in AspectKind::ALL {
            if s.has(k) {
                present[k.ordinal()] += 1;
            }
        }
        missing[6 - s.len()] += 1;
    }
    CorpusStats {
        total: sets.len(),
        present,
        missing,
    }
}

fn rate(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

impl CorpusStats {
    pub fn presence_rate(&self, kind: AspectKind) -> f64 {
        rate(self.present[kind.ordinal()], self.total)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("{} descriptions\n\n| aspect | present | rate |\n|---|---:|---:|\n", self.total);
        for k in AspectKind::ALL {
            s.push_str(&format!(
                "| {} | {} | {:.1}% |\n",
                k.title(),
                self.present[k.ordinal()],
                100.0 * self.presence_rate(k)
            ));
        }
        s.push_str("\n| missing aspects | descriptions | rate |\n|---:|---:|---:|\n");
        for (j, &n) in self.missing.iter().enumerate() {
            s.push_str(&format!("| {j} | {n} | {:.1}% |\n", 100.0 * rate(n, self.total)));
        }
        s
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String, ExpError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| ExpError::Argument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| ExpError::Argument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>, ExpError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ExpError::Argument(format!("result csv: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub target: AspectKind,
    pub variant: String,
    pub folds: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub min_f1: f64,
    pub max_f1: f64,
}

/// Fold means per (target, variant), in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<Summary> {
    let mut out: Vec<Summary> = Vec::new();
    for r in rows {
        let s = match out.iter_mut().find(|s| s.target == r.target && s.variant == r.variant) {
            Some(s) => s,
            None => {
                out.push(Summary {
                    target: r.target,
                    variant: r.variant.clone(),
                    folds: 0,
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                    min_f1: f64::INFINITY,
                    max_f1: f64::NEG_INFINITY,
                });
                out.last_mut().unwrap()
            }
        };
        s.folds += 1;
        s.precision += r.precision;
        s.recall += r.recall;
        s.f1 += r.f1;
        s.min_f1 = s.min_f1.min(r.f1);
        s.max_f1 = s.max_f1.max(r.f1);
    }
    for s in &mut out {
        let n = s.folds as f64;
        s.precision /= n;
        s.recall /= n;
        s.f1 /= n;
    }
    out
}

/// One table row per (target, variant) with fold-mean metrics. Variants
/// significantly different from the sweep default get a leading `*`.
pub fn to_markdown(out: &ExperimentOutput) -> String {
    let mut s = String::from("| target | variant | P | R | F1 | folds | p |\n|---|---|---:|---:|---:|---:|---:|\n");
    for m in summarize(&out.rows) {
        let sig = out.significance.iter().find(|g| g.target == m.target && g.variant == m.variant);
        let (star, p) = match sig {
            Some(g) => (if g.significant { "*" } else { "" }, format!("{:.4}", g.p_value)),
            None => ("", String::new()),
        };
        s.push_str(&format!(
            "| {} | {star}{} | {:.3} | {:.3} | {:.3} | {} | {p} |\n",
            m.target.title(),
            m.variant,
            m.precision,
            m.recall,
            m.f1,
            m.folds
        ));
    }
    if !out.ablation.is_empty() {
        s.push_str("\n| target | ablated | instances | dropped | F1 | drop |\n|---|---|---:|---:|---:|---:|\n");
        for a in &out.ablation {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {:.3} | {:+.1}% |\n",
                a.target.title(),
                a.ablated.title(),
                a.instances,
                a.dropped,
                a.ablated_f1,
                100.0 * a.drop
            ));
        }
    }
    if let Some(r) = out.rows.first() {
        s.push_str(&format!("\nspec {} · corpus {} · seed {}\n", r.spec, r.snapshot, r.seed));
    }
    s
}

/// Learning-curve points for plotting: target, tenths, fold-mean F1 and range.
pub fn curve_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from("target,tenths,n_train,f1,min_f1,max_f1,folds\n");
    for m in summarize(rows) {
        let Some(t) = m.variant.strip_suffix("/10") else {
            continue;
        };
        let n: usize = rows
            .iter()
            .filter(|r| r.target == m.target && r.variant == m.variant)
            .map(|r| r.n_train)
            .sum();
        s.push_str(&format!(
            "{},{t},{},{:.6},{:.6},{:.6},{}\n",
            m.target,
            n / m.folds,
            m.f1,
            m.min_f1,
            m.max_f1,
            m.folds
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::AspectSpan;
    use crate::synth;

    fn set(id: &str, kinds: &[AspectKind]) -> AspectSet {
        let mut s = AspectSet::empty(id, "abcdef");
        for (i, &k) in kinds.iter().enumerate() {
            s.insert(AspectSpan {
                kind: k,
                text: "abcdef"[i..i + 1].into(),
                start: i,
                end: i + 1,
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn corpus_stats_hand_counts() {
        let all = AspectKind::ALL;
        let full: Vec<AspectSet> = (0..3).map(|i| set(&format!("CVE-2020-{i:04}"), &all)).collect();
        let st = corpus_stats(&full);
        assert!(all.iter().all(|&k| st.presence_rate(k) == 1.0));
        assert_eq!(st.missing, [3, 0, 0, 0, 0, 0, 0]);

        let no_rc: Vec<AspectKind> = all.into_iter().filter(|&k| k != AspectKind::RootCause).collect();
        let sets: Vec<AspectSet> = (0..10)
            .map(|i| set(&format!("CVE-2020-{i:04}"), if i < 4 { &no_rc } else { &all }))
            .collect();
        let st = corpus_stats(&sets);
        assert!((st.presence_rate(AspectKind::RootCause) - 0.6).abs() < 1e-12);
        assert_eq!(st.missing[1], 4);
        assert_eq!(st.missing[0], 6);
        assert!(st.to_markdown().contains("| Root cause | 6 | 60.0% |"));
    }

    #[test]
    fn spec_config_round_trip_and_errors() {
        let mut spec = ExperimentSpec {
            protocol: Protocol::Rq3Curve,
            targets: vec![AspectKind::AttackVector],
            run_folds: Some(2),
            desk_scale: None,
            ..Default::default()
        };
        spec.train.lr = 0.002;
        spec.tenths = vec![1, 5, 10];
        let back = ExperimentSpec::parse(&spec.to_config()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.fingerprint(), spec.fingerprint());
        assert_ne!(ExperimentSpec::default().fingerprint(), spec.fingerprint());

        let s = ExperimentSpec::parse("# comment\nseed = 9\nbackbone = bilstm2-attn\n\ntargets = impact").unwrap_err();
        assert!(s.to_string().contains("not a prediction target"), "{s}");
        assert!(matches!(
            ExperimentSpec::parse("seed = 1\ncolour = red"),
            Err(ExpError::Config { line: 2, .. })
        ));
        assert!(ExperimentSpec::parse("seed = 1\nseed = 2").is_err());
        assert!(ExperimentSpec::parse("fusion = late\ninput_format = i-fu").is_err());
        assert!(ExperimentSpec::parse("window_sizes = 2").is_err());
        let s = ExperimentSpec::parse("backbone = bilstm2-attn\ninput_format = i-fu").unwrap();
        assert_eq!(s.backbone, Backbone::Bilstm2Attn);
        assert_eq!(s.model_config(AspectKind::RootCause, 3).unwrap().max_len, 256);
    }

    fn tiny_data(spec: &ExperimentSpec) -> ExperimentData {
        let sets: Vec<AspectSet> = synth::desk_corpus(240, 3)
            .iter()
            .map(|c| crate::extract::extract_aspects(&c.record, &crate::extract::Gazetteer::builtin()))
            .collect();
        let dim = spec.embed_dim;
        ExperimentData::new(&sets, spec, EmbeddingTable::random(dim, 1), EmbeddingTable::random(dim, 2)).unwrap()
    }

    fn tiny_spec(protocol: Protocol) -> ExperimentSpec {
        ExperimentSpec {
            protocol,
            targets: vec![AspectKind::VulnerabilityType],
            folds: 4,
            run_folds: Some(2),
            embed_dim: 8,
            filters: 4,
            lstm_cells: 3,
            train: TrainOptions {
                iterations: 6,
                batch_size: 16,
                eval_every: 3,
                ..TrainOptions::default()
            },
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn rows_are_reproducible_and_traceable() {
        let spec = tiny_spec(Protocol::Rq2Overall);
        let data = tiny_data(&spec);
        let a = run(&spec, &data).unwrap();
        let b = run(&spec, &data).unwrap();
        assert_eq!(a.rows.len(), 2);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!((x.precision, x.recall, x.f1), (y.precision, y.recall, y.f1));
            assert_eq!(x.spec, spec.fingerprint());
            assert_eq!(x.seed, spec.seed);
            assert!((0.0..=1.0).contains(&x.f1));
        }
        let csv = rows_to_csv(&a.rows).unwrap();
        assert!(csv.starts_with("protocol,target,variant,fold,precision,recall,f1,"));
        assert_eq!(rows_from_csv(&csv).unwrap(), a.rows);
        assert!(to_markdown(&a).contains("| Vulnerability type | default |"));

        let missing = ExperimentSpec {
            targets: vec![AspectKind::RootCause],
            ..spec.clone()
        };
        assert!(matches!(run(&missing, &data), Err(ExpError::MissingDataset(AspectKind::RootCause))));
    }

    #[test]
    fn sweeps_vary_one_dimension() {
        let spec = tiny_spec(Protocol::Rq1Architecture);
        let data = tiny_data(&spec);
        let out = run(&spec, &data).unwrap();
        let variants: Vec<String> = summarize(&out.rows).into_iter().map(|s| s.variant).collect();
        assert_eq!(variants, ["early fusion", "late fusion"]);
        assert_eq!(out.significance.len(), 1);
        // Two folds can never reach p < 0.05.
        assert!(!out.significance[0].significant);

        let base = spec.model_config(AspectKind::VulnerabilityType, 3).unwrap();
        for p in [Protocol::Rq1Input, Protocol::Rq1Embedding, Protocol::Rq1Network] {
            let s = ExperimentSpec { protocol: p, ..spec.clone() };
            let v = sweep_variants(&s, &base).unwrap();
            assert_eq!(v[0].1, base, "{p}");
            for (_, c) in &v[1..] {
                let diffs = [
                    c.input_format != base.input_format,
                    c.embedding_source != base.embedding_source,
                    c.fusion != base.fusion,
                    c.backbone != base.backbone,
                ];
                assert_eq!(diffs.iter().filter(|d| **d).count(), 1, "{p}");
            }
        }
        assert_eq!(sweep_variants(&ExperimentSpec { protocol: Protocol::Rq1Network, ..spec.clone() }, &base).unwrap().len(), 6);
    }

    #[test]
    fn identical_variants_give_p_one() {
        let spec = tiny_spec(Protocol::Rq2Overall);
        let data = tiny_data(&spec);
        let a = run_overall(&spec, &data).unwrap();
        let b = run_overall(&spec, &data).unwrap();
        let pairs: Vec<(f64, f64)> = a.rows.iter().zip(&b.rows).map(|(x, y)| (x.f1, y.f1)).collect();
        assert_eq!(wilcoxon_signed_rank(&pairs).unwrap().p_value, 1.0);
    }

    #[test]
    fn full_curve_tenth_matches_overall() {
        let mut spec = tiny_spec(Protocol::Rq3Curve);
        spec.tenths = vec![3, 10];
        let data = tiny_data(&spec);
        let curve = run(&spec, &data).unwrap();
        assert_eq!(curve.rows.len(), 4);
        let overall = run_overall(&spec, &data).unwrap();
        let full: Vec<&ResultRow> = curve.rows.iter().filter(|r| r.variant == "10/10").collect();
        for (c, o) in full.iter().zip(&overall.rows) {
            assert_eq!((c.f1, c.n_train, c.fold), (o.f1, o.n_train, o.fold));
        }
        let short: Vec<&ResultRow> = curve.rows.iter().filter(|r| r.variant == "3/10").collect();
        assert!(short[0].n_train < full[0].n_train);
        let csv = curve_csv(&curve.rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("vulnerability_type,3,"));
    }

    #[test]
    fn ablation_accounts_for_every_instance() {
        let spec = tiny_spec(Protocol::Rq4Ablation);
        let data = tiny_data(&spec);
        let out = run_ablation_of(&spec, &data, &[AspectKind::Impact, AspectKind::RootCause]).unwrap();
        let n = data.dataset(AspectKind::VulnerabilityType).unwrap().len();
        assert_eq!(out.ablation.len(), 2);
        for a in &out.ablation {
            assert_eq!(a.instances + a.dropped, n);
            assert!((a.base_f1 - a.ablated_f1 - a.drop).abs() < 1e-12);
        }
        assert!(to_markdown(&out).contains("| Vulnerability type | Impact |"));
    }

    #[test]
    fn empty_test_fold_is_an_error() {
        let cfg = ModelConfig::new(AspectKind::AttackVector, 2, 4);
        let fold = Fold {
            train: vec![0],
            validation: vec![],
            test: vec![],
        };
        let samples = vec![Sample {
            segments: vec![crate::nn::Mat::zeros(1, 4)],
            label: 0,
        }];
        let r = evaluate_fold(&cfg, &samples, &fold, &fold.train, &TrainOptions::default(), 3);
        assert!(matches!(r, Err(ExpError::EmptyFold { fold: 3, .. })));
    }
}
