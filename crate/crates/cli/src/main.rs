use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vaf_core::corpus::{load_records, parse_cve_feed, store_records, FeedFormat};
use vaf_core::dataset::{load_dataset, make_folds, store_dataset, text_tokens, AspectDataset, LabelTaxonomy};
use vaf_core::embed::{load_embedding_text, store_embedding_text, train_skipgram, EmbeddingTable, SkipGramParams};
use vaf_core::eval::{confusion, weighted_prf};
use vaf_core::exp::{self, ExperimentData, ExperimentSpec, Protocol};
use vaf_core::extract::{extract_aspects, extract_text, load_aspects, store_aspects, AspectKind, AspectSet, Gazetteer};
use vaf_core::nn::{
    encode_dataset, evaluate_model, load_checkpoint, predict_missing, save_checkpoint, train, Checkpoint,
    Model, TrainOptions,
};
use vaf_core::synth;

type Res<T = ()> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "vaf", version, about = "CVE aspect extraction and missing-aspect prediction")]
struct Cli {
    /// Seed for sampling, fold splits, initialization and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config: key = value lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Instances per target dataset, or "full".
    #[arg(long, global = true)]
    desk_scale: Option<String>,
    /// Directory for every file the command writes.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct Inputs {
    /// Aspect file (default: <out>/aspects.vaf).
    #[arg(long)]
    aspects: Option<PathBuf>,
    /// Domain embeddings in text format (default: <out>/embeddings.txt).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Third-party embeddings in text format. Without it the external
    /// variant uses a seeded random table.
    #[arg(long)]
    external: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dimension {
    Input,
    Embedding,
    Architecture,
    Network,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic JSON feed (offline stand-in for a real feed slice).
    Synth {
        #[arg(long, default_value_t = 3000)]
        count: usize,
        /// Bare templates, every slot filled.
        #[arg(long)]
        strict: bool,
    },
    /// Parse a CVE feed into <out>/corpus.vaf.
    Ingest {
        feed: PathBuf,
        /// json (NVD feeds) or csv (CVE list export).
        #[arg(long, default_value = "json")]
        format: FeedFormat,
    },
    /// Extract aspects from <out>/corpus.vaf into <out>/aspects.vaf, or from --text.
    Extract {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
        /// Extract one description and print its spans.
        #[arg(long)]
        text: Option<String>,
    },
    /// Aspect presence and missing-aspect histogram.
    Stats {
        #[arg(long)]
        aspects: Option<PathBuf>,
    },
    /// Build per-target datasets into <out>/dataset-<target>.vaf.
    BuildDataset {
        #[arg(long)]
        aspects: Option<PathBuf>,
    },
    /// Train skip-gram embeddings on the descriptions.
    TrainEmbeddings {
        #[arg(long)]
        aspects: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 5)]
        negatives: usize,
    },
    /// Train one classifier on a fold's training split and save a checkpoint.
    Train {
        #[arg(long)]
        target: AspectKind,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Score a checkpoint on a dataset, or cross-validate the default model.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Vary one design dimension against the default.
    Sweep {
        dimension: Dimension,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Learning curve over tenths of the training data.
    Curve {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Drop each non-target aspect in turn.
    Ablate {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Predict a missing aspect with a checkpoint.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// A description to extract and predict from.
        #[arg(long)]
        text: Option<String>,
        /// Predict for every set in this aspect file that lacks the target.
        #[arg(long)]
        aspects: Option<PathBuf>,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
    },
    /// Render result CSVs as Markdown (and curve points if present).
    Report { results: Vec<PathBuf> },
}

struct Ctx {
    spec: ExperimentSpec,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn or_default(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.path(name))
    }

    fn write(&self, name: &str, body: &str) -> Res<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, body).map_err(|e| format!("{}: {e}", p.display()))?;
        eprintln!("wrote {}", p.display());
        Ok(p)
    }

    fn aspects(&self, p: &Option<PathBuf>) -> Res<Vec<AspectSet>> {
        Ok(load_aspects(&self.or_default(p, "aspects.vaf"))?)
    }

    fn tables(&mut self, inputs: &Inputs) -> Res<(EmbeddingTable, EmbeddingTable)> {
        let path = self.or_default(&inputs.embeddings, "embeddings.txt");
        let domain = load_embedding_text(&path, self.spec.seed)
            .map_err(|e| format!("{e} (run `vaf train-embeddings` first)"))?;
        if domain.dim() != self.spec.embed_dim {
            eprintln!("note: using the embedding dimension {} of {}", domain.dim(), path.display());
            self.spec.embed_dim = domain.dim();
        }
        let external = match &inputs.external {
            Some(p) => load_embedding_text(p, self.spec.seed)?,
            None => EmbeddingTable::random(domain.dim(), self.spec.seed),
        };
        if external.dim() != domain.dim() {
            return Err(format!("external dim {} != domain dim {}", external.dim(), domain.dim()).into());
        }
        Ok((domain, external))
    }

    fn data(&mut self, inputs: &Inputs) -> Res<ExperimentData> {
        let sets = self.aspects(&inputs.aspects)?;
        let (domain, external) = self.tables(inputs)?;
        Ok(ExperimentData::new(&sets, &self.spec, domain, external)?)
    }

    fn experiment(&mut self, protocol: Protocol, inputs: &Inputs) -> Res {
        self.spec.protocol = protocol;
        let data = self.data(inputs)?;
        let out = exp::run(&self.spec, &data)?;
        let name = protocol.name();
        self.write(&format!("{name}.csv"), &exp::rows_to_csv(&out.rows)?)?;
        let md = exp::to_markdown(&out);
        self.write(&format!("{name}.md"), &md)?;
        if protocol == Protocol::Rq3Curve {
            self.write("curve.csv", &exp::curve_csv(&out.rows))?;
        }
        self.write(&format!("{name}.spec"), &self.spec.to_config())?;
        print!("{md}");
        Ok(())
    }
}

fn gazetteer(p: &Option<PathBuf>) -> Res<Gazetteer> {
    Ok(match p {
        Some(p) => Gazetteer::load(p, &LabelTaxonomy::builtin_all())?,
        None => Gazetteer::builtin(),
    })
}

fn print_spans(set: &AspectSet) {
    for s in set.spans() {
        println!("{:<18} {:>4}..{:<4} {}", s.kind.name(), s.start, s.end, s.text);
    }
}

fn spec_from(cli: &Cli) -> Res<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(d) = &cli.desk_scale {
        spec.set("desk_scale", d)?;
    }
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> Res {
    let spec = spec_from(&cli)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| format!("{}: {e}", cli.out.display()))?;
    let mut ctx = Ctx { spec, out: cli.out };
    match cli.cmd {
        Cmd::Synth { count, strict } => {
            let opts = if strict { synth::SynthOptions::strict() } else { synth::SynthOptions::desk() };
            let recs: Vec<_> = synth::generate(count, ctx.spec.seed, &opts).into_iter().map(|c| c.record).collect();
            ctx.write("feed.json", &synth::to_json_feed(&recs))?;
        }
        Cmd::Ingest { feed, format } => {
            let raw = std::fs::read(&feed).map_err(|e| format!("{}: {e}", feed.display()))?;
            let r = parse_cve_feed(&raw, format)?;
            let p = ctx.path("corpus.vaf");
            store_records(&r.records, &p)?;
            println!(
                "{} records ({} withdrawn, {} malformed, {} duplicates, {} bytes replaced) -> {}",
                r.records.len(),
                r.withdrawn,
                r.malformed,
                r.duplicates,
                r.replaced_bytes,
                p.display()
            );
        }
        Cmd::Extract { corpus, gazetteer: g, text } => {
            let g = gazetteer(&g)?;
            if let Some(t) = text {
                print_spans(&extract_text("input", &t, &g));
                return Ok(());
            }
            let recs = load_records(&ctx.or_default(&corpus, "corpus.vaf"))?;
            let sets: Vec<AspectSet> = recs.iter().map(|r| extract_aspects(r, &g)).collect();
            let p = ctx.path("aspects.vaf");
            store_aspects(&sets, &p)?;
            println!("{} aspect sets -> {}", sets.len(), p.display());
        }
        Cmd::Stats { aspects } => {
            let md = exp::corpus_stats(&ctx.aspects(&aspects)?).to_markdown();
            ctx.write("stats.md", &md)?;
            print!("{md}");
        }
        Cmd::BuildDataset { aspects } => {
            let sets = ctx.aspects(&aspects)?;
            for (kind, ds) in exp::build_datasets(&sets, &ctx.spec)? {
                let p = ctx.path(&format!("dataset-{kind}.vaf"));
                store_dataset(&ds, &p)?;
                println!("{kind}: {} instances, {} classes -> {}", ds.len(), ds.taxonomy.len(), p.display());
            }
        }
        Cmd::TrainEmbeddings { aspects, dim, epochs, window, negatives } => {
            let sets = ctx.aspects(&aspects)?;
            let streams: Vec<Vec<String>> = sets.iter().map(|s| text_tokens(&s.description)).collect();
            let params = SkipGramParams {
                dim: dim.unwrap_or(ctx.spec.embed_dim),
                epochs,
                window,
                negatives,
                seed: ctx.spec.seed,
                ..SkipGramParams::default()
            };
            let (table, report) = train_skipgram(&streams, &params)?;
            let p = ctx.path("embeddings.txt");
            store_embedding_text(&table, &p)?;
            for (e, l) in report.epoch_loss.iter().enumerate() {
                println!("epoch {}: loss {l:.4}", e + 1);
            }
            println!("{} words x {} -> {}", table.vocab().len(), table.dim(), p.display());
        }
        Cmd::Train { target, fold, inputs } => {
            ctx.spec.targets = vec![target];
            ctx.spec.validate()?;
            let data = ctx.data(&inputs)?;
            let ds = data.dataset(target)?;
            let config = ctx.spec.model_config(target, ds.taxonomy.len())?;
            let table = data.table(config.embedding_source);
            let samples = encode_dataset(ds, &config, table, ctx.spec.seed)?;
            let plan = make_folds(ds.len(), ctx.spec.folds, ctx.spec.seed)?;
            let f = plan.folds.get(fold).ok_or_else(|| format!("fold {fold} out of range"))?;
            let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
            let mut model = Model::<f32>::new(config)?;
            let opts = TrainOptions { seed: ctx.spec.seed, ..ctx.spec.train.clone() };
            let (report, adam) = train(&mut model, &pick(&f.train), &pick(&f.validation), &opts)?;
            let test = pick(&f.test);
            let pred = evaluate_model(&model, &test)?;
            let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
            let mut m = weighted_prf(&confusion(&truth, &pred, ds.taxonomy.len())?.with_labels(&ds.taxonomy.labels)?);
            m.fold = Some(fold);
            m.config_fingerprint = model.config.fingerprint();
            println!(
                "best iteration {} (validation F1 {:.4}), test weighted F1 {:.4}",
                report.best_iteration, report.best_score, m.f1
            );
            ctx.write(&format!("metrics-{target}.csv"), &m.to_csv())?;
            ctx.write(&format!("metrics-{target}.md"), &m.to_markdown())?;
            let ckpt = Checkpoint {
                embedding: table.clone(),
                model,
                optimizer: Some(adam),
                iteration: report.best_iteration,
                dataset_fingerprint: ds.fingerprint(),
                taxonomy_fingerprint: ds.taxonomy.fingerprint(),
                labels: ds.taxonomy.labels.clone(),
            };
            let p = ctx.path(&format!("model-{target}.ckpt"));
            save_checkpoint(&ckpt, &p)?;
            eprintln!("wrote {}", p.display());
        }
        Cmd::Evaluate { model: Some(model), dataset, .. } => {
            let ckpt = load_checkpoint(&model)?;
            let target = ckpt.model.config.target_kind;
            let ds: AspectDataset = load_dataset(&ctx.or_default(&dataset, &format!("dataset-{target}.vaf")))?;
            if ds.taxonomy.fingerprint() != ckpt.taxonomy_fingerprint {
                return Err("dataset labels differ from the checkpoint's".into());
            }
            let samples = encode_dataset(&ds, &ckpt.model.config, &ckpt.embedding, ctx.spec.seed)?;
            let pred = evaluate_model(&ckpt.model, &samples)?;
            let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let mut m = weighted_prf(&confusion(&truth, &pred, ckpt.labels.len())?.with_labels(&ckpt.labels)?);
            m.config_fingerprint = ckpt.model.config.fingerprint();
            ctx.write(&format!("evaluation-{target}.csv"), &m.to_csv())?;
            print!("{}", m.to_markdown());
        }
        Cmd::Evaluate { model: None, inputs, .. } => ctx.experiment(Protocol::Rq2Overall, &inputs)?,
        Cmd::Sweep { dimension, inputs } => {
            let p = match dimension {
                Dimension::Input => Protocol::Rq1Input,
                Dimension::Embedding => Protocol::Rq1Embedding,
                Dimension::Architecture => Protocol::Rq1Architecture,
                Dimension::Network => Protocol::Rq1Network,
            };
            ctx.experiment(p, &inputs)?
        }
        Cmd::Curve { inputs } => ctx.experiment(Protocol::Rq3Curve, &inputs)?,
        Cmd::Ablate { inputs } => ctx.experiment(Protocol::Rq4Ablation, &inputs)?,
        Cmd::Predict { model, text, aspects, gazetteer: g } => {
            let ckpt = load_checkpoint(&model)?;
            let target = ckpt.model.config.target_kind;
            let sets = match (text, aspects) {
                (Some(t), None) => vec![extract_text("input", &t, &gazetteer(&g)?)],
                (None, Some(p)) => load_aspects(&p)?.into_iter().filter(|s| !s.has(target)).collect(),
                _ => return Err("give exactly one of --text and --aspects".into()),
            };
            for set in &sets {
                let line = match predict_missing(&ckpt.model, &ckpt.labels, &ckpt.embedding, set) {
                    Ok(p) => serde_json::to_string(&p)?,
                    Err(e) => serde_json::json!({ "cve_id": set.cve_id, "error": e.to_string() }).to_string(),
                };
                println!("{line}");
            }
        }
        Cmd::Report { results } => {
            if results.is_empty() {
                return Err("no result files given".into());
            }
            let mut rows = Vec::new();
            for p in &results {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                rows.extend(exp::rows_from_csv(&text)?);
            }
            let out = exp::ExperimentOutput { rows, ..Default::default() };
            let md = exp::to_markdown(&out);
            ctx.write("report.md", &md)?;
            if out.rows.iter().any(|r| r.protocol == Protocol::Rq3Curve) {
                ctx.write("curve.csv", &exp::curve_csv(&out.rows))?;
            }
            print!("{md}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
