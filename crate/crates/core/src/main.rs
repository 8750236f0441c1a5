use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use eventvec::config::{check_fingerprint, RunConfig};
use eventvec::corpus::{self, truncate, Vocabulary};
use eventvec::embedding::{EmbeddingModel, Mode, Objective};
use eventvec::evalkit::{self, EvalReport, TaskSpec};
use eventvec::inference::{self, InferConfig};
use eventvec::projector::{self, Projection};
use eventvec::synthgen::{self, Label};
use eventvec::trainer;
use eventvec::Error;

const FORMATS: &str = "\
Formats (UTF-8, tab-separated, '\\n' line ends):

  Every text artifact may open with '# fingerprint=<16 hex>'. Other lines
  starting with '#' and blank lines are ignored on input.

  events TSV     record_id  day  channel  code
                 day: unsigned integer day offset; channel: diagnosis|lab|
                 medication (or dx|lab|med); code: '<dx|lab|med>:<body>',
                 prefix agreeing with channel.
  labels TSV     record_id  label  event_day
                 label: positive|negative (1|0 accepted); event_day: target
                 onset day, '-' for negatives.
  vocab TSV      code  count  group        (descending count, ties by code)
  vectors TSV    record_id  v1 .. vk       (f32, shortest round-trip form)
  nearest TSV    rank  doc_id  cosine      (on stdout)
  projection TSV id  pc1  pc2
  trajectory TSV record_id  day  pc1  pc2  marker(0|1)
  progress JSONL {\"epoch\":e,\"mean_loss\":l,\"alpha\":a} per epoch
  report JSON    {fingerprint, model_fingerprint, tasks:[{name, horizon_days,
                 cohort, split, input_hash, infer_epochs, representations:
                 [{name, features, lambda, alpha, nonzero_weights, cv_auc,
                 test_auc, validation_auc, calibration:{bins, mse}}]}]}
  features       <task>_h<horizon>.instances.tsv   row record_id label part cutoff_day
                 <task>_h<horizon>.bow.tsv         row col value (nonzero only)
                 <task>_h<horizon>.bow_columns.tsv col group
                 <task>_h<horizon>.embedding.tsv   row v1 .. vk
  model          binary container, little-endian: magic 'SQV1', u16 version 1,
                 u8 mode (0 dm, 1 dbow), u8 objective (0 hs, 1 ns), u32 k,
                 u32 V, u32 D, u32 window, u32 epochs, u64 seed, V x {u32 len,
                 code, u64 count}, doc D*k f32, token V*k f32, output
                 (V-1)*k (hs) or V*k (ns) f32, D x {u32 len, doc id},
                 u32 negatives, f64 noise exponent, f32 alpha0, f32 alpha1,
                 u8 train_words, {u32 len, fingerprint}.

Config: TOML with optional tables [generator] [corpus] [train] [eval]
[eval.elastic_net] [eval.infer] and [[tasks]]; flags override the file.

Fingerprints: corpus = (seed, generator); model = corpus + (corpus,
train without workers); report = model + (eval, tasks). A stage refuses
inputs stamped with a different fingerprint.

Errors: one line on stderr, 'error<TAB><class><TAB><message>'.
Exit codes: 0 ok, 2 usage, 3 io, 4 format, 5 config, 6 fingerprint,
7 numeric, 8 data.";

/// Paragraph-vector embeddings of event records, with evaluation tooling.
#[derive(Parser, Debug)]
#[command(name = "eventvec", version, after_long_help = FORMATS)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Config overrides; valid before or after the subcommand.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML run config
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Generator preset: strong, null or clinical
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    records: Option<usize>,
    #[arg(long, global = true)]
    history_days: Option<u32>,
    #[arg(long, global = true)]
    target_rate: Option<f64>,
    #[arg(long, global = true)]
    positive_fraction: Option<f64>,
    #[arg(long, global = true)]
    group_depth: Option<usize>,
    /// dm or dbow
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// hs or ns
    #[arg(long, global = true)]
    objective: Option<Objective>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<u32>,
    #[arg(long, global = true)]
    min_count: Option<u64>,
    #[arg(long, global = true)]
    negatives: Option<u32>,
    #[arg(long, global = true)]
    alpha: Option<f32>,
    #[arg(long, global = true)]
    min_alpha: Option<f32>,
    #[arg(long, global = true)]
    train_words: Option<bool>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    infer_epochs: Option<u32>,
    /// Task preset (onset, treatment, workup); repeatable, replaces the config's tasks
    #[arg(long = "task", global = true)]
    tasks: Vec<String>,
    /// Prediction horizon in days for every task
    #[arg(long, global = true)]
    horizon: Option<u32>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true)]
    split_seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic event log and its labels
    Gen {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Validate an event log and rewrite it in canonical order
    Ingest {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the frequency-filtered vocabulary
    Vocab {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an embedding model
    Train {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch progress as JSON lines
        #[arg(long)]
        progress: Option<PathBuf>,
        /// Continue training this model instead of starting fresh
        #[arg(long, requires = "extra_epochs")]
        resume: Option<PathBuf>,
        #[arg(long)]
        extra_epochs: Option<u32>,
    },
    /// Infer vectors for every record of an event log
    Infer {
        model: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use only events before this day
        #[arg(long)]
        before: Option<u32>,
    },
    /// Most similar training documents to a training document
    Nearest {
        model: PathBuf,
        doc_id: String,
        #[arg(short, default_value_t = 10)]
        n: usize,
    },
    /// Run the evaluation tasks and write a JSON report
    Eval {
        model: PathBuf,
        corpus: PathBuf,
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also export both feature matrices per task
        #[arg(long)]
        export_dir: Option<PathBuf>,
    },
    /// Fit two-component PCA and project vectors
    Project {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Projection parameters as JSON
        #[arg(long)]
        sidecar: PathBuf,
        /// Project these vectors instead of the model's document vectors
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Project records as seen at a series of checkpoint days
    Trajectory {
        model: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        projection: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Marks the checkpoint nearest each record's event day
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Comma-separated record ids
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        /// Take the first N positives from --labels when no ids are given
        #[arg(long, default_value_t = 10)]
        positives: usize,
        /// Days between checkpoints
        #[arg(long, default_value_t = 90)]
        step: u32,
    },
}

fn effective_config(o: &Overrides) -> eventvec::Result<RunConfig> {
    let mut c = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($src:expr, $dst:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(o.seed, c.seed);
    set!(o.preset, c.generator.preset);
    set!(o.records, c.generator.records);
    set!(o.history_days, c.generator.history_days);
    if o.target_rate.is_some() {
        c.generator.target_rate = o.target_rate;
    }
    if o.positive_fraction.is_some() {
        c.generator.positive_fraction = o.positive_fraction;
    }
    set!(o.group_depth, c.corpus.group_depth);
    set!(o.mode, c.train.mode);
    set!(o.objective, c.train.objective);
    set!(o.k, c.train.k);
    set!(o.window, c.train.window);
    set!(o.epochs, c.train.epochs);
    set!(o.min_count, c.train.min_count);
    set!(o.negatives, c.train.num_negatives);
    set!(o.alpha, c.train.initial_alpha);
    set!(o.min_alpha, c.train.final_alpha);
    set!(o.train_words, c.train.train_words);
    set!(o.workers, c.train.workers);
    set!(o.infer_epochs, c.eval.infer.epochs);
    set!(o.folds, c.eval.elastic_net.folds);
    set!(o.split_seed, c.eval.split_seed);
    if !o.tasks.is_empty() {
        let h = o.horizon.unwrap_or(30);
        c.tasks = o
            .tasks
            .iter()
            .map(|t| TaskSpec::preset(t, h))
            .collect::<eventvec::Result<_>>()?;
    } else if let Some(h) = o.horizon {
        c.tasks.iter_mut().for_each(|t| t.horizon_days = h);
    }
    c.validate()?;
    Ok(c)
}

fn create(path: &Path) -> eventvec::Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> eventvec::Result<()> {
    let mut w = create(path)?;
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Fingerprint from the leading comment block of a text artifact.
fn file_fingerprint(path: &Path) -> eventvec::Result<Option<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match line.strip_prefix('#') {
            Some(c) => {
                if let Some(fp) = c.trim().strip_prefix("fingerprint=") {
                    return Ok(Some(fp.trim().to_string()));
                }
            }
            None if line.trim().is_empty() => {}
            None => break,
        }
    }
    Ok(None)
}

fn load_corpus(path: &Path, cfg: &RunConfig) -> eventvec::Result<corpus::Corpus> {
    let c = corpus::ingest(path, cfg.seed)?;
    check_fingerprint(&path.display().to_string(), c.fingerprint.as_deref(), &cfg.corpus_fingerprint())?;
    Ok(c)
}

fn load_labels(path: &Path, cfg: &RunConfig) -> eventvec::Result<BTreeMap<String, Label>> {
    let l = synthgen::load_labels(path)?;
    check_fingerprint(&path.display().to_string(), l.fingerprint.as_deref(), &cfg.corpus_fingerprint())?;
    Ok(l.labels)
}

fn load_model(path: &Path, cfg: &RunConfig) -> eventvec::Result<EmbeddingModel> {
    let m = trainer::load(path)?;
    check_fingerprint(&path.display().to_string(), Some(&m.meta.fingerprint), &cfg.model_fingerprint())?;
    Ok(m)
}

fn build_vocab(corpus: &corpus::Corpus, cfg: &RunConfig) -> eventvec::Result<Vocabulary> {
    Vocabulary::build(&corpus.records, cfg.train.min_count, cfg.corpus.group_depth)
}

fn infer_config(cfg: &RunConfig) -> InferConfig {
    cfg.eval.infer.clone()
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    fingerprint: String,
    #[serde(flatten)]
    projection: Projection,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = effective_config(&cli.overrides)?;
    match cli.command {
        Command::Gen { events, labels } => {
            let spec = cfg.generator.spec()?;
            let cohort = synthgen::generate(&spec, cfg.generator.records, cfg.generator.history_days, cfg.seed)?;
            let fp = cfg.corpus_fingerprint();
            let corpus = cohort.corpus(cfg.seed);
            corpus.save_tsv(&events, Some(&fp))?;
            synthgen::save_labels(&labels, &cohort.labels, Some(&fp))?;
            println!(
                "records\t{}\tevents\t{}\tpositives\t{}",
                corpus.len(),
                corpus.total_events(),
                cohort.positives()
            );
        }
        Command::Ingest { input, out } => {
            let corpus = load_corpus(&input, &cfg)?;
            corpus.save_tsv(&out, Some(&cfg.corpus_fingerprint()))?;
            println!("records\t{}\tevents\t{}", corpus.len(), corpus.total_events());
        }
        Command::Vocab { corpus, out } => {
            let corpus = load_corpus(&corpus, &cfg)?;
            let vocab = build_vocab(&corpus, &cfg)?;
            write_with(&out, |w| vocab.write_tsv(w, Some(&cfg.model_fingerprint())))?;
            println!("tokens\t{}\tgroups\t{}", vocab.len(), vocab.groups().len());
        }
        Command::Train {
            corpus,
            out,
            progress,
            resume,
            extra_epochs,
        } => {
            let corpus = load_corpus(&corpus, &cfg)?;
            let vocab = build_vocab(&corpus, &cfg)?;
            let mut log = progress.as_deref().map(create).transpose()?;
            let mut log_err = None;
            let on_epoch = |s: &trainer::EpochStats| {
                if let Some(w) = log.as_mut() {
                    if let Err(e) = trainer::write_progress(w, s) {
                        log_err.get_or_insert(e);
                    }
                }
            };
            let mut model = match resume {
                Some(path) => {
                    let model = load_model(&path, &cfg)?;
                    trainer::continue_training(
                        model,
                        &corpus,
                        &vocab,
                        extra_epochs.unwrap_or(0),
                        cfg.train.workers,
                        on_epoch,
                    )?
                }
                None => trainer::train_with_progress(&corpus, &vocab, &cfg.train, on_epoch)?,
            };
            if let (Some(path), Some(w)) = (progress.as_deref(), log.as_mut()) {
                if let Some(e) = log_err {
                    return Err(Error::io(path, e).into());
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
            model.meta.fingerprint = cfg.model_fingerprint();
            trainer::save(&model, &out)?;
            println!(
                "docs\t{}\ttokens\t{}\tk\t{}\tepochs\t{}",
                model.doc_ids.len(),
                model.vocab_len(),
                model.k,
                model.meta.epochs
            );
        }
        Command::Infer {
            model,
            corpus,
            out,
            before,
        } => {
            let model = load_model(&model, &cfg)?;
            let corpus = load_corpus(&corpus, &cfg)?;
            let inputs: Vec<corpus::Record> = match before {
                Some(day) => corpus.records.iter().map(|r| truncate(r, day)).collect(),
                None => corpus.records.clone(),
            };
            let results = inference::infer_records(&model, &inputs, &infer_config(&cfg));
            let mut rows = Vec::with_capacity(inputs.len());
            let mut skipped = 0;
            for (r, res) in inputs.iter().zip(results) {
                match res {
                    Ok(v) => rows.push((r.record_id.clone(), v.vector)),
                    Err(Error::Unrepresentable(_)) => skipped += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            write_with(&out, |w| inference::write_vectors_tsv(w, &rows, Some(&cfg.model_fingerprint())))?;
            println!(
                "vectors\t{}\tskipped\t{skipped}\tinfer_epochs\t{}",
                rows.len(),
                cfg.eval.infer.epochs
            );
        }
        Command::Nearest { model, doc_id, n } => {
            let model = load_model(&model, &cfg)?;
            let i = model
                .doc_index(&doc_id)
                .ok_or_else(|| Error::Data(format!("document '{doc_id}' is not in the model")))?;
            let query = model.doc_vectors.row(i).to_vec();
            let hits = inference::nearest(&model.doc_vectors, &query, n)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            writeln!(w, "# rank\tdoc_id\tcosine")?;
            for (rank, (j, s)) in hits.iter().enumerate() {
                writeln!(w, "{}\t{}\t{s}", rank + 1, model.doc_ids[*j])?;
            }
        }
        Command::Eval {
            model,
            corpus,
            labels,
            out,
            export_dir,
        } => {
            let model = load_model(&model, &cfg)?;
            let corpus = load_corpus(&corpus, &cfg)?;
            let labels = load_labels(&labels, &cfg)?;
            let vocab = build_vocab(&corpus, &cfg)?;
            let fp = cfg.report_fingerprint();
            let mut tasks = Vec::new();
            for task in &cfg.tasks {
                let run = evalkit::run_task(&corpus, &labels, task, &model, &vocab, &cfg.eval)
                    .with_context(|| format!("task {} (horizon {})", task.name, task.horizon_days))?;
                if let Some(dir) = &export_dir {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    let prefix = format!("{}_h{}", task.name, task.horizon_days);
                    evalkit::export_features(dir, &prefix, &run.features, Some(&fp))?;
                }
                for r in &run.report.representations {
                    println!(
                        "{}\th{}\t{}\ttest_auc\t{:.4}\tcv_auc\t{:.4}",
                        task.name, task.horizon_days, r.name, r.test_auc, r.cv_auc
                    );
                }
                tasks.push(run.report);
            }
            let report = EvalReport {
                fingerprint: fp,
                model_fingerprint: model.meta.fingerprint.clone(),
                tasks,
            };
            std::fs::write(&out, report.to_json()).map_err(|e| Error::io(&out, e))?;
        }
        Command::Project {
            model,
            out,
            sidecar,
            vectors,
        } => {
            let model = load_model(&model, &cfg)?;
            let fp = cfg.model_fingerprint();
            let rows: Vec<(String, Vec<f32>)> = match vectors {
                Some(path) => {
                    check_fingerprint(&path.display().to_string(), file_fingerprint(&path)?.as_deref(), &fp)?;
                    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
                    inference::read_vectors_tsv(BufReader::new(file))?
                }
                None => model
                    .doc_ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (id.clone(), model.doc_vectors.row(i).to_vec()))
                    .collect(),
            };
            let vecs: Vec<&[f32]> = rows.iter().map(|(_, v)| v.as_slice()).collect();
            let projection = projector::fit_pca2(&vecs)?;
            let points: Vec<(&str, [f64; 2])> = rows
                .iter()
                .map(|(id, v)| (id.as_str(), projection.project(v)))
                .collect();
            write_with(&out, |w| projector::write_projection_tsv(w, &points, Some(&fp)))?;
            let side = Sidecar {
                fingerprint: fp,
                projection,
            };
            let json = serde_json::to_string_pretty(&side)? + "\n";
            std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
            println!(
                "points\t{}\texplained\t{:.4}\t{:.4}",
                points.len(),
                side.projection.explained[0],
                side.projection.explained[1]
            );
        }
        Command::Trajectory {
            model,
            corpus,
            projection,
            out,
            labels,
            ids,
            positives,
            step,
        } => {
            let model = load_model(&model, &cfg)?;
            let corpus = load_corpus(&corpus, &cfg)?;
            let fp = cfg.model_fingerprint();
            let text = std::fs::read_to_string(&projection).map_err(|e| Error::io(&projection, e))?;
            let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            check_fingerprint(&projection.display().to_string(), Some(&side.fingerprint), &fp)?;
            let labels = labels.map(|p| load_labels(&p, &cfg)).transpose()?.unwrap_or_default();
            let ids: Vec<String> = if ids.is_empty() {
                labels
                    .iter()
                    .filter(|(_, l)| l.positive)
                    .map(|(id, _)| id.clone())
                    .take(positives)
                    .collect()
            } else {
                ids
            };
            if ids.is_empty() {
                return Err(Error::Data("no records selected; pass --ids or --labels".into()).into());
            }
            let mut jobs = Vec::with_capacity(ids.len());
            for id in &ids {
                let r = corpus
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("record '{id}' is not in the corpus")))?;
                let ev = labels.get(id).and_then(|l| l.event_day);
                jobs.push((r, projector::checkpoints(r, step), ev));
            }
            let results = projector::trajectories(&model, &jobs, &side.projection, &infer_config(&cfg));
            let mut rows = Vec::with_capacity(ids.len());
            for (id, res) in ids.iter().zip(results) {
                rows.push((id.as_str(), res?));
            }
            let view: Vec<(&str, &[projector::TrajectoryPoint])> =
                rows.iter().map(|(id, p)| (*id, p.as_slice())).collect();
            write_with(&out, |w| projector::write_trajectory_tsv(w, &view, Some(&fp)))?;
            println!("records\t{}\tpoints\t{}", rows.len(), rows.iter().map(|(_, p)| p.len()).sum::<usize>());
        }
    }
    Ok(())
}

fn exit_code(class: &str) -> u8 {
    match class {
        "usage" => 2,
        "io" => 3,
        "format" => 4,
        "config" => 5,
        "fingerprint" => 6,
        "numeric" => 7,
        _ => 8,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid usage").trim_start_matches("error: ");
            eprintln!("error\tusage\t{first}");
            return ExitCode::from(exit_code("usage"));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = match e.downcast_ref::<Error>() {
                Some(err) => err.class(),
                None if e.downcast_ref::<std::io::Error>().is_some() => "io",
                None if e.downcast_ref::<serde_json::Error>().is_some() => "format",
                None => "data",
            };
            // Library errors already embed their source; skip repeated tails.
            let mut msg = String::new();
            for part in e.chain().map(|c| c.to_string()) {
                if !msg.ends_with(&part) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&part);
                }
            }
            let msg = msg.replace(['\n', '\t'], " ");
            eprintln!("error\t{class}\t{msg}");
            ExitCode::from(exit_code(class))
        }
    }
}
