//! The `pelican` command line.
//!
//! Exit codes: 0 on success, 1 for invalid input, flags or configuration,
//! 2 when an internal invariant fails. Outputs are written to a temporary
//! file in the destination directory and renamed into place.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{pool_features, retrieval_predict, RetrievalIndex};
use crate::config::RunConfig;
use crate::data::{self, AnnotationRecord, BinaryLabel};
use crate::error::{Error, Result};
use crate::eval::{self, bleu4_text, EvalOptions, EvalReport, EvalRow};
use crate::features::{self, FeatureTable};
use crate::geometry::OverlapMode;
use crate::graph;
use crate::model::{self, AblationConfig, PelicanInput, PelicanParams, TrainLog};
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "pelican", version, about = "Edit-understanding pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. They override the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated ablation flags, e.g. `no_graph,no_source`.
    #[arg(long, global = true, value_name = "FLAGS")]
    pub ablation: Option<String>,
    /// Overlap threshold for linking regions.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub overlap_mode: Option<OverlapModeArg>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlapModeArg {
    Standard,
    Paper,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Annotation file (one JSON record per line).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Directory of `<image_id>.source.emuf` / `<image_id>.edited.emuf`.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate annotations (and feature files, if given) and write a
    /// normalized copy with a summary.
    Ingest(DataArgs),
    /// Split annotations at the image level into train/val/test files.
    Split(DataArgs),
    /// Render each question's prioritization graph.
    Graph(DataArgs),
    /// Generate the synthetic priority task with feature files.
    Synth,
    /// Train a model and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Held-out annotations scored after every epoch.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Score a checkpoint and write a report.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also generate answers and report BLEU@4.
        #[arg(long)]
        generate: bool,
        #[arg(long, default_value = "pelican")]
        model_name: String,
    },
    /// Answer queries with the answers of the most similar training image.
    Retrieve {
        #[command(flatten)]
        data: DataArgs,
        /// Annotations of the images to index.
        #[arg(long)]
        index: PathBuf,
    },
    /// Train and evaluate the ablation rows side by side.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        /// Held-out annotations to evaluate on.
        #[arg(long)]
        test: PathBuf,
    },
    /// Merge report CSVs into one report.
    Report {
        /// Report CSV files to merge, in order.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            return if shown {
                let _ = write!(stdout, "{}", e.render());
                0
            } else {
                let _ = write!(stderr, "{}", e.render());
                1
            };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_internal() {
                2
            } else {
                1
            }
        }
    }
}

/// Configuration file (if any) with the command-line overrides applied.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_toml(&read_text(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(flags) = &common.ablation {
        cfg.ablation = AblationConfig::parse(flags)?;
    }
    if let Some(tau) = common.tau {
        cfg.overlap.threshold = tau;
    }
    if let Some(mode) = common.overlap_mode {
        cfg.overlap.mode = match mode {
            OverlapModeArg::Standard => OverlapMode::StandardIou,
            OverlapModeArg::Paper => OverlapMode::PaperLiteral,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn missing(path: &Path, what: &str) -> Error {
    Error::Config(format!("{what} {} does not exist", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(missing(path, "input"));
    }
    Ok(fs::read(path)?)
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let target = dir.join(name);
    if let Some(parent) = target.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(target.parent().unwrap_or(dir))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target).map_err(|e| Error::Io(e.error))?;
    Ok(target)
}

fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    data::parse_annotations(&read_bytes(path)?)
}

pub fn feature_path(dir: &Path, image_id: &str, which: &str) -> PathBuf {
    dir.join(format!("{image_id}.{which}.emuf"))
}

/// Source and edited tables of each record, checked against its regions.
fn load_features(dir: &Path, records: &[AnnotationRecord]) -> Result<(Vec<FeatureTable>, Vec<FeatureTable>)> {
    if !dir.is_dir() {
        return Err(missing(dir, "feature directory"));
    }
    let mut sources = Vec::with_capacity(records.len());
    let mut edited = Vec::with_capacity(records.len());
    for r in records {
        let mut s = features::read_features(&read_bytes(&feature_path(dir, &r.image_id, "source"))?)?;
        let mut e = features::read_features(&read_bytes(&feature_path(dir, &r.image_id, "edited"))?)?;
        if e.len() != r.regions.len() {
            return Err(Error::invalid(
                &r.image_id,
                format!(
                    "edited features have {} regions, annotation has {}",
                    e.len(),
                    r.regions.len()
                ),
            ));
        }
        if r.source_region_count != 0 && s.len() != r.source_region_count {
            return Err(Error::invalid(
                &r.image_id,
                format!(
                    "source features have {} regions, annotation declares {}",
                    s.len(),
                    r.source_region_count
                ),
            ));
        }
        s.image_id = r.image_id.clone();
        e.image_id = r.image_id.clone();
        sources.push(s);
        edited.push(e);
    }
    Ok((sources, edited))
}

fn annotations_path(data: &DataArgs, cfg: &RunConfig) -> PathBuf {
    data.annotations
        .clone()
        .unwrap_or_else(|| cfg.paths.annotations.clone())
}

fn features_dir(data: &DataArgs, cfg: &RunConfig) -> PathBuf {
    data.features.clone().unwrap_or_else(|| cfg.paths.features.clone())
}

fn training_inputs(
    records: &[AnnotationRecord],
    sources: &[FeatureTable],
    edited: &[FeatureTable],
    cfg: &RunConfig,
) -> Result<Vec<PelicanInput>> {
    let mut out = Vec::new();
    for ((r, s), e) in records.iter().zip(sources).zip(edited) {
        for pair in &r.qa {
            out.push(model::build_input(r, pair, s, e, &cfg.overlap, true)?);
        }
    }
    Ok(out)
}

fn manifest(cfg: &RunConfig, extra: &[(&str, String)]) -> BTreeMap<String, String> {
    let mut m = BTreeMap::from([
        ("seed".to_string(), cfg.seed.to_string()),
        ("ablation".to_string(), cfg.ablation.to_string()),
        (
            "overlap".to_string(),
            format!("{:?} tau={}", cfg.overlap.mode, cfg.overlap.threshold),
        ),
        (
            "model".to_string(),
            format!(
                "d_model={} heads={} layers={} regions={} tokens={}",
                cfg.model.d_model, cfg.model.n_heads, cfg.model.n_layers, cfg.model.max_regions, cfg.model.max_tokens
            ),
        ),
        (
            "tokenizer".to_string(),
            format!(
                "byte-level v{}; BLEU over whitespace/punctuation words",
                crate::nn::tokenizer::TOKENIZER_VERSION
            ),
        ),
    ]);
    for (k, v) in extra {
        m.insert(k.to_string(), v.clone());
    }
    m
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out = &cli.common.out;
    match &cli.command {
        Command::Ingest(d) => ingest(&cfg, d, out, stdout),
        Command::Split(d) => split(&cfg, d, out, stdout),
        Command::Graph(d) => graphs(&cfg, d, out, stdout),
        Command::Synth => synth_cmd(&cfg, out, stdout),
        Command::Train { data, eval } => train_cmd(&cfg, data, eval.as_deref(), out, stdout),
        Command::Eval {
            data,
            checkpoint,
            generate,
            model_name,
        } => eval_cmd(&cfg, data, checkpoint, *generate, model_name, out, stdout),
        Command::Retrieve { data, index } => retrieve_cmd(&cfg, data, index, out, stdout),
        Command::Ablate { data, test } => ablate_cmd(&cfg, data, test, out, stdout),
        Command::Report { inputs } => report_cmd(inputs, out, stdout),
    }
}

fn ingest(cfg: &RunConfig, d: &DataArgs, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let records = load_annotations(&annotations_path(d, cfg))?;
    if let Some(dir) = &d.features {
        load_features(dir, &records)?;
    }
    write_atomic(out, "annotations.jsonl", &data::serialize_annotations(&records))?;
    let questions: usize = records.iter().map(|r| r.qa.len()).sum();
    let mut summary = format!("images {}\nquestions {questions}\n", records.len());
    for (q, f) in data::question_type_distribution(&records) {
        summary.push_str(&format!("{q} {:.4}\n", f));
    }
    write_atomic(out, "ingest_summary.txt", summary.as_bytes())?;
    write!(stdout, "{summary}")?;
    Ok(())
}

fn split(cfg: &RunConfig, d: &DataArgs, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let records = load_annotations(&annotations_path(d, cfg))?;
    let s = data::split_dataset(&records, cfg.split, cfg.seed)?;
    for (name, part) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        write_atomic(out, &format!("{name}.jsonl"), &data::serialize_annotations(part))?;
        writeln!(stdout, "{name} {}", part.len())?;
    }
    Ok(())
}

fn graphs(cfg: &RunConfig, d: &DataArgs, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let records = load_annotations(&annotations_path(d, cfg))?;
    let mut text = String::new();
    for r in &records {
        for (k, pair) in r.qa.iter().enumerate() {
            let (g, p) = graph::prioritize(&r.regions, &pair.question, &cfg.overlap)?;
            text.push_str(&g.render(&format!("{}#{k}", r.image_id), &p));
        }
    }
    write_atomic(out, "graphs.txt", text.as_bytes())?;
    write!(stdout, "{text}")?;
    Ok(())
}

fn synth_cmd(cfg: &RunConfig, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let dim = cfg.model.feature_dim;
    let parts = [
        ("train", synth::synth_dataset(cfg.synth.train_images, cfg.seed, dim)?),
        (
            "test",
            synth::synth_dataset(cfg.synth.test_images, cfg.seed.wrapping_add(1), dim)?,
        ),
    ];
    let feature_dir = out.join("features");
    for (name, images) in &parts {
        // Test ids must not collide with training ids.
        let images: Vec<synth::SynthImage> = images
            .iter()
            .cloned()
            .map(|mut img| {
                let id = format!("{name}-{}", img.record.image_id);
                img.record.source_path = format!("synth/{id}_source.png");
                img.record.edited_path = format!("synth/{id}_edited.png");
                img.record.image_id = id.clone();
                img.source.image_id = id.clone();
                img.edited.image_id = id;
                img
            })
            .collect();
        let records: Vec<AnnotationRecord> = images.iter().map(|i| i.record.clone()).collect();
        write_atomic(out, &format!("{name}.jsonl"), &data::serialize_annotations(&records))?;
        for img in &images {
            let id = &img.record.image_id;
            write_atomic(
                &feature_dir,
                &format!("{id}.source.emuf"),
                &features::write_features(&img.source),
            )?;
            write_atomic(
                &feature_dir,
                &format!("{id}.edited.emuf"),
                &features::write_features(&img.edited),
            )?;
        }
        writeln!(stdout, "{name} {} images", images.len())?;
    }
    Ok(())
}

fn train_cmd(cfg: &RunConfig, d: &DataArgs, eval: Option<&Path>, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let records = load_annotations(&annotations_path(d, cfg))?;
    let dir = features_dir(d, cfg);
    let (s, e) = load_features(&dir, &records)?;
    let inputs = training_inputs(&records, &s, &e, cfg)?;
    let eval_inputs = match eval {
        Some(path) => {
            let recs = load_annotations(path)?;
            let (s, e) = load_features(&dir, &recs)?;
            Some(training_inputs(&recs, &s, &e, cfg)?)
        }
        None => None,
    };
    let (params, log) = model::train(
        &inputs,
        eval_inputs.as_deref(),
        cfg.model,
        &cfg.train,
        &cfg.ablation,
        cfg.seed,
    )?;
    write_atomic(out, "model.emup", &params.to_checkpoint()?)?;
    write_atomic(out, "train_log.csv", log.to_csv().as_bytes())?;
    write_atomic(out, "config.toml", cfg.to_toml().as_bytes())?;
    write!(stdout, "{}", log.to_csv())?;
    Ok(())
}

fn render_report(report: &EvalReport, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let rendered = eval::emit_report(report)?;
    write_atomic(out, "report.csv", rendered.csv.as_bytes())?;
    write_atomic(out, "report.txt", rendered.table.as_bytes())?;
    write_atomic(out, "plot_data.csv", rendered.plot_csv.as_bytes())?;
    write!(stdout, "{}", rendered.table)?;
    Ok(())
}

fn eval_cmd(
    cfg: &RunConfig,
    d: &DataArgs,
    checkpoint: &Path,
    generate: bool,
    model_name: &str,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    let records = load_annotations(&annotations_path(d, cfg))?;
    let (s, e) = load_features(&features_dir(d, cfg), &records)?;
    let params = PelicanParams::from_checkpoint(cfg.model, &read_bytes(checkpoint)?)?;
    let examples = eval::eval_examples(&records, &s, &e, &cfg.overlap)?;
    let options = EvalOptions {
        generate,
        prefixes: cfg.prefixes.clone(),
    };
    let rows = eval::evaluate(model_name, &params, &examples, &cfg.ablation, &options)?;
    let report = EvalReport {
        manifest: manifest(cfg, &[("checkpoint", checkpoint.display().to_string())]),
        rows,
        curves: Vec::new(),
    };
    render_report(&report, out, stdout)
}

/// Retrieved answers of one question type next to the gold answers.
#[derive(Default)]
struct Retrieved {
    preds: Vec<BinaryLabel>,
    golds: Vec<BinaryLabel>,
    hypotheses: Vec<String>,
    references: Vec<Vec<String>>,
}

fn retrieve_cmd(cfg: &RunConfig, d: &DataArgs, index_path: &Path, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let dir = features_dir(d, cfg);
    let indexed = load_annotations(index_path)?;
    let (_, indexed_edited) = load_features(&dir, &indexed)?;
    let index = RetrievalIndex::build(&indexed, &indexed_edited)?;
    let (table, answers) = index.to_parts();
    write_atomic(out, "index.emuf", &table)?;
    write_atomic(out, "index_answers.jsonl", &data::serialize_annotations(&answers))?;

    let queries = load_annotations(&annotations_path(d, cfg))?;
    let (_, query_edited) = load_features(&dir, &queries)?;
    let mut lines = String::new();
    let mut by_type: BTreeMap<data::QuestionType, Retrieved> = BTreeMap::new();
    for (q, t) in queries.iter().zip(&query_edited) {
        let hit = retrieval_predict(&pool_features(t)?, &index)?;
        lines.push_str(&format!("{} {}\n", q.image_id, hit.image_id));
        for pair in &q.qa {
            // Prefer a retrieved answer to the same question type.
            let Some(answer) = hit
                .answers
                .iter()
                .find(|a| a.question.qtype == pair.question.qtype)
                .or_else(|| hit.answers.first())
            else {
                continue;
            };
            let slot = by_type.entry(pair.question.qtype).or_default();
            slot.preds.push(answer.answer.label);
            slot.golds.push(pair.answer.label);
            slot.hypotheses.push(answer.answer.full_text());
            slot.references.push(vec![pair.answer.full_text()]);
        }
    }
    write_atomic(out, "retrieved.txt", lines.as_bytes())?;

    let mut rows = Vec::new();
    let mut all = Retrieved::default();
    let mut push_row = |tag: String, g: &Retrieved| -> Result<()> {
        rows.push(EvalRow {
            model: "retrieval".into(),
            ablation_flags: "-".into(),
            qtype: tag,
            n: g.golds.len(),
            accuracy: Some(eval::balanced_accuracy(&g.preds, &g.golds)?.accuracy),
            bleu4: Some(bleu4_text(&g.hypotheses, &g.references)?),
            perplexity: None,
        });
        Ok(())
    };
    for (q, g) in &by_type {
        push_row(q.tag().to_string(), g)?;
        all.preds.extend_from_slice(&g.preds);
        all.golds.extend_from_slice(&g.golds);
        all.hypotheses.extend_from_slice(&g.hypotheses);
        all.references.extend_from_slice(&g.references);
    }
    if all.golds.is_empty() {
        return Err(Error::Empty("retrieval queries with answers"));
    }
    push_row("all".into(), &all)?;
    let report = EvalReport {
        manifest: manifest(cfg, &[("pooling", "mean of edited-region feature rows".into())]),
        rows,
        curves: Vec::new(),
    };
    render_report(&report, out, stdout)
}

/// The ablation rows: full model, the from-scratch tag, and each removed
/// mechanism.
pub fn ablation_rows() -> Vec<(&'static str, AblationConfig)> {
    vec![
        ("full", AblationConfig::full()),
        ("no_pretraining", AblationConfig::without_pretraining()),
        ("no_annotated_features", AblationConfig::without_annotated_features()),
        ("no_directed_graph", AblationConfig::without_priority_graph()),
        ("no_source", AblationConfig::without_source_image()),
    ]
}

fn ablate_cmd(cfg: &RunConfig, d: &DataArgs, test: &Path, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let dir = features_dir(d, cfg);
    let records = load_annotations(&annotations_path(d, cfg))?;
    let (s, e) = load_features(&dir, &records)?;
    let inputs = training_inputs(&records, &s, &e, cfg)?;
    let test_records = load_annotations(test)?;
    let (ts, te) = load_features(&dir, &test_records)?;
    let examples = eval::eval_examples(&test_records, &ts, &te, &cfg.overlap)?;

    let mut rows = Vec::new();
    let mut curves: Vec<TrainLog> = Vec::new();
    for (name, ablation) in ablation_rows() {
        let (params, mut log) = model::train(&inputs, None, cfg.model, &cfg.train, &ablation, cfg.seed)?;
        log.tag = name.to_string();
        curves.push(log);
        let evaluated = eval::evaluate(name, &params, &examples, &ablation, &EvalOptions::default())?;
        rows.extend(evaluated.into_iter().filter(|r| r.qtype == "all"));
    }
    let report = EvalReport {
        manifest: manifest(cfg, &[]),
        rows,
        curves,
    };
    render_report(&report, out, stdout)
}

fn parse_report_csv(text: &str, path: &Path) -> Result<Vec<EvalRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != eval::REPORT_COLUMNS.join(",") {
        return Err(Error::Config(format!("{} is not a report CSV", path.display())));
    }
    let metric = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Malformed {
                line,
                message: format!("bad metric {s:?}"),
            })
        }
    };
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let n = k + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != eval::REPORT_COLUMNS.len() {
            return Err(Error::Malformed {
                line: n,
                message: format!("{} cells, expected {}", cells.len(), eval::REPORT_COLUMNS.len()),
            });
        }
        rows.push(EvalRow {
            model: cells[0].into(),
            ablation_flags: cells[1].into(),
            qtype: cells[2].into(),
            n: cells[3].parse().map_err(|_| Error::Malformed {
                line: n,
                message: format!("bad count {:?}", cells[3]),
            })?,
            accuracy: metric(cells[4], n)?,
            bleu4: metric(cells[5], n)?,
            perplexity: metric(cells[6], n)?,
        });
    }
    Ok(rows)
}

fn report_cmd(inputs: &[PathBuf], out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let mut rows = Vec::new();
    for path in inputs {
        rows.extend(parse_report_csv(&read_text(path)?, path)?);
    }
    render_report(
        &EvalReport {
            rows,
            ..EvalReport::default()
        },
        out,
        stdout,
    )
}
