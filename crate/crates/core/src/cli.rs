//! The `gazlab` command line.
//!
//! Exit codes: 0 success, 2 validation error (bad flags, config, missing
//! paths), 3 runtime error.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, render_report, Report, ReportFormat};
use crate::config::ExperimentConfig;
use crate::corpus::{dataset_stats, Dataset, DatasetStats};
use crate::evaluation::evaluate;
use crate::features::{FeatureMode, Featurizer};
use crate::gazetteer::{Gazetteer, GazetteerStats};
use crate::matcher::LexemeMatcher;
use crate::pipeline::{self, PipelineConfig};
use crate::tagger::{self, load_model, save_model, CrfModel};

pub const MODEL_FILE: &str = "model.crf";
pub const TRAIN_LOG_FILE: &str = "train_log.json";

#[derive(Debug, Parser)]
#[command(
    name = "gazlab",
    version,
    about = "Gazetteer-enhanced character-level NER experiments"
)]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gazetteer and dataset statistics.
    Stats,
    /// Train a model and write it to the output directory.
    Train,
    /// Evaluate a model on the test split.
    Eval {
        /// Model file; defaults to <out>/model.crf.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Lexemes to mask, one per line.
        #[arg(long)]
        mask_file: Option<PathBuf>,
    },
    /// Lexeme-set analyses.
    Analyze {
        #[arg(value_enum)]
        which: Analysis,
        /// Model file for `mask`; defaults to <out>/model.crf.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated gazetteer fractions for `size`.
        #[arg(long, default_value = "0.2,0.4,0.6,0.8,1.0")]
        fractions: String,
    },
    /// Print all gazetteer matches of a sentence as TSV.
    Match {
        /// Sentence to match; reads lines from stdin when absent.
        #[arg(long)]
        text: Option<String>,
    },
    /// Parameter counts and training time relative to the baseline.
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Analysis {
    Sets,
    Mask,
    Size,
    Embeddings,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

struct Context {
    config: ExperimentConfig,
    out_dir: PathBuf,
    json: bool,
}

impl Context {
    fn dataset(&self) -> Result<Dataset, CliError> {
        let d = self.config.load_dataset().map_err(runtime)?;
        if d.warnings.total_repairs() > 0 {
            log::warn!(
                "dataset {}: {} tags repaired",
                d.name,
                d.warnings.total_repairs()
            );
        }
        Ok(d)
    }

    fn gazetteer(&self) -> Result<Gazetteer, CliError> {
        self.config.load_gazetteer().map_err(runtime)
    }

    fn pipeline(&self) -> PipelineConfig {
        self.config.pipeline().expect("mode validated at load")
    }

    fn model_path(&self, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let path = flag.unwrap_or_else(|| self.out_dir.join(MODEL_FILE));
        if !path.exists() {
            return Err(CliError::Validation(format!(
                "model file {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    fn load_model(&self, flag: Option<PathBuf>) -> Result<CrfModel, CliError> {
        load_model(&self.model_path(flag)?).map_err(runtime)
    }

    /// Featurizer matching the model's feature mode.
    fn featurizer(
        &self,
        dataset: &Dataset,
        gazetteer: Gazetteer,
        model: &CrfModel,
    ) -> Result<Featurizer, CliError> {
        let f = Featurizer::new(
            Arc::new(gazetteer),
            model.config().mode,
            &dataset.train,
            self.config.seed,
        )
        .map_err(runtime)?;
        for w in model.compatibility_warnings(&f) {
            log::warn!("{w}");
        }
        Ok(f)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out_dir).map_err(runtime)?;
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(runtime)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Validation("--config PATH is required".into()))?;
    let config = ExperimentConfig::load(&config_path).map_err(validation)?;
    let out_dir = cli.out.unwrap_or_else(|| config.output_dir.clone());
    let ctx = Context {
        config,
        out_dir,
        json: cli.json,
    };
    match cli.command {
        Command::Stats => cmd_stats(&ctx, stdout),
        Command::Train => cmd_train(&ctx, stdout),
        Command::Eval { model, mask_file } => cmd_eval(&ctx, model, mask_file, stdout),
        Command::Analyze {
            which,
            model,
            fractions,
        } => cmd_analyze(&ctx, which, model, &fractions, stdout),
        Command::Match { text } => cmd_match(&ctx, text, stdout),
        Command::Bench => cmd_bench(&ctx, stdout),
    }
}

fn emit(stdout: &mut dyn Write, s: &str) -> Result<(), CliError> {
    stdout.write_all(s.as_bytes()).map_err(runtime)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct StatsOutput {
    gazetteer: GazetteerStats,
    dataset: DatasetStats,
    repaired_tags: usize,
}

fn cmd_stats(ctx: &Context, stdout: &mut dyn Write) -> Result<(), CliError> {
    let g = ctx.gazetteer()?;
    let d = ctx.dataset()?;
    let out = StatsOutput {
        gazetteer: g.stats(),
        dataset: DatasetStats {
            name: d.name.clone(),
            counts: dataset_stats(&d),
        },
        repaired_tags: d.warnings.total_repairs(),
    };
    if ctx.json {
        return emit(stdout, &to_json(&out));
    }
    let gs = &out.gazetteer;
    let c = &out.dataset.counts;
    let text = format!(
        "{:<16} {:>10} {:>5} {:>11} {:>9}\n{:<16} {:>10} {:>5} {:>11} {:>9.4}\n\n\
         {:<16} {:>8} {:>8} {:>8} {:>8}\n{:<16} {:>8} {:>8} {:>8} {:>8}\n",
        "Gazetteer",
        "Num",
        "Dim",
        "Pre-trained",
        "Coverage",
        gs.name,
        gs.num,
        gs.dim,
        if gs.pretrained { "yes" } else { "no" },
        gs.coverage_ratio,
        "Dataset",
        "Total",
        "Train",
        "Dev",
        "Test",
        out.dataset.name,
        c.total,
        c.train,
        c.dev,
        c.test,
    );
    emit(stdout, &text)
}

fn cmd_train(ctx: &Context, stdout: &mut dyn Write) -> Result<(), CliError> {
    let d = ctx.dataset()?;
    let g = Arc::new(ctx.gazetteer()?);
    let pc = ctx.pipeline();
    let f = pipeline::build_featurizer(&d, g, &pc).map_err(runtime)?;
    let start = Instant::now();
    let (model, log) = tagger::train(&d.train, &f, &pc.train_config()).map_err(runtime)?;
    log::info!("trained in {:.2}s", start.elapsed().as_secs_f64());
    fs::create_dir_all(&ctx.out_dir).map_err(runtime)?;
    let path = ctx.out_dir.join(MODEL_FILE);
    save_model(&model, &path).map_err(runtime)?;
    ctx.write(TRAIN_LOG_FILE, &to_json(&log))?;
    if ctx.json {
        return emit(stdout, &to_json(&log));
    }
    let mut text = format!(
        "model: {}\nmode: {}\nparameters: {}\n",
        path.display(),
        pc.mode,
        model.count_parameters()
    );
    for e in &log.epochs {
        text.push_str(&format!(
            "epoch {:>3}  log-likelihood {:.6}\n",
            e.epoch, e.log_likelihood
        ));
    }
    emit(stdout, &text)
}

fn read_lexemes(path: &Path) -> Result<Vec<String>, CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!(
            "mask file {} does not exist",
            path.display()
        )));
    }
    let text = fs::read_to_string(path).map_err(runtime)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn cmd_eval(
    ctx: &Context,
    model: Option<PathBuf>,
    mask_file: Option<PathBuf>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let mask_lexemes = mask_file.as_deref().map(read_lexemes).transpose()?;
    let model = ctx.load_model(model)?;
    let d = ctx.dataset()?;
    let f = ctx.featurizer(&d, ctx.gazetteer()?, &model)?;
    let mask = mask_lexemes.map(|l| f.mask(l));
    let report = evaluate(&model, &d.test, &f, mask.as_ref()).map_err(runtime)?;
    if ctx.json {
        emit(stdout, &to_json(&report))
    } else {
        emit(stdout, &report.table())
    }
}

fn emit_both<R: Report>(
    ctx: &Context,
    name: &str,
    report: &R,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let json = render_report(report, ReportFormat::Json).map_err(runtime)?;
    let csv = render_report(report, ReportFormat::Csv).map_err(runtime)?;
    ctx.write(&format!("{name}.json"), &json)?;
    ctx.write(&format!("{name}.csv"), &csv)?;
    emit(stdout, if ctx.json { &json } else { &csv })
}

pub fn parse_fractions(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Validation(format!("bad fraction {p:?} in --fractions")))
        })
        .collect()
}

fn cmd_analyze(
    ctx: &Context,
    which: Analysis,
    model: Option<PathBuf>,
    fractions: &str,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    match which {
        Analysis::Sets => {
            let d = ctx.dataset()?;
            let g = ctx.gazetteer()?;
            let m = LexemeMatcher::new(&g).map_err(runtime)?;
            let sets = analysis::compute_sets(&m, &d);
            emit_both(ctx, "sets", &sets, stdout)
        }
        Analysis::Mask => {
            let model = ctx.load_model(model)?;
            let d = ctx.dataset()?;
            let f = ctx.featurizer(&d, ctx.gazetteer()?, &model)?;
            let sets = analysis::compute_sets(f.matcher(), &d);
            let report =
                analysis::causal_effects(&model, &d.test, &f, &sets, &d.name).map_err(runtime)?;
            emit_both(ctx, "mask", &report, stdout)
        }
        Analysis::Size => {
            let fractions = parse_fractions(fractions)?;
            let d = ctx.dataset()?;
            let g = ctx.gazetteer()?;
            let report = analysis::size_ablation(&d, &g, &fractions, &ctx.pipeline()).map_err(
                |e| match e {
                    analysis::AnalysisError::BadFractions(_) => validation(e),
                    e => runtime(e),
                },
            )?;
            emit_both(ctx, "size", &report, stdout)
        }
        Analysis::Embeddings => {
            let d = ctx.dataset()?;
            let g = ctx.gazetteer()?;
            let report =
                analysis::embedding_ablation(&d, &g, &ctx.pipeline()).map_err(|e| match e {
                    analysis::AnalysisError::NotPretrained(_) => validation(e),
                    e => runtime(e),
                })?;
            emit_both(ctx, "embeddings", &report, stdout)
        }
    }
}

fn cmd_match(ctx: &Context, text: Option<String>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let g = ctx.gazetteer()?;
    let m = LexemeMatcher::new(&g).map_err(runtime)?;
    let lines: Vec<String> = match text {
        Some(t) => vec![t],
        None => io::stdin()
            .lock()
            .lines()
            .collect::<Result<_, _>>()
            .map_err(runtime)?,
    };
    let mut out = String::new();
    let mut first = true;
    for line in lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
        if !first {
            out.push('\n');
        }
        first = false;
        let chars: Vec<char> = line.chars().collect();
        for s in m.match_all(&chars, None) {
            out.push_str(&format!("{}\t{}\t{}\n", s.start, s.end, s.surface));
        }
    }
    emit(stdout, &out)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mode: String,
    pub parameters: usize,
    pub param_ratio: f64,
    pub train_seconds: f64,
    pub time_ratio: f64,
}

fn cmd_bench(ctx: &Context, stdout: &mut dyn Write) -> Result<(), CliError> {
    let d = ctx.dataset()?;
    let g = Arc::new(ctx.gazetteer()?);
    let mut rows: Vec<BenchRow> = Vec::new();
    for mode in FeatureMode::ALL {
        let pc = PipelineConfig {
            mode,
            ..ctx.pipeline()
        };
        let f = pipeline::build_featurizer(&d, g.clone(), &pc).map_err(runtime)?;
        let (model, elapsed) =
            tagger::measure_train_time(&d.train, &f, &pc.train_config()).map_err(runtime)?;
        let (base_params, base_time) = rows
            .first()
            .map(|r| (r.parameters, r.train_seconds))
            .unwrap_or((model.count_parameters(), elapsed.as_secs_f64()));
        let secs = elapsed.as_secs_f64();
        rows.push(BenchRow {
            mode: mode.to_string(),
            parameters: model.count_parameters(),
            param_ratio: model.count_parameters() as f64 / base_params as f64,
            train_seconds: secs,
            time_ratio: if base_time > 0.0 {
                secs / base_time
            } else {
                1.0
            },
        });
    }
    if ctx.json {
        return emit(stdout, &to_json(&rows));
    }
    let mut text = format!(
        "{:<24} {:>12} {:>11} {:>10} {:>10}\n",
        "model", "parameters", "param_ratio", "seconds", "time_ratio"
    );
    for r in &rows {
        text.push_str(&format!(
            "{:<24} {:>12} {:>11.3} {:>10.3} {:>10.3}\n",
            r.mode, r.parameters, r.param_ratio, r.train_seconds, r.time_ratio
        ));
    }
    emit(stdout, &text)
}
