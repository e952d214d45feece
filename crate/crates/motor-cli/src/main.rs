//! Command-line surface for the retrieval and re-ranking engine.
//!
//! Subcommands: `index`, `rerank`, `eval`, `sweep`, `gen-synthetic`.
//! Flag names mirror the weight symbols (`--alpha`, `--beta`, `--delta`,
//! `--gamma`, `--k`, `--s`). Set `MOTOR_LOG` to override the log level.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motor_core::pipeline::GenerationEndpoint;
use motor_core::store;
use motor_core::types::SinkhornMode;
use motor_core::{
    ablation_csv, ablation_sweep, assemble_prompt, dispatch_generation, evaluate_config,
    generate_synthetic_corpus, run_query, save_corpus, save_queries, CorpusStore, EvalReport,
    MotorError, PlantedMap, QueryContext, RerankConfig, SyntheticCorpusSpec,
};

const DEFAULT_TEMPLATE: &str = "Question: {question}\n\nImage findings:\n{grounded_caption}\n\n\
Retrieved context:\n{contexts}\n\nAnswer the question using the image, the findings, and the context.";

#[derive(Parser)]
#[command(
    name = "motor",
    version,
    about = "Multimodal OT retrieval and re-ranking engine"
)]
struct Cli {
    /// Log level (error|warn|info|debug|trace); MOTOR_LOG overrides.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Weight of the question-report similarity term.
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Weight of the finding-text similarity term.
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    /// Weight of the finding-box visual similarity term.
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    /// Entropic regularization strength.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// First-stage retrieval depth.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Number of reports kept after re-ranking.
    #[arg(long, default_value_t = 5)]
    s: usize,
    /// Sinkhorn convergence tolerance (max marginal violation).
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Sinkhorn iteration cap.
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Run Sinkhorn in log-domain (required for gamma below ~0.05).
    #[arg(long)]
    log_domain: bool,
}

impl ConfigArgs {
    fn to_config(&self, store: &CorpusStore) -> RerankConfig {
        RerankConfig {
            alpha: self.alpha,
            beta: self.beta,
            delta: self.delta,
            gamma: self.gamma,
            k: self.k,
            s: self.s,
            sinkhorn_max_iters: self.max_iters,
            sinkhorn_tol: self.tol,
            sinkhorn_mode: if self.log_domain {
                SinkhornMode::LogDomain
            } else {
                SinkhornMode::Plain
            },
            visual_dim: store.visual_dim(),
            text_dim: store.text_dim(),
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest records + embeddings and persist a validated index directory.
    Index {
        /// Records file (JSON Lines).
        records: PathBuf,
        /// Embeddings file (binary container or JSON fallback).
        embeddings: PathBuf,
        /// Output index directory.
        out: PathBuf,
    },
    /// Retrieve, re-rank, and write the generation request for one query.
    Rerank {
        /// Index directory produced by `index` or `gen-synthetic`.
        index: PathBuf,
        /// Query directory holding queries.jsonl + query_embeddings file.
        query: PathBuf,
        /// Which query row to run (default: the first).
        #[arg(long)]
        query_id: Option<String>,
        /// Write the GenerationRequest JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generation service URL; when set, the assembled prompt is
        /// dispatched and the answer appended to the output.
        #[arg(long)]
        endpoint: Option<String>,
        /// Prompt template file ({question}, {grounded_caption}, {contexts}).
        #[arg(long)]
        template: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the pipeline over a query set and report ranking metrics.
    Eval {
        index: PathBuf,
        /// Queries directory holding queries.jsonl + query_embeddings file.
        queries: PathBuf,
        /// JSON map from query id to planted relevant record ids.
        planted: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Compare only the first N positions for the change rate
        /// (default: full top-k lists).
        #[arg(long)]
        change_depth: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Ablation sweep over weight tuples and gamma values.
    Sweep {
        index: PathBuf,
        queries: PathBuf,
        planted: PathBuf,
        /// Semicolon-separated weight tuples, e.g. "0.2,0.3,0.5;0.2,0.5,0.3".
        /// The default pairs the visual-prioritized main configuration with
        /// the text-prioritized preset.
        #[arg(long, default_value = "0.2,0.3,0.5;0.2,0.5,0.3")]
        weights: String,
        /// Comma-separated gamma values.
        #[arg(long, default_value = "1.0")]
        gammas: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a seeded synthetic corpus with planted relevance.
    GenSynthetic {
        /// Output directory (usable as both index and queries directory).
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        records: usize,
        #[arg(long, default_value_t = 20)]
        queries: usize,
        #[arg(long, default_value_t = 64)]
        visual_dim: usize,
        #[arg(long, default_value_t = 32)]
        text_dim: usize,
        /// Planted relevant records per query.
        #[arg(long, default_value_t = 1)]
        planted: usize,
        /// Findings per record, inclusive range "lo,hi".
        #[arg(long, default_value = "1,3")]
        findings: String,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also plant an image-similar distractor per query.
        #[arg(long)]
        inject_image_distractor: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("MOTOR_LOG", cli.log_level.clone()),
    )
    .init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Exit code classes: 1 input, 2 numerical failure, 3 service failure.
fn exit_code(e: &MotorError) -> u8 {
    match e {
        MotorError::Stage { source, .. } => exit_code(source),
        MotorError::NumericalUnderflow
        | MotorError::NonFiniteInput(_)
        | MotorError::OracleScopeExceeded(_) => 2,
        MotorError::ServiceUnavailable { .. } | MotorError::ServiceError { .. } => 3,
        _ => 1,
    }
}

fn run(command: Command) -> Result<(), MotorError> {
    match command {
        Command::Index {
            records,
            embeddings,
            out,
        } => cmd_index(&records, &embeddings, &out),
        Command::Rerank {
            index,
            query,
            query_id,
            out,
            endpoint,
            template,
            config,
        } => cmd_rerank(
            &index,
            &query,
            query_id.as_deref(),
            out.as_deref(),
            endpoint.as_deref(),
            template.as_deref(),
            &config,
        ),
        Command::Eval {
            index,
            queries,
            planted,
            format,
            change_depth,
            out,
            config,
        } => cmd_eval(
            &index,
            &queries,
            &planted,
            format,
            change_depth,
            out.as_deref(),
            &config,
        ),
        Command::Sweep {
            index,
            queries,
            planted,
            weights,
            gammas,
            format,
            out,
            config,
        } => cmd_sweep(
            &index,
            &queries,
            &planted,
            &weights,
            &gammas,
            format,
            out.as_deref(),
            &config,
        ),
        Command::GenSynthetic {
            out,
            records,
            queries,
            visual_dim,
            text_dim,
            planted,
            findings,
            noise,
            seed,
            inject_image_distractor,
        } => {
            let spec = SyntheticCorpusSpec {
                n_records: records,
                n_queries: queries,
                visual_dim,
                text_dim,
                n_planted_relevant: planted,
                findings_per_record: parse_range(&findings)?,
                noise_scale: noise,
                seed,
                inject_image_distractor,
            };
            cmd_gen_synthetic(&out, &spec)
        }
    }
}

// ---------------------------------------------------------------------------
// Directory layout and parsing helpers
// ---------------------------------------------------------------------------

fn io_error(path: &Path, source: std::io::Error) -> MotorError {
    MotorError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn find_file(dir: &Path, candidates: &[&str]) -> Result<PathBuf, MotorError> {
    for name in candidates {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(io_error(
        dir,
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("none of {candidates:?} found in directory"),
        ),
    ))
}

fn load_index(dir: &Path) -> Result<CorpusStore, MotorError> {
    let records = find_file(dir, &["records.jsonl"])?;
    let embeddings = find_file(dir, &["embeddings.bin", "embeddings.json"])?;
    store::ingest_corpus(&records, &embeddings)
}

fn load_query_set(dir: &Path) -> Result<Vec<(String, QueryContext)>, MotorError> {
    let records = find_file(dir, &["queries.jsonl"])?;
    let embeddings = find_file(dir, &["query_embeddings.bin", "query_embeddings.json"])?;
    store::load_queries(&records, &embeddings)
}

fn load_planted(path: &Path) -> Result<PlantedMap, MotorError> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), MotorError> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

/// Print to stdout, or write atomically (newline-terminated) when `out` set.
fn emit(out: Option<&Path>, content: &str) -> Result<(), MotorError> {
    match out {
        Some(path) => {
            write_atomic(path, format!("{content}\n").as_bytes())?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn parse_range(text: &str) -> Result<(usize, usize), MotorError> {
    let (lo, hi) = text.split_once(',').ok_or_else(|| {
        MotorError::InvalidConfig(format!("findings range must be \"lo,hi\", got {text:?}"))
    })?;
    let parse = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|_| MotorError::InvalidConfig(format!("bad findings range bound {p:?}")))
    };
    Ok((parse(lo)?, parse(hi)?))
}

fn parse_weight_tuples(text: &str) -> Result<Vec<(f64, f64, f64)>, MotorError> {
    text.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|tuple| {
            let parts: Vec<&str> = tuple.split(',').collect();
            if parts.len() != 3 {
                return Err(MotorError::InvalidConfig(format!(
                    "weight tuple must be \"alpha,beta,delta\", got {tuple:?}"
                )));
            }
            let parse = |p: &str| {
                p.trim().parse::<f64>().map_err(|_| {
                    MotorError::InvalidConfig(format!("bad weight {p:?} in tuple {tuple:?}"))
                })
            };
            Ok((parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
        })
        .collect()
}

fn parse_gammas(text: &str) -> Result<Vec<f64>, MotorError> {
    text.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|g| {
            g.trim()
                .parse::<f64>()
                .map_err(|_| MotorError::InvalidConfig(format!("bad gamma value {g:?}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_index(records: &Path, embeddings: &Path, out: &Path) -> Result<(), MotorError> {
    let store = store::ingest_corpus(records, embeddings)?;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    save_corpus(
        &store,
        &out.join("records.jsonl"),
        &out.join("embeddings.bin"),
    )?;
    println!(
        "indexed {} records (visual_dim={}, text_dim={}) into {}",
        store.len(),
        store.visual_dim(),
        store.text_dim(),
        out.display()
    );
    Ok(())
}

fn pick_query(
    queries: Vec<(String, QueryContext)>,
    query_id: Option<&str>,
) -> Result<(String, QueryContext), MotorError> {
    match query_id {
        Some(wanted) => queries
            .into_iter()
            .find(|(id, _)| id == wanted)
            .ok_or_else(|| MotorError::UnknownRecordId(wanted.to_string())),
        None => queries
            .into_iter()
            .next()
            .ok_or_else(|| MotorError::InvalidConfig("query file is empty".into())),
    }
}

fn cmd_rerank(
    index: &Path,
    query_dir: &Path,
    query_id: Option<&str>,
    out: Option<&Path>,
    endpoint: Option<&str>,
    template: Option<&Path>,
    config: &ConfigArgs,
) -> Result<(), MotorError> {
    let store = load_index(index)?;
    let cfg = config.to_config(&store);
    cfg.validate()?;
    let (query_ref, query) = pick_query(load_query_set(query_dir)?, query_id)?;
    let mut request = run_query(&query_ref, &query, &store, &cfg)?;

    println!(
        "query {query_ref}: {} candidates",
        request.trace.final_ranking.len()
    );
    println!("{:>7} {:>5}  {:>12}  id", "initial", "final", "cost");
    for score in &request.trace.final_ranking {
        println!(
            "{:>7} {:>5}  {:>12.6}  {}{}",
            score.initial_rank,
            score.final_rank,
            score.ot_cost,
            score.record_id,
            if score.fallback_used {
                "  (fallback)"
            } else {
                ""
            }
        );
    }

    if let Some(url) = endpoint {
        let template_text = match template {
            Some(path) => std::fs::read_to_string(path).map_err(|e| io_error(path, e))?,
            None => DEFAULT_TEMPLATE.to_string(),
        };
        let prompt = assemble_prompt(&request, &template_text)?;
        let answer = dispatch_generation(
            &prompt,
            &request.query_image_ref,
            &GenerationEndpoint::new(url),
        )?;
        println!("answer: {answer}");
        request.answer = Some(answer);
    }

    emit(out, &serde_json::to_string_pretty(&request)?)
}

fn render_eval(report: &EvalReport, format: Format) -> Result<String, MotorError> {
    Ok(match format {
        Format::Json => serde_json::to_string_pretty(report)?,
        Format::Csv => format!(
            "change_rate,precision_at_s,mrr\n{},{},{}",
            report.change_rate, report.precision_at_s, report.mrr
        ),
        Format::Text => format!(
            "change_rate:    {}\nprecision_at_s: {}\nmrr:            {}",
            report.change_rate, report.precision_at_s, report.mrr
        ),
    })
}

fn cmd_eval(
    index: &Path,
    queries_dir: &Path,
    planted_path: &Path,
    format: Format,
    change_depth: Option<usize>,
    out: Option<&Path>,
    config: &ConfigArgs,
) -> Result<(), MotorError> {
    let store = load_index(index)?;
    let cfg = config.to_config(&store);
    cfg.validate()?;
    let queries = load_query_set(queries_dir)?;
    let planted = load_planted(planted_path)?;
    let report = evaluate_config(&store, &queries, &planted, &cfg, change_depth)?;
    emit(out, &render_eval(&report, format)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    index: &Path,
    queries_dir: &Path,
    planted_path: &Path,
    weights: &str,
    gammas: &str,
    format: Format,
    out: Option<&Path>,
    config: &ConfigArgs,
) -> Result<(), MotorError> {
    let store = load_index(index)?;
    let base_cfg = config.to_config(&store);
    let queries = load_query_set(queries_dir)?;
    let planted = load_planted(planted_path)?;
    let tuples = parse_weight_tuples(weights)?;
    let gamma_values = parse_gammas(gammas)?;
    let rows = ablation_sweep(
        &store,
        &queries,
        &planted,
        &tuples,
        &gamma_values,
        &base_cfg,
    )?;
    let content = match format {
        Format::Json => serde_json::to_string_pretty(&rows)?,
        Format::Csv | Format::Text => ablation_csv(&rows).trim_end().to_string(),
    };
    emit(out, &content)
}

fn cmd_gen_synthetic(out: &Path, spec: &SyntheticCorpusSpec) -> Result<(), MotorError> {
    let (store, queries, planted) = generate_synthetic_corpus(spec)?;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    save_corpus(
        &store,
        &out.join("records.jsonl"),
        &out.join("embeddings.bin"),
    )?;
    save_queries(
        &queries,
        &out.join("queries.jsonl"),
        &out.join("query_embeddings.bin"),
    )?;
    let planted_json = serde_json::to_string_pretty(&planted)? + "\n";
    write_atomic(&out.join("planted.json"), planted_json.as_bytes())?;
    println!(
        "generated {} records, {} queries (seed {}) into {}",
        store.len(),
        queries.len(),
        spec.seed,
        out.display()
    );
    Ok(())
}
