//! `curaloop` command-line driver. Every command prints JSON on stdout;
//! failures print `error[<code>]: <message>` on stderr and exit with 1.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use curaloop::augment::QuotaPlan;
use curaloop::corpus::{Provenance, RawRecord, TaskLabel};
use curaloop::evalharness::render_table;
use curaloop::infer::SamplingParams;
use curaloop::looporchestrator::{Decision, Ratings, ReviewStatus, ReviewVerdict};
use curaloop::settings::Settings;
use curaloop::workspace::{
    AugmentRequest, CycleRequest, EvalRequest, FinetuneRequest, InferRequest, IngestRequest, Workspace, WorkspaceError,
};
use curaloop_service::AppState;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "curaloop", version, about = "Curate, augment, fine-tune, evaluate and review QA datasets")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "CURALOOP_STORE", default_value = "curaloop-store")]
    store: PathBuf,
    /// TOML settings file.
    #[arg(long, global = true, env = "CURALOOP_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for reproducible ids, timestamps and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest a JSONL (or JSON array) file of records as a new dataset version.
    Curate {
        file: PathBuf,
        #[arg(long, default_value = "real", value_parser = parse_from_str::<Provenance>)]
        provenance: Provenance,
        /// Store the file as a multiple-choice benchmark with this id instead.
        #[arg(long)]
        benchmark: Option<String>,
    },
    /// List dataset versions.
    Datasets,
    /// Generate, filter and publish synthetic items.
    Augment(AugmentArgs),
    /// Train adapters on a dataset version.
    Finetune(FinetuneArgs),
    /// Route and answer one query.
    Infer {
        query: String,
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        model_ref: Option<String>,
    },
    /// Score the configured model on a stored benchmark.
    Eval {
        benchmark: String,
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        model_ref: Option<String>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Print the full run as JSON instead of the summary table.
        #[arg(long)]
        json: bool,
    },
    /// Expert review cycles.
    #[command(subcommand)]
    Cycle(CycleCommand),
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Total items, split evenly over --tasks.
    #[arg(long)]
    total: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_from_str::<TaskLabel>)]
    tasks: Option<Vec<TaskLabel>>,
    /// Explicit plan, e.g. `diagnosis=6,treatment=6`.
    #[arg(long, value_parser = parse_quota)]
    quota: Option<QuotaPlan>,
    #[arg(long)]
    seed_version: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Publish the seed items together with the synthetic ones.
    #[arg(long)]
    carry_seed: bool,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    dataset: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    /// Benchmark used to select among grid runs.
    #[arg(long)]
    benchmark: Option<String>,
    /// Cycle to mark as trained.
    #[arg(long)]
    cycle: Option<String>,
    #[arg(long)]
    resume_from: Option<String>,
}

#[derive(Debug, Subcommand)]
enum CycleCommand {
    /// Answer queries with the current model and queue them for review.
    Open {
        /// File with one query per line.
        queries: PathBuf,
        #[arg(long)]
        dataset: Option<u64>,
        #[arg(long, value_parser = parse_counts)]
        quota: Option<BTreeMap<TaskLabel, usize>>,
        #[arg(long)]
        model_ref: Option<String>,
    },
    List,
    /// Review items, optionally filtered.
    Review {
        #[arg(long)]
        cycle: Option<String>,
        #[arg(long, value_parser = parse_json_str::<ReviewStatus>)]
        status: Option<ReviewStatus>,
    },
    Claim {
        review_id: String,
        #[arg(long)]
        reviewer: String,
    },
    Verdict {
        review_id: String,
        #[arg(long)]
        reviewer: String,
        #[arg(long, value_parser = parse_json_str::<Decision>)]
        decision: Decision,
        /// Ratings as `accuracy,appropriateness,empathy`, each 1..=5.
        #[arg(long, value_parser = parse_ratings)]
        ratings: Ratings,
        #[arg(long)]
        edited_answer: Option<String>,
        #[arg(long)]
        idempotency_key: Option<String>,
    },
    Merge {
        cycle_id: String,
    },
    Report {
        cycle_id: String,
    },
}

fn parse_from_str<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_json_str<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn parse_counts(s: &str) -> Result<BTreeMap<TaskLabel, usize>, String> {
    s.split(',')
        .map(|pair| {
            let (task, n) = pair.split_once('=').ok_or_else(|| format!("expected task=count, got {pair:?}"))?;
            let task: TaskLabel = task.trim().parse().map_err(|e: curaloop::corpus::UnknownTask| e.to_string())?;
            let n: usize = n.trim().parse().map_err(|_| format!("invalid count in {pair:?}"))?;
            Ok((task, n))
        })
        .collect()
}

fn parse_quota(s: &str) -> Result<QuotaPlan, String> {
    let mut counts = Vec::new();
    for pair in s.split(',') {
        let m = parse_counts(pair)?;
        counts.extend(m);
    }
    QuotaPlan::from_counts(counts).map_err(|e| e.to_string())
}

fn parse_ratings(s: &str) -> Result<Ratings, String> {
    let v: Vec<u8> = s
        .split(',')
        .map(|p| p.trim().parse::<u8>().map_err(|_| format!("invalid rating {p:?}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [a, b, c] => Ok(Ratings::new(*a, *b, *c)),
        _ => Err("expected three comma-separated ratings".into()),
    }
}

/// Records from JSONL, or from a single JSON array.
fn read_records<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let body = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if body.trim_start().starts_with('[') {
        return serde_json::from_str(&body).with_context(|| format!("invalid JSON array in {}", path.display()));
    }
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: invalid record", path.display(), n + 1)))
        .collect()
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn greedy_or_default(greedy: bool) -> Option<SamplingParams> {
    greedy.then(SamplingParams::greedy)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let ws = Workspace::open(Some(&cli.store), settings, cli.seed)?;
    match cli.command {
        Command::Curate {
            file,
            provenance,
            benchmark,
        } => match benchmark {
            Some(id) => {
                let body = std::fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
                let b = ws.put_benchmark(&id, &body)?;
                print_json(&serde_json::json!({
                    "id": b.id,
                    "item_count": b.items.len(),
                    "task_counts": b.task_counts(),
                }))
            }
            None => {
                let records: Vec<RawRecord> = read_records(&file)?;
                let v = ws.curate(&IngestRequest { records, provenance })?;
                print_json(&v.manifest())
            }
        },
        Command::Datasets => {
            let manifests: Vec<_> = ws.store.list().iter().map(|v| v.manifest()).collect();
            print_json(&manifests)
        }
        Command::Augment(a) => print_json(&ws.augment(&AugmentRequest {
            seed_version: a.seed_version,
            total: a.total,
            tasks: a.tasks,
            quota: a.quota,
            budget: a.budget,
            seed: None,
            parallelism: a.parallelism,
            carry_seed: a.carry_seed,
        })?),
        Command::Finetune(f) => print_json(&ws.finetune(&FinetuneRequest {
            dataset_version: f.dataset,
            learning_rate: f.lr,
            epochs: f.epochs,
            grid: None,
            benchmark: f.benchmark,
            resume_from: f.resume_from,
            seed: None,
            cycle_id: f.cycle,
        })?),
        Command::Infer {
            query,
            greedy,
            model_ref,
        } => print_json(&ws.infer(&InferRequest {
            query,
            sampling: greedy_or_default(greedy),
            model_ref,
        })?),
        Command::Eval {
            benchmark,
            greedy,
            model_ref,
            parallelism,
            json,
        } => {
            let run = ws.evaluate(
                &benchmark,
                &EvalRequest {
                    sampling: None,
                    greedy,
                    model_ref,
                    parallelism,
                },
            )?;
            if json {
                print_json(&*run)
            } else {
                let label = run.model_ref.clone().unwrap_or_else(|| run.model.clone());
                println!("run {}", run.run_id);
                print!("{}", render_table(&[(label, &run.report)]));
                Ok(())
            }
        }
        Command::Cycle(c) => cycle(&ws, c),
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| ws.settings.service.bind.clone());
            let token = ws.settings.service_token();
            let state = AppState::new(Arc::new(ws), token);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let handle = curaloop_service::serve_until_signal(state, &bind).await?;
                eprintln!("listening on {}", handle.url());
                handle.wait().await
            })?;
            Ok(())
        }
    }
}

fn cycle(ws: &Workspace, c: CycleCommand) -> anyhow::Result<()> {
    let o = &ws.orchestrator;
    match c {
        CycleCommand::Open {
            queries,
            dataset,
            quota,
            model_ref,
        } => {
            let body = std::fs::read_to_string(&queries).with_context(|| format!("cannot read {}", queries.display()))?;
            let queries: Vec<String> = body.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect();
            print_json(&ws.open_cycle(&CycleRequest {
                dataset,
                queries,
                quota,
                sampling: None,
                model_ref,
            })?)
        }
        CycleCommand::List => print_json(&o.cycles()),
        CycleCommand::Review { cycle, status } => print_json(&o.review_queue(status, cycle.as_deref())),
        CycleCommand::Claim { review_id, reviewer } => {
            print_json(&o.claim(&review_id, &reviewer, None).map_err(WorkspaceError::from)?)
        }
        CycleCommand::Verdict {
            review_id,
            reviewer,
            decision,
            ratings,
            edited_answer,
            idempotency_key,
        } => {
            let verdict = ReviewVerdict {
                review_id,
                reviewer,
                ratings,
                decision,
                edited_answer,
                idempotency_key,
            };
            print_json(&o.submit_verdict(verdict, None).map_err(WorkspaceError::from)?)
        }
        CycleCommand::Merge { cycle_id } => {
            let v = o.merge_cycle(&cycle_id).map_err(WorkspaceError::from)?;
            print_json(&serde_json::json!({
                "cycle": o.cycle(&cycle_id).map_err(WorkspaceError::from)?,
                "version": v.manifest(),
            }))
        }
        CycleCommand::Report { cycle_id } => print_json(&o.cycle_report(&cycle_id).map_err(WorkspaceError::from)?),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("CURALOOP_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<WorkspaceError>().map_or("error", WorkspaceError::code);
            eprintln!("error[{code}]: {e:#}");
            ExitCode::FAILURE
        }
    }
}
