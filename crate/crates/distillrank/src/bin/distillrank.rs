//! Command-line front end: ingest -> synth -> distill -> align -> eval, plus
//! an offline end-to-end demo. Exit codes: 0 success, 1 validation error,
//! 2 runtime error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use distillrank::align::{collect_preferences, train_align, CollectOptions};
use distillrank::config::PipelineConfig;
use distillrank::data::{read_records, Dataset, ValidationMode};
use distillrank::distill::{join_examples, train_distill};
use distillrank::encoder::EncoderModel;
use distillrank::llm::{ChatClient, HttpChatClient, MockOracle};
use distillrank::optim::write_loss_curve;
use distillrank::pipeline::{format_demo_report, run_demo, DemoOptions};
use distillrank::retrieval::{evaluate, format_report_table, write_report_csv};
use distillrank::synthesis::{run_synthesis, PromptSet, SynthesisOptions};

#[derive(Parser)]
#[command(name = "distillrank", version, about = "Train dense retrievers from black-box LLM feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Key-value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed for all randomness.
    #[arg(long)]
    seed: Option<u64>,

    /// Route every LLM call to the seeded offline oracle.
    #[arg(long)]
    mock: bool,

    /// Directory holding the prompt template files (built-ins by default).
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset directory and print its statistics.
    Ingest {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        /// Downgrade dangling qrels ids from errors to warnings.
        #[arg(long)]
        lenient: bool,
    },
    /// Synthesize training records for every train query.
    Synth {
        #[arg(long)]
        dataset: PathBuf,
        /// Output records file (newline-delimited JSON); resumes if present.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        endpoint_url: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        hallucination_rate: Option<f64>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Stage 1: train a fresh encoder on synthesis records.
    Distill {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint directory (one checkpoint per epoch plus final.ckpt).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Similarity temperature for the fresh encoder.
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Stage 2: collect LLM pairwise preferences and continue training.
    Align {
        /// Stage-1 checkpoint to start from.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training objective: partial-pl (default) or bt.
        #[arg(long)]
        loss: Option<String>,
        /// Similarity temperature for this stage (keeps the checkpoint's
        /// value when absent).
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        endpoint_url: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Evaluate a checkpoint: per-query and macro nDCG at the given cutoffs.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated cutoffs.
        #[arg(long, default_value = "1,3,5,10")]
        k: String,
        /// Report CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole loop on the bundled dataset with the mock oracle.
    Demo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "demo-out")]
        out: PathBuf,
    },
}

enum CliError {
    /// Bad flags, bad config, bad input shape: exit 1.
    Validation(Vec<String>),
    /// Failure while doing the work: exit 2.
    Runtime(distillrank::Error),
}

impl From<distillrank::Error> for CliError {
    fn from(e: distillrank::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<distillrank::llm::LlmError> for CliError {
    fn from(e: distillrank::llm::LlmError) -> Self {
        CliError::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(problems)) => {
            for p in &problems {
                eprintln!("error: {p}");
            }
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Build the pipeline config from (defaults, file, flags), then check it.
/// Every violation is reported, not just the first.
fn load_config(
    common: &ConfigArgs,
    dataset: Option<&PathBuf>,
    extra: BTreeMap<String, String>,
) -> Result<PipelineConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::from_file(path)
            .map_err(|e| CliError::Validation(vec![e.to_string()]))?,
        None => PipelineConfig::default(),
    };
    let mut overrides = extra;
    if let Some(seed) = common.seed {
        overrides.insert("seed".into(), seed.to_string());
    }
    if common.mock {
        overrides.insert("mock.enabled".into(), "true".into());
    }
    if let Some(dir) = &common.prompts_dir {
        overrides.insert("prompts.dir".into(), dir.display().to_string());
    }
    if let Some(dir) = dataset {
        overrides.insert("dataset.dir".into(), dir.display().to_string());
    }
    config
        .apply_overrides(&overrides)
        .map_err(|e| CliError::Validation(vec![e.to_string()]))?;
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(CliError::Validation(violations));
    }
    Ok(config)
}

fn load_split(config: &PipelineConfig, split: &str) -> Result<Dataset, CliError> {
    let dir = config
        .dataset_dir
        .as_ref()
        .ok_or_else(|| CliError::Validation(vec!["no dataset directory configured".into()]))?;
    let (dataset, warnings) = Dataset::load_dir(dir, split, ValidationMode::Strict)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(dataset)
}

fn prompts_for(config: &PipelineConfig) -> Result<PromptSet, CliError> {
    Ok(match &config.prompts_dir {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::builtin(),
    })
}

fn client_for(config: &PipelineConfig, dataset: &Dataset) -> Result<Box<dyn ChatClient>, CliError> {
    if config.mock_enabled {
        let mut mock_config = config.mock.clone();
        mock_config.seed = config.seed;
        Ok(Box::new(MockOracle::new(
            mock_config,
            &dataset.corpus,
            &dataset.queries,
            &dataset.qrels,
        )?))
    } else {
        Ok(Box::new(HttpChatClient::new(config.endpoint.clone())))
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Ingest { dataset, split, lenient } => {
            let mode = if lenient {
                ValidationMode::Lenient
            } else {
                ValidationMode::Strict
            };
            let (ds, warnings) = Dataset::load_dir(&dataset, &split, mode)
                .map_err(|e| CliError::Validation(vec![e.to_string()]))?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let with_gold = ds
                .qrels
                .query_ids()
                .filter(|q| ds.qrels.gold_passage(q).is_some())
                .count();
            println!("passages:        {}", ds.corpus.len());
            println!("queries:         {}", ds.queries.len());
            println!("qrels rows:      {} ({split})", ds.qrels.num_pairs());
            println!("judged queries:  {}", ds.qrels.query_ids().count());
            println!("with gold:       {with_gold}");
            println!("warnings:        {}", warnings.len());
            Ok(())
        }

        Command::Synth {
            dataset,
            out,
            endpoint_url,
            model,
            parallelism,
            hallucination_rate,
            common,
        } => {
            let mut extra = BTreeMap::new();
            if let Some(url) = endpoint_url {
                extra.insert("endpoint.base_url".into(), url);
            }
            if let Some(model) = model {
                extra.insert("endpoint.model".into(), model);
            }
            if let Some(p) = parallelism {
                extra.insert("synthesis.parallelism".into(), p.to_string());
            }
            if let Some(rate) = hallucination_rate {
                extra.insert("mock.hallucination_rate".into(), rate.to_string());
            }
            let config = load_config(&common, Some(&dataset), extra)?;
            let ds = load_split(&config, "train")?;
            let prompts = prompts_for(&config)?;
            let client = client_for(&config, &ds)?;
            let summary = run_synthesis(
                client.as_ref(),
                &prompts,
                &ds.corpus,
                &ds.queries,
                &ds.qrels,
                &out,
                config.synthesis_parallelism,
                &SynthesisOptions {
                    max_failure_ratio: config.synthesis_max_failure_ratio,
                },
            )?;
            println!(
                "records: {} total ({} new), {} relabeled, {} failed, {} skipped without gold, {} relabel parse warnings",
                summary.total,
                summary.new_records,
                summary.relabeled,
                summary.failed,
                summary.skipped_no_gold,
                summary.relabel_parse_warnings
            );
            Ok(())
        }

        Command::Distill {
            records,
            dataset,
            out,
            epochs,
            learning_rate,
            batch_size,
            tau,
            common,
        } => {
            let mut extra = BTreeMap::new();
            if let Some(e) = epochs {
                extra.insert("stage1.epochs".into(), e.to_string());
            }
            if let Some(lr) = learning_rate {
                extra.insert("stage1.learning_rate".into(), lr.to_string());
            }
            if let Some(b) = batch_size {
                extra.insert("stage1.batch_size".into(), b.to_string());
            }
            if let Some(t) = tau {
                extra.insert("encoder.tau".into(), t.to_string());
            }
            let config = load_config(&common, Some(&dataset), extra)?;
            let ds = load_split(&config, "train")?;
            let record_list = read_records(&records)?;
            let examples = join_examples(&record_list, &ds.corpus, &ds.queries, &ds.qrels)?;
            let mut model = EncoderModel::new(
                config.encoder_dim,
                config.vocab_buckets,
                config.tau,
                config.seed,
            )?;
            let mut stage1 = config.stage1.clone();
            stage1.seed = config.seed;
            let curve = train_distill(&mut model, &examples, &stage1, Some(&out))?;
            write_loss_curve(&curve, &out.join("loss_curve.csv"))?;
            model.save(&out.join("final.ckpt"))?;
            let last = curve.last().map(|p| p.mean_loss).unwrap_or(f64::NAN);
            println!(
                "trained on {} examples for {} steps; final mean loss {last:.6}; checkpoints in {}",
                examples.len(),
                curve.len(),
                out.display()
            );
            Ok(())
        }

        Command::Align {
            ckpt,
            dataset,
            out,
            loss,
            tau,
            endpoint_url,
            model,
            parallelism,
            epochs,
            learning_rate,
            batch_size,
            common,
        } => {
            let mut extra = BTreeMap::new();
            if let Some(l) = loss {
                extra.insert("stage2.loss".into(), l);
            }
            if let Some(url) = endpoint_url {
                extra.insert("endpoint.base_url".into(), url);
            }
            if let Some(model) = model {
                extra.insert("endpoint.model".into(), model);
            }
            if let Some(p) = parallelism {
                extra.insert("synthesis.parallelism".into(), p.to_string());
            }
            if let Some(e) = epochs {
                extra.insert("stage2.epochs".into(), e.to_string());
            }
            if let Some(lr) = learning_rate {
                extra.insert("stage2.learning_rate".into(), lr.to_string());
            }
            if let Some(b) = batch_size {
                extra.insert("stage2.batch_size".into(), b.to_string());
            }
            let config = load_config(&common, Some(&dataset), extra)?;
            let ds = load_split(&config, "train")?;
            let prompts = prompts_for(&config)?;
            let client = client_for(&config, &ds)?;
            let mut encoder = EncoderModel::load(&ckpt)?;
            if let Some(tau) = tau {
                encoder = encoder.with_tau(tau)?;
            }
            std::fs::create_dir_all(&out).map_err(|e| distillrank::Error::io(&out, e))?;
            let mut stage2 = config.stage2.clone();
            stage2.seed = config.seed;
            let (triples, log) = collect_preferences(
                client.as_ref(),
                &prompts,
                &encoder,
                &ds.corpus,
                &ds.queries,
                &ds.qrels,
                &stage2,
                &out.join("triples.jsonl"),
                &out.join("comparisons.jsonl"),
                &CollectOptions {
                    parallelism: config.synthesis_parallelism,
                    max_skip_ratio: config.stage2_max_skip_ratio,
                },
            )?;
            let curve =
                train_align(&mut encoder, &triples, &ds.corpus, &ds.queries, &stage2, Some(&out))?;
            write_loss_curve(&curve, &out.join("loss_curve.csv"))?;
            encoder.save(&out.join("final.ckpt"))?;
            let skipped = log.iter().filter(|r| r.skipped).count();
            let report = format!(
                "loss: {}\ntriples: {}\ncomparisons: {}\nskipped: {}\nsteps: {}\nfinal_mean_loss: {:.6}\n",
                stage2.loss,
                triples.len(),
                log.len(),
                skipped,
                curve.len(),
                curve.last().map(|p| p.mean_loss).unwrap_or(f64::NAN),
            );
            std::fs::write(out.join("run_report.txt"), &report)
                .map_err(|e| distillrank::Error::io(out.join("run_report.txt"), e))?;
            print!("{report}");
            Ok(())
        }

        Command::Eval {
            ckpt,
            dataset,
            split,
            k,
            out,
        } => {
            let ks: Vec<usize> = k
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Validation(vec![format!("bad --k list '{k}'")]))?;
            if ks.is_empty() {
                return Err(CliError::Validation(vec!["--k must name at least one cutoff".into()]));
            }
            let (ds, warnings) = Dataset::load_dir(&dataset, &split, ValidationMode::Strict)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let model = EncoderModel::load(&ckpt)?;
            let report = evaluate(&model, &ds.corpus, &ds.queries, &ds.qrels, &ks)?;
            print!("{}", format_report_table(&report));
            if report.no_relevant_count > 0 {
                eprintln!(
                    "warning: {} queries have no relevant passage and score 0",
                    report.no_relevant_count
                );
            }
            if let Some(path) = out {
                write_report_csv(&report, &path)?;
                println!("report written to {}", path.display());
            }
            Ok(())
        }

        Command::Demo { seed, out } => {
            let report = run_demo(&DemoOptions::new(seed, out.clone()))?;
            print!("{}", format_demo_report(&report));
            println!("\nartifacts under {}", out.display());
            Ok(())
        }
    }
}
