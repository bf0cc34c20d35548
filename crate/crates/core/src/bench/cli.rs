//! Command-line entry point. Exit codes: 0 success, 1 usage or config
//! error, 2 runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    compare_topologies, load_router, metrics_csv, run_eval, write_file, write_jsonl, ExperimentConfig, OraclePolicy,
    PolicyKind, ReportTag, Suite, SuiteKind, Topology, UniformRandomPolicy,
};
use crate::error::{Error, Result};
use crate::orchestrator::{dag_to_sequence, run_episode, Dag, Policy, Query};
use crate::router::{Mode, Router, ZeroNoise};
use crate::trainer::{train, TrainOutputs};

#[derive(Debug, Parser)]
#[command(name = "seqroute", version, about = "Train and evaluate a sequential agent router")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a router and write its checkpoint and report.
    Train(Common),
    /// Evaluate a policy on the held-out questions.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare fixed topologies with the learned router.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of chain,star,tree,complete,random,learned.
        #[arg(long, value_delimiter = ',')]
        topologies: Option<Vec<String>>,
    },
    /// Route one question and print the sequence and context masks.
    Route {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Id of a suite question (train or test).
        #[arg(long, conflicts_with = "query")]
        task: Option<String>,
        /// Free-form question text (`llm` suite only).
        #[arg(long)]
        query: Option<String>,
    },
    /// Convert a communication DAG (JSON) to a sequence with masks.
    ConvertDag { path: PathBuf },
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::MissingFile(_) | Error::Input(_) => 1,
        _ => 2,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn io(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn learned(config: &ExperimentConfig, checkpoint: &Option<PathBuf>) -> Result<Router> {
    let path = checkpoint.clone().unwrap_or_else(|| config.checkpoint_path());
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    load_router(config, &path)
}

fn policy(
    config: &ExperimentConfig,
    suite: &Suite,
    checkpoint: &Option<PathBuf>,
) -> Result<(Box<dyn Policy>, &'static str)> {
    Ok(match config.policy {
        PolicyKind::Learned => (Box::new(learned(config, checkpoint)?), "learned"),
        PolicyKind::Oracle => {
            let tasks: Vec<_> = suite.train_tasks.iter().chain(&suite.test_tasks).cloned().collect();
            (Box::new(OraclePolicy::new(&tasks)), "oracle")
        }
        PolicyKind::Random => (Box::new(UniformRandomPolicy::default()), "random"),
    })
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::ConvertDag { path } => {
            if !path.exists() {
                return Err(Error::MissingFile(path));
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let plan = dag_to_sequence(&Dag::from_json(&text)?)?;
            writeln!(out, "[{}]", plan.roles.join(", ")).map_err(io)?;
            let masks: Vec<String> = plan
                .masks
                .iter()
                .map(|m| format!("[{}]", m.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")))
                .collect();
            writeln!(out, "[{}]", masks.join(", ")).map_err(io)?;
        }
        Command::Train(common) => {
            let config = load(&common)?;
            let suite = Suite::build(&config)?;
            let mut router = Router::new(config.router.clone())?;
            let outputs = TrainOutputs { dir: config.out_dir.clone() };
            std::fs::create_dir_all(&outputs.dir).map_err(|e| Error::io(&outputs.dir, e))?;
            let report = train(&mut router, &suite.env, &suite.train, &config.train, Some(&outputs))?;
            writeln!(
                out,
                "trained on {} questions: {} trajectories, {} updates; checkpoint {}",
                report.questions,
                report.trajectories_used,
                report.optimizer_steps,
                outputs.checkpoint_path().display()
            )
            .map_err(io)?;
        }
        Command::Eval { common, checkpoint } => {
            let config = load(&common)?;
            let suite = Suite::build(&config)?;
            let (policy, name) = policy(&config, &suite, &checkpoint)?;
            let hash = config.hash();
            let tag = ReportTag { name: &config.name, policy: name, seed: config.seed, config_hash: &hash };
            let run = run_eval(&suite.env, policy.as_ref(), &suite.test, config.workers, &tag)?;
            let dir = &config.out_dir;
            write_file(&dir.join("eval_report.json"), &serde_json::to_string_pretty(&run.report)?)?;
            write_file(
                &dir.join("eval_metrics.csv"),
                &metrics_csv(std::slice::from_ref(&run.report), &suite.env.catalog),
            )?;
            write_jsonl(&dir.join("eval_trajectories.jsonl"), &run.trajectories)?;
            writeln!(
                out,
                "{} policy: accuracy {:.4} over {} tasks, mean length {:.3}, mean prompt tokens {:.1}",
                name,
                run.report.accuracy,
                run.report.tasks,
                run.report.mean_sequence_length,
                run.report.mean_prompt_tokens
            )
            .map_err(io)?;
            if let Some(b) = suite.random_baseline(0.5) {
                writeln!(out, "uniform random routing (exact): {b:.4}").map_err(io)?;
            }
        }
        Command::Compare { common, checkpoint, topologies } => {
            let config = load(&common)?;
            let suite = Suite::build(&config)?;
            let selected: Vec<Topology> = match topologies {
                None => Topology::ALL.to_vec(),
                Some(names) => names
                    .iter()
                    .map(|n| {
                        Topology::ALL
                            .into_iter()
                            .find(|t| t.name() == n.trim())
                            .ok_or_else(|| Error::Config(format!("unknown topology {n}")))
                    })
                    .collect::<Result<_>>()?,
            };
            let router =
                if selected.contains(&Topology::Learned) { Some(learned(&config, &checkpoint)?) } else { None };
            let hash = config.hash();
            let tag = ReportTag { name: &config.name, policy: "", seed: config.seed, config_hash: &hash };
            let rows = compare_topologies(&suite.env, router.as_ref(), &suite.test, &selected, config.workers, &tag)?;
            let reports: Vec<_> = rows.iter().map(|r| r.report.clone()).collect();
            let dir = &config.out_dir;
            write_file(&dir.join("compare.json"), &serde_json::to_string_pretty(&reports)?)?;
            write_file(&dir.join("compare.csv"), &metrics_csv(&reports, &suite.env.catalog))?;
            for r in &reports {
                writeln!(
                    out,
                    "{:<9} accuracy {:.4}  mean length {:.3}  mean prompt tokens {:.1}",
                    r.policy, r.accuracy, r.mean_sequence_length, r.mean_prompt_tokens
                )
                .map_err(io)?;
            }
        }
        Command::Route { common, checkpoint, task, query } => {
            let config = load(&common)?;
            let suite = Suite::build(&config)?;
            let q = match (task, query) {
                (Some(id), _) => suite
                    .train
                    .iter()
                    .chain(&suite.test)
                    .find(|q| q.id == id)
                    .cloned()
                    .ok_or_else(|| Error::Input(format!("no question with id {id}")))?,
                (None, Some(_)) if config.suite == SuiteKind::Scripted => {
                    return Err(Error::Input("scripted agents only answer suite questions; use --task".into()))
                }
                (None, Some(text)) => Query { id: "adhoc".into(), text, answer: None },
                (None, None) => suite.test[0].clone(),
            };
            let (policy, _) = policy(&config, &suite, &checkpoint)?;
            let result = run_episode(&q, &suite.env, policy.as_ref(), Mode::Infer, &mut ZeroNoise)?;
            writeln!(out, "question {}: {}", q.id, q.text).map_err(io)?;
            for s in &result.trajectory.steps {
                let seen: Vec<String> =
                    s.decision.mask.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| (j + 1).to_string()).collect();
                writeln!(out, "step {}: {:<14} context [{}]", s.step, s.role_id, seen.join(", ")).map_err(io)?;
            }
            writeln!(
                out,
                "answer: {}{}",
                result.final_answer,
                match q.answer {
                    Some(_) if result.trajectory.correct => " (correct)",
                    Some(_) => " (wrong)",
                    None => "",
                }
            )
            .map_err(io)?;
        }
    }
    Ok(())
}
