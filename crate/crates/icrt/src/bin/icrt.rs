//! Command-line front end: dataset generation, training, tiered prompted
//! evaluation, the goal-conditioned baseline, the multi-modal prompting
//! experiment, and the ablation sweep.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.
//! `ICRT_THREADS` caps worker parallelism.

use clap::{Parser, Subcommand};
use icrt::error::{Error, Result};
use icrt::eval::{
    ablate_table, eval_table, multimodal_table, run_ablate, run_eval, run_multimodal,
    ExperimentConfig, PromptPolicy,
};
use icrt::model::{Model, ModelConfig};
use icrt::runtime::{recipe_preset, train};
use icrt::sim::{
    default_train_tasks, file_sha256, generate_dataset, in_domain_eval_tasks, unseen_object_tasks,
    Dataset, GenerateConfig, TaskSpec,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "icrt", version, about = "In-context imitation learning on a simulated tabletop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a multi-task expert demonstration dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 48)]
        demos_per_task: usize,
        /// key=value overrides (demos_per_task, seed, max_demo_steps).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recipe preset: toy | pretrain | finetune.
        #[arg(long, default_value = "toy")]
        recipe: String,
        /// Model preset: toy | base.
        #[arg(long, default_value = "toy")]
        model: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Ablation switch: compute the loss on prompt steps too.
        #[arg(long)]
        loss_on_prompt: bool,
        /// Median-balanced per-task sampling each epoch.
        #[arg(long)]
        balanced_sampling: bool,
        /// key=value recipe overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSONL metrics output (one {step, epoch, loss, lr} per line).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Resume from a checkpoint (continues the lr schedule).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Prompted evaluation across tiers; writes a JSON report and prints a table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use k concatenated prompt demonstrations (k in 1..=3).
        #[arg(long)]
        prompts: Option<usize>,
        /// Task set: in-domain | unseen | all, or comma-separated labels.
        #[arg(long, default_value = "in-domain")]
        tasks: String,
        /// Dump per-trial episode records (ICRTDATA with scores).
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate the goal-conditioned baseline.
    BaselineGoal {
        #[arg(long)]
        dataset: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate and write a JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "toy")]
        recipe: String,
        #[arg(long, default_value = "toy")]
        model: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Multi-modal prompting experiment (route tallies).
    Multimodal {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        goal_checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 9)]
        rollouts: usize,
    },
    /// Prompt-type/count sweep for the default and +prompt-loss checkpoints.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt_loss_checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad config line '{line}' (want key=value)")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn task_set(name: &str) -> Result<Vec<TaskSpec>> {
    match name {
        "in-domain" => {
            let (pp, poke) = in_domain_eval_tasks();
            Ok(pp.into_iter().chain(poke).collect())
        }
        "unseen" => {
            let (pp, poke) = unseen_object_tasks();
            Ok(pp.into_iter().chain(poke).collect())
        }
        "all" => {
            let (pp, poke) = in_domain_eval_tasks();
            let (upp, upoke) = unseen_object_tasks();
            Ok(pp.into_iter().chain(poke).chain(upp).chain(upoke).collect())
        }
        labels => labels.split(',').map(TaskSpec::parse).collect(),
    }
}

fn init_threads() {
    if let Ok(n) = std::env::var("ICRT_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out, seed, demos_per_task, config } => {
            let mut cfg = GenerateConfig {
                tasks: default_train_tasks(),
                demos_per_task,
                seed,
                ..Default::default()
            };
            if let Some(path) = config {
                for (k, v) in parse_config_file(&path)? {
                    let bad = || Error::Config(format!("bad value '{v}' for '{k}'"));
                    match k.as_str() {
                        "demos_per_task" => cfg.demos_per_task = v.parse().map_err(|_| bad())?,
                        "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                        "max_demo_steps" => cfg.max_demo_steps = v.parse().map_err(|_| bad())?,
                        "settle_steps" => cfg.settle_steps = v.parse().map_err(|_| bad())?,
                        _ => return Err(Error::Config(format!("unknown generate key '{k}'"))),
                    }
                }
            }
            let (_, report) = generate_dataset(&cfg, &out)?;
            for (label, count) in &report.per_task {
                println!("{label}: {count} demos");
            }
            println!("expert resamples: {}", report.expert_failures);
            println!("sha256: {}", report.sha256);
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Train {
            dataset,
            out,
            recipe,
            model,
            seed,
            loss_on_prompt,
            balanced_sampling,
            config,
            metrics,
            resume,
        } => {
            let ds = Dataset::load(&dataset)?;
            let mut r = recipe_preset(&recipe)?;
            r.loss_on_prompt |= loss_on_prompt;
            r.balanced_sampling |= balanced_sampling;
            if let Some(s) = seed {
                r.seed = s;
            }
            if let Some(path) = config {
                r.apply_kv(&parse_config_file(&path)?)?;
            }
            let model_cfg = ModelConfig::preset(&model)?;
            let summary = train(&r, &model_cfg, &ds, &out, metrics.as_deref(), resume.as_deref())?;
            println!(
                "trained {} steps; loss {:.4} -> {:.4}; checkpoint {}",
                summary.steps,
                summary.first_loss,
                summary.final_loss,
                out.display()
            );
            Ok(())
        }
        Command::Eval { checkpoint, out, trials, seed, prompts, tasks, episodes, config } => {
            let model = Model::load(&checkpoint)?;
            let hash = file_sha256(&checkpoint)?;
            let mut cfg = ExperimentConfig::new(task_set(&tasks)?, trials, seed)?;
            if let Some(k) = prompts {
                if !(1..=3).contains(&k) {
                    return Err(Error::Config(format!("--prompts must be 1..=3, got {k}")));
                }
                cfg.prompt_policy = PromptPolicy::Multi(k);
            }
            if let Some(path) = config {
                for (k, v) in parse_config_file(&path)? {
                    let bad = || Error::Config(format!("bad value '{v}' for '{k}'"));
                    match k.as_str() {
                        "trials" => cfg.trials = v.parse().map_err(|_| bad())?,
                        "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                        _ => return Err(Error::Config(format!("unknown eval key '{k}'"))),
                    }
                }
            }
            cfg.record_episodes = episodes.is_some();
            let goal = model
                .weights
                .contains_key("meta.config_hash")
                .then(|| icrt::model::read_sidecar(&checkpoint))
                .transpose()?
                .map(|kv| kv.get("goal_conditioned").map(|v| v == "true").unwrap_or(false))
                .unwrap_or(false);
            let outcome = run_eval(&model, &cfg, "icrt", &hash, goal)?;
            if let (Some(path), Some(eps)) = (&episodes, outcome.episodes) {
                let mut ds = Dataset::new(cfg.tasks.iter().map(|t| t.label()).collect());
                ds.trajectories = eps;
                ds.save(path)?;
                println!("episodes written to {}", path.display());
            }
            print!("{}", eval_table(&outcome.report));
            write_json(&out, &outcome.report)?;
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::BaselineGoal {
            dataset,
            out,
            report,
            recipe,
            model,
            seed,
            trials,
            config,
            metrics,
        } => {
            let ds = Dataset::load(&dataset)?;
            let mut r = recipe_preset(&recipe)?;
            r.goal_conditioned = true;
            r.name = format!("{}-goal", r.name);
            if let Some(s) = seed {
                r.seed = s;
            }
            if let Some(path) = config {
                r.apply_kv(&parse_config_file(&path)?)?;
            }
            let model_cfg = ModelConfig::preset(&model)?;
            let summary = train(&r, &model_cfg, &ds, &out, metrics.as_deref(), None)?;
            println!(
                "goal baseline trained {} steps; loss {:.4} -> {:.4}",
                summary.steps, summary.first_loss, summary.final_loss
            );
            if let Some(report_path) = report {
                let m = Model::load(&out)?;
                let hash = file_sha256(&out)?;
                let (pp, poke) = in_domain_eval_tasks();
                let cfg =
                    ExperimentConfig::new(pp.into_iter().chain(poke).collect(), trials, r.seed)?;
                let outcome = run_eval(&m, &cfg, "goal-conditioned", &hash, true)?;
                print!("{}", eval_table(&outcome.report));
                write_json(&report_path, &outcome.report)?;
                println!("report written to {}", report_path.display());
            }
            Ok(())
        }
        Command::Multimodal { checkpoint, goal_checkpoint, out, seed, rollouts } => {
            let icrt_model = Model::load(&checkpoint)?;
            let goal_model = Model::load(&goal_checkpoint)?;
            let report = run_multimodal(&icrt_model, &goal_model, seed, rollouts)?;
            print!("{}", multimodal_table(&report));
            write_json(&out, &report)?;
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Ablate { checkpoint, prompt_loss_checkpoint, out, trials, seed } => {
            let default_model = Model::load(&checkpoint)?;
            let pl_model = Model::load(&prompt_loss_checkpoint)?;
            let (pp, poke) = in_domain_eval_tasks();
            let report = run_ablate(
                &default_model,
                &file_sha256(&checkpoint)?,
                &pl_model,
                &file_sha256(&prompt_loss_checkpoint)?,
                pp.into_iter().chain(poke).collect(),
                trials,
                seed,
            )?;
            print!("{}", ablate_table(&report));
            write_json(&out, &report)?;
            println!("report written to {}", out.display());
            Ok(())
        }
    }
}

fn main() {
    env_logger::init();
    init_threads();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
