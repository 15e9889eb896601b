//! Tiered prompted evaluation, the goal-conditioned baseline, the
//! multi-modal prompting experiment, the ablation sweeps, and report output
//! (JSON plus plain-text tables).

mod tables;

pub use tables::{ablate_table, eval_table, multimodal_table};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::runtime::{rollout, rollout_fn, PolicyState};
use crate::sim::{
    mix_seed, reset_scene, run_expert_episode, Expert, ExpertOptions, Primitive, Route, TaskSpec,
    Trajectory, EPISODE_BUDGET,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

const PROMPT_TAG: u64 = 0x9901;
const EVAL_TAG: u64 = 0xE7A1;
const TRIAL_TAG: u64 = 0x7214;
const MM_TAG: u64 = 0x3311;

pub const PROMPT_MAX_STEPS: usize = 56;
pub const PROMPT_SETTLE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptKind {
    NoDistractor,
    OneDistractor,
    /// Distractor placement for pick_place; two distractors otherwise.
    Hard,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] =
        [PromptKind::NoDistractor, PromptKind::OneDistractor, PromptKind::Hard];

    fn tier(self, primitive: Primitive) -> u32 {
        match self {
            PromptKind::NoDistractor => 1,
            PromptKind::OneDistractor => 2,
            PromptKind::Hard => {
                if primitive == Primitive::PickPlace {
                    5
                } else {
                    3
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::NoDistractor => "no-distractor",
            PromptKind::OneDistractor => "one-distractor",
            PromptKind::Hard => "distractor-placement",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptPolicy {
    /// Draw one of the three collected demonstrations per trial.
    RandomOfThree,
    Fixed(PromptKind),
    /// Concatenate k distinct demonstrations (k in 1..=3).
    Multi(usize),
}

impl PromptPolicy {
    pub fn name(&self) -> String {
        match self {
            PromptPolicy::RandomOfThree => "random-of-3".into(),
            PromptPolicy::Fixed(k) => format!("fixed:{}", k.name()),
            PromptPolicy::Multi(k) => format!("{k}-prompts"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskSpec>,
    pub tiers: Vec<u32>,
    pub trials: usize,
    pub prompt_policy: PromptPolicy,
    pub seed: u64,
    pub max_steps: usize,
    /// Keep full episode records (for the ICRTDATA-with-score dump).
    pub record_episodes: bool,
}

impl ExperimentConfig {
    pub fn new(tasks: Vec<TaskSpec>, trials: usize, seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        Ok(ExperimentConfig {
            tasks,
            tiers: (1..=5).collect(),
            trials,
            prompt_policy: PromptPolicy::RandomOfThree,
            seed,
            max_steps: EPISODE_BUDGET as usize,
            record_episodes: false,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskReport {
    pub label: String,
    /// Scores per tier (outer) and trial (inner).
    pub tier_scores: Vec<Vec<f32>>,
    pub average: f32,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrimitiveStat {
    pub mean: f32,
    pub std: f32,
}

/// Report plus (optionally) the raw episode records behind it.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// One record per trial, ordered (task, tier, trial), when requested.
    pub episodes: Option<Vec<Trajectory>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub model: String,
    pub checkpoint_hash: String,
    pub seed: u64,
    pub trials_per_tier: usize,
    pub prompt_policy: String,
    pub tasks: Vec<TaskReport>,
    pub primitives: BTreeMap<String, PrimitiveStat>,
}

impl EvalReport {
    /// Average over tiers 3..=5 scenes (two or more distractors / the
    /// distractor-placement tier): the in-context disambiguation regime.
    pub fn ambiguous_average(&self) -> f32 {
        let mut scores = Vec::new();
        for t in &self.tasks {
            for (ti, tier) in t.tier_scores.iter().enumerate() {
                if ti + 1 >= 3 {
                    scores.extend_from_slice(tier);
                }
            }
        }
        mean(&scores)
    }

    pub fn overall_average(&self) -> f32 {
        let scores: Vec<f32> =
            self.tasks.iter().flat_map(|t| t.tier_scores.iter().flatten().copied()).collect();
        mean(&scores)
    }
}

fn mean(v: &[f32]) -> f32 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f32>() / v.len() as f32
    }
}

fn std_dev(v: &[f32]) -> f32 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / v.len() as f32).sqrt()
}

/// How a trial conditions the policy.
enum Conditioning {
    /// Expert demonstration trajectories drawn per trial.
    Demos(Vec<Trajectory>),
    /// A single goal observation pseudo-trajectory.
    Goal(Trajectory),
}

/// The three prompt demonstrations collected for one task (one per kind).
fn collect_prompt_demos(task: &TaskSpec, seed: u64, task_idx: usize) -> Result<Vec<(Trajectory, u64)>> {
    PromptKind::ALL
        .iter()
        .map(|kind| {
            let tier = kind.tier(task.primitive);
            for attempt in 0..40u64 {
                let demo_seed =
                    mix_seed(&[seed, PROMPT_TAG, task_idx as u64, *kind as u64, attempt]);
                let out = run_expert_episode(
                    task,
                    tier,
                    demo_seed,
                    ExpertOptions::default(),
                    PROMPT_MAX_STEPS,
                    PROMPT_SETTLE,
                )?;
                if out.score >= 1.0 {
                    return Ok((
                        Trajectory { task: task_idx, tier, seed: demo_seed, score: None, steps: out.steps },
                        demo_seed,
                    ));
                }
            }
            Err(Error::Config(format!("could not collect a prompt demo for {}", task.label())))
        })
        .collect()
}

/// Goal observation of the eval scene's outcome: run the expert on a copy of
/// the scene and render its final state as a single pseudo-step.
fn goal_prompt_for(task: &TaskSpec, tier: u32, scene_seed: u64) -> Result<Trajectory> {
    let out = run_expert_episode(
        task,
        tier,
        scene_seed,
        ExpertOptions::default(),
        EPISODE_BUDGET as usize,
        PROMPT_SETTLE,
    )?;
    let obs = out.final_scene.observe();
    Ok(Trajectory {
        task: 0,
        tier,
        seed: scene_seed,
        score: None,
        steps: vec![crate::sim::TrajStep {
            side: obs.side,
            wrist: obs.wrist,
            proprio: obs.proprio.to_f32(),
            action: crate::geom::ActionVec::rest(0.5).to_f32(),
        }],
    })
}

struct TrialSpec<'t> {
    task_idx: usize,
    task: &'t TaskSpec,
    tier: u32,
    trial: usize,
    scene_seed: u64,
}

fn eval_seed(cfg: &ExperimentConfig, task_idx: usize, tier: u32, trial: usize) -> u64 {
    mix_seed(&[cfg.seed, EVAL_TAG, task_idx as u64, tier as u64, trial as u64])
}

/// Run the tiered, prompted evaluation protocol. Prompt demonstrations are
/// generated on seeds disjoint from every evaluation scene seed (asserted).
pub fn run_eval(
    model: &Model,
    cfg: &ExperimentConfig,
    tag: &str,
    checkpoint_hash: &str,
    goal_conditioned: bool,
) -> Result<EvalOutcome> {
    let mut prompt_sets = Vec::new();
    let mut prompt_seeds = Vec::new();
    if !goal_conditioned {
        for (ti, task) in cfg.tasks.iter().enumerate() {
            let demos = collect_prompt_demos(task, cfg.seed, ti)?;
            prompt_seeds.extend(demos.iter().map(|(_, s)| *s));
            prompt_sets.push(demos.into_iter().map(|(d, _)| d).collect::<Vec<_>>());
        }
    }

    // disjointness of prompt and evaluation seeds
    let mut trials = Vec::new();
    for (ti, task) in cfg.tasks.iter().enumerate() {
        for &tier in &cfg.tiers {
            for trial in 0..cfg.trials {
                let scene_seed = eval_seed(cfg, ti, tier, trial);
                if prompt_seeds.contains(&scene_seed) {
                    return Err(Error::SeedCollision(scene_seed));
                }
                trials.push(TrialSpec { task_idx: ti, task, tier, trial, scene_seed });
            }
        }
    }

    let scores: Vec<Result<(f64, Option<Trajectory>)>> = trials
        .par_iter()
        .map(|t| {
            let conditioning = if goal_conditioned {
                Conditioning::Goal(goal_prompt_for(t.task, t.tier, t.scene_seed)?)
            } else {
                let demos = &prompt_sets[t.task_idx];
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    cfg.seed,
                    TRIAL_TAG,
                    t.task_idx as u64,
                    t.tier as u64,
                    t.trial as u64,
                ]));
                let chosen: Vec<Trajectory> = match cfg.prompt_policy {
                    PromptPolicy::RandomOfThree => {
                        vec![demos[rng.random_range(0..demos.len())].clone()]
                    }
                    PromptPolicy::Fixed(kind) => {
                        let idx = PromptKind::ALL.iter().position(|k| *k == kind).unwrap();
                        vec![demos[idx].clone()]
                    }
                    PromptPolicy::Multi(k) => {
                        let k = k.clamp(1, demos.len());
                        let mut order: Vec<usize> = (0..demos.len()).collect();
                        for i in (1..order.len()).rev() {
                            order.swap(i, rng.random_range(0..=i));
                        }
                        order[..k].iter().map(|&i| demos[i].clone()).collect()
                    }
                };
                Conditioning::Demos(chosen)
            };
            run_trial(
                model,
                t.task,
                t.task_idx,
                t.tier,
                t.scene_seed,
                &conditioning,
                cfg.max_steps,
                cfg.record_episodes,
            )
        })
        .collect();

    let mut tasks_out: Vec<TaskReport> = cfg
        .tasks
        .iter()
        .map(|t| TaskReport {
            label: t.label(),
            tier_scores: vec![Vec::new(); cfg.tiers.len()],
            average: 0.0,
        })
        .collect();
    let mut episodes = if cfg.record_episodes { Some(Vec::new()) } else { None };
    for (spec, score) in trials.iter().zip(scores) {
        let (score, record) = score?;
        let tier_pos = cfg.tiers.iter().position(|&t| t == spec.tier).unwrap();
        tasks_out[spec.task_idx].tier_scores[tier_pos].push(score as f32);
        if let (Some(eps), Some(rec)) = (&mut episodes, record) {
            eps.push(rec);
        }
    }
    for t in &mut tasks_out {
        let flat: Vec<f32> = t.tier_scores.iter().flatten().copied().collect();
        t.average = mean(&flat);
    }

    let mut primitives = BTreeMap::new();
    for prim in [
        Primitive::PickPlace,
        Primitive::Poke,
        Primitive::Stack,
        Primitive::Push,
        Primitive::Pick,
        Primitive::OpenClose,
    ] {
        let avgs: Vec<f32> = cfg
            .tasks
            .iter()
            .zip(&tasks_out)
            .filter(|(t, _)| t.primitive == prim)
            .map(|(_, r)| r.average)
            .collect();
        if !avgs.is_empty() {
            primitives.insert(
                prim.name().to_string(),
                PrimitiveStat { mean: mean(&avgs), std: std_dev(&avgs) },
            );
        }
    }

    Ok(EvalOutcome {
        report: EvalReport {
            model: tag.to_string(),
            checkpoint_hash: checkpoint_hash.to_string(),
            seed: cfg.seed,
            trials_per_tier: cfg.trials,
            prompt_policy: cfg.prompt_policy.name(),
            tasks: tasks_out,
            primitives,
        },
        episodes,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    model: &Model,
    task: &TaskSpec,
    task_idx: usize,
    tier: u32,
    scene_seed: u64,
    conditioning: &Conditioning,
    max_steps: usize,
    record: bool,
) -> Result<(f64, Option<Trajectory>)> {
    let scene = reset_scene(task, tier, scene_seed)?;
    let mut policy = PolicyState::new(model);
    match conditioning {
        Conditioning::Demos(demos) => {
            let refs: Vec<&Trajectory> = demos.iter().collect();
            policy.prompt_ingest(&refs)?;
        }
        Conditioning::Goal(goal) => {
            policy.prompt_ingest(&[goal])?;
        }
    }
    let result = rollout(scene, task, &mut policy, max_steps)?;
    let rec = record.then(|| Trajectory {
        task: task_idx,
        tier,
        seed: scene_seed,
        score: Some(result.score as f32),
        steps: result.record.steps.clone(),
    });
    Ok((result.score, rec))
}

/// Oracle sweep: inject the scripted expert as the "policy". Ceiling check
/// for the evaluation harness itself.
pub fn run_eval_with_expert(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut tasks_out = Vec::new();
    for (ti, task) in cfg.tasks.iter().enumerate() {
        let mut tier_scores = Vec::new();
        for &tier in &cfg.tiers {
            let mut row = Vec::new();
            for trial in 0..cfg.trials {
                let seed = eval_seed(cfg, ti, tier, trial);
                let scene = reset_scene(task, tier, seed)?;
                let mut expert = Expert::new(&scene, task, ExpertOptions::default())?;
                let r = rollout_fn(scene, task, |s, _| Ok(expert.next(s)), cfg.max_steps)?;
                row.push(r.score as f32);
            }
            tier_scores.push(row);
        }
        let flat: Vec<f32> = tier_scores.iter().flatten().copied().collect();
        tasks_out.push(TaskReport { label: task.label(), tier_scores, average: mean(&flat) });
    }
    Ok(EvalReport {
        model: "expert-oracle".into(),
        checkpoint_hash: String::new(),
        seed: cfg.seed,
        trials_per_tier: cfg.trials,
        prompt_policy: "expert".into(),
        tasks: tasks_out,
        primitives: BTreeMap::new(),
    })
}

/// Chance-level oracle: a fixed-seed random-action policy.
pub fn run_eval_with_random(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut tasks_out = Vec::new();
    for (ti, task) in cfg.tasks.iter().enumerate() {
        let mut tier_scores = Vec::new();
        for &tier in &cfg.tiers {
            let mut row = Vec::new();
            for trial in 0..cfg.trials {
                let seed = eval_seed(cfg, ti, tier, trial);
                let scene = reset_scene(task, tier, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xFA11]));
                let r = rollout_fn(
                    scene,
                    task,
                    |_, _| {
                        let mut a = crate::geom::ActionVec::rest(rng.random_range(0.0..1.0));
                        for k in 0..3 {
                            a.0[k] = rng.random_range(-0.03..0.03);
                        }
                        Ok(a)
                    },
                    cfg.max_steps,
                )?;
                row.push(r.score as f32);
            }
            tier_scores.push(row);
        }
        let flat: Vec<f32> = tier_scores.iter().flatten().copied().collect();
        tasks_out.push(TaskReport { label: task.label(), tier_scores, average: mean(&flat) });
    }
    Ok(EvalReport {
        model: "random-policy".into(),
        checkpoint_hash: String::new(),
        seed: cfg.seed,
        trials_per_tier: cfg.trials,
        prompt_policy: "random".into(),
        tasks: tasks_out,
        primitives: BTreeMap::new(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiModalReport {
    /// condition name -> [left, middle, right] tallies.
    pub tallies: Vec<(String, [usize; 3])>,
    pub rollouts_per_condition: usize,
}

/// Classify a gripper track by the first waypoint disk (radius 3 cm) it
/// enters: 0 = left, 1 = middle (neither), 2 = right.
pub fn classify_route(path: &[[f64; 3]], waypoints: &[[f64; 3]; 2]) -> usize {
    for p in path {
        for (i, w) in waypoints.iter().enumerate() {
            let d = ((p[0] - w[0]).powi(2) + (p[1] - w[1]).powi(2)).sqrt();
            if d <= 0.03 {
                return if i == 0 { 0 } else { 2 };
            }
        }
    }
    1
}

fn two_mode_task() -> TaskSpec {
    crate::sim::default_train_tasks()
        .into_iter()
        .find(|t| t.waypoints)
        .expect("the default task set contains the two-mode task")
}

/// The multi-modal prompting experiment: 9 rollouts per condition
/// {goal-only, prompt-left, prompt-right}, routes tallied by waypoint-region
/// crossing.
pub fn run_multimodal(
    icrt: &Model,
    goal_model: &Model,
    seed: u64,
    rollouts: usize,
) -> Result<MultiModalReport> {
    let task = two_mode_task();
    let mut tallies = Vec::new();

    // route-forced prompt demos
    let demo_for = |route: Route| -> Result<Trajectory> {
        for attempt in 0..40u64 {
            let demo_seed = mix_seed(&[seed, MM_TAG, PROMPT_TAG, route as u64, attempt]);
            let out = run_expert_episode(
                &task,
                1,
                demo_seed,
                ExpertOptions { route: Some(route) },
                PROMPT_MAX_STEPS,
                PROMPT_SETTLE,
            )?;
            if out.score >= 1.0 {
                return Ok(Trajectory { task: 0, tier: 1, seed: demo_seed, score: None, steps: out.steps });
            }
        }
        Err(Error::Config("could not collect a route-forced prompt demo".into()))
    };

    let run_condition = |name: &str,
                         model: &Model,
                         prompt: &(dyn Fn(u64) -> Result<Trajectory> + Sync)|
     -> Result<(String, [usize; 3])> {
        let results: Vec<Result<usize>> = (0..rollouts)
            .into_par_iter()
            .map(|i| {
                let scene_seed = mix_seed(&[seed, MM_TAG, EVAL_TAG, i as u64]);
                let scene = reset_scene(&task, 1, scene_seed)?;
                let waypoints = scene.waypoints.expect("two-mode scene has waypoints");
                let mut policy = PolicyState::new(model);
                let p = prompt(scene_seed)?;
                policy.prompt_ingest(&[&p])?;
                let r = rollout(scene, &task, &mut policy, EPISODE_BUDGET as usize)?;
                Ok(classify_route(&r.gripper_path, &waypoints))
            })
            .collect();
        let mut tally = [0usize; 3];
        for r in results {
            tally[r?] += 1;
        }
        Ok((name.to_string(), tally))
    };

    let goal_cond = |scene_seed: u64| goal_prompt_for(&task, 1, scene_seed);
    tallies.push(run_condition("goal-only", goal_model, &goal_cond)?);
    let left = demo_for(Route::Left)?;
    let left_fn = move |_| Ok(left.clone());
    tallies.push(run_condition("prompt-left", icrt, &left_fn)?);
    let right = demo_for(Route::Right)?;
    let right_fn = move |_| Ok(right.clone());
    tallies.push(run_condition("prompt-right", icrt, &right_fn)?);

    Ok(MultiModalReport { tallies, rollouts_per_condition: rollouts })
}

/// Expert-injected multimodal closure check: forced-left experts must
/// classify left on every rollout.
pub fn multimodal_expert_closure(seed: u64, rollouts: usize) -> Result<[usize; 3]> {
    let task = two_mode_task();
    let mut tally = [0usize; 3];
    for i in 0..rollouts {
        let scene_seed = mix_seed(&[seed, MM_TAG, EVAL_TAG, i as u64]);
        let scene = reset_scene(&task, 1, scene_seed)?;
        let waypoints = scene.waypoints.expect("two-mode scene has waypoints");
        let mut expert = Expert::new(&scene, &task, ExpertOptions { route: Some(Route::Left) })?;
        let r = rollout_fn(scene, &task, |s, _| Ok(expert.next(s)), EPISODE_BUDGET as usize)?;
        tally[classify_route(&r.gripper_path, &waypoints)] += 1;
    }
    Ok(tally)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblateReport {
    /// (model tag, prompt policy) -> full eval report.
    pub runs: Vec<EvalReport>,
    pub ambiguous_default: f32,
    pub ambiguous_prompt_loss: f32,
}

/// Side-by-side sweep over prompt types and counts for the default and
/// +prompt-loss checkpoints, under paired seeds.
pub fn run_ablate(
    default_model: &Model,
    default_hash: &str,
    prompt_loss_model: &Model,
    prompt_loss_hash: &str,
    tasks: Vec<TaskSpec>,
    trials: usize,
    seed: u64,
) -> Result<AblateReport> {
    let policies = vec![
        PromptPolicy::Fixed(PromptKind::NoDistractor),
        PromptPolicy::Fixed(PromptKind::OneDistractor),
        PromptPolicy::Fixed(PromptKind::Hard),
        PromptPolicy::Multi(1),
        PromptPolicy::Multi(2),
        PromptPolicy::Multi(3),
    ];
    let mut runs = Vec::new();
    for (tag, model, hash) in [
        ("default", default_model, default_hash),
        ("prompt-loss", prompt_loss_model, prompt_loss_hash),
    ] {
        for policy in &policies {
            let mut cfg = ExperimentConfig::new(tasks.clone(), trials, seed)?;
            cfg.prompt_policy = *policy;
            runs.push(run_eval(model, &cfg, tag, hash, false)?.report);
        }
    }
    // ambiguous-scene comparison under the random-of-3 prompt draw
    let mut cfg = ExperimentConfig::new(tasks, trials, seed)?;
    cfg.prompt_policy = PromptPolicy::RandomOfThree;
    let d = run_eval(default_model, &cfg, "default", default_hash, false)?.report;
    let p = run_eval(prompt_loss_model, &cfg, "prompt-loss", prompt_loss_hash, false)?.report;
    let report = AblateReport {
        runs,
        ambiguous_default: d.ambiguous_average(),
        ambiguous_prompt_loss: p.ambiguous_average(),
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::in_domain_eval_tasks;

    #[test]
    fn expert_oracle_hits_ceiling() {
        let (pp, poke) = in_domain_eval_tasks();
        let tasks: Vec<TaskSpec> = pp.into_iter().take(1).chain(poke.into_iter().take(1)).collect();
        let cfg = ExperimentConfig::new(tasks, 2, 99).unwrap();
        let report = run_eval_with_expert(&cfg).unwrap();
        for t in &report.tasks {
            assert_eq!(t.average, 1.0, "{}: expert should max every cell", t.label);
        }
    }

    #[test]
    fn random_policy_is_chance_level() {
        let (pp, _) = in_domain_eval_tasks();
        let cfg = ExperimentConfig::new(vec![pp[0]], 10, 7).unwrap();
        let report = run_eval_with_random(&cfg).unwrap();
        assert!(report.overall_average() <= 0.10, "random policy scored {}", report.overall_average());
    }

    #[test]
    fn report_averages_match_raw_scores() {
        let (pp, _) = in_domain_eval_tasks();
        let cfg = ExperimentConfig::new(vec![pp[0], pp[1]], 3, 5).unwrap();
        let report = run_eval_with_expert(&cfg).unwrap();
        for t in &report.tasks {
            let flat: Vec<f32> = t.tier_scores.iter().flatten().copied().collect();
            let recomputed = flat.iter().sum::<f32>() / flat.len() as f32;
            assert_eq!(t.average, recomputed);
        }
    }

    #[test]
    fn trials_must_be_positive() {
        assert!(ExperimentConfig::new(vec![], 0, 1).is_err());
    }

    #[test]
    fn expert_left_classifies_left_every_time() {
        let tally = multimodal_expert_closure(3, 9).unwrap();
        assert_eq!(tally, [9, 0, 0]);
    }

    #[test]
    fn route_classifier_middle_when_no_region_crossed() {
        let wp = [[-0.08, 0.0, 0.0], [0.08, 0.0, 0.0]];
        let path = vec![[0.0, -0.1, 0.1], [0.0, 0.0, 0.1], [0.0, 0.1, 0.1]];
        assert_eq!(classify_route(&path, &wp), 1);
        let left = vec![[-0.08, -0.005, 0.1]];
        assert_eq!(classify_route(&left, &wp), 0);
    }

    #[test]
    fn eval_seeds_disjoint_from_prompt_seeds() {
        // structural: the tag-mixed seed spaces never collide on these inputs
        let (pp, _) = in_domain_eval_tasks();
        let cfg = ExperimentConfig::new(vec![pp[0]], 3, 11).unwrap();
        let demos = collect_prompt_demos(&cfg.tasks[0], cfg.seed, 0).unwrap();
        for (_, ps) in &demos {
            for tier in 1..=5 {
                for trial in 0..3 {
                    assert_ne!(*ps, eval_seed(&cfg, 0, tier, trial));
                }
            }
        }
    }
}
