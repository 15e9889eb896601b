//! Prompted policy execution: demonstrations fill the KV cache once, then
//! the policy re-predicts a 16-action chunk every 10 executed steps
//! (receding horizon) and blends overlapping chunk predictions with
//! age-decayed weights (temporal ensembling).
//!
//! Context cost stays bounded: each prediction event appends exactly two
//! tokens (the fresh state token and the executed action token); skipped
//! steps reuse buffered chunks without touching the cache.

use crate::error::{Error, Result};
use crate::geom::{apply_action, delta_actions, proprio_decode, ActionVec, Pose};
use crate::model::{KvCache, Model, StateInput};
use crate::sim::{evaluate_success, step, Observation, SimScene, TaskSpec, TrajStep, Trajectory};
use std::collections::VecDeque;

pub const RECEDING_HORIZON: usize = 10;
pub const ENSEMBLE_M: f64 = 0.01;

struct ChunkEvent {
    step: u64,
    base_pose: Pose,
    chunk: Vec<ActionVec>,
}

pub struct PolicyState<'m> {
    model: &'m Model,
    cache: KvCache,
    prompted: bool,
    events: VecDeque<ChunkEvent>,
    t: u64,
    /// Total transformer tokens processed (prompt + events).
    pub tokens_processed: usize,
    /// Tokens processed per prediction event (the linear-cost probe).
    pub tokens_per_event: Vec<usize>,
}

impl<'m> PolicyState<'m> {
    pub fn new(model: &'m Model) -> Self {
        PolicyState {
            model,
            cache: KvCache::new(&model.cfg),
            prompted: false,
            events: VecDeque::new(),
            t: 0,
            tokens_processed: 0,
            tokens_per_event: Vec::new(),
        }
    }

    pub fn context_len(&self) -> usize {
        self.cache.len()
    }

    /// Encode demonstrations exactly as training sequences (state/action
    /// token alternation) and run them through the transformer to fill the
    /// cache. No weight updates happen at any point.
    pub fn prompt_ingest(&mut self, demos: &[&Trajectory]) -> Result<()> {
        if demos.is_empty() {
            return Err(Error::Config("prompt_ingest needs at least one demonstration".into()));
        }
        let total_steps: usize = demos.iter().map(|d| d.steps.len()).sum();
        let needed = self.cache.len() + 2 * total_steps;
        if needed > self.model.cfg.max_context {
            return Err(Error::ContextOverflow { needed, max: self.model.cfg.max_context });
        }
        let inputs: Vec<StateInput<'_>> = demos
            .iter()
            .flat_map(|d| d.steps.iter())
            .map(|s| StateInput { side: &s.side, wrist: &s.wrist, proprio: s.proprio })
            .collect();
        let state_tokens = self.model.encode_states(&inputs)?;
        let mut tokens = Vec::with_capacity(2 * total_steps);
        let mut i = 0;
        for d in demos {
            for s in &d.steps {
                tokens.push(state_tokens[i].clone());
                tokens.push(self.model.encode_action(&s.action)?);
                i += 1;
            }
        }
        self.model.forward_cached(&tokens, &mut self.cache)?;
        self.tokens_processed += tokens.len();
        self.prompted = true;
        Ok(())
    }

    /// One control step: on horizon boundaries, append the current state
    /// token, decode a fresh 16-action chunk, and append the executed action
    /// token; every call returns the temporal ensemble of all live chunk
    /// predictions for the current timestep.
    pub fn policy_step(&mut self, obs: &Observation) -> Result<ActionVec> {
        if !self.prompted {
            return Err(Error::NotPrompted);
        }
        let (current_pose, _) = proprio_decode(&obs.proprio)?;
        let chunk_h = self.model.cfg.chunk_h as u64;
        let predicting = self.t % RECEDING_HORIZON as u64 == 0;
        if predicting {
            let state_tok = self
                .model
                .encode_states(&[StateInput {
                    side: &obs.side,
                    wrist: &obs.wrist,
                    proprio: obs.proprio.to_f32(),
                }])?
                .remove(0);
            let latents = self.model.forward_cached(&[state_tok], &mut self.cache)?;
            self.tokens_processed += 1;
            let chunk = self.model.action_head(&latents[0])?;
            self.events.push_back(ChunkEvent { step: self.t, base_pose: current_pose, chunk });
            while self.events.front().is_some_and(|e| self.t - e.step >= chunk_h) {
                self.events.pop_front();
            }
        }

        // contributors: every live chunk's prediction for this timestep,
        // re-expressed as a delta from the *current* pose
        let mut entries = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let j = (self.t - e.step) as usize;
            if j >= e.chunk.len() {
                continue;
            }
            let (target_pose, gripper) = apply_action(&e.base_pose, &e.chunk[j])?;
            let rel = delta_actions(&current_pose, &[target_pose], &[gripper])?[0];
            entries.push((rel, self.t - e.step));
        }
        let action = temporal_ensemble(&entries)?;

        if predicting {
            let act_tok = self.model.encode_action(&action.to_f32())?;
            self.model.forward_cached(&[act_tok], &mut self.cache)?;
            self.tokens_processed += 1;
            self.tokens_per_event.push(2);
        }
        self.t += 1;
        Ok(action)
    }
}

/// Age-decayed blend of chunk predictions: weights proportional to
/// exp(-m * age), translation and rot6d averaged then re-orthonormalized,
/// gripper averaged.
pub fn temporal_ensemble(entries: &[(ActionVec, u64)]) -> Result<ActionVec> {
    if entries.is_empty() {
        return Err(Error::Config("temporal_ensemble needs at least one entry".into()));
    }
    let mut weights: Vec<f64> = entries.iter().map(|(_, age)| (-ENSEMBLE_M * *age as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mut blended = [0f64; 10];
    for ((a, _), w) in entries.iter().zip(&weights) {
        for (acc, &v) in blended.iter_mut().zip(&a.0) {
            *acc += w * v;
        }
    }
    // re-orthonormalize the averaged rot6d through the decode/encode pair
    let rot = crate::geom::matrix_from_rot6d(&[
        blended[3], blended[4], blended[5], blended[6], blended[7], blended[8],
    ])?;
    let r6 = crate::geom::rot6d_from_matrix(&rot)?;
    Ok(ActionVec([
        blended[0],
        blended[1],
        blended[2],
        r6[0],
        r6[1],
        r6[2],
        r6[3],
        r6[4],
        r6[5],
        blended[9].clamp(0.0, 1.0),
    ]))
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub record: Trajectory,
    pub score: f64,
    pub final_scene: SimScene,
    /// Gripper xy track, one entry per executed step (plus the start).
    pub gripper_path: Vec<[f64; 3]>,
}

/// Roll any action source through the simulator and score the episode.
pub fn rollout_fn(
    scene0: SimScene,
    task: &TaskSpec,
    mut policy: impl FnMut(&SimScene, &Observation) -> Result<ActionVec>,
    max_steps: usize,
) -> Result<EpisodeResult> {
    let mut scene = scene0;
    let mut obs = scene.observe();
    let mut steps = Vec::new();
    let mut path = vec![scene.gripper.translation];
    for _ in 0..max_steps {
        let a = policy(&scene, &obs)?;
        steps.push(TrajStep {
            side: obs.side.clone(),
            wrist: obs.wrist.clone(),
            proprio: obs.proprio.to_f32(),
            action: a.to_f32(),
        });
        let (s, o, done) = step(&scene, &a)?;
        scene = s;
        obs = o;
        path.push(scene.gripper.translation);
        if done {
            break;
        }
    }
    let score = evaluate_success(&scene, task);
    let record = Trajectory {
        task: 0,
        tier: 0,
        seed: scene.rng_seed,
        score: Some(score as f32),
        steps,
    };
    Ok(EpisodeResult { record, score, final_scene: scene, gripper_path: path })
}

/// Prompted-policy rollout: the model sees observations only.
pub fn rollout(
    scene0: SimScene,
    task: &TaskSpec,
    policy: &mut PolicyState<'_>,
    max_steps: usize,
) -> Result<EpisodeResult> {
    rollout_fn(scene0, task, |_, obs| policy.policy_step(obs), max_steps)
}
