//! Task grouping, epoch-level trajectory packing with prompt boundaries and
//! loss masks, train-time augmentation, and action-chunk target construction.
//!
//! Packing contract: one window per task group per epoch; the window start is
//! snapped back to a trajectory start so the prompt always holds at least one
//! complete trajectory, and the loss mask has a single 0->1 transition at a
//! trajectory boundary. A (seed, epoch, group) triple fully determines the
//! output.

use crate::error::{Error, Result};
use crate::geom::{delta_actions, proprio_decode, ActionVec, ProprioVec};
use crate::sim::{mix_seed, Dataset, TrajStep, Trajectory};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const CHUNK_H: usize = 16;
pub const ACTION_DIM: usize = 10;
pub const TARGET_DIM: usize = CHUNK_H * ACTION_DIM;

#[derive(Clone, Debug)]
pub struct TaskGroup {
    pub label: String,
    pub task: usize,
    pub traj_indices: Vec<usize>,
}

/// One group per distinct label; groups smaller than 4 trajectories are
/// rejected since they cannot prompt themselves.
pub fn group_by_task(ds: &Dataset) -> Result<Vec<TaskGroup>> {
    for (i, t) in ds.trajectories.iter().enumerate() {
        if t.task >= ds.labels.len() {
            return Err(Error::Unlabeled { index: i, task: t.task });
        }
    }
    let mut groups: Vec<TaskGroup> = ds
        .labels
        .iter()
        .enumerate()
        .map(|(task, label)| TaskGroup { label: label.clone(), task, traj_indices: Vec::new() })
        .collect();
    for (i, t) in ds.trajectories.iter().enumerate() {
        groups[t.task].traj_indices.push(i);
    }
    groups.retain(|g| !g.traj_indices.is_empty());
    for g in &groups {
        if g.traj_indices.len() < 4 {
            return Err(Error::GroupTooSmall { label: g.label.clone(), count: g.traj_indices.len() });
        }
    }
    Ok(groups)
}

/// The h future-action targets at step `t`: deltas from the pose at `t` to
/// the poses at `t+1..t+h`, with the absolute gripper command carried
/// through. Beyond the trajectory end the final action repeats (index clamp),
/// so the supervised horizon stays dense.
pub fn build_chunk_targets(traj: &Trajectory, t: usize, h: usize) -> Result<Vec<ActionVec>> {
    let len = traj.steps.len();
    if t >= len {
        return Err(Error::Config(format!("step {t} out of range for trajectory of {len}")));
    }
    let (pose_t, _) = proprio_decode(&ProprioVec::from_f32(&traj.steps[t].proprio))?;
    let mut futures = Vec::with_capacity(h);
    let mut grippers = Vec::with_capacity(h);
    for j in 0..h {
        let pose_idx = (t + 1 + j).min(len - 1);
        let act_idx = (t + j).min(len - 1);
        let (p, _) = proprio_decode(&ProprioVec::from_f32(&traj.steps[pose_idx].proprio))?;
        futures.push(p);
        grippers.push(traj.steps[act_idx].action[9] as f64);
    }
    delta_actions(&pose_t, &futures, &grippers)
}

/// Precompute flattened chunk targets for every step of every trajectory.
pub fn precompute_chunk_targets(ds: &Dataset) -> Result<Vec<Vec<[f32; TARGET_DIM]>>> {
    ds.trajectories
        .iter()
        .map(|traj| {
            (0..traj.steps.len())
                .map(|t| {
                    let acts = build_chunk_targets(traj, t, CHUNK_H)?;
                    let mut flat = [0f32; TARGET_DIM];
                    for (j, a) in acts.iter().enumerate() {
                        for (k, &v) in a.0.iter().enumerate() {
                            flat[j * ACTION_DIM + k] = v as f32;
                        }
                    }
                    Ok(flat)
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PackedSequence {
    pub task: usize,
    /// (trajectory index, step index) references into the dataset.
    pub steps: Vec<(usize, usize)>,
    /// Step offsets where a new trajectory begins (0 excluded), sorted.
    pub boundaries: Vec<usize>,
    /// Steps covered by the prompt (a whole number of leading trajectories).
    pub prompt_len: usize,
    /// 0 on prompt steps, 1 on supervised steps.
    pub loss_mask: Vec<u8>,
    /// Flattened h x 10 chunk targets per step.
    pub targets: Vec<[f32; TARGET_DIM]>,
    /// Step 0 is a goal observation pseudo-step (goal-conditioned variant):
    /// its action input is replaced by a rest action and it carries no loss.
    pub goal_pseudo: bool,
}

fn pack_from_order(
    ds: &Dataset,
    targets: &[Vec<[f32; TARGET_DIM]>],
    label: &str,
    task: usize,
    order: &[usize],
    seq_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PackedSequence> {
    let lens: Vec<usize> = order.iter().map(|&i| ds.trajectories[i].steps.len()).collect();
    let max_len = *lens.iter().max().unwrap_or(&0);
    let min_len = *lens.iter().min().unwrap_or(&0);
    if min_len + 1 > seq_len {
        return Err(Error::TrajectoryTooLong {
            label: label.to_string(),
            len: min_len,
            max: seq_len - 1,
        });
    }
    if seq_len < 2 * max_len {
        return Err(Error::Config(format!(
            "sequence length {seq_len} < 2 x max trajectory length {max_len} for group '{label}'"
        )));
    }

    // cumulative start offsets in the concatenation
    let mut starts = Vec::with_capacity(order.len());
    let mut total = 0usize;
    for &l in &lens {
        starts.push(total);
        total += l;
    }

    // random window start, snapped back to the enclosing trajectory start
    let raw = if total > seq_len { rng.random_range(0..=total - seq_len) } else { 0 };
    let snapped = *starts.iter().take_while(|&&s| s <= raw).last().unwrap_or(&0);
    let window_end = (snapped + seq_len).min(total);
    let window_len = window_end - snapped;

    // boundaries and complete-trajectory ends inside the window
    let mut boundaries = Vec::new();
    let mut complete_ends = Vec::new();
    for (i, &s) in starts.iter().enumerate() {
        let end = s + lens[i];
        if s > snapped && s < window_end {
            boundaries.push(s - snapped);
        }
        if s >= snapped && end <= window_end && end - snapped < window_len {
            complete_ends.push(end - snapped);
        }
    }
    let k_max = complete_ends.len();
    debug_assert!(k_max >= 1, "window construction guarantees a complete prompt trajectory");
    let k = rng.random_range(1..=k_max.max(1));
    let prompt_len = complete_ends[k - 1];

    let mut steps = Vec::with_capacity(window_len);
    let mut flat_targets = Vec::with_capacity(window_len);
    for pos in snapped..window_end {
        // locate (traj, step) for this concatenated offset
        let ti = starts.partition_point(|&s| s <= pos) - 1;
        let traj_idx = order[ti];
        let step_idx = pos - starts[ti];
        steps.push((traj_idx, step_idx));
        flat_targets.push(targets[traj_idx][step_idx]);
    }
    let loss_mask: Vec<u8> =
        (0..window_len).map(|i| if i < prompt_len { 0 } else { 1 }).collect();

    Ok(PackedSequence {
        task,
        steps,
        boundaries,
        prompt_len,
        loss_mask,
        targets: flat_targets,
        goal_pseudo: false,
    })
}

/// Goal-conditioned packing: each sequence is exactly one trajectory with its
/// final observation/state pair prepended as a loss-masked pseudo-step.
pub fn pack_goal_epoch(
    ds: &Dataset,
    targets: &[Vec<[f32; TARGET_DIM]>],
    seed: u64,
    epoch: u64,
) -> Vec<PackedSequence> {
    let mut order: Vec<usize> = (0..ds.trajectories.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch, 0x60A1]));
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|ti| {
            let traj = &ds.trajectories[ti];
            let len = traj.steps.len();
            let mut steps = Vec::with_capacity(len + 1);
            steps.push((ti, len - 1)); // goal pseudo-step: the final observation
            steps.extend((0..len).map(|j| (ti, j)));
            let mut flat = Vec::with_capacity(len + 1);
            flat.push([0f32; TARGET_DIM]);
            flat.extend_from_slice(&targets[ti]);
            let mut loss_mask = vec![1u8; len + 1];
            loss_mask[0] = 0;
            PackedSequence {
                task: traj.task,
                steps,
                boundaries: vec![1],
                prompt_len: 1,
                loss_mask,
                targets: flat,
                goal_pseudo: true,
            }
        })
        .collect()
}

/// One packed window per group. Shuffle order, window position, and prompt
/// count are all derived from (seed, epoch, group index).
pub fn pack_epoch(
    ds: &Dataset,
    targets: &[Vec<[f32; TARGET_DIM]>],
    groups: &[TaskGroup],
    seq_len: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<PackedSequence>> {
    pack_epoch_with_plan(ds, targets, groups, None, seq_len, seed, epoch)
}

/// Like [`pack_epoch`] but with an optional per-group trajectory multiset
/// (the median-balanced co-training sampler).
pub fn pack_epoch_with_plan(
    ds: &Dataset,
    targets: &[Vec<[f32; TARGET_DIM]>],
    groups: &[TaskGroup],
    plan: Option<&[Vec<usize>]>,
    seq_len: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<PackedSequence>> {
    groups
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch, gi as u64]));
            let mut order: Vec<usize> = match plan {
                Some(p) => p[gi].clone(),
                None => g.traj_indices.clone(),
            };
            order.shuffle(&mut rng);
            pack_from_order(ds, targets, &g.label, g.task, &order, seq_len, &mut rng)
        })
        .collect()
}

/// Median-balanced epoch sampling: each group contributes exactly
/// median(group sizes) trajectories, drawn as repeated shuffled passes
/// (without replacement until the group is exhausted, then reshuffled).
pub fn balanced_epoch_plan(groups: &[TaskGroup], seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut sizes: Vec<usize> = groups.iter().map(|g| g.traj_indices.len()).collect();
    sizes.sort_unstable();
    let median = sizes[sizes.len() / 2];
    groups
        .iter()
        .enumerate()
        .map(|(gi, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, epoch, 0xBA1A, gi as u64]));
            let mut out = Vec::with_capacity(median);
            while out.len() < median {
                let mut pass = g.traj_indices.clone();
                pass.shuffle(&mut rng);
                let take = (median - out.len()).min(pass.len());
                out.extend_from_slice(&pass[..take]);
            }
            out
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig {
    pub proprio_noise_std: f64,
    pub brightness: f64,
    pub contrast: f64,
    /// Side-camera crop/scale jitter: zoom factor sampled in [1, 1+range].
    pub crop_scale_jitter: f64,
    pub action_noise_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            proprio_noise_std: 0.005,
            brightness: 0.1,
            contrast: 0.2,
            crop_scale_jitter: 0.04,
            action_noise_std: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            proprio_noise_std: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            crop_scale_jitter: 0.0,
            action_noise_std: 0.0,
        }
    }
}

fn jitter_image(img: &[u8], factor: f64, shift: f64) -> Vec<u8> {
    img.iter()
        .map(|&p| ((p as f64 - 127.5) * factor + 127.5 + shift).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn crop_scale(img: &[u8], h: usize, w: usize, scale: f64, fx: f64, fy: f64) -> Vec<u8> {
    let ch = ((h as f64 / scale).round() as usize).clamp(1, h);
    let cw = ((w as f64 / scale).round() as usize).clamp(1, w);
    let oy = ((h - ch) as f64 * fy).round() as usize;
    let ox = ((w - cw) as f64 * fx).round() as usize;
    let mut out = vec![0u8; h * w * 3];
    for r in 0..h {
        let sr = oy + (r * ch) / h;
        for c in 0..w {
            let sc = ox + (c * cw) / w;
            let src = (sr * w + sc) * 3;
            let dst = (r * w + c) * 3;
            out[dst..dst + 3].copy_from_slice(&img[src..src + 3]);
        }
    }
    out
}

/// Train-time step augmentation: brightness/contrast on both cameras, random
/// crop+scale on the side camera only, Gaussian noise on every proprio
/// coordinate except the gripper. With an all-zero config the step passes
/// through bit-identical.
pub fn augment(
    step: &TrajStep,
    img_h: usize,
    img_w: usize,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> TrajStep {
    let mut out = step.clone();
    if cfg.brightness > 0.0 || cfg.contrast > 0.0 {
        let b = if cfg.brightness > 0.0 {
            rng.random_range(-cfg.brightness..cfg.brightness) * 255.0
        } else {
            0.0
        };
        let c = if cfg.contrast > 0.0 {
            1.0 + rng.random_range(-cfg.contrast..cfg.contrast)
        } else {
            1.0
        };
        out.side = jitter_image(&out.side, c, b);
        out.wrist = jitter_image(&out.wrist, c, b);
    }
    if cfg.crop_scale_jitter > 0.0 {
        let s = 1.0 + rng.random_range(0.0..cfg.crop_scale_jitter);
        let fx: f64 = rng.random_range(0.0..1.0);
        let fy: f64 = rng.random_range(0.0..1.0);
        out.side = crop_scale(&out.side, img_h, img_w, s, fx, fy);
    }
    if cfg.proprio_noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.proprio_noise_std).expect("std is non-negative");
        for v in out.proprio.iter_mut().take(9) {
            *v += normal.sample(rng) as f32;
        }
    }
    if cfg.action_noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.action_noise_std).expect("std is non-negative");
        for v in out.action.iter_mut().take(9) {
            *v += normal.sample(rng) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_action, max_abs_diff_mat, proprio_encode, Pose};

    /// Synthetic straight-line trajectory with tiny images.
    fn synth_traj(task: usize, len: usize, seed: u64) -> Trajectory {
        let mut steps = Vec::new();
        for t in 0..len {
            let pose = Pose::from_translation([t as f64 * 0.01, 0.0, 0.05]);
            let next = Pose::from_translation([(t + 1) as f64 * 0.01, 0.0, 0.05]);
            let act = delta_actions(&pose, &[next], &[1.0]).unwrap()[0];
            steps.push(TrajStep {
                side: vec![(t % 251) as u8; 12],
                wrist: vec![(t % 13) as u8; 12],
                proprio: proprio_encode(&pose, 1.0).unwrap().to_f32(),
                action: act.to_f32(),
            });
        }
        Trajectory { task, tier: 1, seed, score: None, steps }
    }

    fn synth_dataset(tasks: usize, per_task: usize, len: usize) -> Dataset {
        let mut ds = Dataset {
            labels: (0..tasks).map(|i| format!("task_{i}")).collect(),
            img_h: 2,
            img_w: 2,
            trajectories: Vec::new(),
        };
        for task in 0..tasks {
            for d in 0..per_task {
                ds.trajectories.push(synth_traj(task, len, (task * 100 + d) as u64));
            }
        }
        ds
    }

    #[test]
    fn grouping_counts_and_small_group_rejection() {
        let ds = synth_dataset(8, 50, 10);
        let groups = group_by_task(&ds).unwrap();
        assert_eq!(groups.len(), 8);
        assert!(groups.iter().all(|g| g.traj_indices.len() == 50));

        let mut small = synth_dataset(1, 4, 10);
        small.trajectories.pop();
        let err = group_by_task(&small).unwrap_err();
        assert!(err.to_string().contains("task_0"));
    }

    #[test]
    fn single_label_dataset_is_one_group() {
        let ds = synth_dataset(1, 6, 10);
        let groups = group_by_task(&ds).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].traj_indices.len(), 6);
    }

    #[test]
    fn pack_small_group_covers_everything() {
        // 5 trajectories x 40 steps with L=512: window covers all 200 steps,
        // k ranges over 1..4
        let ds = synth_dataset(1, 5, 40);
        let targets = precompute_chunk_targets(&ds).unwrap();
        let groups = group_by_task(&ds).unwrap();
        let mut seen_k = std::collections::HashSet::new();
        for epoch in 0..50 {
            let packed = pack_epoch(&ds, &targets, &groups, 512, 9, epoch).unwrap();
            let p = &packed[0];
            assert_eq!(p.steps.len(), 200);
            assert_eq!(p.boundaries, vec![40, 80, 120, 160]);
            let k = p.boundaries.iter().filter(|&&b| b <= p.prompt_len).count()
                + usize::from(p.prompt_len > 0 && p.boundaries.is_empty());
            assert!(p.prompt_len % 40 == 0 && p.prompt_len >= 40 && p.prompt_len <= 160);
            seen_k.insert(p.prompt_len / 40);
            assert!(k >= 1);
        }
        assert!(seen_k.len() >= 3, "k should vary across epochs: {seen_k:?}");
    }

    #[test]
    fn pack_invariants_hold() {
        let ds = synth_dataset(4, 8, 25);
        let targets = precompute_chunk_targets(&ds).unwrap();
        let groups = group_by_task(&ds).unwrap();
        for epoch in 0..100 {
            for p in pack_epoch(&ds, &targets, &groups, 64, 1, epoch).unwrap() {
                // single 0->1 transition at prompt_len, which is a boundary
                assert!(p.prompt_len >= 1);
                assert!(p.loss_mask[..p.prompt_len].iter().all(|&m| m == 0));
                assert!(p.loss_mask[p.prompt_len..].iter().all(|&m| m == 1));
                assert!(p.loss_mask.iter().any(|&m| m == 1));
                assert!(p.boundaries.contains(&p.prompt_len));
                // prompt contains at least one complete trajectory
                let first_boundary = *p.boundaries.first().unwrap();
                assert!(first_boundary <= p.prompt_len);
                // all steps share the task
                assert!(p.steps.iter().all(|&(ti, _)| ds.trajectories[ti].task == p.task));
                // boundaries sorted
                assert!(p.boundaries.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn pack_orders_differ_across_epochs() {
        let ds = synth_dataset(1, 10, 20);
        let targets = precompute_chunk_targets(&ds).unwrap();
        let groups = group_by_task(&ds).unwrap();
        let orders: Vec<Vec<(usize, usize)>> = (0..10)
            .map(|e| pack_epoch(&ds, &targets, &groups, 64, 5, e).unwrap()[0].steps.clone())
            .collect();
        assert!(orders.windows(2).any(|w| w[0] != w[1]), "10 epochs produced identical packs");
    }

    #[test]
    fn pack_rejects_oversized_trajectory() {
        let ds = synth_dataset(1, 4, 40);
        let targets = precompute_chunk_targets(&ds).unwrap();
        let groups = group_by_task(&ds).unwrap();
        assert!(pack_epoch(&ds, &targets, &groups, 30, 0, 0).is_err());
    }

    #[test]
    fn pack_deterministic_per_triple() {
        let ds = synth_dataset(3, 6, 15);
        let targets = precompute_chunk_targets(&ds).unwrap();
        let groups = group_by_task(&ds).unwrap();
        let a = pack_epoch(&ds, &targets, &groups, 40, 7, 3).unwrap();
        let b = pack_epoch(&ds, &targets, &groups, 40, 7, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.steps, y.steps);
            assert_eq!(x.prompt_len, y.prompt_len);
        }
    }

    #[test]
    fn chunk_targets_padding_and_round_trip() {
        let traj = synth_traj(0, 12, 0);
        // terminal step: all 16 targets are the terminal (zero-motion) delta
        let last = build_chunk_targets(&traj, 11, CHUNK_H).unwrap();
        for a in &last {
            assert!(a.translation().iter().all(|v| v.abs() < 1e-6));
        }
        // round trip: composing target j from pose_t reproduces pose_{t+1+j}
        let t = 3;
        let acts = build_chunk_targets(&traj, t, CHUNK_H).unwrap();
        let (pose_t, _) = proprio_decode(&ProprioVec::from_f32(&traj.steps[t].proprio)).unwrap();
        for (j, a) in acts.iter().enumerate() {
            let idx = (t + 1 + j).min(traj.steps.len() - 1);
            let (want, _) =
                proprio_decode(&ProprioVec::from_f32(&traj.steps[idx].proprio)).unwrap();
            let (got, _) = apply_action(&pose_t, a).unwrap();
            assert!(max_abs_diff_mat(&got.rotation, &want.rotation) < 1e-6);
            for i in 0..3 {
                assert!((got.translation[i] - want.translation[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn static_trajectory_targets_are_rest_actions() {
        let mut traj = synth_traj(0, 5, 0);
        let first = traj.steps[0].clone();
        for s in &mut traj.steps {
            s.proprio = first.proprio;
            s.action = ActionVec::rest(1.0).to_f32();
        }
        for t in 0..5 {
            for a in build_chunk_targets(&traj, t, CHUNK_H).unwrap() {
                assert!(a.translation().iter().all(|v| v.abs() < 1e-7));
                assert_eq!(a.gripper(), 1.0);
            }
        }
    }

    #[test]
    fn augment_zero_config_is_identity() {
        let traj = synth_traj(0, 3, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&traj.steps[1], 2, 2, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(out, traj.steps[1]);
    }

    #[test]
    fn augment_brightness_bound() {
        let traj = synth_traj(0, 3, 0);
        let cfg = AugmentConfig { brightness: 0.1, contrast: 0.0, crop_scale_jitter: 0.0, proprio_noise_std: 0.0, action_noise_std: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let out = augment(&traj.steps[1], 2, 2, &cfg, &mut rng);
            for (o, i) in out.side.iter().zip(&traj.steps[1].side) {
                assert!((*o as f64 - *i as f64).abs() <= 0.1 * 255.0 + 1.0);
            }
        }
    }

    #[test]
    fn augment_noise_statistics_quick() {
        let cfg = AugmentConfig {
            proprio_noise_std: 0.005,
            brightness: 0.0,
            contrast: 0.0,
            crop_scale_jitter: 0.0,
            action_noise_std: 0.0,
        };
        let traj = synth_traj(0, 2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let mut sum = 0.0f64;
        let mut sum2 = 0.0f64;
        for _ in 0..n {
            let out = augment(&traj.steps[0], 2, 2, &cfg, &mut rng);
            let d = (out.proprio[0] - traj.steps[0].proprio[0]) as f64;
            sum += d;
            sum2 += d * d;
            // gripper coordinate is never perturbed
            assert_eq!(out.proprio[9], traj.steps[0].proprio[9]);
        }
        let mean = sum / n as f64;
        let std = (sum2 / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 5e-4, "mean {mean}");
        assert!((std - 0.005).abs() < 0.005 * 0.08, "std {std}");
    }

    #[test]
    fn balanced_plan_median_counts() {
        let mk = |task: usize, n: usize| TaskGroup {
            label: format!("t{task}"),
            task,
            traj_indices: (0..n).map(|i| task * 1000 + i).collect(),
        };
        let groups = vec![mk(0, 10), mk(1, 20), mk(2, 30)];
        let plan = balanced_epoch_plan(&groups, 1, 0);
        assert!(plan.iter().all(|p| p.len() == 20));
        // the size-10 group: 20 draws cover every element at least once
        let small: std::collections::HashSet<usize> = plan[0].iter().copied().collect();
        assert_eq!(small.len(), 10);
        // equal sizes: identity up to order
        let eq_groups = vec![mk(0, 8), mk(1, 8), mk(2, 8)];
        let plan = balanced_epoch_plan(&eq_groups, 1, 0);
        for (g, p) in eq_groups.iter().zip(&plan) {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, g.traj_indices);
        }
    }
}
