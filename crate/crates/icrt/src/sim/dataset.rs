//! Trajectory dataset: expert episode recording and the ICRTDATA file.
//!
//! Layout (little-endian throughout):
//!   magic "ICRTDATA" | version u32 | img_h u32 | img_w u32
//!   | task count u32 | per task (len u32 + UTF-8 label)
//!   | trajectory count u32
//!   | per trajectory: task u32 | tier u32 | seed u64 | [score f32 if v2]
//!     | step count u32 | per step (side bytes, wrist bytes, 10xf32 proprio,
//!       10xf32 action)
//!
//! Version 1 is the dataset form; version 2 is the episode-record form with
//! a score per trajectory.

use super::expert::{Expert, ExpertOptions};
use super::render::IMG_SIZE;
use super::{evaluate_success, reset_scene, step, SimScene, TaskSpec};
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"ICRTDATA";

#[derive(Clone, Debug, PartialEq)]
pub struct TrajStep {
    pub side: Vec<u8>,
    pub wrist: Vec<u8>,
    pub proprio: [f32; 10],
    pub action: [f32; 10],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub task: usize,
    pub tier: u32,
    pub seed: u64,
    pub score: Option<f32>,
    pub steps: Vec<TrajStep>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub img_h: u32,
    pub img_w: u32,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(labels: Vec<String>) -> Self {
        Dataset { labels, img_h: IMG_SIZE as u32, img_w: IMG_SIZE as u32, trajectories: Vec::new() }
    }

    pub fn task_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ps = path.display().to_string();
        let io = |e| Error::io(&ps, e);
        let file = std::fs::File::create(path).map_err(|e| Error::io(&ps, e))?;
        let mut w = BufWriter::new(file);
        let version: u32 = if self.trajectories.iter().any(|t| t.score.is_some()) { 2 } else { 1 };
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&version.to_le_bytes()).map_err(io)?;
        w.write_all(&self.img_h.to_le_bytes()).map_err(io)?;
        w.write_all(&self.img_w.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.labels.len() as u32).to_le_bytes()).map_err(io)?;
        for l in &self.labels {
            w.write_all(&(l.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(l.as_bytes()).map_err(io)?;
        }
        w.write_all(&(self.trajectories.len() as u32).to_le_bytes()).map_err(io)?;
        let img_len = (self.img_h * self.img_w * 3) as usize;
        for t in &self.trajectories {
            w.write_all(&(t.task as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&t.tier.to_le_bytes()).map_err(io)?;
            w.write_all(&t.seed.to_le_bytes()).map_err(io)?;
            if version == 2 {
                w.write_all(&t.score.unwrap_or(0.0).to_le_bytes()).map_err(io)?;
            }
            w.write_all(&(t.steps.len() as u32).to_le_bytes()).map_err(io)?;
            for s in &t.steps {
                if s.side.len() != img_len || s.wrist.len() != img_len {
                    return Err(Error::format(&ps, "image size mismatch while writing"));
                }
                w.write_all(&s.side).map_err(io)?;
                w.write_all(&s.wrist).map_err(io)?;
                for v in s.proprio {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
                for v in s.action {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ps = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(&ps, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(&ps, e))?;
        if &magic != MAGIC {
            return Err(Error::format(&ps, "bad magic, not an ICRTDATA file"));
        }
        let version = read_u32(&mut r, &ps)?;
        if version != 1 && version != 2 {
            return Err(Error::format(&ps, format!("unsupported version {version}")));
        }
        let img_h = read_u32(&mut r, &ps)?;
        let img_w = read_u32(&mut r, &ps)?;
        let n_tasks = read_u32(&mut r, &ps)? as usize;
        let mut labels = Vec::with_capacity(n_tasks);
        for _ in 0..n_tasks {
            let len = read_u32(&mut r, &ps)? as usize;
            if len > 4096 {
                return Err(Error::format(&ps, "implausible label length"));
            }
            let mut b = vec![0u8; len];
            r.read_exact(&mut b).map_err(|e| Error::io(&ps, e))?;
            labels.push(
                String::from_utf8(b).map_err(|_| Error::format(&ps, "label is not UTF-8"))?,
            );
        }
        let n_traj = read_u32(&mut r, &ps)? as usize;
        let img_len = (img_h * img_w * 3) as usize;
        let mut trajectories = Vec::with_capacity(n_traj);
        for ti in 0..n_traj {
            let task = read_u32(&mut r, &ps)? as usize;
            if task >= labels.len() {
                return Err(Error::Unlabeled { index: ti, task });
            }
            let tier = read_u32(&mut r, &ps)?;
            let seed = read_u64(&mut r, &ps)?;
            let score = if version == 2 { Some(read_f32(&mut r, &ps)?) } else { None };
            let n_steps = read_u32(&mut r, &ps)? as usize;
            let mut steps = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                let mut side = vec![0u8; img_len];
                r.read_exact(&mut side).map_err(|e| Error::io(&ps, e))?;
                let mut wrist = vec![0u8; img_len];
                r.read_exact(&mut wrist).map_err(|e| Error::io(&ps, e))?;
                let mut proprio = [0f32; 10];
                for v in &mut proprio {
                    *v = read_f32(&mut r, &ps)?;
                }
                let mut action = [0f32; 10];
                for v in &mut action {
                    *v = read_f32(&mut r, &ps)?;
                }
                steps.push(TrajStep { side, wrist, proprio, action });
            }
            trajectories.push(Trajectory { task, tier, seed, score, steps });
        }
        Ok(Dataset { labels, img_h, img_w, trajectories })
    }
}

fn read_u32(r: &mut impl Read, path: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read, path: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(f32::from_le_bytes(b))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Deterministic seed mixing (splitmix64 over the parts).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x243F6A8885A308D3;
    for &p in parts {
        state = state.wrapping_add(p).wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        state = z ^ (z >> 31);
    }
    state
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub steps: Vec<TrajStep>,
    pub score: f64,
    pub final_scene: SimScene,
}

/// Roll an expert through a freshly reset scene, recording (observation,
/// action) pairs. `settle_steps` extra steps are recorded after the expert
/// reports done so trajectories end parked.
pub fn run_expert_episode(
    task: &TaskSpec,
    tier: u32,
    seed: u64,
    opts: ExpertOptions,
    max_steps: usize,
    settle_steps: usize,
) -> Result<EpisodeOutcome> {
    let mut scene = reset_scene(task, tier, seed)?;
    let mut expert = Expert::new(&scene, task, opts)?;
    let mut obs = scene.observe();
    let mut steps = Vec::new();
    let mut settle_left = settle_steps;
    loop {
        if expert.is_done(&scene) {
            if settle_left == 0 {
                break;
            }
            settle_left -= 1;
        }
        if steps.len() >= max_steps {
            break;
        }
        let a = expert.next(&scene);
        steps.push(TrajStep {
            side: obs.side,
            wrist: obs.wrist,
            proprio: obs.proprio.to_f32(),
            action: a.to_f32(),
        });
        let (s2, o2, _) = step(&scene, &a)?;
        scene = s2;
        obs = o2;
    }
    let score = evaluate_success(&scene, task);
    Ok(EpisodeOutcome { steps, score, final_scene: scene })
}

#[derive(Clone, Debug)]
pub struct GenerateConfig {
    pub tasks: Vec<TaskSpec>,
    pub demos_per_task: usize,
    pub seed: u64,
    pub max_demo_steps: usize,
    pub settle_steps: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            tasks: super::default_train_tasks(),
            demos_per_task: 48,
            seed: 0,
            max_demo_steps: 56,
            settle_steps: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenerateReport {
    pub per_task: Vec<(String, usize)>,
    pub expert_failures: usize,
    pub sha256: String,
}

/// Generate a labeled multi-task dataset of verified-successful expert
/// demonstrations. Failed expert episodes are resampled with fresh seeds and
/// counted in the report.
pub fn generate_dataset(cfg: &GenerateConfig, out: &Path) -> Result<(Dataset, GenerateReport)> {
    if cfg.demos_per_task < 4 {
        return Err(Error::Config(format!(
            "demos_per_task = {} but every task needs at least 4 trajectories to prompt itself",
            cfg.demos_per_task
        )));
    }
    let labels: Vec<String> = cfg.tasks.iter().map(|t| t.label()).collect();
    let mut dataset = Dataset::new(labels.clone());
    let mut failures = 0usize;
    for (ti, task) in cfg.tasks.iter().enumerate() {
        for d in 0..cfg.demos_per_task {
            let tier = (d % 5) as u32 + 1;
            let mut recorded = false;
            for attempt in 0..60u64 {
                let seed = mix_seed(&[cfg.seed, ti as u64, d as u64, attempt]);
                match run_expert_episode(
                    task,
                    tier,
                    seed,
                    ExpertOptions::default(),
                    cfg.max_demo_steps,
                    cfg.settle_steps,
                ) {
                    Ok(out) if out.score >= 1.0 => {
                        dataset.trajectories.push(Trajectory {
                            task: ti,
                            tier,
                            seed,
                            score: None,
                            steps: out.steps,
                        });
                        recorded = true;
                        break;
                    }
                    Ok(_) | Err(Error::PlacementFailed { .. }) => {
                        failures += 1;
                        log::debug!("expert failure on {} tier {tier}", task.label());
                    }
                    Err(e) => return Err(e),
                }
            }
            if !recorded {
                return Err(Error::Config(format!(
                    "expert could not produce a successful demo for {} tier {tier}",
                    task.label()
                )));
            }
        }
    }
    dataset.save(out)?;
    let sha256 = file_sha256(out)?;
    let per_task = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), dataset.trajectories.iter().filter(|t| t.task == i).count()))
        .collect();
    Ok((dataset, GenerateReport { per_task, expert_failures: failures, sha256 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_action, proprio_decode, ActionVec, ProprioVec};
    use crate::sim::{ColorName, Descriptor, Primitive, Shape};

    #[test]
    fn expert_episode_succeeds_and_is_bounded() {
        for task in crate::sim::default_train_tasks() {
            for tier in [1u32, 3, 5] {
                let out = run_expert_episode(
                    &task,
                    tier,
                    mix_seed(&[7, tier as u64]),
                    ExpertOptions::default(),
                    56,
                    2,
                )
                .unwrap();
                assert_eq!(out.score, 1.0, "{} tier {tier}", task.label());
                assert!(out.steps.len() <= 56);
            }
        }
    }

    #[test]
    fn dataset_round_trip_and_hash_stability() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let cfg = GenerateConfig {
            tasks: vec![
                TaskSpec::new(Primitive::Poke, Descriptor::new(ColorName::Yellow, Shape::Sphere), None)
                    .unwrap(),
            ],
            demos_per_task: 4,
            seed: 3,
            ..Default::default()
        };
        let (ds, report) = generate_dataset(&cfg, &path).unwrap();
        assert_eq!(ds.trajectories.len(), 4);
        let loaded = Dataset::load(&path).unwrap();
        assert_eq!(loaded, ds);
        // regenerate: identical bytes, identical hash
        let path2 = dir.path().join("d2.bin");
        let (_, report2) = generate_dataset(&cfg, &path2).unwrap();
        assert_eq!(report.sha256, report2.sha256);
    }

    #[test]
    fn replay_reproduces_recorded_proprio() {
        let task = TaskSpec::new(
            Primitive::PickPlace,
            Descriptor::new(ColorName::Red, Shape::Cube),
            Some(Descriptor::new(ColorName::Gray, Shape::Bowl)),
        )
        .unwrap();
        let seed = mix_seed(&[11]);
        let out =
            run_expert_episode(&task, 2, seed, ExpertOptions::default(), 56, 2).unwrap();
        assert_eq!(out.score, 1.0);
        // replay stored f32 actions through step(); recorded proprio must match
        let mut scene = crate::sim::reset_scene(&task, 2, seed).unwrap();
        for step_rec in &out.steps {
            let obs_proprio = crate::geom::proprio_encode(&scene.gripper, scene.open_frac).unwrap();
            for (a, b) in obs_proprio.to_f32().iter().zip(&step_rec.proprio) {
                assert!((a - b).abs() < 1e-4, "replay diverged: {a} vs {b}");
            }
            let act = ActionVec::from_f32(&step_rec.action);
            scene = crate::sim::step(&scene, &act).unwrap().0;
        }
        // the recorded stream also closes under pose arithmetic
        let (mut pose, _) = proprio_decode(&ProprioVec::from_f32(&out.steps[0].proprio)).unwrap();
        for s in &out.steps {
            let (p, _) = apply_action(&pose, &ActionVec::from_f32(&s.action)).unwrap();
            pose = p;
        }
        assert!(pose.translation.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn generate_rejects_fewer_than_four_demos() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerateConfig { demos_per_task: 3, ..Default::default() };
        assert!(generate_dataset(&cfg, &dir.path().join("x.bin")).is_err());
    }

    #[test]
    fn mix_seed_is_stable_and_spreads() {
        assert_eq!(mix_seed(&[1, 2, 3]), mix_seed(&[1, 2, 3]));
        assert_ne!(mix_seed(&[1, 2, 3]), mix_seed(&[1, 2, 4]));
        assert_ne!(mix_seed(&[0]), mix_seed(&[1]));
    }
}
