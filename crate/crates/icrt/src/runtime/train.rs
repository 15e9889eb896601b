//! The training loop: pack -> augment -> forward -> masked L1 -> AdamW with
//! warmup+cosine, logging one JSON line per optimizer step.

use crate::data::{
    augment, balanced_epoch_plan, group_by_task, pack_epoch_with_plan, precompute_chunk_targets,
    AugmentConfig, PackedSequence, TARGET_DIM,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{
    build_sequence_loss, config_hash, config_hash_tensor, init_weights, insert_params, patchify,
    write_sidecar, ModelConfig,
};
use crate::optim::{AdamWConfig, OptimizerState, ParamMap};
use crate::sim::{mix_seed, Dataset};
use crate::tensor::Tensor;
use crate::{checkpoint, model::SeqItem};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct TrainRecipe {
    pub name: String,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub augment: AugmentConfig,
    pub seq_len: usize,
    pub loss_on_prompt: bool,
    pub balanced_sampling: bool,
    pub state_loss_weight: f64,
    pub seed: u64,
    pub save_every: Option<usize>,
    /// Goal-conditioned baseline packing: single-trajectory sequences with a
    /// prepended goal pseudo-step.
    pub goal_conditioned: bool,
}

impl TrainRecipe {
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("recipe".into(), self.name.clone()),
            ("base_lr".into(), self.base_lr.to_string()),
            ("warmup_epochs".into(), self.warmup_epochs.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("seq_len".into(), self.seq_len.to_string()),
            ("loss_on_prompt".into(), self.loss_on_prompt.to_string()),
            ("balanced_sampling".into(), self.balanced_sampling.to_string()),
            ("state_loss_weight".into(), self.state_loss_weight.to_string()),
            ("train_seed".into(), self.seed.to_string()),
            ("goal_conditioned".into(), self.goal_conditioned.to_string()),
            ("proprio_noise_std".into(), self.augment.proprio_noise_std.to_string()),
            ("brightness".into(), self.augment.brightness.to_string()),
            ("contrast".into(), self.augment.contrast.to_string()),
            ("crop_scale_jitter".into(), self.augment.crop_scale_jitter.to_string()),
            ("action_noise_std".into(), self.augment.action_noise_std.to_string()),
        ];
        kv.sort();
        kv
    }

    /// Apply key=value overrides from a config file or the CLI.
    pub fn apply_kv(&mut self, kv: &std::collections::BTreeMap<String, String>) -> Result<()> {
        for (k, v) in kv {
            let bad = || Error::Config(format!("bad value '{v}' for recipe key '{k}'"));
            match k.as_str() {
                "base_lr" => self.base_lr = v.parse().map_err(|_| bad())?,
                "warmup_epochs" => self.warmup_epochs = v.parse().map_err(|_| bad())?,
                "epochs" => self.epochs = v.parse().map_err(|_| bad())?,
                "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
                "weight_decay" => self.weight_decay = v.parse().map_err(|_| bad())?,
                "seq_len" => self.seq_len = v.parse().map_err(|_| bad())?,
                "loss_on_prompt" => self.loss_on_prompt = v.parse().map_err(|_| bad())?,
                "balanced_sampling" => self.balanced_sampling = v.parse().map_err(|_| bad())?,
                "state_loss_weight" => self.state_loss_weight = v.parse().map_err(|_| bad())?,
                "train_seed" | "seed" => self.seed = v.parse().map_err(|_| bad())?,
                "goal_conditioned" => self.goal_conditioned = v.parse().map_err(|_| bad())?,
                "save_every" => self.save_every = Some(v.parse().map_err(|_| bad())?),
                "proprio_noise_std" => self.augment.proprio_noise_std = v.parse().map_err(|_| bad())?,
                "brightness" => self.augment.brightness = v.parse().map_err(|_| bad())?,
                "contrast" => self.augment.contrast = v.parse().map_err(|_| bad())?,
                "crop_scale_jitter" => self.augment.crop_scale_jitter = v.parse().map_err(|_| bad())?,
                "action_noise_std" => self.augment.action_noise_std = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown recipe key '{k}'"))),
            }
        }
        Ok(())
    }
}

/// Named hyperparameter presets. `pretrain` and `finetune` mirror the
/// reference tables; `toy` is the acceptance-scale recipe.
pub fn recipe_preset(name: &str) -> Result<TrainRecipe> {
    let base = TrainRecipe {
        name: name.to_string(),
        base_lr: 1e-3,
        warmup_epochs: 0.5,
        epochs: 4,
        batch_size: 64,
        weight_decay: 0.05,
        augment: AugmentConfig::default(),
        seq_len: 512,
        loss_on_prompt: false,
        balanced_sampling: false,
        state_loss_weight: 0.0,
        seed: 0,
        save_every: None,
        goal_conditioned: false,
    };
    match name {
        "pretrain" => Ok(base),
        "finetune" => Ok(TrainRecipe {
            base_lr: 5e-4,
            warmup_epochs: 1.25,
            epochs: 125,
            weight_decay: 0.01,
            ..base
        }),
        "toy" => Ok(TrainRecipe {
            base_lr: 4e-4,
            warmup_epochs: 40.0,
            epochs: 1000,
            batch_size: 4,
            weight_decay: 0.05,
            seq_len: 112,
            ..base
        }),
        _ => Err(Error::Config(format!("unknown recipe '{name}'"))),
    }
}

/// Materialize one packed window as dense tensors, applying train-time
/// augmentation per step.
pub fn build_seq_item(
    ds: &Dataset,
    packed: &PackedSequence,
    cfg: &ModelConfig,
    aug: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SeqItem> {
    let n = packed.steps.len();
    let np = cfg.num_patches();
    let pd = cfg.patch_dim();
    let mut side = Tensor::zeros(&[n, np, pd]);
    let mut wrist = Tensor::zeros(&[n, np, pd]);
    let mut proprio = Tensor::zeros(&[n, cfg.proprio_dim]);
    let mut actions = Tensor::zeros(&[n, cfg.action_dim]);
    let mut targets = Tensor::zeros(&[n, TARGET_DIM]);
    let mut next_proprio = Tensor::zeros(&[n, cfg.proprio_dim]);
    for (i, &(ti, si)) in packed.steps.iter().enumerate() {
        let traj = &ds.trajectories[ti];
        let step = augment(&traj.steps[si], ds.img_h as usize, ds.img_w as usize, aug, rng);
        let sp = patchify(&step.side, cfg.image_size, cfg.patch);
        side.data_mut()[i * np * pd..(i + 1) * np * pd].copy_from_slice(sp.data());
        let wp = patchify(&step.wrist, cfg.image_size, cfg.patch);
        wrist.data_mut()[i * np * pd..(i + 1) * np * pd].copy_from_slice(wp.data());
        proprio.data_mut()[i * 10..(i + 1) * 10].copy_from_slice(&step.proprio);
        let action = if packed.goal_pseudo && i == 0 {
            crate::geom::ActionVec::rest(0.5).to_f32()
        } else {
            step.action
        };
        actions.data_mut()[i * 10..(i + 1) * 10].copy_from_slice(&action);
        targets.data_mut()[i * TARGET_DIM..(i + 1) * TARGET_DIM]
            .copy_from_slice(&packed.targets[i]);
        let next = (si + 1).min(traj.steps.len() - 1);
        next_proprio.data_mut()[i * 10..(i + 1) * 10]
            .copy_from_slice(&traj.steps[next].proprio);
    }
    Ok(SeqItem {
        n,
        side_patches: side,
        wrist_patches: wrist,
        proprio,
        actions_in: actions,
        targets,
        next_proprio,
        loss_mask: packed.loss_mask.clone(),
    })
}

fn member_pass(
    weights: &ParamMap,
    cfg: &ModelConfig,
    item: &SeqItem,
    loss_on_prompt: bool,
    state_loss_weight: f64,
) -> Result<(f64, ParamMap)> {
    let mut g = Graph::<f32>::new();
    let p = insert_params(&mut g, weights, cfg.freeze_vision);
    let built = build_sequence_loss(&mut g, &p, cfg, item, loss_on_prompt, state_loss_weight)?;
    let loss = g.value(built.loss).scalar_value() as f64;
    let mut grads = g.backward(built.loss)?;
    let map = p
        .ids
        .iter()
        .map(|(k, &id)| (k.clone(), grads.take_or_zeros(id, weights[k].shape())))
        .collect();
    Ok((loss, map))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

fn save_checkpoint(
    path: &Path,
    weights: &ParamMap,
    opt: &OptimizerState,
    cfg: &ModelConfig,
    extra_kv: &[(String, String)],
) -> Result<()> {
    let mut entries = weights.clone();
    entries.retain(|k, _| !k.starts_with("opt.") && !k.starts_with("meta."));
    entries.extend(opt.to_entries());
    entries.insert("meta.config_hash".into(), config_hash_tensor(&config_hash(cfg, extra_kv)));
    checkpoint::save(path, &entries)?;
    write_sidecar(path, cfg, extra_kv)
}

/// Train on a labeled dataset; writes the checkpoint (with optimizer state
/// embedded), a sidecar config, and optional JSONL metrics.
pub fn train(
    recipe: &TrainRecipe,
    model_cfg: &ModelConfig,
    dataset: &Dataset,
    out_ckpt: &Path,
    metrics_path: Option<&Path>,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    model_cfg.validate()?;
    let groups = group_by_task(dataset)?;
    let targets = precompute_chunk_targets(dataset)?;
    let n_seqs = if recipe.goal_conditioned { dataset.trajectories.len() } else { groups.len() };
    let steps_per_epoch = n_seqs.div_ceil(recipe.batch_size).max(1);
    let total_steps = recipe.epochs * steps_per_epoch;
    let warmup = ((recipe.warmup_epochs * steps_per_epoch as f64).round() as usize)
        .min(total_steps.saturating_sub(1));
    let schedule = crate::optim::LrSchedule::new(recipe.base_lr, warmup, total_steps, 0.0)?;
    let extra_kv = recipe.to_kv();

    let (mut weights, mut opt) = match resume {
        Some(path) => {
            let entries = checkpoint::load(path)?;
            let opt = OptimizerState::from_entries(
                AdamWConfig { lr: recipe.base_lr, weight_decay: recipe.weight_decay, ..Default::default() },
                &entries,
            );
            let mut w = entries;
            w.retain(|k, _| !k.starts_with("opt.") && !k.starts_with("meta."));
            (w, opt)
        }
        None => (
            init_weights(model_cfg, recipe.seed)?,
            OptimizerState::new(AdamWConfig {
                lr: recipe.base_lr,
                weight_decay: recipe.weight_decay,
                ..Default::default()
            }),
        ),
    };

    let mut metrics = match metrics_path {
        Some(p) => Some(std::io::BufWriter::new(
            std::fs::File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?,
        )),
        None => None,
    };

    let mut global_step = opt.t as usize;
    let start_epoch = global_step / steps_per_epoch;
    let mut losses = Vec::new();

    for epoch in start_epoch..recipe.epochs {
        let mut packed = if recipe.goal_conditioned {
            crate::data::pack_goal_epoch(dataset, &targets, recipe.seed, epoch as u64)
        } else {
            let plan = if recipe.balanced_sampling {
                Some(balanced_epoch_plan(&groups, recipe.seed, epoch as u64))
            } else {
                None
            };
            pack_epoch_with_plan(
                dataset,
                &targets,
                &groups,
                plan.as_deref(),
                recipe.seq_len,
                recipe.seed,
                epoch as u64,
            )?
        };
        let mut order_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[recipe.seed, epoch as u64, 0x0DDE]));
        packed.shuffle(&mut order_rng);

        for (bi, batch) in packed.chunks(recipe.batch_size).enumerate() {
            let results: Vec<Result<(f64, ParamMap)>> = batch
                .par_iter()
                .enumerate()
                .map(|(mi, seq)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                        recipe.seed,
                        epoch as u64,
                        bi as u64,
                        mi as u64,
                        0xA6,
                    ]));
                    let item = build_seq_item(dataset, seq, model_cfg, &recipe.augment, &mut rng)?;
                    member_pass(&weights, model_cfg, &item, recipe.loss_on_prompt, recipe.state_loss_weight)
                })
                .collect();

            let mut mean_loss = 0.0;
            let mut grad_sum: Option<ParamMap> = None;
            let m = results.len();
            for r in results {
                let (loss, grads) = r?;
                mean_loss += loss / m as f64;
                match &mut grad_sum {
                    None => grad_sum = Some(grads),
                    Some(acc) => {
                        for (k, g) in grads {
                            let a = acc.get_mut(&k).expect("same parameter set");
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = grad_sum.expect("non-empty batch");
            let inv_m = 1.0 / m as f32;
            for g in grads.values_mut() {
                for v in g.data_mut() {
                    *v *= inv_m;
                }
            }

            if !mean_loss.is_finite() {
                return Err(Error::TrainAborted {
                    step: global_step,
                    reason: "non-finite loss".into(),
                });
            }

            opt.cfg.lr = schedule.lr_at(global_step);
            if model_cfg.freeze_vision {
                let mut trainable: ParamMap =
                    weights.iter().filter(|(k, _)| !k.starts_with("vis.")).map(|(k, v)| (k.clone(), v.clone())).collect();
                grads.retain(|k, _| !k.starts_with("vis."));
                opt.step(&mut trainable, &grads)?;
                for (k, v) in trainable {
                    weights.insert(k, v);
                }
            } else {
                opt.step(&mut weights, &grads)?;
            }
            global_step += 1;
            losses.push(mean_loss);

            if let Some(w) = &mut metrics {
                let line = serde_json::json!({
                    "step": global_step,
                    "epoch": epoch,
                    "loss": mean_loss,
                    "lr": opt.cfg.lr,
                });
                writeln!(w, "{line}").map_err(|e| Error::io("metrics file", e))?;
            }
            if let Some(every) = recipe.save_every {
                if global_step % every == 0 {
                    save_checkpoint(out_ckpt, &weights, &opt, model_cfg, &extra_kv)?;
                }
            }
        }
    }

    if let Some(w) = &mut metrics {
        w.flush().map_err(|e| Error::io("metrics file", e))?;
    }
    save_checkpoint(out_ckpt, &weights, &opt, model_cfg, &extra_kv)?;
    Ok(TrainSummary {
        steps: global_step,
        first_loss: losses.first().copied().unwrap_or(f64::NAN),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, ColorName, Descriptor, GenerateConfig, Primitive, Shape, TaskSpec};

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.layers = 2;
        cfg.dim = 32;
        cfg.heads = 2;
        cfg.vision_dim = 16;
        cfg.vision_heads = 2;
        cfg
    }

    fn tiny_dataset(dir: &Path) -> Dataset {
        let cfg = GenerateConfig {
            tasks: vec![
                TaskSpec::new(Primitive::Poke, Descriptor::new(ColorName::Yellow, Shape::Sphere), None)
                    .unwrap(),
            ],
            demos_per_task: 4,
            seed: 5,
            ..Default::default()
        };
        generate_dataset(&cfg, &dir.join("d.bin")).unwrap().0
    }

    fn quick_recipe(steps_epochs: usize) -> TrainRecipe {
        TrainRecipe {
            name: "test".into(),
            base_lr: 3e-4,
            warmup_epochs: 1.0,
            epochs: steps_epochs,
            batch_size: 1,
            weight_decay: 0.01,
            augment: AugmentConfig::disabled(),
            seq_len: 120,
            loss_on_prompt: false,
            balanced_sampling: false,
            state_loss_weight: 0.0,
            seed: 7,
            save_every: None,
            goal_conditioned: false,
        }
    }

    #[test]
    fn overfit_two_trajectories_halves_loss() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny_dataset(dir.path());
        ds.trajectories.truncate(4);
        let recipe = quick_recipe(200);
        let cfg = tiny_cfg();
        let out = dir.path().join("w.ckpt");
        let summary = train(&recipe, &cfg, &ds, &out, None, None).unwrap();
        let early: f64 = summary.losses[..5].iter().sum::<f64>() / 5.0;
        let late: f64 =
            summary.losses[summary.losses.len() - 5..].iter().sum::<f64>() / 5.0;
        assert!(
            late < 0.5 * early,
            "memorization should halve the loss: early {early:.4} late {late:.4}"
        );
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let cfg = tiny_cfg();
        let run = |tag: &str| {
            let out = dir.path().join(format!("{tag}.ckpt"));
            let mut recipe = quick_recipe(3);
            recipe.augment = AugmentConfig::default();
            train(&recipe, &cfg, &ds, &out, None, None).unwrap().losses
        };
        let a = run("a");
        let b = run("b");
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn loss_on_prompt_changes_first_gradient() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let cfg = tiny_cfg();
        let run = |flag: bool| {
            let out = dir.path().join(format!("p{flag}.ckpt"));
            let mut recipe = quick_recipe(1);
            recipe.loss_on_prompt = flag;
            train(&recipe, &cfg, &ds, &out, None, None).unwrap();
            checkpoint::load(&out).unwrap()
        };
        let a = run(false);
        let b = run(true);
        assert_ne!(a["fuse.w"], b["fuse.w"], "prompt-loss flag must change step-1 updates");
    }

    #[test]
    fn resume_continues_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let cfg = tiny_cfg();
        let out = dir.path().join("w.ckpt");
        let mut recipe = quick_recipe(4);
        recipe.epochs = 2;
        train(&recipe, &cfg, &ds, &out, None, None).unwrap();
        recipe.epochs = 4;
        let resumed = train(&recipe, &cfg, &ds, &out, None, Some(&out)).unwrap();
        // resumed run continues at the saved step count
        assert_eq!(resumed.steps, 4);
        let entries = checkpoint::load(&out).unwrap();
        assert_eq!(entries["opt.t"].data()[0], 4.0);
    }

    #[test]
    fn metrics_file_is_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let cfg = tiny_cfg();
        let out = dir.path().join("w.ckpt");
        let metrics = dir.path().join("m.jsonl");
        train(&quick_recipe(2), &cfg, &ds, &out, Some(&metrics), None).unwrap();
        let text = std::fs::read_to_string(&metrics).unwrap();
        let mut steps = Vec::new();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["loss"].is_number() && v["lr"].is_number() && v["epoch"].is_number());
            steps.push(v["step"].as_u64().unwrap());
        }
        assert_eq!(steps, vec![1, 2]);
    }
}
