use icrt::data::AugmentConfig;
use icrt::model::{Model, ModelConfig};
use icrt::runtime::{rollout, train, PolicyState, TrainRecipe};
use icrt::sim::*;
use std::path::Path;

fn main() {
    let ds_path = std::env::args().nth(1).unwrap();
    let full = Dataset::load(Path::new(&ds_path)).unwrap();
    // keep one poke task with 6 trajectories
    let task_label = "poke:yellow_sphere";
    let ti = full.task_index(task_label).unwrap();
    let mut ds = Dataset::new(vec![task_label.to_string()]);
    ds.trajectories = full
        .trajectories.iter().filter(|t| t.task == ti).take(6)
        .map(|t| Trajectory { task: 0, ..t.clone() }).collect();
    println!("overfit set: {} trajs, lens {:?}", ds.trajectories.len(),
        ds.trajectories.iter().map(|t| t.steps.len()).collect::<Vec<_>>());

    let recipe = TrainRecipe {
        name: "overfit".into(), base_lr: 6e-4, warmup_epochs: 20.0, epochs: 500,
        batch_size: 1, weight_decay: 0.0, augment: AugmentConfig::disabled(),
        seq_len: 112, loss_on_prompt: false, balanced_sampling: false,
        state_loss_weight: 0.0, seed: 1, save_every: None, goal_conditioned: false,
    };
    let cfg = ModelConfig::toy();
    let out = Path::new("/root/scratch/overfit.ckpt");
    let s = train(&recipe, &cfg, &ds, out, None, None).unwrap();
    let tail: f64 = s.losses[s.losses.len()-10..].iter().sum::<f64>() / 10.0;
    println!("loss first {:.4} -> tail10 {:.4} over {} steps", s.first_loss, tail, s.steps);

    let model = Model::load(out).unwrap();
    let task = TaskSpec::parse(task_label).unwrap();
    // in-sample: rollout on the SAME scene as a training trajectory, prompted by another
    let t0 = &ds.trajectories[0];
    let t1 = &ds.trajectories[1];
    for (name, scene_seed, scene_tier) in [("in-sample", t1.seed, t1.tier), ("fresh", 987_654, 2)] {
        let mut policy = PolicyState::new(&model);
        policy.prompt_ingest(&[t0]).unwrap();
        let scene = reset_scene(&task, scene_tier, scene_seed).unwrap();
        let r = rollout(scene, &task, &mut policy, 120).unwrap();
        let path: Vec<String> = r.gripper_path.iter().step_by(20)
            .map(|p| format!("({:.2},{:.2},{:.2})", p[0], p[1], p[2])).collect();
        println!("{name}: score {} path {}", r.score, path.join(" "));
    }
}
