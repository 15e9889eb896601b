use icrt::model::{Model, StateInput};
use icrt::runtime::{rollout, PolicyState};
use icrt::sim::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ds = Dataset::load(std::path::Path::new(&args[2])).unwrap();
    // zero-baseline loss: mean |chunk target|
    let targets = icrt::data::precompute_chunk_targets(&ds).unwrap();
    let mut sum = 0f64;
    let mut cnt = 0usize;
    let mut sum_grip = 0f64;
    for t in &targets {
        for row in t {
            for (i, v) in row.iter().enumerate() {
                if i % 10 < 3 { sum += v.abs() as f64; cnt += 1; }
                if i % 10 == 9 { sum_grip += v.abs() as f64; }
            }
        }
    }
    println!("mean |translation target| = {:.4}; mean |gripper target| = {:.4}", sum / cnt as f64, sum_grip * 3.0 / cnt as f64);

    let model = Model::load(std::path::Path::new(&args[1])).unwrap();
    let task = TaskSpec::parse("poke:yellow_sphere").unwrap();
    // prompt demo
    let out = run_expert_episode(&task, 2, 777, ExpertOptions::default(), 56, 2).unwrap();
    println!("demo len {} score {}", out.steps.len(), out.score);
    let traj = Trajectory { task: 0, tier: 2, seed: 777, score: None, steps: out.steps };
    let mut policy = PolicyState::new(&model);
    policy.prompt_ingest(&[&traj]).unwrap();
    let scene = reset_scene(&task, 2, 888).unwrap();
    let target_pos = scene.find(&task.target).unwrap().position;
    println!("target at ({:.3},{:.3}), gripper at ({:.3},{:.3},{:.3})", target_pos[0], target_pos[1],
        scene.gripper.translation[0], scene.gripper.translation[1], scene.gripper.translation[2]);
    let r = rollout(scene, &task, &mut policy, 120).unwrap();
    println!("score {}", r.score);
    for (i, p) in r.gripper_path.iter().enumerate() {
        if i % 10 == 0 { println!("step {i}: gripper ({:.3},{:.3},{:.3})", p[0], p[1], p[2]); }
    }
    let acts: Vec<[f32;10]> = r.record.steps.iter().map(|s| s.action).collect();
    println!("first 3 actions: {:?}", &acts[..3.min(acts.len())]);
    // check a raw chunk prediction magnitude
    let obs_scene = reset_scene(&task, 2, 888).unwrap();
    let obs = obs_scene.observe();
    let mut p2 = PolicyState::new(&model);
    p2.prompt_ingest(&[&traj]).unwrap();
    let st = model.encode_states(&[StateInput{side:&obs.side, wrist:&obs.wrist, proprio: obs.proprio.to_f32()}]).unwrap();
    println!("state token norm: {:.3}", st[0].iter().map(|v| (v*v) as f64).sum::<f64>().sqrt());
}
