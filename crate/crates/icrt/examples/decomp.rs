use icrt::data::*;
use icrt::graph::Graph;
use icrt::model::*;
use icrt::runtime::build_seq_item;
use icrt::sim::*;
use rand::SeedableRng;
use std::path::Path;

fn main() {
    let ds_path = std::env::args().nth(1).unwrap();
    let ckpt = std::env::args().nth(2).unwrap();
    let full = Dataset::load(Path::new(&ds_path)).unwrap();
    let ti = full.task_index("poke:yellow_sphere").unwrap();
    let mut ds = Dataset::new(vec!["poke:yellow_sphere".to_string()]);
    ds.trajectories = full.trajectories.iter().filter(|t| t.task == ti).take(6)
        .map(|t| Trajectory { task: 0, ..t.clone() }).collect();

    let model = Model::load(Path::new(&ckpt)).unwrap();
    let cfg = model.cfg;
    let groups = group_by_task(&ds).unwrap();
    let targets = precompute_chunk_targets(&ds).unwrap();
    let packed = pack_epoch(&ds, &targets, &groups, 112, 1, 3).unwrap();
    let p0 = &packed[0];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let item = build_seq_item(&ds, p0, &cfg, &AugmentConfig::disabled(), &mut rng).unwrap();

    let mut g = Graph::<f32>::new();
    let pn = insert_params(&mut g, &model.weights, false);
    let built = build_sequence_loss(&mut g, &pn, &cfg, &item, false, 0.0).unwrap();
    let preds = g.value(built.action_preds);
    let tdim = 160;
    let (mut tr, mut rot, mut grip) = (0f64, 0f64, 0f64);
    let (mut tr_mag, mut n_sup) = (0f64, 0usize);
    for i in 0..item.n {
        if item.loss_mask[i] == 0 { continue }
        n_sup += 1;
        for c in 0..16 {
            for d in 0..10 {
                let pv = preds.data()[i*tdim + c*10 + d] as f64;
                let tv = item.targets.data()[i*tdim + c*10 + d] as f64;
                let e = (pv - tv).abs();
                match d { 0..=2 => { tr += e; tr_mag += tv.abs(); }, 3..=8 => rot += e, _ => grip += e }
            }
        }
    }
    let k = (n_sup * 16) as f64;
    println!("supervised steps: {n_sup}");
    println!("translation: mean|err| {:.4} (target mag {:.4})", tr / (3.0*k), tr_mag / (3.0*k));
    println!("rot6d:       mean|err| {:.4}", rot / (6.0*k));
    println!("gripper:     mean|err| {:.4}", grip / k);
    println!("total loss would be {:.4}", (tr + rot + grip) / (10.0*k));

    // chunk[0] translation pred vs recorded action at 3 supervised steps
    for i in [p0.prompt_len, p0.prompt_len+2, p0.prompt_len+5] {
        let (tix, six) = p0.steps[i];
        let rec = ds.trajectories[tix].steps[six].action;
        let pv = &preds.data()[i*tdim..i*tdim+10];
        println!("step {i}: pred ({:+.3},{:+.3},{:+.3}) g {:.2} | recorded ({:+.3},{:+.3},{:+.3}) g {:.2}",
            pv[0], pv[1], pv[2], pv[9], rec[0], rec[1], rec[2], rec[9]);
    }
}
